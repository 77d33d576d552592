#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace affect {

// Little-endian encoder for the binary file formats.
class ByteWriter {
public:
    void bytes(std::string_view raw);
    void u16(std::uint16_t v);
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f32(float v);
    void f64(double v);
    // u32 length prefix followed by the raw bytes.
    void string32(std::string_view s);
    // u16 length prefix; throws FormatError if s does not fit.
    void string16(std::string_view s);

    const std::vector<std::uint8_t>& buffer() const noexcept { return buf_; }
    std::vector<std::uint8_t> take() { return std::move(buf_); }

private:
    std::vector<std::uint8_t> buf_;
};

// Little-endian decoder. Every read checks the remaining length and throws
// FormatError carrying the offset of the failed read.
class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

    std::string bytes(std::size_t n, const char* what);
    std::uint16_t u16(const char* what);
    std::uint32_t u32(const char* what);
    std::uint64_t u64(const char* what);
    float f32(const char* what);
    double f64(const char* what);
    std::string string32(const char* what);
    std::string string16(const char* what);

    std::size_t offset() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return data_.size() - pos_; }
    bool at_end() const noexcept { return pos_ == data_.size(); }

private:
    void need(std::size_t n, const char* what) const;

    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
// Writes through a sibling temp file and renames, so a failed write never
// leaves a truncated file at path.
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_text(const std::filesystem::path& path, std::string_view text);
std::string read_file_text(const std::filesystem::path& path);

}  // namespace affect
