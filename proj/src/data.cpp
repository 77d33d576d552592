#include "affect/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>

#include "affect/byte_io.hpp"
#include "affect/error.hpp"

namespace affect {

namespace {

constexpr std::string_view kFeatureMagic = "AFSQ";
constexpr std::uint32_t kFeatureVersion = 1;
constexpr std::string_view kLabelHeader = "#affectlabels v1";
constexpr std::string_view kManifestHeader = "#affectmanifest v1";
constexpr std::size_t kLabelFields = 5 + kNumActionUnits;

std::string format_double(double v) {
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

}  // namespace

const char* expression_name(int id) {
    static constexpr const char* names[] = {"Neutral", "Anger",   "Disgust",  "Fear",
                                            "Happiness", "Sadness", "Surprise", "Other"};
    if (id < 0 || id >= static_cast<int>(kNumExpressions)) return "Unknown";
    return names[id];
}

// ---------------------------------------------------------------------------
// Feature sequences

Tensor FeatureSequence::to_tensor() const { return Tensor::from({length(), dim}, features); }

void FeatureSequence::validate() const {
    if (frame_ids.empty()) throw DataError("feature sequence '" + video_id + "' has no frames");
    if (dim == 0) throw DataError("feature sequence '" + video_id + "' has zero feature dim");
    if (features.size() != frame_ids.size() * dim) {
        throw DataError("feature sequence '" + video_id + "': payload size does not match T×d");
    }
    for (std::size_t t = 1; t < frame_ids.size(); ++t) {
        if (frame_ids[t] <= frame_ids[t - 1]) {
            throw DataError("feature sequence '" + video_id + "': frame ids not strictly increasing at row " +
                            std::to_string(t));
        }
    }
    for (std::size_t i = 0; i < features.size(); ++i) {
        if (!std::isfinite(features[i])) {
            throw DataError("feature sequence '" + video_id + "': non-finite value at frame " +
                            std::to_string(frame_ids[i / dim]) + ", column " + std::to_string(i % dim));
        }
    }
}

std::vector<std::uint8_t> encode_feature_file(const FeatureSequence& seq) {
    seq.validate();
    ByteWriter w;
    w.bytes(kFeatureMagic);
    w.u32(kFeatureVersion);
    w.u32(static_cast<std::uint32_t>(seq.length()));
    w.u32(static_cast<std::uint32_t>(seq.dim));
    w.string16(seq.video_id);
    for (std::uint64_t id : seq.frame_ids) w.u64(id);
    for (double v : seq.features) w.f32(static_cast<float>(v));
    return w.take();
}

FeatureSequence decode_feature_file(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    if (r.bytes(std::min<std::size_t>(4, bytes.size()), "magic") != kFeatureMagic) {
        throw FormatError("not an AFSQ feature file (bad magic)", 0);
    }
    const std::size_t version_at = r.offset();
    if (const auto version = r.u32("version"); version != kFeatureVersion) {
        throw FormatError("unsupported AFSQ version " + std::to_string(version), version_at);
    }
    FeatureSequence seq;
    const std::uint32_t T = r.u32("frame count");
    const std::size_t dim_at = r.offset();
    seq.dim = r.u32("feature dim");
    if (T == 0) throw FormatError("AFSQ file declares zero frames", dim_at - 4);
    if (seq.dim == 0) throw FormatError("AFSQ file declares zero feature dim", dim_at);
    seq.video_id = r.string16("video id");
    const std::size_t payload = static_cast<std::size_t>(T) * (8 + 4 * seq.dim);
    if (r.remaining() < payload) {
        throw FormatError("truncated AFSQ file: header declares " + std::to_string(T) + " frames of dim " +
                              std::to_string(seq.dim) + " (" + std::to_string(payload) + " bytes), found " +
                              std::to_string(r.remaining()),
                          r.offset());
    }
    if (r.remaining() > payload) throw FormatError("trailing bytes after AFSQ payload", r.offset() + payload);
    seq.frame_ids.resize(T);
    for (auto& id : seq.frame_ids) id = r.u64("frame id");
    seq.features.resize(static_cast<std::size_t>(T) * seq.dim);
    for (std::size_t i = 0; i < seq.features.size(); ++i) {
        const std::size_t at = r.offset();
        const float v = r.f32("feature value");
        if (!std::isfinite(v)) {
            throw DataError("AFSQ payload has a non-finite value at byte offset " + std::to_string(at));
        }
        seq.features[i] = v;
    }
    seq.validate();
    return seq;
}

void write_feature_file(const std::filesystem::path& path, const FeatureSequence& seq) {
    write_file_bytes(path, encode_feature_file(seq));
}

FeatureSequence read_feature_file(const std::filesystem::path& path) {
    try {
        return decode_feature_file(read_file_bytes(path));
    } catch (const FormatError& e) {
        throw e.with_context(path.string());
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

FeatureSequence merge_streams(const FeatureSequence& a, const FeatureSequence& b) {
    if (a.video_id != b.video_id) {
        throw AlignmentError("cannot merge streams of different videos '" + a.video_id + "' and '" + b.video_id + "'");
    }
    const std::size_t n = std::min(a.length(), b.length());
    for (std::size_t t = 0; t < n; ++t) {
        if (a.frame_ids[t] != b.frame_ids[t]) {
            throw AlignmentError("streams of '" + a.video_id + "' disagree at row " + std::to_string(t) + ": frame " +
                                 std::to_string(a.frame_ids[t]) + " vs " + std::to_string(b.frame_ids[t]));
        }
    }
    if (a.length() != b.length()) {
        throw AlignmentError("streams of '" + a.video_id + "' have " + std::to_string(a.length()) + " and " +
                             std::to_string(b.length()) + " frames; first unmatched row " + std::to_string(n));
    }
    FeatureSequence out;
    out.video_id = a.video_id;
    out.frame_ids = a.frame_ids;
    out.dim = a.dim + b.dim;
    out.features.reserve(a.length() * out.dim);
    for (std::size_t t = 0; t < a.length(); ++t) {
        out.features.insert(out.features.end(), a.features.begin() + t * a.dim, a.features.begin() + (t + 1) * a.dim);
        out.features.insert(out.features.end(), b.features.begin() + t * b.dim, b.features.begin() + (t + 1) * b.dim);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Labels

bool LabelSet::va_valid(std::size_t t) const {
    return mask[t] && va[2 * t] != kLabelSentinel && va[2 * t + 1] != kLabelSentinel;
}

bool LabelSet::expr_valid(std::size_t t) const { return mask[t] && expr[t] != static_cast<int>(kLabelSentinel); }

bool LabelSet::au_valid(std::size_t t) const {
    if (!mask[t]) return false;
    for (std::size_t u = 0; u < kNumActionUnits; ++u)
        if (au[t * kNumActionUnits + u] == static_cast<int>(kLabelSentinel)) return false;
    return true;
}

std::vector<std::uint8_t> LabelSet::task_mask(Task task) const {
    std::vector<std::uint8_t> m(length());
    for (std::size_t t = 0; t < length(); ++t) {
        m[t] = task == Task::va ? va_valid(t) : task == Task::expr ? expr_valid(t) : au_valid(t);
    }
    return m;
}

std::size_t LabelSet::count_valid(Task task) const {
    auto m = task_mask(task);
    return static_cast<std::size_t>(std::count(m.begin(), m.end(), std::uint8_t{1}));
}

LabelSet LabelSet::slice(std::size_t start, std::size_t n) const {
    LabelSet out;
    out.frame_ids.assign(frame_ids.begin() + start, frame_ids.begin() + start + n);
    out.va.assign(va.begin() + 2 * start, va.begin() + 2 * (start + n));
    out.expr.assign(expr.begin() + start, expr.begin() + start + n);
    out.au.assign(au.begin() + kNumActionUnits * start, au.begin() + kNumActionUnits * (start + n));
    out.mask.assign(mask.begin() + start, mask.begin() + start + n);
    return out;
}

void LabelSet::validate() const {
    const std::size_t T = length();
    if (va.size() != 2 * T || expr.size() != T || au.size() != kNumActionUnits * T || mask.size() != T) {
        throw DataError("label set fields have inconsistent lengths");
    }
    for (std::size_t t = 0; t < T; ++t) {
        const std::string at = " at frame " + std::to_string(frame_ids[t]);
        if (t > 0 && frame_ids[t] <= frame_ids[t - 1]) throw DataError("label frame ids not increasing" + at);
        for (int c = 0; c < 2; ++c) {
            const double v = va[2 * t + c];
            if (v != kLabelSentinel && !(v >= -1.0 && v <= 1.0)) {
                throw DataError("valence/arousal " + format_double(v) + " outside [-1, 1]" + at);
            }
        }
        if (expr[t] != static_cast<int>(kLabelSentinel) && (expr[t] < 0 || expr[t] >= static_cast<int>(kNumExpressions))) {
            throw DataError("expression id " + std::to_string(expr[t]) + " outside 0..7" + at);
        }
        for (std::size_t u = 0; u < kNumActionUnits; ++u) {
            const int b = au[t * kNumActionUnits + u];
            if (b != 0 && b != 1 && b != static_cast<int>(kLabelSentinel)) {
                throw DataError("AU" + std::to_string(u) + " value " + std::to_string(b) + " is not 0/1" + at);
            }
        }
        if (mask[t] > 1) throw DataError("mask must be 0 or 1" + at);
    }
}

void LabelSet::push_frame(std::uint64_t frame_id, const double* va_pair, int expr_id, const int* au_bits, bool valid) {
    frame_ids.push_back(frame_id);
    va.push_back(valid && va_pair ? va_pair[0] : kLabelSentinel);
    va.push_back(valid && va_pair ? va_pair[1] : kLabelSentinel);
    expr.push_back(valid && expr_id >= 0 ? expr_id : static_cast<int>(kLabelSentinel));
    for (std::size_t u = 0; u < kNumActionUnits; ++u) {
        au.push_back(valid && au_bits ? au_bits[u] : static_cast<int>(kLabelSentinel));
    }
    mask.push_back(valid ? 1 : 0);
}

std::string format_label_file(const LabelSet& labels) {
    labels.validate();
    std::string out(kLabelHeader);
    out += "\n";
    for (std::size_t t = 0; t < labels.length(); ++t) {
        out += std::to_string(labels.frame_ids[t]);
        out += "," + format_double(labels.va[2 * t]);
        out += "," + format_double(labels.va[2 * t + 1]);
        out += "," + std::to_string(labels.expr[t]);
        for (std::size_t u = 0; u < kNumActionUnits; ++u) out += "," + std::to_string(labels.au[t * kNumActionUnits + u]);
        out += "," + std::to_string(labels.mask[t]);
        out += "\n";
    }
    return out;
}

LabelSet parse_label_file(std::string_view text) {
    if (!text.starts_with(kLabelHeader) ||
        (text.size() > kLabelHeader.size() && text[kLabelHeader.size()] != '\n')) {
        throw FormatError("missing '#affectlabels v1' header", 0);
    }
    LabelSet labels;
    std::size_t pos = kLabelHeader.size() + (text.size() > kLabelHeader.size() ? 1 : 0);
    std::size_t line_no = 1;
    while (pos < text.size()) {
        ++line_no;
        const std::size_t line_start = pos;
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        if (line.empty()) continue;

        std::vector<std::string_view> fields;
        std::size_t f = 0;
        while (true) {
            const std::size_t comma = line.find(',', f);
            fields.push_back(line.substr(f, comma == std::string_view::npos ? std::string_view::npos : comma - f));
            if (comma == std::string_view::npos) break;
            f = comma + 1;
        }
        auto bad = [&](const std::string& msg) {
            return FormatError("label line " + std::to_string(line_no) + ": " + msg, line_start);
        };
        if (fields.size() != kLabelFields) {
            throw bad("expected " + std::to_string(kLabelFields) + " fields, found " + std::to_string(fields.size()));
        }
        auto parse_int = [&](std::string_view s, const char* what) {
            long long v = 0;
            auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
            if (ec != std::errc() || p != s.data() + s.size()) throw bad(std::string("bad ") + what + " '" + std::string(s) + "'");
            return v;
        };
        auto parse_real = [&](std::string_view s, const char* what) {
            double v = 0;
            auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
            if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) {
                throw bad(std::string("bad ") + what + " '" + std::string(s) + "'");
            }
            return v;
        };
        const long long frame = parse_int(fields[0], "frame id");
        if (frame < 0) throw bad("negative frame id");
        labels.frame_ids.push_back(static_cast<std::uint64_t>(frame));
        labels.va.push_back(parse_real(fields[1], "valence"));
        labels.va.push_back(parse_real(fields[2], "arousal"));
        labels.expr.push_back(static_cast<int>(parse_int(fields[3], "expression")));
        for (std::size_t u = 0; u < kNumActionUnits; ++u) labels.au.push_back(static_cast<int>(parse_int(fields[4 + u], "AU")));
        const long long m = parse_int(fields[4 + kNumActionUnits], "mask");
        if (m != 0 && m != 1) throw bad("mask must be 0 or 1");
        labels.mask.push_back(static_cast<std::uint8_t>(m));
    }
    labels.validate();
    return labels;
}

void write_label_file(const std::filesystem::path& path, const LabelSet& labels) {
    write_file_text(path, format_label_file(labels));
}

LabelSet read_label_file(const std::filesystem::path& path) {
    try {
        return parse_label_file(read_file_text(path));
    } catch (const FormatError& e) {
        throw e.with_context(path.string());
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Manifests and datasets

std::string format_manifest(const DatasetManifest& manifest) {
    std::string out(kManifestHeader);
    out += " split=" + manifest.split + " dims=";
    for (std::size_t i = 0; i < manifest.stream_dims.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(manifest.stream_dims[i]);
    }
    out += "\n";
    for (const auto& r : manifest.records) {
        out += r.video_id;
        for (const auto& p : r.feature_paths) out += "\t" + p.generic_string();
        out += "\t" + r.label_path.generic_string() + "\n";
    }
    return out;
}

DatasetManifest parse_manifest(std::string_view text, const std::filesystem::path& base_dir) {
    DatasetManifest m;
    std::size_t pos = 0;
    bool header_seen = false;
    while (pos < text.size()) {
        const std::size_t line_start = pos;
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;
        if (!header_seen) {
            if (!line.starts_with(kManifestHeader)) throw FormatError("missing '#affectmanifest v1' header", 0);
            header_seen = true;
            std::string_view rest = line.substr(kManifestHeader.size());
            while (!rest.empty()) {
                while (!rest.empty() && rest.front() == ' ') rest.remove_prefix(1);
                const std::size_t sp = rest.find(' ');
                std::string_view kv = rest.substr(0, sp);
                rest = sp == std::string_view::npos ? std::string_view{} : rest.substr(sp);
                if (kv.empty()) continue;
                const std::size_t eq = kv.find('=');
                if (eq == std::string_view::npos) throw FormatError("bad manifest header field", line_start);
                const std::string_view key = kv.substr(0, eq), value = kv.substr(eq + 1);
                if (key == "split") {
                    m.split = value;
                } else if (key == "dims") {
                    std::size_t s = 0;
                    while (s <= value.size()) {
                        const std::size_t c = std::min(value.find(',', s), value.size());
                        std::size_t d = 0;
                        auto [p, ec] = std::from_chars(value.data() + s, value.data() + c, d);
                        if (ec != std::errc() || p != value.data() + c || d == 0) {
                            throw FormatError("bad stream dims in manifest header", line_start);
                        }
                        m.stream_dims.push_back(d);
                        s = c + 1;
                    }
                }
            }
            continue;
        }
        if (line.front() == '#') continue;
        std::vector<std::string> cols;
        std::size_t f = 0;
        while (true) {
            const std::size_t tab = line.find('\t', f);
            cols.emplace_back(line.substr(f, tab == std::string_view::npos ? std::string_view::npos : tab - f));
            if (tab == std::string_view::npos) break;
            f = tab + 1;
        }
        if (cols.size() < 3 || cols.size() > 4) {
            throw FormatError("manifest record needs video_id, 1-2 feature paths and a label path", line_start);
        }
        VideoRecord r;
        r.video_id = cols.front();
        auto resolve = [&](const std::string& p) {
            std::filesystem::path path(p);
            return path.is_absolute() ? path : base_dir / path;
        };
        for (std::size_t i = 1; i + 1 < cols.size(); ++i) r.feature_paths.push_back(resolve(cols[i]));
        r.label_path = resolve(cols.back());
        if (!m.records.empty() && m.records.front().feature_paths.size() != r.feature_paths.size()) {
            throw FormatError("manifest records disagree on the number of feature streams", line_start);
        }
        m.records.push_back(std::move(r));
    }
    if (!header_seen) throw FormatError("missing '#affectmanifest v1' header", 0);
    if (!m.records.empty() && !m.stream_dims.empty() && m.stream_dims.size() != m.records.front().feature_paths.size()) {
        throw FormatError("manifest header lists " + std::to_string(m.stream_dims.size()) + " stream dims but records have " +
                              std::to_string(m.records.front().feature_paths.size()) + " streams",
                          0);
    }
    return m;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
    write_file_text(path, format_manifest(manifest));
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
    if (!std::filesystem::is_regular_file(path)) throw IoError("manifest " + path.string() + " does not exist");
    try {
        return parse_manifest(read_file_text(path), path.parent_path());
    } catch (const FormatError& e) {
        throw e.with_context(path.string());
    }
}

std::size_t Dataset::count_valid(Task task) const {
    std::size_t n = 0;
    for (const auto& v : videos) n += v.labels.count_valid(task);
    return n;
}

Dataset load_dataset(const DatasetManifest& manifest) {
    if (manifest.records.empty()) throw DataError("manifest for split '" + manifest.split + "' lists no videos");
    Dataset ds;
    ds.split = manifest.split;
    for (const auto& rec : manifest.records) {
        std::vector<FeatureSequence> streams;
        for (const auto& p : rec.feature_paths) streams.push_back(read_feature_file(p));
        for (std::size_t s = 0; s < streams.size(); ++s) {
            if (streams[s].video_id != rec.video_id) {
                throw DataError(rec.feature_paths[s].string() + " holds video '" + streams[s].video_id +
                                "', manifest says '" + rec.video_id + "'");
            }
            if (!manifest.stream_dims.empty() && streams[s].dim != manifest.stream_dims[s]) {
                throw DimensionError(rec.feature_paths[s].string() + " has feature dim " + std::to_string(streams[s].dim) +
                                     ", manifest says " + std::to_string(manifest.stream_dims[s]));
            }
        }
        FeatureSequence merged = streams.front();
        for (std::size_t s = 1; s < streams.size(); ++s) merged = merge_streams(merged, streams[s]);
        LabelSet labels = read_label_file(rec.label_path);
        if (labels.frame_ids != merged.frame_ids) {
            std::size_t i = 0;
            while (i < labels.length() && i < merged.length() && labels.frame_ids[i] == merged.frame_ids[i]) ++i;
            throw AlignmentError("labels " + rec.label_path.string() + " do not match the feature frames of '" +
                                 rec.video_id + "' (first mismatch at row " + std::to_string(i) + ")");
        }
        if (ds.dim == 0) ds.dim = merged.dim;
        if (merged.dim != ds.dim) {
            throw DimensionError("video '" + rec.video_id + "' has merged dim " + std::to_string(merged.dim) +
                                 ", earlier videos have " + std::to_string(ds.dim));
        }
        ds.videos.push_back({std::move(merged), std::move(labels)});
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Windows and sampling

std::vector<WindowSpan> make_windows(std::size_t num_frames, const LabelSet* labels, std::size_t win_len,
                                     std::size_t stride, std::size_t video_index) {
    if (win_len == 0 || stride == 0) throw ConfigError("window length and stride must be at least 1");
    std::vector<WindowSpan> out;
    std::size_t start = 0;
    for (; start + win_len <= num_frames; start += stride) out.push_back({video_index, start, win_len});
    const std::size_t covered = out.empty() ? 0 : out.back().start + win_len;
    if (covered < num_frames && start < num_frames) {
        const std::size_t len = num_frames - start;
        bool keep = labels == nullptr;
        for (std::size_t t = start; !keep && t < num_frames; ++t) keep = labels->any_valid(t);
        if (keep) out.push_back({video_index, start, len});
    }
    return out;
}

Tensor Window::to_tensor() const { return Tensor::from({length(), dim}, features); }

Window materialize(const Dataset& data, const WindowSpan& span) {
    const Video& v = data.videos.at(span.video);
    Window w;
    w.video_id = v.features.video_id;
    w.video = span.video;
    w.start = span.start;
    w.dim = v.features.dim;
    w.frame_ids.assign(v.features.frame_ids.begin() + span.start,
                       v.features.frame_ids.begin() + span.start + span.length);
    w.features.assign(v.features.features.begin() + span.start * w.dim,
                      v.features.features.begin() + (span.start + span.length) * w.dim);
    w.labels = v.labels.slice(span.start, span.length);
    return w;
}

int window_class(const LabelSet& labels) {
    std::vector<std::size_t> counts(kNumExpressions, 0);
    bool any = false;
    for (std::size_t t = 0; t < labels.length(); ++t) {
        if (!labels.expr_valid(t)) continue;
        ++counts[static_cast<std::size_t>(labels.expr[t])];
        any = true;
    }
    if (!any) return -1;
    // max_element returns the first maximum, i.e. the smallest id on ties.
    return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

BalancedSampler::BalancedSampler(std::span<const int> window_classes, std::uint64_t seed) : rng_(seed) {
    if (window_classes.empty()) throw DataError("balanced sampler: empty split");
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < window_classes.size(); ++i) by_class[window_classes[i]].push_back(i);
    // Unlabeled windows (-1) sort first in the map; keep them as the last bucket.
    for (auto& [cls, idx] : by_class)
        if (cls >= 0) buckets_.push_back(std::move(idx));
    if (by_class.count(-1)) buckets_.push_back(std::move(by_class[-1]));
}

std::size_t BalancedSampler::next() {
    const auto& bucket = buckets_[rng_.below(buckets_.size())];
    return bucket[rng_.below(bucket.size())];
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    return idx;
}

void AugmentPolicy::validate() const {
    for (double p : {noise_prob, crop_prob, frame_dropout_prob}) {
        if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("augmentation probabilities must be in [0, 1]");
    }
    if (!(noise_sigma >= 0.0)) throw ConfigError("augmentation noise sigma must be non-negative");
    if (!(crop_min_fraction >= 0.5 && crop_min_fraction <= 1.0)) {
        throw ConfigError("crop_min_fraction must be in [0.5, 1]");
    }
    if (!(frame_dropout_max_fraction >= 0.0 && frame_dropout_max_fraction <= 0.1)) {
        throw ConfigError("frame_dropout_max_fraction must be in [0, 0.1]");
    }
}

Window augment_window(const Window& w, const AugmentPolicy& policy, Rng& rng) {
    Window out = w;
    if (policy.crop_prob > 0.0 && rng.bernoulli(policy.crop_prob) && w.length() > 1) {
        const auto min_len = static_cast<std::size_t>(std::ceil(policy.crop_min_fraction * static_cast<double>(w.length())));
        const std::size_t len = min_len + rng.below(w.length() - min_len + 1);
        const std::size_t offset = rng.below(w.length() - len + 1);
        out.start = w.start + offset;
        out.frame_ids.assign(w.frame_ids.begin() + offset, w.frame_ids.begin() + offset + len);
        out.features.assign(w.features.begin() + offset * w.dim, w.features.begin() + (offset + len) * w.dim);
        out.labels = w.labels.slice(offset, len);
    }
    const std::size_t L = out.length(), d = out.dim;
    if (policy.frame_dropout_prob > 0.0 && rng.bernoulli(policy.frame_dropout_prob)) {
        const auto max_frames = static_cast<std::size_t>(std::floor(policy.frame_dropout_max_fraction * static_cast<double>(L)));
        if (max_frames > 0) {
            std::vector<double> mean(d, 0.0);
            for (std::size_t t = 0; t < L; ++t)
                for (std::size_t c = 0; c < d; ++c) mean[c] += out.features[t * d + c] / static_cast<double>(L);
            const std::size_t count = 1 + rng.below(max_frames);
            std::vector<std::size_t> order(L);
            for (std::size_t i = 0; i < L; ++i) order[i] = i;
            for (std::size_t i = 0; i < count; ++i) {
                std::swap(order[i], order[i + rng.below(L - i)]);
                std::copy(mean.begin(), mean.end(), out.features.begin() + order[i] * d);
            }
        }
    }
    if (policy.noise_prob > 0.0 && policy.noise_sigma > 0.0 && rng.bernoulli(policy.noise_prob)) {
        for (double& v : out.features) v += policy.noise_sigma * rng.normal();
    }
    return out;
}

}  // namespace affect
