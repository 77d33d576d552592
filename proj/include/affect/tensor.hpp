#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace affect {

class Rng;

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Dense row-major float64 array with an optional gradient buffer.
//
// Tensor is a shared handle: copies alias the same storage, which is what the
// tape relies on when a backward closure writes into an input's gradient.
// Use clone() for an independent copy.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor filled(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const noexcept { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;

    std::span<const double> data() const;
    // Writes through this bypass the tape; meant for optimizers and tests.
    std::span<double> mutable_data();
    double item() const;
    double at(std::size_t row, std::size_t col) const;

    bool requires_grad() const;
    void set_requires_grad(bool on);

    bool has_grad() const;
    // Empty span when no gradient has been accumulated yet.
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    // Const because Tensor is a handle; the gradient lives in shared storage.
    void accumulate_grad(std::span<const double> g) const;
    void zero_grad();

    Tensor clone() const;

    // Tape bookkeeping; see Tape.
    struct NodeRef {
        std::uint64_t tape_id = 0;
        std::uint64_t generation = 0;
        std::int64_t index = -1;
    };
    const NodeRef& node() const;
    void set_node(NodeRef ref);

    bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }

private:
    struct Impl;
    std::shared_ptr<Impl> impl_;
};

using BackwardFn = std::function<void(std::span<const double> out_grad)>;

// Ordered record of differentiable operations performed while the tape is
// active on the current thread. backward() replays the records in strict
// reverse execution order.
class Tape {
public:
    Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    std::size_t size() const noexcept { return nodes_.size(); }
    std::uint64_t id() const noexcept { return id_; }

    // Drops all records. Node ids handed out before the call become invalid.
    void clear();

    void backward(const Tensor& loss);

    // Appends a node and stamps its reference onto output.
    void record(Tensor& output, BackwardFn fn);

private:
    struct Node {
        Tensor output;
        BackwardFn fn;
    };

    std::uint64_t id_;
    std::uint64_t generation_ = 0;
    std::vector<Node> nodes_;
};

// Makes a tape the recording target for the current thread until destroyed.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

Tape* active_tape() noexcept;

// Builds an op result and, when a tape is active and any input needs a
// gradient, records the backward closure. Used by ops here and by the fused
// loss functions.
Tensor make_result(Shape shape, std::vector<double> values, std::initializer_list<Tensor> inputs,
                   BackwardFn fn);

// Shorthand for backward on the active tape.
void backward(const Tensor& loss);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
// x[T×n] + bias[n] broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor concat_lastdim(const std::vector<Tensor>& parts);
Tensor slice_time(const Tensor& x, std::size_t start, std::size_t length);
Tensor slice_lastdim(const Tensor& x, std::size_t start, std::size_t width);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

Tensor relu(const Tensor& x);
Tensor tanh_elem(const Tensor& x);
Tensor softmax_lastdim(const Tensor& x);
Tensor layer_norm_lastdim(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Same-padded temporal convolution. x: T×d_in, weight: k×d_in×d_out, bias: d_out.
Tensor conv1d_temporal(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Inverted dropout: kept entries are scaled by 1/(1-rate).
Tensor dropout(const Tensor& x, double rate, Rng& rng);

}  // namespace affect
