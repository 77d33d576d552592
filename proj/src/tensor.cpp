#include "affect/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>

#include "affect/error.hpp"
#include "affect/rng.hpp"

namespace affect {

struct Tensor::Impl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    NodeRef node;
};

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return filled(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    for (std::size_t e : shape) {
        if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    }
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) +
                             " values");
    }
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(values);
    t.impl_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= impl_->shape.size()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(impl_->shape));
    }
    return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return impl_->data.size(); }
std::span<const double> Tensor::data() const { return impl_->data; }
std::span<double> Tensor::mutable_data() { return impl_->data; }

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
    return impl_->data[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
    if (rank() != 2) throw DimensionError("at(row, col) needs a 2-D tensor, got " + shape_str(shape()));
    return impl_->data[row * impl_->shape[1] + col];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }
void Tensor::set_requires_grad(bool on) { impl_->requires_grad = on; }
bool Tensor::has_grad() const { return !impl_->grad.empty(); }
std::span<const double> Tensor::grad() const { return impl_->grad; }

std::span<double> Tensor::mutable_grad() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
    return impl_->grad;
}

void Tensor::accumulate_grad(std::span<const double> g) const {
    if (!impl_->requires_grad) return;
    auto& dst = impl_->grad;
    if (dst.empty()) dst.assign(impl_->data.size(), 0.0);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::clone() const {
    Tensor t = from(impl_->shape, impl_->data, impl_->requires_grad);
    t.impl_->grad = impl_->grad;
    return t;
}

const Tensor::NodeRef& Tensor::node() const { return impl_->node; }
void Tensor::set_node(NodeRef ref) { impl_->node = ref; }

// ---------------------------------------------------------------------------
// Tape

namespace {

std::atomic<std::uint64_t> next_tape_id{1};
thread_local Tape* current_tape = nullptr;

[[maybe_unused]] bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

Tape::Tape() : id_(next_tape_id.fetch_add(1)) {}

void Tape::clear() {
    nodes_.clear();
    ++generation_;
}

void Tape::record(Tensor& output, BackwardFn fn) {
    Tensor::NodeRef ref;
    ref.tape_id = id_;
    ref.generation = generation_;
    ref.index = static_cast<std::int64_t>(nodes_.size());
    output.set_node(ref);
    nodes_.push_back({output, std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ContractError("backward needs a scalar loss, got " +
                            (loss.defined() ? shape_str(loss.shape()) : std::string("undefined tensor")));
    }
    const auto& ref = loss.node();
    if (ref.tape_id != id_ || ref.generation != generation_ || ref.index < 0 ||
        ref.index >= static_cast<std::int64_t>(nodes_.size())) {
        throw ContractError("backward: loss was not recorded on this tape");
    }
    Tensor root = loss;
    const double one = 1.0;
    root.accumulate_grad(std::span<const double>(&one, 1));
    for (std::int64_t i = ref.index; i >= 0; --i) {
        auto& node = nodes_[static_cast<std::size_t>(i)];
        if (!node.output.has_grad()) continue;
        node.fn(node.output.grad());
    }
}

TapeScope::TapeScope(Tape& tape) : previous_(current_tape) { current_tape = &tape; }
TapeScope::~TapeScope() { current_tape = previous_; }

Tape* active_tape() noexcept { return current_tape; }

void backward(const Tensor& loss) {
    Tape* tape = active_tape();
    if (!tape) throw ContractError("backward called with no active tape");
    tape->backward(loss);
}

Tensor make_result(Shape shape, std::vector<double> values, std::initializer_list<Tensor> inputs, BackwardFn fn) {
#ifndef NDEBUG
    if (!all_finite(values)) {
        const bool inputs_finite =
            std::all_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return all_finite(t.data()); });
        if (inputs_finite) throw ContractError("op produced non-finite values from finite inputs");
    }
#endif
    Tensor out = Tensor::from(std::move(shape), std::move(values));
    Tape* tape = active_tape();
    if (!tape) return out;
    const bool needs = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (!needs) return out;
    out.set_requires_grad(true);
    tape->record(out, std::move(fn));
    return out;
}

// ---------------------------------------------------------------------------
// Ops

namespace {

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
    if (x.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                             shape_str(x.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

std::size_t last_dim(const Tensor& x, const char* op) {
    if (x.rank() == 0) throw DimensionError(std::string(op) + ": scalar has no last dimension");
    return x.shape().back();
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    std::vector<double> out(m * n, 0.0);
    const auto A = a.data();
    const auto B = b.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = A[i * k + p];
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * B[p * n + j];
        }
    }
    return make_result({m, n}, std::move(out), {a, b}, [a, b, m, k, n](std::span<const double> g) mutable {
        const auto A = a.data();
        const auto B = b.data();
        if (a.requires_grad()) {
            std::vector<double> da(m * k, 0.0);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * B[p * n + j];
                    da[i * k + p] = s;
                }
            a.accumulate_grad(da);
        }
        if (b.requires_grad()) {
            std::vector<double> db(k * n, 0.0);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double aip = A[i * k + p];
                    for (std::size_t j = 0; j < n; ++j) db[p * n + j] += aip * g[i * n + j];
                }
            b.accumulate_grad(db);
        }
    });
}

Tensor transpose(const Tensor& x) {
    require_rank(x, 2, "transpose");
    const std::size_t r = x.dim(0), c = x.dim(1);
    std::vector<double> out(r * c);
    const auto X = x.data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = X[i * c + j];
    return make_result({c, r}, std::move(out), {x}, [x, r, c](std::span<const double> g) mutable {
        std::vector<double> dx(r * c);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) dx[i * c + j] = g[j * r + i];
        x.accumulate_grad(dx);
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return make_result(a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) mutable {
        a.accumulate_grad(g);
        b.accumulate_grad(g);
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    return make_result(a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) mutable {
        a.accumulate_grad(g);
        std::vector<double> neg(g.begin(), g.end());
        for (double& v : neg) v = -v;
        b.accumulate_grad(neg);
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return make_result(a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) mutable {
        const std::size_t n = g.size();
        if (a.requires_grad()) {
            std::vector<double> da(n);
            for (std::size_t i = 0; i < n; ++i) da[i] = g[i] * b.data()[i];
            a.accumulate_grad(da);
        }
        if (b.requires_grad()) {
            std::vector<double> db(n);
            for (std::size_t i = 0; i < n; ++i) db[i] = g[i] * a.data()[i];
            b.accumulate_grad(db);
        }
    });
}

Tensor scale(const Tensor& x, double factor) {
    std::vector<double> out(x.data().begin(), x.data().end());
    for (double& v : out) v *= factor;
    return make_result(x.shape(), std::move(out), {x}, [x, factor](std::span<const double> g) mutable {
        std::vector<double> dx(g.begin(), g.end());
        for (double& v : dx) v *= factor;
        x.accumulate_grad(dx);
    });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    require_rank(x, 2, "add_bias");
    require_rank(bias, 1, "add_bias");
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    if (bias.dim(0) != cols) {
        throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match " + shape_str(x.shape()));
    }
    std::vector<double> out(x.data().begin(), x.data().end());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bias.data()[c];
    return make_result(x.shape(), std::move(out), {x, bias}, [x, bias, rows, cols](std::span<const double> g) mutable {
        x.accumulate_grad(g);
        if (bias.requires_grad()) {
            std::vector<double> db(cols, 0.0);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) db[c] += g[r * cols + c];
            bias.accumulate_grad(db);
        }
    });
}

Tensor concat_lastdim(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_lastdim: no inputs");
    for (const auto& p : parts) require_rank(p, 2, "concat_lastdim");
    const std::size_t rows = parts.front().dim(0);
    std::size_t total = 0;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        if (p.dim(0) != rows) {
            throw DimensionError("concat_lastdim: row mismatch " + shape_str(parts.front().shape()) + " vs " +
                                 shape_str(p.shape()));
        }
        widths.push_back(p.dim(1));
        total += p.dim(1);
    }
    std::vector<double> out(rows * total);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto src = parts[k].data();
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(r * widths[k]), widths[k],
                        out.begin() + static_cast<std::ptrdiff_t>(r * total + offset));
        offset += widths[k];
    }
    Tensor result = make_result({rows, total}, std::move(out), {}, nullptr);
    Tape* tape = active_tape();
    const bool needs = std::any_of(parts.begin(), parts.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (tape && needs) {
        // Variadic inputs do not fit make_result's initializer list; record directly.
        result.set_requires_grad(true);
        tape->record(result, [parts, widths, rows, total](std::span<const double> g) {
            std::size_t off = 0;
            for (std::size_t k = 0; k < parts.size(); ++k) {
                Tensor p = parts[k];
                if (p.requires_grad()) {
                    std::vector<double> dp(rows * widths[k]);
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < widths[k]; ++c) dp[r * widths[k] + c] = g[r * total + off + c];
                    p.accumulate_grad(dp);
                }
                off += widths[k];
            }
        });
    }
    return result;
}

Tensor slice_time(const Tensor& x, std::size_t start, std::size_t length) {
    require_rank(x, 2, "slice_time");
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    if (length == 0 || start + length > rows) {
        throw DimensionError("slice_time: rows [" + std::to_string(start) + ", " + std::to_string(start + length) +
                             ") out of range for " + shape_str(x.shape()));
    }
    const auto X = x.data();
    std::vector<double> out(X.begin() + static_cast<std::ptrdiff_t>(start * cols),
                            X.begin() + static_cast<std::ptrdiff_t>((start + length) * cols));
    return make_result({length, cols}, std::move(out), {x},
                       [x, start, rows, cols](std::span<const double> g) mutable {
                           std::vector<double> dx(rows * cols, 0.0);
                           std::copy(g.begin(), g.end(), dx.begin() + static_cast<std::ptrdiff_t>(start * cols));
                           x.accumulate_grad(dx);
                       });
}

Tensor slice_lastdim(const Tensor& x, std::size_t start, std::size_t width) {
    require_rank(x, 2, "slice_lastdim");
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    if (width == 0 || start + width > cols) {
        throw DimensionError("slice_lastdim: columns [" + std::to_string(start) + ", " +
                             std::to_string(start + width) + ") out of range for " + shape_str(x.shape()));
    }
    std::vector<double> out(rows * width);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < width; ++c) out[r * width + c] = x.data()[r * cols + start + c];
    return make_result({rows, width}, std::move(out), {x},
                       [x, start, width, rows, cols](std::span<const double> g) mutable {
                           std::vector<double> dx(rows * cols, 0.0);
                           for (std::size_t r = 0; r < rows; ++r)
                               for (std::size_t c = 0; c < width; ++c) dx[r * cols + start + c] = g[r * width + c];
                           x.accumulate_grad(dx);
                       });
}

Tensor sum_all(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    return make_result({}, {s}, {x}, [x](std::span<const double> g) mutable {
        x.accumulate_grad(std::vector<double>(x.numel(), g[0]));
    });
}

Tensor mean_all(const Tensor& x) {
    const double n = static_cast<double>(x.numel());
    double s = 0.0;
    for (double v : x.data()) s += v;
    return make_result({}, {s / n}, {x}, [x, n](std::span<const double> g) mutable {
        x.accumulate_grad(std::vector<double>(x.numel(), g[0] / n));
    });
}

Tensor relu(const Tensor& x) {
    std::vector<double> out(x.data().begin(), x.data().end());
    for (double& v : out) v = v > 0.0 ? v : 0.0;
    return make_result(x.shape(), std::move(out), {x}, [x](std::span<const double> g) mutable {
        std::vector<double> dx(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] = x.data()[i] > 0.0 ? g[i] : 0.0;
        x.accumulate_grad(dx);
    });
}

Tensor tanh_elem(const Tensor& x) {
    std::vector<double> out(x.data().begin(), x.data().end());
    for (double& v : out) v = std::tanh(v);
    std::vector<double> y = out;
    return make_result(x.shape(), std::move(out), {x}, [x, y = std::move(y)](std::span<const double> g) mutable {
        std::vector<double> dx(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] = g[i] * (1.0 - y[i] * y[i]);
        x.accumulate_grad(dx);
    });
}

Tensor softmax_lastdim(const Tensor& x) {
    const std::size_t n = last_dim(x, "softmax_lastdim");
    const std::size_t rows = x.numel() / n;
    std::vector<double> out(x.numel());
    const auto X = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = X.data() + r * n;
        const double mx = *std::max_element(row, row + n);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += (out[r * n + j] = std::exp(row[j] - mx));
        for (std::size_t j = 0; j < n; ++j) out[r * n + j] /= z;
    }
    std::vector<double> y = out;
    return make_result(x.shape(), std::move(out), {x}, [x, y = std::move(y), n, rows](std::span<const double> g) mutable {
        std::vector<double> dx(y.size());
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
            for (std::size_t j = 0; j < n; ++j) dx[r * n + j] = y[r * n + j] * (g[r * n + j] - dot);
        }
        x.accumulate_grad(dx);
    });
}

Tensor layer_norm_lastdim(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const std::size_t n = last_dim(x, "layer_norm_lastdim");
    require_rank(gamma, 1, "layer_norm_lastdim");
    require_rank(beta, 1, "layer_norm_lastdim");
    if (gamma.dim(0) != n || beta.dim(0) != n) {
        throw DimensionError("layer_norm_lastdim: affine params " + shape_str(gamma.shape()) + "/" +
                             shape_str(beta.shape()) + " do not match " + shape_str(x.shape()));
    }
    const std::size_t rows = x.numel() / n;
    const auto X = x.data();
    std::vector<double> xhat(x.numel());
    std::vector<double> inv_std(rows);
    std::vector<double> out(x.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = X.data() + r * n;
        double mean = 0.0;
        for (std::size_t j = 0; j < n; ++j) mean += row[j];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<double>(n);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            xhat[r * n + j] = (row[j] - mean) * inv_std[r];
            out[r * n + j] = xhat[r * n + j] * gamma.data()[j] + beta.data()[j];
        }
    }
    return make_result(
        x.shape(), std::move(out), {x, gamma, beta},
        [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), n, rows](std::span<const double> g) mutable {
            const auto G = gamma.data();
            if (x.requires_grad()) {
                std::vector<double> dx(rows * n);
                const double inv_n = 1.0 / static_cast<double>(n);
                for (std::size_t r = 0; r < rows; ++r) {
                    double sum_d = 0.0, sum_dx = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        const double d = g[r * n + j] * G[j];
                        sum_d += d;
                        sum_dx += d * xhat[r * n + j];
                    }
                    for (std::size_t j = 0; j < n; ++j) {
                        const double d = g[r * n + j] * G[j];
                        dx[r * n + j] = inv_std[r] * (d - sum_d * inv_n - xhat[r * n + j] * sum_dx * inv_n);
                    }
                }
                x.accumulate_grad(dx);
            }
            if (gamma.requires_grad() || beta.requires_grad()) {
                std::vector<double> dg(n, 0.0), db(n, 0.0);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < n; ++j) {
                        dg[j] += g[r * n + j] * xhat[r * n + j];
                        db[j] += g[r * n + j];
                    }
                gamma.accumulate_grad(dg);
                beta.accumulate_grad(db);
            }
        });
}

Tensor conv1d_temporal(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    require_rank(x, 2, "conv1d_temporal");
    require_rank(weight, 3, "conv1d_temporal");
    require_rank(bias, 1, "conv1d_temporal");
    const std::size_t k = weight.dim(0);
    if (k % 2 == 0) throw ConfigError("conv1d_temporal: kernel width must be odd, got " + std::to_string(k));
    const std::size_t T = x.dim(0), d_in = x.dim(1), d_out = weight.dim(2);
    if (weight.dim(1) != d_in || bias.dim(0) != d_out) {
        throw DimensionError("conv1d_temporal: input " + shape_str(x.shape()) + ", weight " +
                             shape_str(weight.shape()) + ", bias " + shape_str(bias.shape()) + " are incompatible");
    }
    const auto half = static_cast<std::ptrdiff_t>(k / 2);
    const auto X = x.data();
    const auto W = weight.data();
    std::vector<double> out(T * d_out);
    for (std::size_t t = 0; t < T; ++t) std::copy(bias.data().begin(), bias.data().end(), out.begin() + t * d_out);
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t j = 0; j < k; ++j) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - half;
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
            for (std::size_t i = 0; i < d_in; ++i) {
                const double xv = X[static_cast<std::size_t>(src) * d_in + i];
                const double* wrow = W.data() + (j * d_in + i) * d_out;
                for (std::size_t o = 0; o < d_out; ++o) out[t * d_out + o] += xv * wrow[o];
            }
        }
    }
    return make_result(
        {T, d_out}, std::move(out), {x, weight, bias},
        [x, weight, bias, T, d_in, d_out, k, half](std::span<const double> g) mutable {
            const auto X = x.data();
            const auto W = weight.data();
            std::vector<double> dx(x.requires_grad() ? T * d_in : 0, 0.0);
            std::vector<double> dw(weight.requires_grad() ? k * d_in * d_out : 0, 0.0);
            for (std::size_t t = 0; t < T; ++t) {
                for (std::size_t j = 0; j < k; ++j) {
                    const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - half;
                    if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
                    const auto s = static_cast<std::size_t>(src);
                    for (std::size_t i = 0; i < d_in; ++i) {
                        const std::size_t wbase = (j * d_in + i) * d_out;
                        if (!dx.empty()) {
                            double acc = 0.0;
                            for (std::size_t o = 0; o < d_out; ++o) acc += g[t * d_out + o] * W[wbase + o];
                            dx[s * d_in + i] += acc;
                        }
                        if (!dw.empty()) {
                            const double xv = X[s * d_in + i];
                            for (std::size_t o = 0; o < d_out; ++o) dw[wbase + o] += xv * g[t * d_out + o];
                        }
                    }
                }
            }
            if (!dx.empty()) x.accumulate_grad(dx);
            if (!dw.empty()) weight.accumulate_grad(dw);
            if (bias.requires_grad()) {
                std::vector<double> db(d_out, 0.0);
                for (std::size_t t = 0; t < T; ++t)
                    for (std::size_t o = 0; o < d_out; ++o) db[o] += g[t * d_out + o];
                bias.accumulate_grad(db);
            }
        });
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must be in [0, 1), got " + std::to_string(rate));
    if (rate == 0.0) return x;
    const double keep_scale = 1.0 / (1.0 - rate);
    std::vector<double> mask(x.numel());
    for (double& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
    return mul(x, Tensor::from(x.shape(), std::move(mask)));
}

}  // namespace affect
