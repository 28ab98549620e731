#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "cocktail/rng.hpp"

// Dense n-dimensional tensors with tape-based reverse-mode differentiation.
// A Tensor is a cheap handle onto shared storage; operations allocate fresh
// outputs and, when a Tape is active and an input is attached to the graph,
// push a backward record onto that tape. Running Tape::backward replays the
// records in reverse and accumulates gradients additively into each storage's
// grad buffer.

namespace cocktail {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string r = "[";
    for (std::size_t i = 0; i < s.size(); ++i) r += (i ? "," : "") + std::to_string(s[i]);
    return r + "]";
}

// Global toggle: when on, every primitive validates that its output is finite
// and throws on NaN/Inf. Off by default; tests and selfcheck enable it, the
// trainer instead checks each step's loss.
inline bool& finite_checks() {
    static bool enabled = false;
    return enabled;
}

template <typename Real>
struct TensorData {
    Shape shape;
    std::vector<Real> values;
    std::vector<Real> grad;      // same length as values once touched by backward
    bool requires_grad = false;  // leaf parameter flag
    bool on_graph = false;       // produced by a recorded op or requires_grad
};

template <typename Real>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape) {
        return Tensor(std::move(shape), Real(0));
    }

    static Tensor full(Shape shape, Real value) {
        return Tensor(std::move(shape), value);
    }

    static Tensor from(Shape shape, std::vector<Real> values) {
        if (shape_numel(shape) != values.size())
            throw std::invalid_argument("tensor: data length does not match shape " + shape_str(shape));
        Tensor t;
        t.d_ = std::make_shared<TensorData<Real>>();
        t.d_->shape = std::move(shape);
        t.d_->values = std::move(values);
        return t;
    }

    static Tensor scalar(Real value) { return full({1}, value); }

    // Centered uniform scaled by fan-in: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    static Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
        const Real bound = Real(1) / std::sqrt(Real(fan_in > 0 ? fan_in : 1));
        Tensor t(std::move(shape), Real(0));
        for (auto& v : t.d_->values) v = static_cast<Real>(rng.uniform(-double(bound), double(bound)));
        return t;
    }

    static Tensor random_uniform(Shape shape, double lo, double hi, Rng& rng) {
        Tensor t(std::move(shape), Real(0));
        for (auto& v : t.d_->values) v = static_cast<Real>(rng.uniform(lo, hi));
        return t;
    }

    static Tensor random_normal(Shape shape, double stddev, Rng& rng) {
        Tensor t(std::move(shape), Real(0));
        for (auto& v : t.d_->values) v = static_cast<Real>(stddev * rng.normal());
        return t;
    }

    bool defined() const { return d_ != nullptr; }
    const Shape& shape() const { return d_->shape; }
    std::size_t rank() const { return d_->shape.size(); }
    std::size_t size(std::size_t axis) const { return d_->shape.at(axis); }
    std::size_t numel() const { return d_->values.size(); }

    Real* data() { return d_->values.data(); }
    const Real* data() const { return d_->values.data(); }
    std::vector<Real>& values() { return d_->values; }
    const std::vector<Real>& values() const { return d_->values; }

    Real item() const {
        if (numel() != 1) throw std::invalid_argument("item: tensor is not scalar, shape " + shape_str(shape()));
        return d_->values[0];
    }

    Real at(std::size_t i) const { return d_->values[i]; }

    bool requires_grad() const { return d_->requires_grad; }

    Tensor& set_requires_grad(bool on = true) {
        d_->requires_grad = on;
        d_->on_graph = d_->on_graph || on;
        if (on) ensure_grad();
        return *this;
    }

    bool on_graph() const { return d_->on_graph; }
    void mark_on_graph() { d_->on_graph = true; }

    // Lazily allocates a zero-filled gradient buffer of matching shape.
    void ensure_grad() {
        if (d_->grad.size() != d_->values.size()) d_->grad.assign(d_->values.size(), Real(0));
    }

    bool has_grad() const { return d_->grad.size() == d_->values.size(); }
    std::vector<Real>& grad() {
        ensure_grad();
        return d_->grad;
    }
    const std::vector<Real>& grad_view() const { return d_->grad; }

    void zero_grad() {
        if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), Real(0));
    }

    // Identical storage, not just equal values.
    bool same_storage(const Tensor& other) const { return d_ == other.d_; }

    Tensor detached_copy() const {
        Tensor t;
        t.d_ = std::make_shared<TensorData<Real>>();
        t.d_->shape = d_->shape;
        t.d_->values = d_->values;
        return t;
    }

    std::shared_ptr<TensorData<Real>> storage() const { return d_; }

private:
    Tensor(Shape shape, Real fill) {
        d_ = std::make_shared<TensorData<Real>>();
        d_->values.assign(shape_numel(shape), fill);
        d_->shape = std::move(shape);
    }

    std::shared_ptr<TensorData<Real>> d_;
};

template <typename Real>
inline void throw_if_nonfinite(const Tensor<Real>& t, const char* op) {
    if (!finite_checks()) return;
    for (Real v : t.values())
        if (!std::isfinite(v)) throw std::runtime_error(std::string(op) + ": non-finite value produced");
}

// One training step owns one tape. Records are appended in execution order,
// which is a topological order of the data-flow graph by construction;
// backward visits them exactly once, in reverse.
template <typename Real>
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape*& active() {
        thread_local Tape* current = nullptr;
        return current;
    }

    void record(std::function<void()> fn) { records_.push_back(std::move(fn)); }

    std::size_t size() const { return records_.size(); }

    // Seeds d(loss)/d(loss) = 1 and replays records in reverse. The tape is
    // freed afterwards unless retain_graph is set (gradient-check tooling).
    void backward(Tensor<Real> loss, bool retain_graph = false) {
        if (consumed_) throw std::logic_error("backward: tape already consumed");
        if (loss.numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
        loss.ensure_grad();
        loss.grad()[0] += Real(1);
        for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
        if (!retain_graph) {
            records_.clear();
            consumed_ = true;
        }
    }

private:
    std::vector<std::function<void()>> records_;
    bool consumed_ = false;
};

// RAII activation of a tape on the current thread.
template <typename Real>
class TapeScope {
public:
    explicit TapeScope(Tape<Real>& tape) : prev_(Tape<Real>::active()) { Tape<Real>::active() = &tape; }
    ~TapeScope() { Tape<Real>::active() = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape<Real>* prev_;
};

namespace detail {

template <typename Real>
inline bool track_any() { return false; }

template <typename Real, typename... Rest>
inline bool track_any(const Tensor<Real>& first, const Rest&... rest) {
    return first.on_graph() || track_any<Real>(rest...);
}

// Registers `bw` on the active tape when gradients must flow.
template <typename Real, typename... Inputs>
inline void maybe_record(Tensor<Real>& out, std::function<void()> bw, const Inputs&... inputs) {
    Tape<Real>* tape = Tape<Real>::active();
    if (tape != nullptr && track_any<Real>(inputs...)) {
        out.mark_on_graph();
        tape->record(std::move(bw));
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <typename Real>
inline void check_same_shape(const Tensor<Real>& a, const Tensor<Real>& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
}

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
    check_same_shape(a, b, "add");
    Tensor<Real> out = Tensor<Real>::zeros(a.shape());
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
    detail::maybe_record(
        out,
        [a = a, b = b, out = out]() mutable {
            const auto& g = out.grad();
            auto& ga = a.grad();
            auto& gb = b.grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i];
                gb[i] += g[i];
            }
        },
        a, b);
    throw_if_nonfinite(out, "add");
    return out;
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
    check_same_shape(a, b, "sub");
    Tensor<Real> out = Tensor<Real>::zeros(a.shape());
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
    detail::maybe_record(
        out,
        [a = a, b = b, out = out]() mutable {
            const auto& g = out.grad();
            auto& ga = a.grad();
            auto& gb = b.grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i];
                gb[i] -= g[i];
            }
        },
        a, b);
    throw_if_nonfinite(out, "sub");
    return out;
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
    check_same_shape(a, b, "mul");
    Tensor<Real> out = Tensor<Real>::zeros(a.shape());
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
    detail::maybe_record(
        out,
        [a = a, b = b, out = out]() mutable {
            const auto& g = out.grad();
            auto& ga = a.grad();
            auto& gb = b.grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i] * b.data()[i];
                gb[i] += g[i] * a.data()[i];
            }
        },
        a, b);
    throw_if_nonfinite(out, "mul");
    return out;
}

template <typename Real>
Tensor<Real> add_scalar(const Tensor<Real>& a, Real c) {
    Tensor<Real> out = Tensor<Real>::zeros(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] + c;
    detail::maybe_record(
        out,
        [a = a, out = out]() mutable {
            const auto& g = out.grad();
            auto& ga = a.grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        },
        a);
    throw_if_nonfinite(out, "add_scalar");
    return out;
}

template <typename Real>
Tensor<Real> mul_scalar(const Tensor<Real>& a, Real c) {
    Tensor<Real> out = Tensor<Real>::zeros(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] * c;
    detail::maybe_record(
        out,
        [a = a, out = out, c]() mutable {
            const auto& g = out.grad();
            auto& ga = a.grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
        },
        a);
    throw_if_nonfinite(out, "mul_scalar");
    return out;
}

template <typename Real>
Tensor<Real> div_scalar(const Tensor<Real>& a, Real c) {
    Tensor<Real> out = Tensor<Real>::zeros(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] / c;
    detail::maybe_record(
        out,
        [a = a, out = out, c]() mutable {
            const auto& g = out.grad();
            auto& ga = a.grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / c;
        },
        a);
    throw_if_nonfinite(out, "div_scalar");
    return out;
}

template <typename Real>
Tensor<Real> neg(const Tensor<Real>& a) {
    return mul_scalar(a, Real(-1));
}

// ---------------------------------------------------------------------------
// Pointwise activations
// ---------------------------------------------------------------------------

enum class Pointwise { Relu, Sigmoid, Tanh, Log1p, Exp, Softplus };

namespace detail {

template <typename Real>
inline Real pw_forward(Pointwise kind, Real x) {
    switch (kind) {
        case Pointwise::Relu: return x > Real(0) ? x : Real(0);
        case Pointwise::Sigmoid:
            return x >= Real(0) ? Real(1) / (Real(1) + std::exp(-x))
                                : std::exp(x) / (Real(1) + std::exp(x));
        case Pointwise::Tanh: return std::tanh(x);
        case Pointwise::Log1p: return std::log1p(x);
        case Pointwise::Exp: return std::exp(x);
        case Pointwise::Softplus:
            return std::max(x, Real(0)) + std::log1p(std::exp(-std::abs(x)));
    }
    return Real(0);
}

// Derivative expressed with the saved forward output where possible.
template <typename Real>
inline Real pw_backward(Pointwise kind, Real x, Real y) {
    switch (kind) {
        case Pointwise::Relu: return x > Real(0) ? Real(1) : Real(0);
        case Pointwise::Sigmoid: return y * (Real(1) - y);
        case Pointwise::Tanh: return Real(1) - y * y;
        case Pointwise::Log1p: return Real(1) / (Real(1) + x);
        case Pointwise::Exp: return y;
        case Pointwise::Softplus: return pw_forward(Pointwise::Sigmoid, x);
    }
    return Real(0);
}

}  // namespace detail

template <typename Real>
Tensor<Real> pointwise(Pointwise kind, const Tensor<Real>& a) {
    Tensor<Real> out = Tensor<Real>::zeros(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = detail::pw_forward(kind, a.data()[i]);
    detail::maybe_record(
        out,
        [a = a, out = out, kind]() mutable {
            const auto& g = out.grad();
            auto& ga = a.grad();
            for (std::size_t i = 0; i < g.size(); ++i)
                ga[i] += g[i] * detail::pw_backward(kind, a.data()[i], out.data()[i]);
        },
        a);
    throw_if_nonfinite(out, "pointwise");
    return out;
}

template <typename Real> Tensor<Real> relu(const Tensor<Real>& x) { return pointwise(Pointwise::Relu, x); }
template <typename Real> Tensor<Real> sigmoid(const Tensor<Real>& x) { return pointwise(Pointwise::Sigmoid, x); }
template <typename Real> Tensor<Real> tanh_(const Tensor<Real>& x) { return pointwise(Pointwise::Tanh, x); }
template <typename Real> Tensor<Real> log1p_(const Tensor<Real>& x) { return pointwise(Pointwise::Log1p, x); }
template <typename Real> Tensor<Real> exp_(const Tensor<Real>& x) { return pointwise(Pointwise::Exp, x); }
template <typename Real> Tensor<Real> softplus(const Tensor<Real>& x) { return pointwise(Pointwise::Softplus, x); }

// log(max(x, floor)); gradient is zero on the clamped branch. Used by the
// cross-entropy losses so probability zero cannot produce -inf.
template <typename Real>
Tensor<Real> clamped_log(const Tensor<Real>& a, Real floor_value = Real(1e-12)) {
    Tensor<Real> out = Tensor<Real>::zeros(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = std::log(std::max(a.data()[i], floor_value));
    detail::maybe_record(
        out,
        [a = a, out = out, floor_value]() mutable {
            const auto& g = out.grad();
            auto& ga = a.grad();
            for (std::size_t i = 0; i < g.size(); ++i)
                if (a.data()[i] > floor_value) ga[i] += g[i] / a.data()[i];
        },
        a);
    throw_if_nonfinite(out, "clamped_log");
    return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

enum class Reduce { Sum, Mean };

namespace detail {

inline void validate_axes(const Shape& shape, const std::vector<std::size_t>& axes) {
    for (std::size_t ax : axes)
        if (ax >= shape.size()) throw std::invalid_argument("reduce: invalid axis " + std::to_string(ax));
}

}  // namespace detail

// Reduces over the given axes (all axes when empty). Reduced axes are
// removed from the shape; a full reduction yields shape [1].
template <typename Real>
Tensor<Real> reduce(const Tensor<Real>& a, Reduce mode, std::vector<std::size_t> axes = {}) {
    detail::validate_axes(a.shape(), axes);
    const bool full = axes.empty() || axes.size() == a.rank();
    if (full) {
        Real acc = Real(0);
        for (std::size_t i = 0; i < a.numel(); ++i) acc += a.data()[i];
        const Real denom = mode == Reduce::Mean ? Real(a.numel()) : Real(1);
        Tensor<Real> out = Tensor<Real>::scalar(acc / denom);
        detail::maybe_record(
            out,
            [a = a, out = out, denom]() mutable {
                const Real g = out.grad()[0] / denom;
                auto& ga = a.grad();
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
            },
            a);
        throw_if_nonfinite(out, "reduce");
        return out;
    }

    std::sort(axes.begin(), axes.end());
    std::vector<bool> reduced(a.rank(), false);
    for (std::size_t ax : axes) reduced[ax] = true;
    Shape out_shape;
    std::size_t count = 1;
    for (std::size_t d = 0; d < a.rank(); ++d) {
        if (reduced[d]) count *= a.shape()[d];
        else out_shape.push_back(a.shape()[d]);
    }
    if (out_shape.empty()) out_shape = {1};

    // Row-major index mapping input -> output.
    const Shape& in_shape = a.shape();
    std::vector<std::size_t> out_stride(a.rank(), 0);
    {
        std::size_t stride = 1;
        for (std::size_t d = a.rank(); d-- > 0;) {
            if (!reduced[d]) {
                out_stride[d] = stride;
                stride *= in_shape[d];
            }
        }
    }
    auto map_index = [&](std::size_t flat) {
        std::size_t out_idx = 0;
        for (std::size_t d = a.rank(); d-- > 0;) {
            const std::size_t coord = flat % in_shape[d];
            flat /= in_shape[d];
            out_idx += coord * out_stride[d];
        }
        return out_idx;
    };

    Tensor<Real> out = Tensor<Real>::zeros(out_shape);
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[map_index(i)] += a.data()[i];
    const Real denom = mode == Reduce::Mean ? Real(count) : Real(1);
    if (mode == Reduce::Mean)
        for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] /= denom;

    detail::maybe_record(
        out,
        [a = a, out = out, map_index, denom]() mutable {
            const auto& g = out.grad();
            auto& ga = a.grad();
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[map_index(i)] / denom;
        },
        a);
    throw_if_nonfinite(out, "reduce");
    return out;
}

template <typename Real>
Tensor<Real> reduce_sum(const Tensor<Real>& a, std::vector<std::size_t> axes = {}) {
    return reduce(a, Reduce::Sum, std::move(axes));
}

template <typename Real>
Tensor<Real> reduce_mean(const Tensor<Real>& a, std::vector<std::size_t> axes = {}) {
    return reduce(a, Reduce::Mean, std::move(axes));
}

// ---------------------------------------------------------------------------
// Softmax / channel max
// ---------------------------------------------------------------------------

// Softmax along `axis`, computed with max-subtraction.
template <typename Real>
Tensor<Real> softmax(const Tensor<Real>& a, std::size_t axis) {
    if (axis >= a.rank()) throw std::invalid_argument("softmax: invalid axis");
    const Shape& shape = a.shape();
    const std::size_t k = shape[axis];
    std::size_t inner = 1, outer = 1;
    for (std::size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];
    for (std::size_t d = 0; d < axis; ++d) outer *= shape[d];

    Tensor<Real> out = Tensor<Real>::zeros(shape);
    const Real* x = a.data();
    Real* y = out.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * k * inner + in;
            Real mx = x[base];
            for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, x[base + j * inner]);
            Real denom = Real(0);
            for (std::size_t j = 0; j < k; ++j) {
                const Real e = std::exp(x[base + j * inner] - mx);
                y[base + j * inner] = e;
                denom += e;
            }
            for (std::size_t j = 0; j < k; ++j) y[base + j * inner] /= denom;
        }
    }
    detail::maybe_record(
        out,
        [a = a, out = out, k, inner, outer]() mutable {
            const auto& g = out.grad();
            auto& ga = a.grad();
            const Real* y = out.data();
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t in = 0; in < inner; ++in) {
                    const std::size_t base = o * k * inner + in;
                    Real dot = Real(0);
                    for (std::size_t j = 0; j < k; ++j) dot += g[base + j * inner] * y[base + j * inner];
                    for (std::size_t j = 0; j < k; ++j)
                        ga[base + j * inner] += y[base + j * inner] * (g[base + j * inner] - dot);
                }
            }
        },
        a);
    throw_if_nonfinite(out, "softmax");
    return out;
}

// [C,K] -> [K]: max over the channel rows. Gradient routes to the argmax
// row only; ties resolve to the lowest row index.
template <typename Real>
Tensor<Real> channel_max(const Tensor<Real>& a) {
    if (a.rank() != 2) throw std::invalid_argument("channel_max: expected rank-2 [C,K] input");
    const std::size_t c = a.size(0), k = a.size(1);
    if (c < 1) throw std::invalid_argument("channel_max: need at least one channel");
    Tensor<Real> out = Tensor<Real>::zeros({k});
    auto argmax = std::make_shared<std::vector<std::size_t>>(k, 0);
    for (std::size_t j = 0; j < k; ++j) {
        Real best = a.data()[j];
        std::size_t best_row = 0;
        for (std::size_t row = 1; row < c; ++row) {
            const Real v = a.data()[row * k + j];
            if (v > best) {
                best = v;
                best_row = row;
            }
        }
        out.data()[j] = best;
        (*argmax)[j] = best_row;
    }
    detail::maybe_record(
        out,
        [a = a, out = out, argmax, k]() mutable {
            const auto& g = out.grad();
            auto& ga = a.grad();
            for (std::size_t j = 0; j < k; ++j) ga[(*argmax)[j] * k + j] += g[j];
        },
        a);
    throw_if_nonfinite(out, "channel_max");
    return out;
}

// ---------------------------------------------------------------------------
// Shape surgery: reshape / slice / concat
// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& a, Shape new_shape) {
    if (shape_numel(new_shape) != a.numel())
        throw std::invalid_argument("reshape: element count mismatch for " + shape_str(new_shape));
    Tensor<Real> out = Tensor<Real>::from(std::move(new_shape), a.values());
    detail::maybe_record(
        out,
        [a = a, out = out]() mutable {
            const auto& g = out.grad();
            auto& ga = a.grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        },
        a);
    return out;
}

// Contiguous range [start, start+len) along `axis`.
template <typename Real>
Tensor<Real> slice(const Tensor<Real>& a, std::size_t axis, std::size_t start, std::size_t len) {
    if (axis >= a.rank()) throw std::invalid_argument("slice: invalid axis");
    if (start + len > a.shape()[axis]) throw std::invalid_argument("slice: range out of bounds");
    Shape out_shape = a.shape();
    out_shape[axis] = len;
    std::size_t inner = 1, outer = 1;
    for (std::size_t d = axis + 1; d < a.rank(); ++d) inner *= a.shape()[d];
    for (std::size_t d = 0; d < axis; ++d) outer *= a.shape()[d];
    const std::size_t in_k = a.shape()[axis];

    Tensor<Real> out = Tensor<Real>::zeros(out_shape);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t j = 0; j < len; ++j)
            std::copy_n(a.data() + (o * in_k + start + j) * inner, inner, out.data() + (o * len + j) * inner);

    detail::maybe_record(
        out,
        [a = a, out = out, inner, outer, in_k, start, len]() mutable {
            const auto& g = out.grad();
            auto& ga = a.grad();
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t j = 0; j < len; ++j) {
                    const Real* gs = g.data() + (o * len + j) * inner;
                    Real* gd = ga.data() + (o * in_k + start + j) * inner;
                    for (std::size_t i = 0; i < inner; ++i) gd[i] += gs[i];
                }
        },
        a);
    return out;
}

template <typename Real>
Tensor<Real> concat(const std::vector<Tensor<Real>>& parts, std::size_t axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    const Shape& ref = parts[0].shape();
    if (axis >= ref.size()) throw std::invalid_argument("concat: invalid axis");
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != ref.size()) throw std::invalid_argument("concat: rank mismatch");
        for (std::size_t d = 0; d < ref.size(); ++d)
            if (d != axis && p.shape()[d] != ref[d]) throw std::invalid_argument("concat: shape mismatch");
        total += p.shape()[axis];
    }
    Shape out_shape = ref;
    out_shape[axis] = total;
    std::size_t inner = 1, outer = 1;
    for (std::size_t d = axis + 1; d < ref.size(); ++d) inner *= ref[d];
    for (std::size_t d = 0; d < axis; ++d) outer *= ref[d];

    Tensor<Real> out = Tensor<Real>::zeros(out_shape);
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t pk = p.shape()[axis];
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(p.data() + o * pk * inner, pk * inner, out.data() + (o * total + offset) * inner);
        offset += pk;
    }

    bool track = false;
    for (const auto& p : parts) track = track || p.on_graph();
    Tape<Real>* tape = Tape<Real>::active();
    if (tape != nullptr && track) {
        out.mark_on_graph();
        tape->record([parts = parts, out = out, axis, inner, outer, total]() mutable {
            const auto& g = out.grad();
            std::size_t offset = 0;
            for (auto& p : parts) {
                const std::size_t pk = p.shape()[axis];
                auto& gp = p.grad();
                for (std::size_t o = 0; o < outer; ++o) {
                    const Real* gs = g.data() + (o * total + offset) * inner;
                    Real* gd = gp.data() + o * pk * inner;
                    for (std::size_t i = 0; i < pk * inner; ++i) gd[i] += gs[i];
                }
                offset += pk;
            }
        });
    }
    throw_if_nonfinite(out, "concat");
    return out;
}

}  // namespace cocktail
