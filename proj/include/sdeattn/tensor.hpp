#pragma once

// Dense row-major double tensors with tape-based reverse-mode differentiation.
//
// A Tape activates for the current thread while it is alive; operations run
// under an active tape record nodes, operations run without one are plain
// arithmetic. Tensors with a grad slot (parameters) are registered as leaves
// the first time an op consumes them. Tape::backward accumulates d(loss)/d(p)
// into each leaf's grad slot, so callers zero the slots before use.
//
// One tape and its tensors form a single-threaded unit of work; independent
// tapes may run on different threads concurrently.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace sdeattn {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Trailing-aligned broadcast (dims equal or 1). Throws std::invalid_argument
// naming both shapes when they are incompatible.
Shape broadcast_shape(const Shape& a, const Shape& b);

class Tape;

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);  // zero-filled
    Tensor(Shape shape, std::vector<double> values);

    static Tensor scalar(double v);
    static Tensor full(Shape shape, double v);
    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    bool defined() const { return data_ != nullptr; }
    const Shape& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    std::int64_t dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::int64_t size() const { return data_ ? static_cast<std::int64_t>(data_->size()) : 0; }

    std::span<const double> data() const { return {data_->data(), data_->size()}; }
    std::span<double> mutable_data() { return {data_->data(), data_->size()}; }

    double value() const;  // scalar tensors only
    double operator()(std::int64_t i) const { return (*data_)[static_cast<std::size_t>(i)]; }
    double operator()(std::int64_t i, std::int64_t j) const;
    double operator()(std::int64_t i, std::int64_t j, std::int64_t k) const;

    Tensor& set_requires_grad(bool on = true);
    bool requires_grad() const { return grad_ != nullptr; }
    std::span<const double> grad() const { return {grad_->data(), grad_->size()}; }
    std::span<double> mutable_grad() { return {grad_->data(), grad_->size()}; }
    void zero_grad();

    bool all_finite() const;

    // Deep copy of the value buffer, no grad slot, no tape linkage.
    Tensor detached_copy() const;

    // Value buffer handle; ops keep it alive inside backward closures.
    std::shared_ptr<const std::vector<double>> values_ptr() const { return data_; }

private:
    friend class Tape;
    friend Tensor reshape(const Tensor&, Shape);

    std::shared_ptr<std::vector<double>> data_;
    std::shared_ptr<std::vector<double>> grad_;
    Shape shape_;
    // Which node of which tape produced (or tracks) this tensor. Cached so a
    // parameter touched many times maps to one leaf per tape.
    mutable std::int64_t node_ = -1;
    mutable std::uint64_t tape_id_ = 0;
};

class Tape {
public:
    using BackwardFn =
        std::function<void(std::span<const double> out_grad, Tape& tape, std::span<const std::int64_t> inputs)>;

    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active();

    bool recording() const { return recording_; }
    void set_recording(bool on) { recording_ = on; }
    std::int64_t num_nodes() const { return static_cast<std::int64_t>(nodes_.size()); }

    // loss must be scalar and recorded on this tape. Walks nodes newest to
    // oldest, visiting each at most once, then flushes leaf gradients into
    // parameter grad slots (accumulating).
    void backward(const Tensor& loss);

    // Drops all recorded state so the tape can host a fresh forward pass.
    void reset();

    // --- used by op implementations ---
    std::int64_t track(const Tensor& t);
    void attach(Tensor& out, std::vector<std::int64_t> inputs, BackwardFn fn);
    // Gradient buffer for a node, zero-initialized on first request; nullptr
    // for constant (-1) inputs.
    std::vector<double>* grad_for(std::int64_t node);

private:
    struct Node {
        std::vector<std::int64_t> inputs;
        std::int64_t size = 0;
        BackwardFn fn;
    };
    struct Leaf {
        std::int64_t node = -1;
        std::shared_ptr<std::vector<double>> slot;
    };

    std::uint64_t id_ = 0;
    bool recording_ = true;
    bool backward_done_ = false;
    std::vector<Node> nodes_;
    std::vector<std::vector<double>> grads_;
    std::vector<Leaf> leaves_;
    Tape* prev_ = nullptr;
};

// Suspends recording on the innermost active tape for the current scope.
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();

private:
    Tape* tape_ = nullptr;
    bool was_recording_ = false;
};

// ---- elementwise (trailing-dimension broadcasting) ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor scale(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);

// ---- shape ----
Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, const std::vector<int>& axes);
Tensor concat(std::span<const Tensor> parts, int axis);
// Gathers rows along axis 0 (repeats allowed); backward scatter-adds.
Tensor slice_time(const Tensor& a, std::span<const std::int64_t> indices);

// ---- contraction ----
// a[..., m, k] x b[k, n]  or batched a[p, m, k] x b[p, k, n].
Tensor matmul(const Tensor& a, const Tensor& b);

// ---- reductions ----
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor sum_axis(const Tensor& a, int axis);
Tensor mean_axis(const Tensor& a, int axis);

// ---- softmax ----
Tensor softmax(const Tensor& a, int axis);
// Rows of the trailing square [r, c] block attend to columns 0..r only.
Tensor causal_row_softmax(const Tensor& a);

// Fused cross-entropy over logits[b, c]; weights (size b) select/weight
// rows, their sum must be positive.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels, std::span<const double> weights);

// Divergence guard for x[b, ...]: any row containing a non-finite value (or
// already flagged in `diverged`) is zeroed and flagged; backward passes no
// gradient through flagged rows.
Tensor zero_nonfinite_rows(const Tensor& x, std::vector<std::uint8_t>& diverged);

}  // namespace sdeattn
