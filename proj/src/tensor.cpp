#include "sdeattn/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace sdeattn {

namespace {

thread_local Tape* g_active_tape = nullptr;
std::atomic<std::uint64_t> g_tape_counter{1};

#ifndef NDEBUG
void debug_check_finite(const Tensor& t, const char* op) {
    if (!t.all_finite()) throw std::runtime_error(std::string("non-finite values produced by op '") + op + "'");
}
#else
void debug_check_finite(const Tensor&, const char*) {}
#endif

// Row-major strides of `in` right-aligned against `out`; broadcast dims get
// stride 0.
std::vector<std::int64_t> broadcast_strides(const Shape& in, const Shape& out) {
    const int nd_out = static_cast<int>(out.size());
    const int nd_in = static_cast<int>(in.size());
    std::vector<std::int64_t> strides(static_cast<std::size_t>(nd_out), 0);
    std::int64_t s = 1;
    for (int d = nd_in - 1; d >= 0; --d) {
        const int od = d + (nd_out - nd_in);
        if (in[static_cast<std::size_t>(d)] != 1) strides[static_cast<std::size_t>(od)] = s;
        s *= in[static_cast<std::size_t>(d)];
    }
    return strides;
}

// Calls f(out_offset, a_offset, b_offset) for every element of `out`.
template <class F>
void walk2(const Shape& out, const Shape& sa, const Shape& sb, F&& f) {
    const std::int64_t n = numel(out);
    if (sa == out && sb == out) {
        for (std::int64_t i = 0; i < n; ++i) f(i, i, i);
        return;
    }
    const auto stra = broadcast_strides(sa, out);
    const auto strb = broadcast_strides(sb, out);
    const int nd = static_cast<int>(out.size());
    if (nd == 0) {
        f(0, 0, 0);
        return;
    }
    std::vector<std::int64_t> idx(static_cast<std::size_t>(nd), 0);
    std::int64_t oa = 0, ob = 0;
    for (std::int64_t o = 0; o < n; ++o) {
        f(o, oa, ob);
        for (int d = nd - 1; d >= 0; --d) {
            const auto ud = static_cast<std::size_t>(d);
            ++idx[ud];
            oa += stra[ud];
            ob += strb[ud];
            if (idx[ud] < out[ud]) break;
            oa -= stra[ud] * out[ud];
            ob -= strb[ud] * out[ud];
            idx[ud] = 0;
        }
    }
}

// Value buffers are immutable while a tape is alive, so backward closures can
// hold the buffer itself instead of a copy.
std::shared_ptr<const std::vector<double>> share(const Tensor& t) { return t.values_ptr(); }

void mm(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k, std::int64_t n,
        bool accumulate) {
    if (!accumulate) std::fill(c, c + m * n, 0.0);
    for (std::int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::int64_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c[m,n] += a[m,k] * b[n,k]^T
void mm_a_bt(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k, std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::int64_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double acc = 0.0;
            for (std::int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

// c[k,n] += a[m,k]^T * b[m,n]
void mm_at_b(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k, std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * n;
        for (std::int64_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            double* crow = c + p * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
    const int nd = std::max(static_cast<int>(a.size()), static_cast<int>(b.size()));
    Shape out(static_cast<std::size_t>(nd), 1);
    for (int d = 0; d < nd; ++d) {
        const int da = d - (nd - static_cast<int>(a.size()));
        const int db = d - (nd - static_cast<int>(b.size()));
        const std::int64_t ea = da >= 0 ? a[static_cast<std::size_t>(da)] : 1;
        const std::int64_t eb = db >= 0 ? b[static_cast<std::size_t>(db)] : 1;
        if (ea != eb && ea != 1 && eb != 1)
            throw std::invalid_argument("shapes not broadcastable: " + shape_to_string(a) + " vs " +
                                        shape_to_string(b));
        out[static_cast<std::size_t>(d)] = std::max(ea, eb);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape)
    : data_(std::make_shared<std::vector<double>>(static_cast<std::size_t>(numel(shape)), 0.0)),
      shape_(std::move(shape)) {
    for (auto d : shape_)
        if (d < 0) throw std::invalid_argument("negative extent in shape " + shape_to_string(shape_));
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : data_(std::make_shared<std::vector<double>>(std::move(values))), shape_(std::move(shape)) {
    if (numel(shape_) != static_cast<std::int64_t>(data_->size()))
        throw std::invalid_argument("shape " + shape_to_string(shape_) + " does not match value count " +
                                    std::to_string(data_->size()));
}

Tensor Tensor::scalar(double v) { return Tensor({}, std::vector<double>{v}); }

Tensor Tensor::full(Shape shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_->begin(), t.data_->end(), v);
    return t;
}

double Tensor::value() const {
    if (size() != 1) throw std::invalid_argument("value() requires a scalar, got shape " + shape_to_string(shape_));
    return (*data_)[0];
}

double Tensor::operator()(std::int64_t i, std::int64_t j) const {
    return (*data_)[static_cast<std::size_t>(i * shape_[1] + j)];
}

double Tensor::operator()(std::int64_t i, std::int64_t j, std::int64_t k) const {
    return (*data_)[static_cast<std::size_t>((i * shape_[1] + j) * shape_[2] + k)];
}

Tensor& Tensor::set_requires_grad(bool on) {
    if (on && !grad_) {
        grad_ = std::make_shared<std::vector<double>>(data_->size(), 0.0);
    } else if (!on) {
        grad_.reset();
    }
    return *this;
}

void Tensor::zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0);
}

bool Tensor::all_finite() const {
    for (double v : *data_)
        if (!std::isfinite(v)) return false;
    return true;
}

Tensor Tensor::detached_copy() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = std::make_shared<std::vector<double>>(*data_);
    return t;
}

// ---------------------------------------------------------------------------
// Tape

Tape::Tape() : id_(g_tape_counter.fetch_add(1)), prev_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

std::int64_t Tape::track(const Tensor& t) {
    if (t.tape_id_ == id_) return t.node_;
    if (!t.requires_grad()) return -1;
    const auto node = static_cast<std::int64_t>(nodes_.size());
    nodes_.push_back(Node{{}, t.size(), nullptr});
    leaves_.push_back(Leaf{node, t.grad_});
    t.node_ = node;
    t.tape_id_ = id_;
    return node;
}

void Tape::attach(Tensor& out, std::vector<std::int64_t> inputs, BackwardFn fn) {
    bool any = false;
    for (auto i : inputs) any = any || (i >= 0);
    if (!any) return;
    const auto node = static_cast<std::int64_t>(nodes_.size());
    nodes_.push_back(Node{std::move(inputs), out.size(), std::move(fn)});
    out.node_ = node;
    out.tape_id_ = id_;
}

std::vector<double>* Tape::grad_for(std::int64_t node) {
    if (node < 0) return nullptr;
    auto& g = grads_[static_cast<std::size_t>(node)];
    if (g.empty()) g.assign(static_cast<std::size_t>(nodes_[static_cast<std::size_t>(node)].size), 0.0);
    return &g;
}

void Tape::backward(const Tensor& loss) {
    if (backward_done_) throw std::runtime_error("backward called twice on the same tape without reset");
    if (loss.size() != 1)
        throw std::invalid_argument("backward requires a scalar loss, got shape " + shape_to_string(loss.shape()));
    if (loss.tape_id_ != id_ || loss.node_ < 0)
        throw std::invalid_argument("loss was not produced under this tape");
    backward_done_ = true;

    grads_.assign(nodes_.size(), {});
    grads_[static_cast<std::size_t>(loss.node_)] = {1.0};
    for (std::int64_t k = loss.node_; k >= 0; --k) {
        auto& g = grads_[static_cast<std::size_t>(k)];
        if (g.empty()) continue;
        const auto& node = nodes_[static_cast<std::size_t>(k)];
        if (node.fn) node.fn(g, *this, node.inputs);
    }
    for (const auto& leaf : leaves_) {
        const auto& g = grads_[static_cast<std::size_t>(leaf.node)];
        if (g.empty()) continue;
        auto& slot = *leaf.slot;
        for (std::size_t i = 0; i < slot.size(); ++i) slot[i] += g[i];
    }
    grads_.clear();
}

void Tape::reset() {
    nodes_.clear();
    grads_.clear();
    leaves_.clear();
    backward_done_ = false;
    id_ = g_tape_counter.fetch_add(1);
}

NoGradGuard::NoGradGuard() : tape_(Tape::active()) {
    if (tape_) {
        was_recording_ = tape_->recording();
        tape_->set_recording(false);
    }
}

NoGradGuard::~NoGradGuard() {
    if (tape_) tape_->set_recording(was_recording_);
}

namespace {

Tape* recording_tape() {
    Tape* t = Tape::active();
    return (t && t->recording()) ? t : nullptr;
}

// Shared scaffolding for broadcasting binary ops. fwd(x, y) computes the
// value; dfa/dfb(g, x, y) give the contributions to each input's gradient.
template <class Fwd, class Dfa, class Dfb>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, Dfa dfa, Dfb dfb) {
    const Shape out_shape = broadcast_shape(a.shape(), b.shape());
    Tensor out(out_shape);
    {
        auto od = out.mutable_data();
        auto ad = a.data();
        auto bd = b.data();
        walk2(out_shape, a.shape(), b.shape(),
              [&](std::int64_t o, std::int64_t oa, std::int64_t ob) { od[o] = fwd(ad[oa], bd[ob]); });
    }
    debug_check_finite(out, name);
    if (Tape* tape = recording_tape()) {
        const auto na = tape->track(a);
        const auto nb = tape->track(b);
        if (na >= 0 || nb >= 0) {
            auto ad = share(a);
            auto bd = share(b);
            auto sa = a.shape();
            auto sb = b.shape();
            tape->attach(out, {na, nb},
                         [=](std::span<const double> g, Tape& tp, std::span<const std::int64_t> in) {
                             auto* ga = tp.grad_for(in[0]);
                             auto* gb = tp.grad_for(in[1]);
                             walk2(out_shape, sa, sb, [&](std::int64_t o, std::int64_t oa, std::int64_t ob) {
                                 if (ga) (*ga)[static_cast<std::size_t>(oa)] += dfa(g[o], (*ad)[oa], (*bd)[ob]);
                                 if (gb) (*gb)[static_cast<std::size_t>(ob)] += dfb(g[o], (*ad)[oa], (*bd)[ob]);
                             });
                         });
        }
    }
    return out;
}

template <class Fwd, class Dfx>
Tensor unary_op(const char* name, const Tensor& a, Fwd fwd, Dfx dfx, bool save_output) {
    Tensor out(a.shape());
    {
        auto od = out.mutable_data();
        auto ad = a.data();
        for (std::int64_t i = 0; i < a.size(); ++i) od[i] = fwd(ad[i]);
    }
    debug_check_finite(out, name);
    if (Tape* tape = recording_tape()) {
        const auto na = tape->track(a);
        if (na >= 0) {
            // dfx receives the saved buffer: output when save_output, else input.
            auto saved = save_output ? share(out) : share(a);
            tape->attach(out, {na}, [=](std::span<const double> g, Tape& tp, std::span<const std::int64_t> in) {
                auto* ga = tp.grad_for(in[0]);
                if (!ga) return;
                for (std::size_t i = 0; i < g.size(); ++i)
                    (*ga)[i] += dfx(g[i], (*saved)[i]);
            });
        }
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// elementwise

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        "add", a, b, [](double x, double y) { return x + y; }, [](double g, double, double) { return g; },
        [](double g, double, double) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        "sub", a, b, [](double x, double y) { return x - y; }, [](double g, double, double) { return g; },
        [](double g, double, double) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        "mul", a, b, [](double x, double y) { return x * y; }, [](double g, double, double y) { return g * y; },
        [](double g, double x, double) { return g * x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(
        "div", a, b, [](double x, double y) { return x / y; }, [](double g, double, double y) { return g / y; },
        [](double g, double x, double y) { return -g * x / (y * y); });
}

Tensor add_scalar(const Tensor& a, double c) {
    return unary_op(
        "add_scalar", a, [c](double x) { return x + c; }, [](double g, double) { return g; }, false);
}

Tensor scale(const Tensor& a, double c) {
    return unary_op(
        "scale", a, [c](double x) { return x * c; }, [c](double g, double) { return g * c; }, false);
}

Tensor neg(const Tensor& a) {
    return unary_op(
        "neg", a, [](double x) { return -x; }, [](double g, double) { return -g; }, false);
}

Tensor exp(const Tensor& a) {
    return unary_op(
        "exp", a, [](double x) { return std::exp(x); }, [](double g, double y) { return g * y; }, true);
}

Tensor log(const Tensor& a) {
    return unary_op(
        "log", a, [](double x) { return std::log(x); }, [](double g, double x) { return g / x; }, false);
}

Tensor tanh(const Tensor& a) {
    return unary_op(
        "tanh", a, [](double x) { return std::tanh(x); }, [](double g, double y) { return g * (1.0 - y * y); },
        true);
}

Tensor sigmoid(const Tensor& a) {
    return unary_op(
        "sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
        [](double g, double y) { return g * y * (1.0 - y); }, true);
}

// ---------------------------------------------------------------------------
// shape ops

Tensor reshape(const Tensor& a, Shape shape) {
    if (numel(shape) != a.size())
        throw std::invalid_argument("reshape to " + shape_to_string(shape) + " changes element count of " +
                                    shape_to_string(a.shape()));
    Tensor out;
    out.shape_ = std::move(shape);
    out.data_ = a.data_;  // element order is unchanged, share the buffer
    if (Tape* tape = recording_tape()) {
        const auto na = tape->track(a);
        if (na >= 0) {
            tape->attach(out, {na}, [](std::span<const double> g, Tape& tp, std::span<const std::int64_t> in) {
                auto* ga = tp.grad_for(in[0]);
                if (!ga) return;
                for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
            });
        }
    }
    return out;
}

namespace {

void permute_data(std::span<const double> src, std::span<double> dst, const Shape& in_shape,
                  const std::vector<int>& axes) {
    const int nd = static_cast<int>(in_shape.size());
    std::vector<std::int64_t> in_strides(static_cast<std::size_t>(nd), 1);
    for (int d = nd - 2; d >= 0; --d)
        in_strides[static_cast<std::size_t>(d)] =
            in_strides[static_cast<std::size_t>(d + 1)] * in_shape[static_cast<std::size_t>(d + 1)];
    Shape out_shape(static_cast<std::size_t>(nd));
    std::vector<std::int64_t> src_stride_for_out(static_cast<std::size_t>(nd));
    for (int d = 0; d < nd; ++d) {
        out_shape[static_cast<std::size_t>(d)] = in_shape[static_cast<std::size_t>(axes[static_cast<std::size_t>(d)])];
        src_stride_for_out[static_cast<std::size_t>(d)] = in_strides[static_cast<std::size_t>(axes[static_cast<std::size_t>(d)])];
    }
    std::vector<std::int64_t> idx(static_cast<std::size_t>(nd), 0);
    std::int64_t off = 0;
    const std::int64_t n = static_cast<std::int64_t>(src.size());
    for (std::int64_t o = 0; o < n; ++o) {
        dst[static_cast<std::size_t>(o)] = src[static_cast<std::size_t>(off)];
        for (int d = nd - 1; d >= 0; --d) {
            const auto ud = static_cast<std::size_t>(d);
            ++idx[ud];
            off += src_stride_for_out[ud];
            if (idx[ud] < out_shape[ud]) break;
            off -= src_stride_for_out[ud] * out_shape[ud];
            idx[ud] = 0;
        }
    }
}

}  // namespace

Tensor permute(const Tensor& a, const std::vector<int>& axes) {
    const int nd = a.ndim();
    if (static_cast<int>(axes.size()) != nd) throw std::invalid_argument("permute axes rank mismatch");
    std::vector<bool> seen(static_cast<std::size_t>(nd), false);
    for (int ax : axes) {
        if (ax < 0 || ax >= nd || seen[static_cast<std::size_t>(ax)])
            throw std::invalid_argument("permute axes must be a permutation of 0.." + std::to_string(nd - 1));
        seen[static_cast<std::size_t>(ax)] = true;
    }
    Shape out_shape(static_cast<std::size_t>(nd));
    for (int d = 0; d < nd; ++d) out_shape[static_cast<std::size_t>(d)] = a.dim(axes[static_cast<std::size_t>(d)]);
    Tensor out(out_shape);
    permute_data(a.data(), out.mutable_data(), a.shape(), axes);
    if (Tape* tape = recording_tape()) {
        const auto na = tape->track(a);
        if (na >= 0) {
            std::vector<int> inverse(axes.size());
            for (int d = 0; d < nd; ++d) inverse[static_cast<std::size_t>(axes[static_cast<std::size_t>(d)])] = d;
            tape->attach(out, {na},
                         [inverse, out_shape](std::span<const double> g, Tape& tp, std::span<const std::int64_t> in) {
                             auto* ga = tp.grad_for(in[0]);
                             if (!ga) return;
                             std::vector<double> tmp(g.size());
                             permute_data(g, tmp, out_shape, inverse);
                             for (std::size_t i = 0; i < tmp.size(); ++i) (*ga)[i] += tmp[i];
                         });
        }
    }
    return out;
}

Tensor concat(std::span<const Tensor> parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat of zero tensors");
    const int nd = parts[0].ndim();
    if (axis < 0 || axis >= nd) throw std::invalid_argument("concat axis out of range");
    Shape out_shape = parts[0].shape();
    std::int64_t total = 0;
    for (const auto& p : parts) {
        if (p.ndim() != nd) throw std::invalid_argument("concat rank mismatch");
        for (int d = 0; d < nd; ++d)
            if (d != axis && p.dim(d) != out_shape[static_cast<std::size_t>(d)])
                throw std::invalid_argument("concat shape mismatch: " + shape_to_string(p.shape()) + " vs " +
                                            shape_to_string(parts[0].shape()));
        total += p.dim(axis);
    }
    out_shape[static_cast<std::size_t>(axis)] = total;

    std::int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= out_shape[static_cast<std::size_t>(d)];
    for (int d = axis + 1; d < nd; ++d) inner *= out_shape[static_cast<std::size_t>(d)];

    Tensor out(out_shape);
    auto od = out.mutable_data();
    std::int64_t col = 0;
    std::vector<std::int64_t> offsets;
    offsets.reserve(parts.size());
    for (const auto& p : parts) {
        offsets.push_back(col);
        const auto pd = p.data();
        const std::int64_t block = p.dim(axis) * inner;
        for (std::int64_t r = 0; r < outer; ++r)
            std::copy_n(pd.data() + r * block, block, od.data() + r * total * inner + col * inner);
        col += p.dim(axis);
    }

    if (Tape* tape = recording_tape()) {
        std::vector<std::int64_t> ids;
        std::vector<std::int64_t> widths;
        bool any = false;
        for (const auto& p : parts) {
            ids.push_back(tape->track(p));
            widths.push_back(p.dim(axis));
            any = any || ids.back() >= 0;
        }
        if (any) {
            tape->attach(out, std::move(ids),
                         [outer, inner, total, widths, offsets](std::span<const double> g, Tape& tp,
                                                                std::span<const std::int64_t> in) {
                             for (std::size_t pi = 0; pi < in.size(); ++pi) {
                                 auto* gp = tp.grad_for(in[pi]);
                                 if (!gp) continue;
                                 const std::int64_t block = widths[pi] * inner;
                                 for (std::int64_t r = 0; r < outer; ++r) {
                                     const double* src = g.data() + r * total * inner + offsets[pi] * inner;
                                     double* dst = gp->data() + r * block;
                                     for (std::int64_t i = 0; i < block; ++i) dst[i] += src[i];
                                 }
                             }
                         });
        }
    }
    return out;
}

Tensor slice_time(const Tensor& a, std::span<const std::int64_t> indices) {
    if (a.ndim() < 1) throw std::invalid_argument("slice_time requires rank >= 1");
    const std::int64_t rows = a.dim(0);
    for (auto i : indices)
        if (i < 0 || i >= rows)
            throw std::invalid_argument("slice_time index " + std::to_string(i) + " out of range [0," +
                                        std::to_string(rows) + ")");
    Shape out_shape = a.shape();
    out_shape[0] = static_cast<std::int64_t>(indices.size());
    const std::int64_t row_size = rows > 0 ? a.size() / rows : 0;
    Tensor out(out_shape);
    auto od = out.mutable_data();
    auto ad = a.data();
    for (std::size_t r = 0; r < indices.size(); ++r)
        std::copy_n(ad.data() + indices[r] * row_size, row_size, od.data() + static_cast<std::int64_t>(r) * row_size);
    if (Tape* tape = recording_tape()) {
        const auto na = tape->track(a);
        if (na >= 0) {
            std::vector<std::int64_t> idx(indices.begin(), indices.end());
            tape->attach(out, {na},
                         [idx, row_size](std::span<const double> g, Tape& tp, std::span<const std::int64_t> in) {
                             auto* ga = tp.grad_for(in[0]);
                             if (!ga) return;
                             for (std::size_t r = 0; r < idx.size(); ++r) {
                                 const double* src = g.data() + static_cast<std::int64_t>(r) * row_size;
                                 double* dst = ga->data() + idx[r] * row_size;
                                 for (std::int64_t i = 0; i < row_size; ++i) dst[i] += src[i];
                             }
                         });
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() >= 2 && b.ndim() == 2) {
        const std::int64_t k = a.dim(a.ndim() - 1);
        if (k != b.dim(0))
            throw std::invalid_argument("matmul inner dimensions differ: " + shape_to_string(a.shape()) + " x " +
                                        shape_to_string(b.shape()));
        const std::int64_t m = a.size() / k;
        const std::int64_t n = b.dim(1);
        Shape out_shape(a.shape().begin(), a.shape().end() - 1);
        out_shape.push_back(n);
        Tensor out(out_shape);
        mm(a.data().data(), b.data().data(), out.mutable_data().data(), m, k, n, false);
        debug_check_finite(out, "matmul");
        if (Tape* tape = recording_tape()) {
            const auto na = tape->track(a);
            const auto nb = tape->track(b);
            if (na >= 0 || nb >= 0) {
                auto ad = share(a);
                auto bd = share(b);
                tape->attach(out, {na, nb},
                             [=](std::span<const double> g, Tape& tp, std::span<const std::int64_t> in) {
                                 if (auto* ga = tp.grad_for(in[0]))
                                     mm_a_bt(g.data(), bd->data(), ga->data(), m, n, k);
                                 if (auto* gb = tp.grad_for(in[1]))
                                     mm_at_b(ad->data(), g.data(), gb->data(), m, k, n);
                             });
            }
        }
        return out;
    }
    if (a.ndim() == 3 && b.ndim() == 3) {
        if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
            throw std::invalid_argument("batched matmul dimensions differ: " + shape_to_string(a.shape()) + " x " +
                                        shape_to_string(b.shape()));
        const std::int64_t p = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
        Tensor out({p, m, n});
        for (std::int64_t s = 0; s < p; ++s)
            mm(a.data().data() + s * m * k, b.data().data() + s * k * n, out.mutable_data().data() + s * m * n, m, k,
               n, false);
        debug_check_finite(out, "matmul");
        if (Tape* tape = recording_tape()) {
            const auto na = tape->track(a);
            const auto nb = tape->track(b);
            if (na >= 0 || nb >= 0) {
                auto ad = share(a);
                auto bd = share(b);
                tape->attach(out, {na, nb},
                             [=](std::span<const double> g, Tape& tp, std::span<const std::int64_t> in) {
                                 auto* ga = tp.grad_for(in[0]);
                                 auto* gb = tp.grad_for(in[1]);
                                 for (std::int64_t s = 0; s < p; ++s) {
                                     const double* gs = g.data() + s * m * n;
                                     if (ga) mm_a_bt(gs, bd->data() + s * k * n, ga->data() + s * m * k, m, n, k);
                                     if (gb) mm_at_b(ad->data() + s * m * k, gs, gb->data() + s * k * n, m, k, n);
                                 }
                             });
            }
        }
        return out;
    }
    throw std::invalid_argument("matmul requires a[...,m,k] x b[k,n] or a[p,m,k] x b[p,k,n], got " +
                                shape_to_string(a.shape()) + " x " + shape_to_string(b.shape()));
}

// ---------------------------------------------------------------------------
// reductions

Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    Tensor out = Tensor::scalar(s);
    if (Tape* tape = recording_tape()) {
        const auto na = tape->track(a);
        if (na >= 0) {
            const auto n = static_cast<std::size_t>(a.size());
            tape->attach(out, {na}, [n](std::span<const double> g, Tape& tp, std::span<const std::int64_t> in) {
                auto* ga = tp.grad_for(in[0]);
                if (!ga) return;
                for (std::size_t i = 0; i < n; ++i) (*ga)[i] += g[0];
            });
        }
    }
    return out;
}

Tensor mean_all(const Tensor& a) {
    if (a.size() == 0) throw std::invalid_argument("mean of empty tensor");
    return scale(sum_all(a), 1.0 / static_cast<double>(a.size()));
}

Tensor sum_axis(const Tensor& a, int axis) {
    if (axis < 0 || axis >= a.ndim()) throw std::invalid_argument("sum_axis axis out of range");
    std::int64_t outer = 1, inner = 1;
    const std::int64_t mid = a.dim(axis);
    for (int d = 0; d < axis; ++d) outer *= a.dim(d);
    for (int d = axis + 1; d < a.ndim(); ++d) inner *= a.dim(d);
    Shape out_shape;
    for (int d = 0; d < a.ndim(); ++d)
        if (d != axis) out_shape.push_back(a.dim(d));
    Tensor out(out_shape);
    auto od = out.mutable_data();
    auto ad = a.data();
    for (std::int64_t r = 0; r < outer; ++r)
        for (std::int64_t j = 0; j < mid; ++j) {
            const double* src = ad.data() + (r * mid + j) * inner;
            double* dst = od.data() + r * inner;
            for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
    if (Tape* tape = recording_tape()) {
        const auto na = tape->track(a);
        if (na >= 0) {
            tape->attach(out, {na},
                         [outer, mid, inner](std::span<const double> g, Tape& tp, std::span<const std::int64_t> in) {
                             auto* ga = tp.grad_for(in[0]);
                             if (!ga) return;
                             for (std::int64_t r = 0; r < outer; ++r)
                                 for (std::int64_t j = 0; j < mid; ++j) {
                                     const double* src = g.data() + r * inner;
                                     double* dst = ga->data() + (r * mid + j) * inner;
                                     for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
                                 }
                         });
        }
    }
    return out;
}

Tensor mean_axis(const Tensor& a, int axis) {
    if (a.dim(axis) == 0) throw std::invalid_argument("mean over empty axis");
    return scale(sum_axis(a, axis), 1.0 / static_cast<double>(a.dim(axis)));
}

// ---------------------------------------------------------------------------
// softmax

namespace {

// Softmax over the last axis; when causal, row r of each trailing [rows, cols]
// block only sees columns 0..r (requires rows == cols).
Tensor row_softmax_impl(const Tensor& a, bool causal) {
    if (a.ndim() < 1) throw std::invalid_argument("softmax requires rank >= 1");
    const std::int64_t cols = a.dim(a.ndim() - 1);
    if (cols == 0) throw std::invalid_argument("softmax over empty axis");
    const std::int64_t rows_total = a.size() / cols;
    std::int64_t rows_per_block = 1;
    if (causal) {
        if (a.ndim() < 2 || a.dim(a.ndim() - 2) != cols)
            throw std::invalid_argument("causal softmax needs trailing square block, got " +
                                        shape_to_string(a.shape()));
        rows_per_block = cols;
    }
    Tensor out(a.shape());
    auto od = out.mutable_data();
    auto ad = a.data();
    for (std::int64_t r = 0; r < rows_total; ++r) {
        const std::int64_t limit = causal ? (r % rows_per_block) + 1 : cols;
        const double* src = ad.data() + r * cols;
        double* dst = od.data() + r * cols;
        double mx = src[0];
        for (std::int64_t j = 1; j < limit; ++j) mx = std::max(mx, src[j]);
        double s = 0.0;
        for (std::int64_t j = 0; j < limit; ++j) {
            dst[j] = std::exp(src[j] - mx);
            s += dst[j];
        }
        for (std::int64_t j = 0; j < limit; ++j) dst[j] /= s;
        for (std::int64_t j = limit; j < cols; ++j) dst[j] = 0.0;
    }
    debug_check_finite(out, causal ? "causal_row_softmax" : "softmax");
    if (Tape* tape = recording_tape()) {
        const auto na = tape->track(a);
        if (na >= 0) {
            auto saved = share(out);
            tape->attach(out, {na},
                         [saved, rows_total, cols, causal, rows_per_block](
                             std::span<const double> g, Tape& tp, std::span<const std::int64_t> in) {
                             auto* ga = tp.grad_for(in[0]);
                             if (!ga) return;
                             for (std::int64_t r = 0; r < rows_total; ++r) {
                                 const std::int64_t limit = causal ? (r % rows_per_block) + 1 : cols;
                                 const double* y = saved->data() + r * cols;
                                 const double* gr = g.data() + r * cols;
                                 double dot = 0.0;
                                 for (std::int64_t j = 0; j < limit; ++j) dot += gr[j] * y[j];
                                 double* dst = ga->data() + r * cols;
                                 for (std::int64_t j = 0; j < limit; ++j) dst[j] += y[j] * (gr[j] - dot);
                             }
                         });
        }
    }
    return out;
}

}  // namespace

Tensor softmax(const Tensor& a, int axis) {
    if (axis < 0 || axis >= a.ndim()) throw std::invalid_argument("softmax axis out of range");
    if (axis == a.ndim() - 1) return row_softmax_impl(a, false);
    std::vector<int> perm;
    for (int d = 0; d < a.ndim(); ++d)
        if (d != axis) perm.push_back(d);
    perm.push_back(axis);
    std::vector<int> inverse(perm.size());
    for (std::size_t d = 0; d < perm.size(); ++d) inverse[static_cast<std::size_t>(perm[d])] = static_cast<int>(d);
    return permute(row_softmax_impl(permute(a, perm), false), inverse);
}

Tensor causal_row_softmax(const Tensor& a) { return row_softmax_impl(a, true); }

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels, std::span<const double> weights) {
    if (logits.ndim() != 2) throw std::invalid_argument("cross entropy expects logits[batch, classes]");
    const std::int64_t b = logits.dim(0), c = logits.dim(1);
    if (static_cast<std::int64_t>(labels.size()) != b || static_cast<std::int64_t>(weights.size()) != b)
        throw std::invalid_argument("cross entropy labels/weights size mismatch");
    double wsum = 0.0;
    for (double w : weights) wsum += w;
    if (wsum <= 0.0) throw std::invalid_argument("cross entropy requires positive total weight");

    std::vector<double> probs(static_cast<std::size_t>(b * c));
    auto ld = logits.data();
    double loss = 0.0;
    for (std::int64_t i = 0; i < b; ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= c)
            throw std::invalid_argument("class label " + std::to_string(y) + " outside [0," + std::to_string(c) + ")");
        const double* row = ld.data() + i * c;
        double mx = row[0];
        for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double s = 0.0;
        for (std::int64_t j = 0; j < c; ++j) {
            probs[static_cast<std::size_t>(i * c + j)] = std::exp(row[j] - mx);
            s += probs[static_cast<std::size_t>(i * c + j)];
        }
        for (std::int64_t j = 0; j < c; ++j) probs[static_cast<std::size_t>(i * c + j)] /= s;
        loss += weights[static_cast<std::size_t>(i)] * (std::log(s) + mx - row[y]);
    }
    Tensor out = Tensor::scalar(loss / wsum);
    if (Tape* tape = recording_tape()) {
        const auto nl = tape->track(logits);
        if (nl >= 0) {
            std::vector<int> ys(labels.begin(), labels.end());
            std::vector<double> ws(weights.begin(), weights.end());
            auto saved = std::make_shared<std::vector<double>>(std::move(probs));
            tape->attach(out, {nl},
                         [saved, ys, ws, wsum, b, c](std::span<const double> g, Tape& tp,
                                                     std::span<const std::int64_t> in) {
                             auto* gl = tp.grad_for(in[0]);
                             if (!gl) return;
                             const double gv = g[0] / wsum;
                             for (std::int64_t i = 0; i < b; ++i) {
                                 const double wi = ws[static_cast<std::size_t>(i)];
                                 if (wi == 0.0) continue;
                                 for (std::int64_t j = 0; j < c; ++j) {
                                     double p = (*saved)[static_cast<std::size_t>(i * c + j)];
                                     if (j == ys[static_cast<std::size_t>(i)]) p -= 1.0;
                                     (*gl)[static_cast<std::size_t>(i * c + j)] += gv * wi * p;
                                 }
                             }
                         });
        }
    }
    return out;
}

Tensor zero_nonfinite_rows(const Tensor& x, std::vector<std::uint8_t>& diverged) {
    if (x.ndim() < 1) throw std::invalid_argument("zero_nonfinite_rows requires rank >= 1");
    const std::int64_t b = x.dim(0);
    if (static_cast<std::int64_t>(diverged.size()) != b)
        throw std::invalid_argument("diverged flag count does not match leading dimension");
    const std::int64_t row = b > 0 ? x.size() / b : 0;
    Tensor out(x.shape());
    auto od = out.mutable_data();
    auto xd = x.data();
    for (std::int64_t i = 0; i < b; ++i) {
        const double* src = xd.data() + i * row;
        bool bad = diverged[static_cast<std::size_t>(i)] != 0;
        if (!bad)
            for (std::int64_t j = 0; j < row; ++j)
                if (!std::isfinite(src[j])) {
                    bad = true;
                    break;
                }
        if (bad) {
            diverged[static_cast<std::size_t>(i)] = 1;
            std::fill_n(od.data() + i * row, row, 0.0);
        } else {
            std::copy_n(src, row, od.data() + i * row);
        }
    }
    if (Tape* tape = recording_tape()) {
        const auto nx = tape->track(x);
        if (nx >= 0) {
            std::vector<std::uint8_t> snapshot = diverged;
            tape->attach(out, {nx},
                         [snapshot, b, row](std::span<const double> g, Tape& tp, std::span<const std::int64_t> in) {
                             auto* gx = tp.grad_for(in[0]);
                             if (!gx) return;
                             for (std::int64_t i = 0; i < b; ++i) {
                                 if (snapshot[static_cast<std::size_t>(i)]) continue;
                                 const double* src = g.data() + i * row;
                                 double* dst = gx->data() + i * row;
                                 for (std::int64_t j = 0; j < row; ++j) dst[j] += src[j];
                             }
                         });
        }
    }
    return out;
}

}  // namespace sdeattn
