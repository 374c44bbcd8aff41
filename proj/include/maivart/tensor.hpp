#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numbers>
#include <numeric>
#include <utility>
#include <vector>

#include "maivart/common.hpp"
#include "maivart/flops.hpp"
#include "maivart/rng.hpp"

namespace maivart {

namespace detail {

inline std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        if (d == 0) throw DimensionError("zero-sized dimension in shape " + shape_to_string(shape));
        n *= d;
    }
    return n;
}

}  // namespace detail

struct TensorData {
    std::vector<std::size_t> shape;
    std::vector<real> values;
    std::vector<real> grad;  // empty until backward reaches this tensor
    bool requires_grad = false;
};

// Dense row-major tensor. Copies are shallow handles to shared storage;
// values are treated as immutable once an op has consumed them, grad buffers
// are the one mutable exception.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false) {
        auto d = std::make_shared<TensorData>();
        d->values.assign(detail::shape_numel(shape), real(0));
        d->shape = std::move(shape);
        d->requires_grad = requires_grad;
        return Tensor(std::move(d));
    }

    static Tensor full(std::vector<std::size_t> shape, real value) {
        Tensor t = zeros(std::move(shape));
        std::fill(t.values().begin(), t.values().end(), value);
        return t;
    }

    static Tensor ones(std::vector<std::size_t> shape, bool requires_grad = false) {
        Tensor t = full(std::move(shape), real(1));
        t.set_requires_grad(requires_grad);
        return t;
    }

    static Tensor from(std::vector<std::size_t> shape, std::vector<real> values,
                       bool requires_grad = false) {
        if (detail::shape_numel(shape) != values.size()) {
            throw DimensionError("shape " + shape_to_string(shape) + " does not hold " +
                                 std::to_string(values.size()) + " values");
        }
        auto d = std::make_shared<TensorData>();
        d->shape = std::move(shape);
        d->values = std::move(values);
        d->requires_grad = requires_grad;
        return Tensor(std::move(d));
    }

    static Tensor scalar(real value) { return from({1}, {value}); }

    static Tensor randn(std::vector<std::size_t> shape, Rng& rng, real stddev = 1,
                        bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (real& v : t.values()) v = static_cast<real>(rng.normal()) * stddev;
        return t;
    }

    bool defined() const { return d_ != nullptr; }
    const std::vector<std::size_t>& shape() const { return d_->shape; }
    std::size_t rank() const { return d_->shape.size(); }
    std::size_t dim(std::size_t i) const { return d_->shape.at(i); }
    std::size_t size() const { return d_->values.size(); }

    std::vector<real>& values() { return d_->values; }
    const std::vector<real>& values() const { return d_->values; }

    real& at(std::size_t i) { return d_->values.at(i); }
    real at(std::size_t i) const { return d_->values.at(i); }

    real& at(std::size_t r, std::size_t c) {
        check2d(r, c);
        return d_->values[r * d_->shape[1] + c];
    }
    real at(std::size_t r, std::size_t c) const {
        check2d(r, c);
        return d_->values[r * d_->shape[1] + c];
    }

    real item() const {
        if (size() != 1) {
            throw ContractError("item() requires a scalar tensor, got shape " +
                                shape_to_string(shape()));
        }
        return d_->values[0];
    }

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool v) { d_->requires_grad = v; }

    bool has_grad() const { return !d_->grad.empty(); }
    std::vector<real>& grad() {
        if (d_->grad.empty()) throw ContractError("gradient not populated; run backward() first");
        return d_->grad;
    }
    const std::vector<real>& grad() const {
        return const_cast<Tensor*>(this)->grad();
    }
    void zero_grad() { d_->grad.clear(); }

    // Detached value copy: same numbers, no grad participation.
    Tensor detach() const { return from(d_->shape, d_->values); }

    const std::shared_ptr<TensorData>& impl() const { return d_; }

private:
    explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}

    void check2d(std::size_t r, std::size_t c) const {
        if (rank() != 2) throw DimensionError("2-D access on tensor of shape " + shape_to_string(shape()));
        if (r >= d_->shape[0] || c >= d_->shape[1]) {
            throw ContractError("index (" + std::to_string(r) + "," + std::to_string(c) +
                                ") outside shape " + shape_to_string(shape()));
        }
    }

    std::shared_ptr<TensorData> d_;
};

namespace detail {

inline void ensure_grad(TensorData& d) {
    if (d.grad.empty()) d.grad.assign(d.values.size(), real(0));
}

}  // namespace detail

// Recording context for reverse-mode differentiation. Operations executed
// while a Tape is alive on the current thread append their local gradient
// rules in execution order; that order is already topological, so running
// the rules once in reverse accumulates every gradient exactly once.
// One tape per training context, no cross-thread sharing.
class Tape {
public:
    Tape() : previous_(current_slot()) { current_slot() = this; }
    ~Tape() { current_slot() = previous_; }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* current() { return current_slot(); }

    void record(std::function<void()> rule) { ops_.push_back(std::move(rule)); }

    std::size_t size() const { return ops_.size(); }

    // Seeds d(loss)/d(loss) = 1, replays the recorded rules newest-first,
    // then consumes the tape.
    void backward(const Tensor& loss) {
        if (!loss.defined() || loss.size() != 1) {
            throw ContractError("backward() requires a scalar loss");
        }
        detail::ensure_grad(*loss.impl());
        loss.impl()->grad[0] += real(1);
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
        ops_.clear();
    }

private:
    static Tape*& current_slot() {
        thread_local Tape* tape = nullptr;
        return tape;
    }

    std::vector<std::function<void()>> ops_;
    Tape* previous_;
};

inline void backward(const Tensor& loss) {
    Tape* t = Tape::current();
    if (!t) throw ContractError("backward() called with no active tape");
    t->backward(loss);
}

namespace detail {

inline bool trace(std::initializer_list<const Tensor*> inputs) {
    if (!Tape::current()) return false;
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape " + shape_to_string(a.shape()) +
                             " vs " + shape_to_string(b.shape()));
    }
}

// c[m x n] (+)= a[m x k] * b[k x n], row-major. The i-k-j order keeps the
// inner loop contiguous in both b and c.
inline void matmul_accumulate(const real* a, const real* b, real* c, std::size_t m,
                              std::size_t k, std::size_t n) {
    count_macs("matmul", static_cast<std::uint64_t>(m) * n * k);
    for (std::size_t i = 0; i < m; ++i) {
        const real* arow = a + i * k;
        real* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const real av = arow[p];
            if (av == real(0)) continue;
            const real* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c[m x k] (+)= a[m x n] * b[k x n]^T
inline void matmul_bt_accumulate(const real* a, const real* b, real* c, std::size_t m,
                                 std::size_t n, std::size_t k) {
    count_macs("matmul", static_cast<std::uint64_t>(m) * n * k);
    for (std::size_t i = 0; i < m; ++i) {
        const real* arow = a + i * n;
        real* crow = c + i * k;
        for (std::size_t j = 0; j < k; ++j) {
            const real* brow = b + j * n;
            real acc = 0;
            for (std::size_t p = 0; p < n; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

// c[k x n] (+)= a[m x k]^T * b[m x n]
inline void matmul_at_accumulate(const real* a, const real* b, real* c, std::size_t m,
                                 std::size_t k, std::size_t n) {
    count_macs("matmul", static_cast<std::uint64_t>(m) * n * k);
    for (std::size_t i = 0; i < m; ++i) {
        const real* arow = a + i * k;
        const real* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const real av = arow[p];
            if (av == real(0)) continue;
            real* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = a.values()[i] + b.values()[i];
    if (detail::trace({&a, &b})) {
        out.set_requires_grad(true);
        auto ad = a.impl(), bd = b.impl(), od = out.impl();
        Tape::current()->record([ad, bd, od] {
            if (od->grad.empty()) return;
            if (ad->requires_grad) {
                detail::ensure_grad(*ad);
                for (std::size_t i = 0; i < od->grad.size(); ++i) ad->grad[i] += od->grad[i];
            }
            if (bd->requires_grad) {
                detail::ensure_grad(*bd);
                for (std::size_t i = 0; i < od->grad.size(); ++i) bd->grad[i] += od->grad[i];
            }
        });
    }
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = a.values()[i] - b.values()[i];
    if (detail::trace({&a, &b})) {
        out.set_requires_grad(true);
        auto ad = a.impl(), bd = b.impl(), od = out.impl();
        Tape::current()->record([ad, bd, od] {
            if (od->grad.empty()) return;
            if (ad->requires_grad) {
                detail::ensure_grad(*ad);
                for (std::size_t i = 0; i < od->grad.size(); ++i) ad->grad[i] += od->grad[i];
            }
            if (bd->requires_grad) {
                detail::ensure_grad(*bd);
                for (std::size_t i = 0; i < od->grad.size(); ++i) bd->grad[i] -= od->grad[i];
            }
        });
    }
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = a.values()[i] * b.values()[i];
    if (detail::trace({&a, &b})) {
        out.set_requires_grad(true);
        auto ad = a.impl(), bd = b.impl(), od = out.impl();
        Tape::current()->record([ad, bd, od] {
            if (od->grad.empty()) return;
            if (ad->requires_grad) {
                detail::ensure_grad(*ad);
                for (std::size_t i = 0; i < od->grad.size(); ++i)
                    ad->grad[i] += od->grad[i] * bd->values[i];
            }
            if (bd->requires_grad) {
                detail::ensure_grad(*bd);
                for (std::size_t i = 0; i < od->grad.size(); ++i)
                    bd->grad[i] += od->grad[i] * ad->values[i];
            }
        });
    }
    return out;
}

inline Tensor scale(const Tensor& a, real s) {
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = a.values()[i] * s;
    if (detail::trace({&a})) {
        out.set_requires_grad(true);
        auto ad = a.impl(), od = out.impl();
        Tape::current()->record([ad, od, s] {
            if (od->grad.empty() || !ad->requires_grad) return;
            detail::ensure_grad(*ad);
            for (std::size_t i = 0; i < od->grad.size(); ++i) ad->grad[i] += od->grad[i] * s;
        });
    }
    return out;
}

// [r x c] + [c], the one permitted broadcast.
inline Tensor add_bias(const Tensor& m, const Tensor& bias) {
    if (m.rank() != 2 || bias.rank() != 1 || bias.dim(0) != m.dim(1)) {
        throw DimensionError("add_bias: matrix " + shape_to_string(m.shape()) + " with bias " +
                             shape_to_string(bias.shape()));
    }
    const std::size_t r = m.dim(0), c = m.dim(1);
    Tensor out = Tensor::zeros({r, c});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
            out.values()[i * c + j] = m.values()[i * c + j] + bias.values()[j];
    if (detail::trace({&m, &bias})) {
        out.set_requires_grad(true);
        auto md = m.impl(), bd = bias.impl(), od = out.impl();
        Tape::current()->record([md, bd, od, r, c] {
            if (od->grad.empty()) return;
            if (md->requires_grad) {
                detail::ensure_grad(*md);
                for (std::size_t i = 0; i < od->grad.size(); ++i) md->grad[i] += od->grad[i];
            }
            if (bd->requires_grad) {
                detail::ensure_grad(*bd);
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) bd->grad[j] += od->grad[i * c + j];
            }
        });
    }
    return out;
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: " + shape_to_string(a.shape()) + " incompatible with " +
                             shape_to_string(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out = Tensor::zeros({m, n});
    detail::matmul_accumulate(a.values().data(), b.values().data(), out.values().data(), m, k, n);
    if (detail::trace({&a, &b})) {
        out.set_requires_grad(true);
        auto ad = a.impl(), bd = b.impl(), od = out.impl();
        Tape::current()->record([ad, bd, od, m, k, n] {
            if (od->grad.empty()) return;
            if (ad->requires_grad) {
                detail::ensure_grad(*ad);
                // dA = dC * B^T
                detail::matmul_bt_accumulate(od->grad.data(), bd->values.data(), ad->grad.data(),
                                             m, n, k);
            }
            if (bd->requires_grad) {
                detail::ensure_grad(*bd);
                // dB = A^T * dC
                detail::matmul_at_accumulate(ad->values.data(), od->grad.data(), bd->grad.data(),
                                             m, k, n);
            }
        });
    }
    return out;
}

inline Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw DimensionError("transpose: need rank 2, got " + shape_to_string(a.shape()));
    const std::size_t r = a.dim(0), c = a.dim(1);
    Tensor out = Tensor::zeros({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.values()[j * r + i] = a.values()[i * c + j];
    if (detail::trace({&a})) {
        out.set_requires_grad(true);
        auto ad = a.impl(), od = out.impl();
        Tape::current()->record([ad, od, r, c] {
            if (od->grad.empty() || !ad->requires_grad) return;
            detail::ensure_grad(*ad);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) ad->grad[i * c + j] += od->grad[j * r + i];
        });
    }
    return out;
}

inline Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count) {
    if (a.rank() != 2) throw DimensionError("slice_rows: need rank 2, got " + shape_to_string(a.shape()));
    if (start + count > a.dim(0)) {
        throw ContractError("slice_rows: range [" + std::to_string(start) + "," +
                            std::to_string(start + count) + ") outside " + shape_to_string(a.shape()));
    }
    const std::size_t c = a.dim(1);
    Tensor out = Tensor::zeros({count, c});
    std::copy_n(a.values().begin() + start * c, count * c, out.values().begin());
    if (detail::trace({&a})) {
        out.set_requires_grad(true);
        auto ad = a.impl(), od = out.impl();
        Tape::current()->record([ad, od, start, count, c] {
            if (od->grad.empty() || !ad->requires_grad) return;
            detail::ensure_grad(*ad);
            for (std::size_t i = 0; i < count * c; ++i) ad->grad[start * c + i] += od->grad[i];
        });
    }
    return out;
}

inline Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count) {
    if (a.rank() != 2) throw DimensionError("slice_cols: need rank 2, got " + shape_to_string(a.shape()));
    if (start + count > a.dim(1)) {
        throw ContractError("slice_cols: range [" + std::to_string(start) + "," +
                            std::to_string(start + count) + ") outside " + shape_to_string(a.shape()));
    }
    const std::size_t r = a.dim(0), c = a.dim(1);
    Tensor out = Tensor::zeros({r, count});
    for (std::size_t i = 0; i < r; ++i)
        std::copy_n(a.values().begin() + i * c + start, count, out.values().begin() + i * count);
    if (detail::trace({&a})) {
        out.set_requires_grad(true);
        auto ad = a.impl(), od = out.impl();
        Tape::current()->record([ad, od, start, count, r, c] {
            if (od->grad.empty() || !ad->requires_grad) return;
            detail::ensure_grad(*ad);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < count; ++j)
                    ad->grad[i * c + start + j] += od->grad[i * count + j];
        });
    }
    return out;
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_rows: empty input");
    const std::size_t c = parts[0].rank() == 2 ? parts[0].dim(1) : 0;
    std::size_t rows = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != 2 || p.dim(1) != c) {
            throw DimensionError("concat_rows: column mismatch, " + shape_to_string(p.shape()) +
                                 " vs width " + std::to_string(c));
        }
        rows += p.dim(0);
    }
    Tensor out = Tensor::zeros({rows, c});
    std::size_t offset = 0;
    bool any_grad = false;
    for (const Tensor& p : parts) {
        std::copy(p.values().begin(), p.values().end(), out.values().begin() + offset * c);
        offset += p.dim(0);
        any_grad = any_grad || p.requires_grad();
    }
    if (Tape::current() && any_grad) {
        out.set_requires_grad(true);
        std::vector<std::shared_ptr<TensorData>> impls;
        impls.reserve(parts.size());
        for (const Tensor& p : parts) impls.push_back(p.impl());
        auto od = out.impl();
        Tape::current()->record([impls, od, c] {
            if (od->grad.empty()) return;
            std::size_t offset = 0;
            for (const auto& pd : impls) {
                const std::size_t n = pd->values.size();
                if (pd->requires_grad) {
                    detail::ensure_grad(*pd);
                    for (std::size_t i = 0; i < n; ++i) pd->grad[i] += od->grad[offset + i];
                }
                offset += n;
            }
            (void)c;
        });
    }
    return out;
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: empty input");
    const std::size_t r = parts[0].rank() == 2 ? parts[0].dim(0) : 0;
    std::size_t cols = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != 2 || p.dim(0) != r) {
            throw DimensionError("concat_cols: row mismatch, " + shape_to_string(p.shape()) +
                                 " vs height " + std::to_string(r));
        }
        cols += p.dim(1);
    }
    Tensor out = Tensor::zeros({r, cols});
    std::size_t offset = 0;
    bool any_grad = false;
    for (const Tensor& p : parts) {
        const std::size_t pc = p.dim(1);
        for (std::size_t i = 0; i < r; ++i)
            std::copy_n(p.values().begin() + i * pc, pc, out.values().begin() + i * cols + offset);
        offset += pc;
        any_grad = any_grad || p.requires_grad();
    }
    if (Tape::current() && any_grad) {
        out.set_requires_grad(true);
        std::vector<std::shared_ptr<TensorData>> impls;
        impls.reserve(parts.size());
        for (const Tensor& p : parts) impls.push_back(p.impl());
        auto od = out.impl();
        Tape::current()->record([impls, od, r, cols] {
            if (od->grad.empty()) return;
            std::size_t offset = 0;
            for (const auto& pd : impls) {
                const std::size_t pc = pd->shape[1];
                if (pd->requires_grad) {
                    detail::ensure_grad(*pd);
                    for (std::size_t i = 0; i < r; ++i)
                        for (std::size_t j = 0; j < pc; ++j)
                            pd->grad[i * pc + j] += od->grad[i * cols + offset + j];
                }
                offset += pc;
            }
        });
    }
    return out;
}

// Softmax along `axis` (negative counts from the back), stabilized by
// max-subtraction so any constant shift of the input is a no-op.
inline Tensor softmax(const Tensor& x, int axis = -1) {
    const int rank = static_cast<int>(x.rank());
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) {
        throw DimensionError("softmax: axis " + std::to_string(axis) + " outside shape " +
                             shape_to_string(x.shape()));
    }
    const std::size_t len = x.shape()[axis];
    std::size_t inner = 1, outer = 1;
    for (int i = 0; i < rank; ++i) {
        if (i < axis) outer *= x.shape()[i];
        if (i > axis) inner *= x.shape()[i];
    }
    Tensor out = Tensor::zeros(x.shape());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            real mx = x.values()[base];
            for (std::size_t j = 1; j < len; ++j)
                mx = std::max(mx, x.values()[base + j * inner]);
            real denom = 0;
            for (std::size_t j = 0; j < len; ++j) {
                const real e = std::exp(x.values()[base + j * inner] - mx);
                out.values()[base + j * inner] = e;
                denom += e;
            }
            for (std::size_t j = 0; j < len; ++j) out.values()[base + j * inner] /= denom;
        }
    }
    if (detail::trace({&x})) {
        out.set_requires_grad(true);
        auto xd = x.impl(), od = out.impl();
        Tape::current()->record([xd, od, outer, inner, len] {
            if (od->grad.empty() || !xd->requires_grad) return;
            detail::ensure_grad(*xd);
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t in = 0; in < inner; ++in) {
                    const std::size_t base = o * len * inner + in;
                    real dot = 0;
                    for (std::size_t j = 0; j < len; ++j) {
                        const std::size_t idx = base + j * inner;
                        dot += od->grad[idx] * od->values[idx];
                    }
                    for (std::size_t j = 0; j < len; ++j) {
                        const std::size_t idx = base + j * inner;
                        xd->grad[idx] += od->values[idx] * (od->grad[idx] - dot);
                    }
                }
            }
        });
    }
    return out;
}

namespace detail {

// Exact-erf GELU, not the tanh approximation: keeps finite-difference
// comparisons at double precision tight.
inline real gelu_value(real x) {
    return x * real(0.5) * (real(1) + std::erf(x * std::numbers::sqrt2 / 2));
}

inline real gelu_derivative(real x) {
    const real phi = std::exp(-x * x / 2) / std::sqrt(2 * std::numbers::pi);
    const real cdf = real(0.5) * (real(1) + std::erf(x * std::numbers::sqrt2 / 2));
    return cdf + x * phi;
}

}  // namespace detail

inline Tensor gelu(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out.values()[i] = detail::gelu_value(x.values()[i]);
    if (detail::trace({&x})) {
        out.set_requires_grad(true);
        auto xd = x.impl(), od = out.impl();
        Tape::current()->record([xd, od] {
            if (od->grad.empty() || !xd->requires_grad) return;
            detail::ensure_grad(*xd);
            for (std::size_t i = 0; i < od->grad.size(); ++i)
                xd->grad[i] += od->grad[i] * detail::gelu_derivative(xd->values[i]);
        });
    }
    return out;
}

// Normalizes the last axis to mean 0 / variance 1 (biased variance), then
// applies the per-channel affine transform gain*x + bias.
inline Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                        real eps = real(1e-5)) {
    if (x.rank() < 1) throw DimensionError("layernorm: rank-0 input");
    const std::size_t d = x.shape().back();
    if (gain.rank() != 1 || gain.dim(0) != d || bias.rank() != 1 || bias.dim(0) != d) {
        throw DimensionError("layernorm: gain " + shape_to_string(gain.shape()) + ", bias " +
                             shape_to_string(bias.shape()) + " against last axis " + std::to_string(d));
    }
    const std::size_t rows = x.size() / d;
    Tensor out = Tensor::zeros(x.shape());
    auto norm = std::make_shared<std::vector<real>>(x.size());      // x-hat
    auto inv_std = std::make_shared<std::vector<real>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const real* row = x.values().data() + r * d;
        real mean = 0;
        for (std::size_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<real>(d);
        real var = 0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<real>(d);
        const real inv = real(1) / std::sqrt(var + eps);
        (*inv_std)[r] = inv;
        for (std::size_t j = 0; j < d; ++j) {
            const real xh = (row[j] - mean) * inv;
            (*norm)[r * d + j] = xh;
            out.values()[r * d + j] = gain.values()[j] * xh + bias.values()[j];
        }
    }
    if (detail::trace({&x, &gain, &bias})) {
        out.set_requires_grad(true);
        auto xd = x.impl(), gd = gain.impl(), bd = bias.impl(), od = out.impl();
        Tape::current()->record([xd, gd, bd, od, norm, inv_std, rows, d] {
            if (od->grad.empty()) return;
            for (std::size_t r = 0; r < rows; ++r) {
                const real* dy = od->grad.data() + r * d;
                const real* xh = norm->data() + r * d;
                if (gd->requires_grad) {
                    detail::ensure_grad(*gd);
                    for (std::size_t j = 0; j < d; ++j) gd->grad[j] += dy[j] * xh[j];
                }
                if (bd->requires_grad) {
                    detail::ensure_grad(*bd);
                    for (std::size_t j = 0; j < d; ++j) bd->grad[j] += dy[j];
                }
                if (xd->requires_grad) {
                    detail::ensure_grad(*xd);
                    real m1 = 0, m2 = 0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const real g = gd->values[j] * dy[j];
                        m1 += g;
                        m2 += g * xh[j];
                    }
                    m1 /= static_cast<real>(d);
                    m2 /= static_cast<real>(d);
                    for (std::size_t j = 0; j < d; ++j) {
                        const real g = gd->values[j] * dy[j];
                        xd->grad[r * d + j] += (g - m1 - xh[j] * m2) * (*inv_std)[r];
                    }
                }
            }
        });
    }
    return out;
}

inline Tensor sum(const Tensor& x) {
    real s = 0;
    for (real v : x.values()) s += v;
    Tensor out = Tensor::scalar(s);
    if (detail::trace({&x})) {
        out.set_requires_grad(true);
        auto xd = x.impl(), od = out.impl();
        Tape::current()->record([xd, od] {
            if (od->grad.empty() || !xd->requires_grad) return;
            detail::ensure_grad(*xd);
            for (real& g : xd->grad) g += od->grad[0];
        });
    }
    return out;
}

// [r x c] -> [1 x c] column means; the global-average-pooling readout.
inline Tensor mean_rows(const Tensor& x) {
    if (x.rank() != 2) throw DimensionError("mean_rows: need rank 2, got " + shape_to_string(x.shape()));
    const std::size_t r = x.dim(0), c = x.dim(1);
    Tensor out = Tensor::zeros({1, c});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.values()[j] += x.values()[i * c + j];
    for (std::size_t j = 0; j < c; ++j) out.values()[j] /= static_cast<real>(r);
    if (detail::trace({&x})) {
        out.set_requires_grad(true);
        auto xd = x.impl(), od = out.impl();
        Tape::current()->record([xd, od, r, c] {
            if (od->grad.empty() || !xd->requires_grad) return;
            detail::ensure_grad(*xd);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    xd->grad[i * c + j] += od->grad[j] / static_cast<real>(r);
        });
    }
    return out;
}

// Inverted dropout: surviving activations are scaled by 1/(1-p) at train
// time so eval mode is the identity. Mask bits consume rng.uniform() in
// element order, which tests reproduce independently.
inline Tensor dropout(const Tensor& x, real p, bool train, Rng* rng) {
    if (p < 0 || p >= 1) throw ConfigError("dropout: p must be in [0,1), got " + std::to_string(p));
    if (!train || p == 0) return x;
    if (!rng) throw ContractError("dropout: train mode requires an RNG");
    const real keep_scale = real(1) / (real(1) - p);
    auto mask = std::make_shared<std::vector<real>>(x.size());
    Tensor out = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const real m = rng->uniform() >= p ? keep_scale : real(0);
        (*mask)[i] = m;
        out.values()[i] = x.values()[i] * m;
    }
    if (detail::trace({&x})) {
        out.set_requires_grad(true);
        auto xd = x.impl(), od = out.impl();
        Tape::current()->record([xd, od, mask] {
            if (od->grad.empty() || !xd->requires_grad) return;
            detail::ensure_grad(*xd);
            for (std::size_t i = 0; i < od->grad.size(); ++i)
                xd->grad[i] += od->grad[i] * (*mask)[i];
        });
    }
    return out;
}

// Softmax cross-entropy against an integer label, fused for numerical
// stability: loss = logsumexp(x) - x[label].
inline Tensor cross_entropy(const Tensor& logits, std::size_t label) {
    const bool row = logits.rank() == 2 && logits.dim(0) == 1;
    if (!row && logits.rank() != 1) {
        throw DimensionError("cross_entropy: logits must be [C] or [1xC], got " +
                             shape_to_string(logits.shape()));
    }
    const std::size_t c = logits.size();
    if (label >= c) {
        throw ContractError("cross_entropy: label " + std::to_string(label) + " out of range [0," +
                            std::to_string(c) + ")");
    }
    real mx = logits.values()[0];
    for (real v : logits.values()) mx = std::max(mx, v);
    real denom = 0;
    for (real v : logits.values()) denom += std::exp(v - mx);
    const real lse = mx + std::log(denom);
    Tensor out = Tensor::scalar(lse - logits.values()[label]);
    if (detail::trace({&logits})) {
        out.set_requires_grad(true);
        auto xd = logits.impl(), od = out.impl();
        Tape::current()->record([xd, od, label, mx, denom] {
            if (od->grad.empty() || !xd->requires_grad) return;
            detail::ensure_grad(*xd);
            const real dl = od->grad[0];
            for (std::size_t i = 0; i < xd->values.size(); ++i) {
                const real p = std::exp(xd->values[i] - mx) / denom;
                xd->grad[i] += dl * (p - (i == label ? real(1) : real(0)));
            }
        });
    }
    return out;
}

}  // namespace maivart
