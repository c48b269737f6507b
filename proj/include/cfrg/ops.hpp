#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "cfrg/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cfrg {

enum class RunMode { Train, Eval };
enum class Activation { Relu, Gelu };

namespace kernels {

// C[i0:i1, :] += A[i0:i1, :] * B. Summation order per output element is k
// ascending; this is the normative, documented order for the whole engine.
template <class T>
void gemm_nn_rows(const T* A, const T* B, T* C, size_t k, size_t n, size_t i0,
                  size_t i1) {
    for (size_t i = i0; i < i1; ++i) {
        T* crow = C + i * n;
        const T* arow = A + i * k;
        for (size_t t = 0; t < k; ++t) {
            const T a = arow[t];
            const T* brow = B + t * n;
            for (size_t j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

// C += A * B for [m,k] x [k,n]; rows split across threads, each output
// element computed by exactly one thread so results are run-to-run stable.
template <class T>
void gemm_nn(const T* A, const T* B, T* C, size_t m, size_t k, size_t n) {
#ifdef _OPENMP
    if (m >= 32 && m * k * n >= (size_t)1 << 20) {
#pragma omp parallel
        {
            const int nt = omp_get_num_threads();
            const int id = omp_get_thread_num();
            const size_t chunk = (m + nt - 1) / nt;
            const size_t i0 = std::min(m, chunk * (size_t)id);
            const size_t i1 = std::min(m, i0 + chunk);
            gemm_nn_rows(A, B, C, k, n, i0, i1);
        }
        return;
    }
#endif
    gemm_nn_rows(A, B, C, k, n, 0, m);
}

// C += A^T * B for A [k,m], B [k,n]
template <class T>
void gemm_tn(const T* A, const T* B, T* C, size_t m, size_t k, size_t n) {
    auto rows = [&](size_t i0, size_t i1) {
        for (size_t i = i0; i < i1; ++i) {
            T* crow = C + i * n;
            for (size_t t = 0; t < k; ++t) {
                const T a = A[t * m + i];
                const T* brow = B + t * n;
                for (size_t j = 0; j < n; ++j) crow[j] += a * brow[j];
            }
        }
    };
#ifdef _OPENMP
    if (m >= 32 && m * k * n >= (size_t)1 << 20) {
#pragma omp parallel
        {
            const int nt = omp_get_num_threads();
            const int id = omp_get_thread_num();
            const size_t chunk = (m + nt - 1) / nt;
            const size_t i0 = std::min(m, chunk * (size_t)id);
            rows(i0, std::min(m, i0 + chunk));
        }
        return;
    }
#endif
    rows(0, m);
}

template <class T>
void transpose(const T* in, T* out, size_t rows, size_t cols) {
    for (size_t i = 0; i < rows; ++i)
        for (size_t j = 0; j < cols; ++j) out[j * rows + i] = in[i * cols + j];
}

}  // namespace kernels

namespace detail {

template <class T>
inline bool any_grad(std::initializer_list<const Tensor<T>*> ts) {
    for (auto* t : ts)
        if ((*t).requires_grad()) return true;
    return false;
}

template <class T>
inline Tensor<T> make_op_output(std::vector<size_t> shape,
                                std::vector<NodePtr<T>> parents, bool rg) {
    auto out = Tensor<T>::zeros(std::move(shape), rg);
    if (rg) out.node().parents = std::move(parents);
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul: [m,k] x [k,n] -> [m,n]
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> matmul(const Tensor<T>& A, const Tensor<T>& B) {
    if (A.ndim() != 2 || B.ndim() != 2 || A.dim(1) != B.dim(0))
        throw std::invalid_argument("matmul: incompatible shapes " +
                                    shape_str(A.shape()) + " and " +
                                    shape_str(B.shape()));
    const size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
    const bool rg = detail::any_grad<T>({&A, &B});
    Tensor<T> C = detail::make_op_output<T>({m, n}, {A.ptr(), B.ptr()}, rg);
    kernels::gemm_nn(A.data().data(), B.data().data(), C.data().data(), m, k, n);
    if (rg) {
        auto a = A.ptr();
        auto b = B.ptr();
        C.node().backprop = [a, b, m, k, n](TensorNode<T>& out) {
            if (a->requires_grad) {
                // dA += dC * B^T: transpose B once, then the nn kernel
                std::vector<T> bt(k * n);
                kernels::transpose(b->data.data(), bt.data(), k, n);
                kernels::gemm_nn(out.grad.data(), bt.data(), a->grad.data(), m,
                                 n, k);
            }
            if (b->requires_grad)
                kernels::gemm_tn(a->data.data(), out.grad.data(),
                                 b->grad.data(), k, m, n);
        };
    }
    return C;
}

// ---------------------------------------------------------------------------
// bmm: [..., m, k] x [..., k, n] -> [..., m, n]; leading dims must agree.
// Slices are distributed across threads; per-slice math is serial.
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> bmm(const Tensor<T>& A, const Tensor<T>& B) {
    if (A.ndim() < 3 || A.ndim() != B.ndim())
        throw std::invalid_argument("bmm: need equal ranks >= 3, got " +
                                    shape_str(A.shape()) + " and " +
                                    shape_str(B.shape()));
    size_t L = 1;
    for (size_t i = 0; i + 2 < A.ndim(); ++i) {
        if (A.dim(i) != B.dim(i))
            throw std::invalid_argument("bmm: leading dims disagree: " +
                                        shape_str(A.shape()) + " vs " +
                                        shape_str(B.shape()));
        L *= A.dim(i);
    }
    const size_t m = A.dim(A.ndim() - 2), k = A.dim(A.ndim() - 1);
    if (B.dim(B.ndim() - 2) != k)
        throw std::invalid_argument("bmm: inner dims disagree: " +
                                    shape_str(A.shape()) + " vs " +
                                    shape_str(B.shape()));
    const size_t n = B.dim(B.ndim() - 1);

    std::vector<size_t> oshape(A.shape().begin(), A.shape().end() - 1);
    oshape.push_back(n);
    const bool rg = detail::any_grad<T>({&A, &B});
    Tensor<T> C = detail::make_op_output<T>(oshape, {A.ptr(), B.ptr()}, rg);

    const T* ap = A.data().data();
    const T* bp = B.data().data();
    T* cp = C.data().data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int64_t s = 0; s < (int64_t)L; ++s)
        kernels::gemm_nn_rows(ap + s * m * k, bp + s * k * n, cp + s * m * n, k,
                              n, 0, m);

    if (rg) {
        auto a = A.ptr();
        auto b = B.ptr();
        C.node().backprop = [a, b, L, m, k, n](TensorNode<T>& out) {
            if (a->requires_grad) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
                for (int64_t s = 0; s < (int64_t)L; ++s) {
                    std::vector<T> bt(k * n);
                    kernels::transpose(b->data.data() + s * k * n, bt.data(), k,
                                       n);
                    kernels::gemm_nn_rows(out.grad.data() + s * m * n, bt.data(),
                                          a->grad.data() + s * m * k, n, k, 0,
                                          m);
                }
            }
            if (b->requires_grad) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
                for (int64_t s = 0; s < (int64_t)L; ++s) {
                    // dB_s += A_s^T * dC_s
                    const T* as = a->data.data() + s * m * k;
                    const T* gs = out.grad.data() + s * m * n;
                    T* dbs = b->grad.data() + s * k * n;
                    for (size_t i = 0; i < k; ++i)
                        for (size_t t = 0; t < m; ++t) {
                            const T av = as[t * k + i];
                            const T* grow = gs + t * n;
                            T* drow = dbs + i * n;
                            for (size_t j = 0; j < n; ++j)
                                drow[j] += av * grow[j];
                        }
                }
            }
        };
    }
    return C;
}

// ---------------------------------------------------------------------------
// shape movement
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> reshape(const Tensor<T>& A, std::vector<size_t> shape) {
    if (shape_numel(shape) != A.numel())
        throw std::invalid_argument("reshape: " + shape_str(A.shape()) +
                                    " cannot view as " + shape_str(shape));
    const bool rg = A.requires_grad();
    Tensor<T> out = detail::make_op_output<T>(std::move(shape), {A.ptr()}, rg);
    out.data() = A.data();
    if (rg) {
        auto a = A.ptr();
        out.node().backprop = [a](TensorNode<T>& o) {
            for (size_t i = 0; i < o.grad.size(); ++i) a->grad[i] += o.grad[i];
        };
    }
    return out;
}

template <class T>
Tensor<T> transpose2d(const Tensor<T>& A) {
    if (A.ndim() != 2)
        throw std::invalid_argument("transpose2d: need rank 2, got " +
                                    shape_str(A.shape()));
    const size_t m = A.dim(0), n = A.dim(1);
    const bool rg = A.requires_grad();
    Tensor<T> out = detail::make_op_output<T>({n, m}, {A.ptr()}, rg);
    kernels::transpose(A.data().data(), out.data().data(), m, n);
    if (rg) {
        auto a = A.ptr();
        out.node().backprop = [a, m, n](TensorNode<T>& o) {
            for (size_t i = 0; i < m; ++i)
                for (size_t j = 0; j < n; ++j)
                    a->grad[i * n + j] += o.grad[j * m + i];
        };
    }
    return out;
}

// [..., m, n] -> [..., n, m]
template <class T>
Tensor<T> transpose_last2(const Tensor<T>& A) {
    if (A.ndim() < 2)
        throw std::invalid_argument("transpose_last2: need rank >= 2, got " +
                                    shape_str(A.shape()));
    const size_t m = A.dim(A.ndim() - 2), n = A.dim(A.ndim() - 1);
    const size_t L = A.numel() / (m * n);
    std::vector<size_t> oshape = A.shape();
    std::swap(oshape[oshape.size() - 2], oshape[oshape.size() - 1]);
    const bool rg = A.requires_grad();
    Tensor<T> out = detail::make_op_output<T>(std::move(oshape), {A.ptr()}, rg);
    for (size_t s = 0; s < L; ++s)
        kernels::transpose(A.data().data() + s * m * n,
                           out.data().data() + s * m * n, m, n);
    if (rg) {
        auto a = A.ptr();
        out.node().backprop = [a, L, m, n](TensorNode<T>& o) {
            for (size_t s = 0; s < L; ++s) {
                const T* g = o.grad.data() + s * m * n;
                T* da = a->grad.data() + s * m * n;
                for (size_t i = 0; i < m; ++i)
                    for (size_t j = 0; j < n; ++j)
                        da[i * n + j] += g[j * m + i];
            }
        };
    }
    return out;
}

// [a,b,c,d] -> [a,c,b,d]; the permutation is its own inverse on the swapped pair
template <class T>
Tensor<T> permute_0213(const Tensor<T>& A) {
    if (A.ndim() != 4)
        throw std::invalid_argument("permute_0213: need rank 4, got " +
                                    shape_str(A.shape()));
    const size_t d0 = A.dim(0), d1 = A.dim(1), d2 = A.dim(2), d3 = A.dim(3);
    const bool rg = A.requires_grad();
    Tensor<T> out =
        detail::make_op_output<T>({d0, d2, d1, d3}, {A.ptr()}, rg);
    const T* in = A.data().data();
    T* op = out.data().data();
    for (size_t i0 = 0; i0 < d0; ++i0)
        for (size_t i1 = 0; i1 < d1; ++i1)
            for (size_t i2 = 0; i2 < d2; ++i2) {
                const T* src = in + ((i0 * d1 + i1) * d2 + i2) * d3;
                T* dst = op + ((i0 * d2 + i2) * d1 + i1) * d3;
                std::copy(src, src + d3, dst);
            }
    if (rg) {
        auto a = A.ptr();
        out.node().backprop = [a, d0, d1, d2, d3](TensorNode<T>& o) {
            for (size_t i0 = 0; i0 < d0; ++i0)
                for (size_t i1 = 0; i1 < d1; ++i1)
                    for (size_t i2 = 0; i2 < d2; ++i2) {
                        const T* src = o.grad.data() + ((i0 * d2 + i2) * d1 + i1) * d3;
                        T* dst = a->grad.data() + ((i0 * d1 + i1) * d2 + i2) * d3;
                        for (size_t i3 = 0; i3 < d3; ++i3) dst[i3] += src[i3];
                    }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// elementwise / broadcast arithmetic
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> add(const Tensor<T>& A, const Tensor<T>& B) {
    if (A.shape() != B.shape())
        throw std::invalid_argument("add: shape mismatch " +
                                    shape_str(A.shape()) + " vs " +
                                    shape_str(B.shape()));
    const bool rg = detail::any_grad<T>({&A, &B});
    Tensor<T> out = detail::make_op_output<T>(A.shape(), {A.ptr(), B.ptr()}, rg);
    for (size_t i = 0; i < out.numel(); ++i)
        out.data()[i] = A.data()[i] + B.data()[i];
    if (rg) {
        auto a = A.ptr();
        auto b = B.ptr();
        out.node().backprop = [a, b](TensorNode<T>& o) {
            if (a->requires_grad)
                for (size_t i = 0; i < o.grad.size(); ++i)
                    a->grad[i] += o.grad[i];
            if (b->requires_grad)
                for (size_t i = 0; i < o.grad.size(); ++i)
                    b->grad[i] += o.grad[i];
        };
    }
    return out;
}

// x [..., n] + b [n], broadcast over all leading axes
template <class T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b) {
    if (b.ndim() != 1 || x.ndim() < 1 || x.dim(x.ndim() - 1) != b.dim(0))
        throw std::invalid_argument("add_bias: shape mismatch " +
                                    shape_str(x.shape()) + " vs " +
                                    shape_str(b.shape()));
    const size_t n = b.dim(0);
    const size_t rows = x.numel() / n;
    const bool rg = detail::any_grad<T>({&x, &b});
    Tensor<T> out = detail::make_op_output<T>(x.shape(), {x.ptr(), b.ptr()}, rg);
    for (size_t r = 0; r < rows; ++r)
        for (size_t j = 0; j < n; ++j)
            out.data()[r * n + j] = x.data()[r * n + j] + b.data()[j];
    if (rg) {
        auto xp = x.ptr();
        auto bp = b.ptr();
        out.node().backprop = [xp, bp, rows, n](TensorNode<T>& o) {
            if (xp->requires_grad)
                for (size_t i = 0; i < o.grad.size(); ++i)
                    xp->grad[i] += o.grad[i];
            if (bp->requires_grad)
                for (size_t r = 0; r < rows; ++r)
                    for (size_t j = 0; j < n; ++j)
                        bp->grad[j] += o.grad[r * n + j];
        };
    }
    return out;
}

// x [B, rest...] + p [rest...], broadcast over the batch axis
template <class T>
Tensor<T> add_bcast0(const Tensor<T>& x, const Tensor<T>& p) {
    if (x.ndim() != p.ndim() + 1 ||
        !std::equal(p.shape().begin(), p.shape().end(), x.shape().begin() + 1))
        throw std::invalid_argument("add_bcast0: shape mismatch " +
                                    shape_str(x.shape()) + " vs " +
                                    shape_str(p.shape()));
    const size_t batch = x.dim(0);
    const size_t rest = p.numel();
    const bool rg = detail::any_grad<T>({&x, &p});
    Tensor<T> out = detail::make_op_output<T>(x.shape(), {x.ptr(), p.ptr()}, rg);
    for (size_t bi = 0; bi < batch; ++bi)
        for (size_t j = 0; j < rest; ++j)
            out.data()[bi * rest + j] = x.data()[bi * rest + j] + p.data()[j];
    if (rg) {
        auto xp = x.ptr();
        auto pp = p.ptr();
        out.node().backprop = [xp, pp, batch, rest](TensorNode<T>& o) {
            if (xp->requires_grad)
                for (size_t i = 0; i < o.grad.size(); ++i)
                    xp->grad[i] += o.grad[i];
            if (pp->requires_grad)
                for (size_t bi = 0; bi < batch; ++bi)
                    for (size_t j = 0; j < rest; ++j)
                        pp->grad[j] += o.grad[bi * rest + j];
        };
    }
    return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& A, T c) {
    const bool rg = A.requires_grad();
    Tensor<T> out = detail::make_op_output<T>(A.shape(), {A.ptr()}, rg);
    for (size_t i = 0; i < out.numel(); ++i) out.data()[i] = A.data()[i] * c;
    if (rg) {
        auto a = A.ptr();
        out.node().backprop = [a, c](TensorNode<T>& o) {
            for (size_t i = 0; i < o.grad.size(); ++i)
                a->grad[i] += c * o.grad[i];
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> relu(const Tensor<T>& A) {
    const bool rg = A.requires_grad();
    Tensor<T> out = detail::make_op_output<T>(A.shape(), {A.ptr()}, rg);
    for (size_t i = 0; i < out.numel(); ++i)
        out.data()[i] = A.data()[i] > T(0) ? A.data()[i] : T(0);
    if (rg) {
        auto a = A.ptr();
        out.node().backprop = [a](TensorNode<T>& o) {
            // subgradient at 0 is 0
            for (size_t i = 0; i < o.grad.size(); ++i)
                if (a->data[i] > T(0)) a->grad[i] += o.grad[i];
        };
    }
    return out;
}

// exact Gaussian-CDF form: gelu(x) = x * Phi(x), Phi via erf
template <class T>
Tensor<T> gelu(const Tensor<T>& A) {
    const bool rg = A.requires_grad();
    Tensor<T> out = detail::make_op_output<T>(A.shape(), {A.ptr()}, rg);
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    for (size_t i = 0; i < out.numel(); ++i) {
        const double x = (double)A.data()[i];
        out.data()[i] = (T)(x * 0.5 * (1.0 + std::erf(x * inv_sqrt2)));
    }
    if (rg) {
        auto a = A.ptr();
        out.node().backprop = [a](TensorNode<T>& o) {
            constexpr double inv_sqrt2pi = 0.39894228040143267794;
            for (size_t i = 0; i < o.grad.size(); ++i) {
                const double x = (double)a->data[i];
                const double phi = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
                const double dens = inv_sqrt2pi * std::exp(-0.5 * x * x);
                a->grad[i] += (T)((phi + x * dens) * (double)o.grad[i]);
            }
        };
    }
    return out;
}

template <class T>
Tensor<T> activation(const Tensor<T>& A, Activation kind) {
    return kind == Activation::Relu ? relu(A) : gelu(A);
}

// ---------------------------------------------------------------------------
// softmax over the last axis (attention weights)
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> softmax_lastdim(const Tensor<T>& A) {
    const size_t n = A.dim(A.ndim() - 1);
    const size_t rows = A.numel() / n;
    const bool rg = A.requires_grad();
    Tensor<T> out = detail::make_op_output<T>(A.shape(), {A.ptr()}, rg);
    const T* ap = A.data().data();
    T* op_base = out.data().data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (rows >= 256)
#endif
    for (int64_t r = 0; r < (int64_t)rows; ++r) {
        const T* in = ap + r * n;
        T* op = op_base + r * n;
        T mx = in[0];
        for (size_t j = 1; j < n; ++j) mx = std::max(mx, in[j]);
        double sum = 0.0;
        for (size_t j = 0; j < n; ++j) {
            const double e = std::exp((double)(in[j] - mx));
            op[j] = (T)e;
            sum += e;
        }
        const T inv = (T)(1.0 / sum);
        for (size_t j = 0; j < n; ++j) op[j] *= inv;
    }
    if (rg) {
        auto a = A.ptr();
        out.node().backprop = [a, rows, n](TensorNode<T>& o) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (rows >= 256)
#endif
            for (int64_t r = 0; r < (int64_t)rows; ++r) {
                const T* y = o.data.data() + r * n;
                const T* g = o.grad.data() + r * n;
                double dot = 0.0;
                for (size_t j = 0; j < n; ++j) dot += (double)g[j] * y[j];
                T* da = a->grad.data() + r * n;
                for (size_t j = 0; j < n; ++j)
                    da[j] += (T)((double)y[j] * ((double)g[j] - dot));
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// batch normalization over a [N, F] batch
// ---------------------------------------------------------------------------
template <class T>
struct BatchNormState {
    Tensor<T> gamma;  // [F], trainable
    Tensor<T> beta;   // [F], trainable
    std::vector<T> running_mean;
    std::vector<T> running_var;
    T momentum = T(0.1);
    T eps = T(1e-5);

    static BatchNormState make(size_t features) {
        BatchNormState s;
        s.gamma = Tensor<T>::from_data({features},
                                       std::vector<T>(features, T(1)), true);
        s.beta = Tensor<T>::zeros({features}, true);
        s.running_mean.assign(features, T(0));
        s.running_var.assign(features, T(1));
        return s;
    }

    size_t features() const { return gamma.numel(); }
};

// Train: normalize by batch statistics (biased variance) and fold the same
// statistics into the running estimates. Eval: normalize by running stats.
template <class T>
Tensor<T> batchnorm(const Tensor<T>& x, BatchNormState<T>& state, RunMode mode) {
    if (x.ndim() != 2 || x.dim(1) != state.features())
        throw std::invalid_argument("batchnorm: expected [batch x " +
                                    std::to_string(state.features()) +
                                    "], got " + shape_str(x.shape()));
    const size_t N = x.dim(0), F = x.dim(1);
    if (mode == RunMode::Train && N < 2)
        throw std::invalid_argument(
            "batchnorm: batch of 1 in Train mode has undefined variance");

    std::vector<T> mean(F), invstd(F);
    if (mode == RunMode::Train) {
        for (size_t f = 0; f < F; ++f) {
            double m = 0.0;
            for (size_t r = 0; r < N; ++r) m += (double)x.data()[r * F + f];
            m /= (double)N;
            double v = 0.0;
            for (size_t r = 0; r < N; ++r) {
                const double d = (double)x.data()[r * F + f] - m;
                v += d * d;
            }
            v /= (double)N;
            mean[f] = (T)m;
            invstd[f] = (T)(1.0 / std::sqrt(v + (double)state.eps));
            const double mom = (double)state.momentum;
            state.running_mean[f] =
                (T)((1.0 - mom) * (double)state.running_mean[f] + mom * m);
            state.running_var[f] =
                (T)((1.0 - mom) * (double)state.running_var[f] + mom * v);
        }
    } else {
        for (size_t f = 0; f < F; ++f) {
            mean[f] = state.running_mean[f];
            invstd[f] = (T)(1.0 / std::sqrt((double)state.running_var[f] +
                                            (double)state.eps));
        }
    }

    const bool rg = detail::any_grad<T>({&x, &state.gamma, &state.beta});
    Tensor<T> out = detail::make_op_output<T>(
        x.shape(), {x.ptr(), state.gamma.ptr(), state.beta.ptr()}, rg);
    std::vector<T> xhat(N * F);
    for (size_t r = 0; r < N; ++r)
        for (size_t f = 0; f < F; ++f) {
            const T xh = (x.data()[r * F + f] - mean[f]) * invstd[f];
            xhat[r * F + f] = xh;
            out.data()[r * F + f] =
                state.gamma.data()[f] * xh + state.beta.data()[f];
        }

    if (rg) {
        auto xp = x.ptr();
        auto gp = state.gamma.ptr();
        auto bp = state.beta.ptr();
        const bool train = mode == RunMode::Train;
        out.node().backprop = [xp, gp, bp, xhat = std::move(xhat),
                               invstd = std::move(invstd), N, F,
                               train](TensorNode<T>& o) {
            for (size_t f = 0; f < F; ++f) {
                double sum_g = 0.0, sum_gx = 0.0;
                for (size_t r = 0; r < N; ++r) {
                    const double g = (double)o.grad[r * F + f];
                    sum_g += g;
                    sum_gx += g * (double)xhat[r * F + f];
                }
                if (gp->requires_grad) gp->grad[f] += (T)sum_gx;
                if (bp->requires_grad) bp->grad[f] += (T)sum_g;
                if (xp->requires_grad) {
                    const double gam = (double)gp->data[f];
                    const double is = (double)invstd[f];
                    if (train) {
                        const double k = gam * is / (double)N;
                        for (size_t r = 0; r < N; ++r) {
                            const double g = (double)o.grad[r * F + f];
                            const double xh = (double)xhat[r * F + f];
                            xp->grad[r * F + f] +=
                                (T)(k * ((double)N * g - sum_g - xh * sum_gx));
                        }
                    } else {
                        for (size_t r = 0; r < N; ++r)
                            xp->grad[r * F + f] +=
                                (T)(gam * is * (double)o.grad[r * F + f]);
                    }
                }
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// layer normalization over the last axis
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma,
                    const Tensor<T>& beta, T eps = T(1e-5)) {
    const size_t F = x.dim(x.ndim() - 1);
    if (gamma.numel() != F || beta.numel() != F)
        throw std::invalid_argument("layernorm: affine params must have " +
                                    std::to_string(F) + " features");
    const size_t rows = x.numel() / F;
    const bool rg = detail::any_grad<T>({&x, &gamma, &beta});
    Tensor<T> out = detail::make_op_output<T>(
        x.shape(), {x.ptr(), gamma.ptr(), beta.ptr()}, rg);
    std::vector<T> xhat(x.numel()), invstd(rows);
    for (size_t r = 0; r < rows; ++r) {
        const T* in = x.data().data() + r * F;
        double m = 0.0;
        for (size_t f = 0; f < F; ++f) m += (double)in[f];
        m /= (double)F;
        double v = 0.0;
        for (size_t f = 0; f < F; ++f) {
            const double d = (double)in[f] - m;
            v += d * d;
        }
        v /= (double)F;
        const double is = 1.0 / std::sqrt(v + (double)eps);
        invstd[r] = (T)is;
        for (size_t f = 0; f < F; ++f) {
            const T xh = (T)(((double)in[f] - m) * is);
            xhat[r * F + f] = xh;
            out.data()[r * F + f] = gamma.data()[f] * xh + beta.data()[f];
        }
    }
    if (rg) {
        auto xp = x.ptr();
        auto gp = gamma.ptr();
        auto bp = beta.ptr();
        out.node().backprop = [xp, gp, bp, xhat = std::move(xhat),
                               invstd = std::move(invstd), rows,
                               F](TensorNode<T>& o) {
            for (size_t r = 0; r < rows; ++r) {
                const T* g = o.grad.data() + r * F;
                const T* xh = xhat.data() + r * F;
                double mean_gh = 0.0, mean_ghx = 0.0;
                for (size_t f = 0; f < F; ++f) {
                    const double gh = (double)g[f] * (double)gp->data[f];
                    mean_gh += gh;
                    mean_ghx += gh * (double)xh[f];
                }
                mean_gh /= (double)F;
                mean_ghx /= (double)F;
                if (xp->requires_grad) {
                    const double is = (double)invstd[r];
                    T* dx = xp->grad.data() + r * F;
                    for (size_t f = 0; f < F; ++f) {
                        const double gh = (double)g[f] * (double)gp->data[f];
                        dx[f] += (T)(is * (gh - mean_gh -
                                           (double)xh[f] * mean_ghx));
                    }
                }
                if (gp->requires_grad)
                    for (size_t f = 0; f < F; ++f)
                        gp->grad[f] += (T)((double)g[f] * (double)xh[f]);
                if (bp->requires_grad)
                    for (size_t f = 0; f < F; ++f) bp->grad[f] += g[f];
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// mean cross entropy with max-subtracted softmax; labels are class indices
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits,
                                const std::vector<int32_t>& labels) {
    if (logits.ndim() != 2 || logits.dim(0) != labels.size())
        throw std::invalid_argument(
            "softmax_cross_entropy: logits " + shape_str(logits.shape()) +
            " vs " + std::to_string(labels.size()) + " labels");
    const size_t N = logits.dim(0), C = logits.dim(1);
    for (size_t i = 0; i < N; ++i)
        if (labels[i] < 0 || (size_t)labels[i] >= C)
            throw std::invalid_argument(
                "softmax_cross_entropy: label " + std::to_string(labels[i]) +
                " at row " + std::to_string(i) + " outside [0, " +
                std::to_string(C) + ")");

    const bool rg = logits.requires_grad();
    Tensor<T> out = detail::make_op_output<T>({1}, {logits.ptr()}, rg);
    std::vector<T> probs(N * C);
    double loss = 0.0;
    for (size_t i = 0; i < N; ++i) {
        const T* z = logits.data().data() + i * C;
        T mx = z[0];
        for (size_t c = 1; c < C; ++c) mx = std::max(mx, z[c]);
        double sum = 0.0;
        for (size_t c = 0; c < C; ++c) sum += std::exp((double)(z[c] - mx));
        const double lse = std::log(sum) + (double)mx;
        loss += lse - (double)z[labels[i]];
        for (size_t c = 0; c < C; ++c)
            probs[i * C + c] = (T)std::exp((double)z[c] - lse);
    }
    out.data()[0] = (T)(loss / (double)N);

    if (rg) {
        auto lp = logits.ptr();
        out.node().backprop = [lp, probs = std::move(probs), labels, N,
                               C](TensorNode<T>& o) {
            const T g = o.grad[0];
            const T invn = (T)(1.0 / (double)N);
            for (size_t i = 0; i < N; ++i) {
                for (size_t c = 0; c < C; ++c)
                    lp->grad[i * C + c] += g * invn * probs[i * C + c];
                lp->grad[i * C + (size_t)labels[i]] -= g * invn;
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> sum(const Tensor<T>& A) {
    const bool rg = A.requires_grad();
    Tensor<T> out = detail::make_op_output<T>({1}, {A.ptr()}, rg);
    double s = 0.0;
    for (size_t i = 0; i < A.numel(); ++i) s += (double)A.data()[i];
    out.data()[0] = (T)s;
    if (rg) {
        auto a = A.ptr();
        out.node().backprop = [a](TensorNode<T>& o) {
            for (size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += o.grad[0];
        };
    }
    return out;
}

template <class T>
Tensor<T> mean(const Tensor<T>& A) {
    Tensor<T> s = sum(A);
    return scale(s, (T)(1.0 / (double)A.numel()));
}

// ---------------------------------------------------------------------------
// token plumbing for the transformer
// ---------------------------------------------------------------------------

// [B,Tm,d] + tok [d] -> [B,Tm+1,d]; the broadcast token occupies slot 0
template <class T>
Tensor<T> prepend_token(const Tensor<T>& x, const Tensor<T>& tok) {
    if (x.ndim() != 3 || tok.ndim() != 1 || x.dim(2) != tok.dim(0))
        throw std::invalid_argument("prepend_token: shapes " +
                                    shape_str(x.shape()) + " and " +
                                    shape_str(tok.shape()));
    const size_t B = x.dim(0), Tm = x.dim(1), d = x.dim(2);
    const bool rg = detail::any_grad<T>({&x, &tok});
    Tensor<T> out =
        detail::make_op_output<T>({B, Tm + 1, d}, {x.ptr(), tok.ptr()}, rg);
    for (size_t b = 0; b < B; ++b) {
        std::copy(tok.data().begin(), tok.data().end(),
                  out.data().begin() + b * (Tm + 1) * d);
        std::copy(x.data().begin() + b * Tm * d,
                  x.data().begin() + (b + 1) * Tm * d,
                  out.data().begin() + b * (Tm + 1) * d + d);
    }
    if (rg) {
        auto xp = x.ptr();
        auto tp = tok.ptr();
        out.node().backprop = [xp, tp, B, Tm, d](TensorNode<T>& o) {
            for (size_t b = 0; b < B; ++b) {
                const T* g0 = o.grad.data() + b * (Tm + 1) * d;
                if (tp->requires_grad)
                    for (size_t j = 0; j < d; ++j) tp->grad[j] += g0[j];
                if (xp->requires_grad) {
                    T* dx = xp->grad.data() + b * Tm * d;
                    const T* gx = g0 + d;
                    for (size_t j = 0; j < Tm * d; ++j) dx[j] += gx[j];
                }
            }
        };
    }
    return out;
}

// [B,Tq,d] -> [B,d], picking one token position
template <class T>
Tensor<T> select_token(const Tensor<T>& x, size_t index) {
    if (x.ndim() != 3 || index >= x.dim(1))
        throw std::invalid_argument("select_token: index " +
                                    std::to_string(index) + " in " +
                                    shape_str(x.shape()));
    const size_t B = x.dim(0), Tq = x.dim(1), d = x.dim(2);
    const bool rg = x.requires_grad();
    Tensor<T> out = detail::make_op_output<T>({B, d}, {x.ptr()}, rg);
    for (size_t b = 0; b < B; ++b)
        std::copy(x.data().begin() + (b * Tq + index) * d,
                  x.data().begin() + (b * Tq + index) * d + d,
                  out.data().begin() + b * d);
    if (rg) {
        auto xp = x.ptr();
        out.node().backprop = [xp, B, Tq, d, index](TensorNode<T>& o) {
            for (size_t b = 0; b < B; ++b) {
                T* dst = xp->grad.data() + (b * Tq + index) * d;
                const T* src = o.grad.data() + b * d;
                for (size_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        };
    }
    return out;
}

}  // namespace cfrg
