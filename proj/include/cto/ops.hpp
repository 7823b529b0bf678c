#pragma once

// Differentiable tensor primitives. Every op computes its forward result
// eagerly and, when a tape is supplied and some input requires a gradient,
// records a closure that pulls the output gradient back onto its inputs.
// Gradients accumulate additively across fan-out.
//
// Conventions fixed here and relied on by golden files and tests:
//   - conv2d is cross-correlation (no kernel flip), zero padding.
//   - conv2d output extent (H + 2*pad - kh) must divide stride exactly.
//   - upsample_bilinear uses the align-corners=false coordinate mapping.
//   - strided_subsample offsets are 1-based, matching [a::b] slice notation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "cto/macs.hpp"
#include "cto/shape.hpp"
#include "cto/tape.hpp"
#include "cto/tensor.hpp"
#include "cto/threads.hpp"

namespace cto::ops {

namespace detail {

template <typename S>
bool wants_grad(Tape<S>* tape, std::initializer_list<const Tensor<S>*> inputs) {
    if (!tape) return false;
    for (const Tensor<S>* t : inputs)
        if (t->defined() && t->requires_grad()) return true;
    return false;
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

// ---- raw GEMM kernels (row-major, accumulate into C) --------------------
// The MAC counter is fed from the loop bounds of the call that actually
// runs, which makes it a measurement of executed work rather than a layer
// formula. Row ranges are disjoint across workers, so results are bitwise
// reproducible for any worker count.

inline std::int64_t gemm_grain(std::int64_t rows, std::int64_t work_per_row) {
    const std::int64_t target = 400000; // MACs per chunk before splitting pays off
    if (work_per_row <= 0) return rows;
    return std::max<std::int64_t>(1, target / work_per_row);
}

template <typename S>
void gemm_nn(int M, int N, int K, const S* A, const S* B, S* C) {
    macs::add(static_cast<std::uint64_t>(M) * N * K);
    parallel_for(
        M,
        [&](std::int64_t m0, std::int64_t m1) {
            for (std::int64_t m = m0; m < m1; ++m) {
                S* c = C + m * N;
                const S* a = A + m * K;
                for (int k = 0; k < K; ++k) {
                    const S av = a[k];
                    if (av == S(0)) continue;
                    const S* b = B + static_cast<std::int64_t>(k) * N;
                    for (int n = 0; n < N; ++n) c[n] += av * b[n];
                }
            }
        },
        gemm_grain(M, static_cast<std::int64_t>(N) * K));
}

// C[M,N] += A[M,K] * B[N,K]^T
template <typename S>
void gemm_nt(int M, int N, int K, const S* A, const S* B, S* C) {
    macs::add(static_cast<std::uint64_t>(M) * N * K);
    parallel_for(
        M,
        [&](std::int64_t m0, std::int64_t m1) {
            for (std::int64_t m = m0; m < m1; ++m) {
                const S* a = A + m * K;
                S* c = C + m * N;
                for (int n = 0; n < N; ++n) {
                    const S* b = B + static_cast<std::int64_t>(n) * K;
                    S acc = S(0);
                    for (int k = 0; k < K; ++k) acc += a[k] * b[k];
                    c[n] += acc;
                }
            }
        },
        gemm_grain(M, static_cast<std::int64_t>(N) * K));
}

// C[M,N] += A[K,M]^T * B[K,N]
template <typename S>
void gemm_tn(int M, int N, int K, const S* A, const S* B, S* C) {
    macs::add(static_cast<std::uint64_t>(M) * N * K);
    parallel_for(
        M,
        [&](std::int64_t m0, std::int64_t m1) {
            for (int k = 0; k < K; ++k) {
                const S* a = A + static_cast<std::int64_t>(k) * M;
                const S* b = B + static_cast<std::int64_t>(k) * N;
                for (std::int64_t m = m0; m < m1; ++m) {
                    const S av = a[m];
                    if (av == S(0)) continue;
                    S* c = C + m * N;
                    for (int n = 0; n < N; ++n) c[n] += av * b[n];
                }
            }
        },
        gemm_grain(M, static_cast<std::int64_t>(N) * K));
}

template <typename S>
std::vector<S>& scratch(int slot) {
    thread_local std::vector<S> bufs[4];
    return bufs[slot];
}

// col[(c*kh+i)*kw+j, oy*OW+ox] = x[c, oy*stride+i-pad, ox*stride+j-pad], 0 outside.
template <typename S>
void im2col(const S* x, int C, int H, int W, int kh, int kw, int stride, int pad, int OH,
            int OW, S* col) {
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < kh; ++i)
            for (int j = 0; j < kw; ++j) {
                S* row = col + (static_cast<std::int64_t>(c) * kh * kw + i * kw + j) *
                                   (static_cast<std::int64_t>(OH) * OW);
                for (int oy = 0; oy < OH; ++oy) {
                    int iy = oy * stride + i - pad;
                    S* dst = row + static_cast<std::int64_t>(oy) * OW;
                    if (iy < 0 || iy >= H) {
                        for (int ox = 0; ox < OW; ++ox) dst[ox] = S(0);
                        continue;
                    }
                    const S* src = x + (static_cast<std::int64_t>(c) * H + iy) * W;
                    for (int ox = 0; ox < OW; ++ox) {
                        int ix = ox * stride + j - pad;
                        dst[ox] = (ix >= 0 && ix < W) ? src[ix] : S(0);
                    }
                }
            }
}

template <typename S>
void col2im_add(const S* col, int C, int H, int W, int kh, int kw, int stride, int pad,
                int OH, int OW, S* x) {
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < kh; ++i)
            for (int j = 0; j < kw; ++j) {
                const S* row = col + (static_cast<std::int64_t>(c) * kh * kw + i * kw + j) *
                                         (static_cast<std::int64_t>(OH) * OW);
                for (int oy = 0; oy < OH; ++oy) {
                    int iy = oy * stride + i - pad;
                    if (iy < 0 || iy >= H) continue;
                    S* dst = x + (static_cast<std::int64_t>(c) * H + iy) * W;
                    const S* src = row + static_cast<std::int64_t>(oy) * OW;
                    for (int ox = 0; ox < OW; ++ox) {
                        int ix = ox * stride + j - pad;
                        if (ix >= 0 && ix < W) dst[ix] += src[ox];
                    }
                }
            }
}

} // namespace detail

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

/// 2-D cross-correlation with zero padding and channel groups.
/// x: [N,Cin,H,W], kernel: [Cout,Cin/groups,kh,kw], bias: [Cout] or undefined.
template <typename S>
Tensor<S> conv2d(Tape<S>* tape, const Tensor<S>& x, const Tensor<S>& kernel,
                 const Tensor<S>& bias, int stride, int padding, int groups = 1) {
    using detail::require;
    require(x.defined() && x.shape().rank() == 4, "conv2d: input must be rank-4 [N,C,H,W]");
    require(kernel.defined() && kernel.shape().rank() == 4,
            "conv2d: kernel must be rank-4 [Cout,Cin/groups,kh,kw]");
    require(stride >= 1 && padding >= 0 && groups >= 1, "conv2d: bad stride/padding/groups");
    const int N = x.shape()[0], Cin = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const int Cout = kernel.shape()[0], kh = kernel.shape()[2], kw = kernel.shape()[3];
    require(Cin % groups == 0, "conv2d: input channels " + std::to_string(Cin) +
                                   " not divisible by groups " + std::to_string(groups));
    require(Cout % groups == 0, "conv2d: output channels " + std::to_string(Cout) +
                                    " not divisible by groups " + std::to_string(groups));
    require(kernel.shape()[1] == Cin / groups,
            "conv2d: kernel channel dim " + std::to_string(kernel.shape()[1]) +
                " != Cin/groups = " + std::to_string(Cin / groups));
    require(H + 2 * padding >= kh, "conv2d: padded height " + std::to_string(H + 2 * padding) +
                                       " smaller than kernel height " + std::to_string(kh));
    require(W + 2 * padding >= kw, "conv2d: padded width " + std::to_string(W + 2 * padding) +
                                       " smaller than kernel width " + std::to_string(kw));
    require((H + 2 * padding - kh) % stride == 0,
            "conv2d: height extent " + std::to_string(H + 2 * padding - kh) +
                " not divisible by stride " + std::to_string(stride));
    require((W + 2 * padding - kw) % stride == 0,
            "conv2d: width extent " + std::to_string(W + 2 * padding - kw) +
                " not divisible by stride " + std::to_string(stride));
    if (bias.defined())
        require(bias.numel() == Cout, "conv2d: bias length " + std::to_string(bias.numel()) +
                                          " != Cout " + std::to_string(Cout));

    const int OH = (H + 2 * padding - kh) / stride + 1;
    const int OW = (W + 2 * padding - kw) / stride + 1;
    const int Cg = Cin / groups, Og = Cout / groups;
    const std::int64_t K = static_cast<std::int64_t>(Cg) * kh * kw;
    const std::int64_t opix = static_cast<std::int64_t>(OH) * OW;

    Tensor<S> out(Shape{N, Cout, OH, OW});
    auto& col = detail::scratch<S>(0);
    col.resize(static_cast<size_t>(K * opix));
    for (int n = 0; n < N; ++n)
        for (int g = 0; g < groups; ++g) {
            const S* xp = x.data() + (static_cast<std::int64_t>(n) * Cin + g * Cg) * H * W;
            detail::im2col(xp, Cg, H, W, kh, kw, stride, padding, OH, OW, col.data());
            S* op = out.data() + (static_cast<std::int64_t>(n) * Cout + g * Og) * opix;
            detail::gemm_nn(Og, static_cast<int>(opix), static_cast<int>(K),
                            kernel.data() + static_cast<std::int64_t>(g) * Og * K, col.data(), op);
        }
    if (bias.defined()) {
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < Cout; ++c) {
                S* op = out.data() + (static_cast<std::int64_t>(n) * Cout + c) * opix;
                const S b = bias.data()[c];
                for (std::int64_t i = 0; i < opix; ++i) op[i] += b;
            }
    }

    if (detail::wants_grad(tape, {&x, &kernel, &bias})) {
        out.set_requires_grad(true);
        Tensor<S> xc = x, kc = kernel, bc = bias, oc = out;
        tape->record([xc, kc, bc, oc, stride, padding, groups, N, Cin, Cout, H, W, kh, kw, OH,
                      OW]() mutable {
            if (!oc.has_grad()) return;
            const int Cg = Cin / groups, Og = Cout / groups;
            const std::int64_t K = static_cast<std::int64_t>(Cg) * kh * kw;
            const std::int64_t opix = static_cast<std::int64_t>(OH) * OW;
            const S* dy = oc.grad();
            const bool need_w = kc.requires_grad(), need_x = xc.requires_grad();
            if (need_w) kc.ensure_grad();
            if (need_x) xc.ensure_grad();
            auto& col = detail::scratch<S>(1);
            auto& dcol = detail::scratch<S>(2);
            if (need_w || need_x) col.resize(static_cast<size_t>(K * opix));
            if (need_x) dcol.resize(static_cast<size_t>(K * opix));
            for (int n = 0; n < N; ++n)
                for (int g = 0; g < groups; ++g) {
                    const S* dyp = dy + (static_cast<std::int64_t>(n) * Cout + g * Og) * opix;
                    if (need_w) {
                        const S* xp =
                            xc.data() + (static_cast<std::int64_t>(n) * Cin + g * Cg) * H * W;
                        detail::im2col(xp, Cg, H, W, kh, kw, stride, padding, OH, OW, col.data());
                        detail::gemm_nt(Og, static_cast<int>(K), static_cast<int>(opix), dyp,
                                        col.data(),
                                        kc.grad() + static_cast<std::int64_t>(g) * Og * K);
                    }
                    if (need_x) {
                        std::fill(dcol.begin(), dcol.end(), S(0));
                        detail::gemm_tn(static_cast<int>(K), static_cast<int>(opix), Og,
                                        kc.data() + static_cast<std::int64_t>(g) * Og * K, dyp,
                                        dcol.data());
                        detail::col2im_add(dcol.data(), Cg, H, W, kh, kw, stride, padding, OH, OW,
                                           xc.grad() +
                                               (static_cast<std::int64_t>(n) * Cin + g * Cg) * H * W);
                    }
                }
            if (bc.defined() && bc.requires_grad()) {
                bc.ensure_grad();
                for (int n = 0; n < N; ++n)
                    for (int c = 0; c < Cout; ++c) {
                        const S* dyp = dy + (static_cast<std::int64_t>(n) * Cout + c) * opix;
                        S acc = S(0);
                        for (std::int64_t i = 0; i < opix; ++i) acc += dyp[i];
                        bc.grad()[c] += acc;
                    }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// matmul (batched, leading dims broadcastable when equal or 1)
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> matmul(Tape<S>* tape, const Tensor<S>& a, const Tensor<S>& b) {
    using detail::require;
    require(a.defined() && b.defined(), "matmul: undefined input");
    require(a.shape().rank() >= 2 && b.shape().rank() >= 2, "matmul: inputs must be rank >= 2");
    const int ra = a.shape().rank(), rb = b.shape().rank();
    const int m = a.shape()[ra - 2], k = a.shape()[ra - 1];
    const int kb = b.shape()[rb - 2], n = b.shape()[rb - 1];
    require(k == kb, "matmul: inner-dimension mismatch " + std::to_string(k) + " vs " +
                         std::to_string(kb));
    const int r = std::max(ra, rb);
    std::vector<int> abat(r - 2, 1), bbat(r - 2, 1), obat(r - 2, 1);
    for (int i = 0; i < ra - 2; ++i) abat[r - 2 - (ra - 2) + i] = a.shape()[i];
    for (int i = 0; i < rb - 2; ++i) bbat[r - 2 - (rb - 2) + i] = b.shape()[i];
    for (int i = 0; i < r - 2; ++i) {
        require(abat[i] == bbat[i] || abat[i] == 1 || bbat[i] == 1,
                "matmul: batch dim " + std::to_string(i) + " not broadcastable (" +
                    std::to_string(abat[i]) + " vs " + std::to_string(bbat[i]) + ")");
        obat[i] = std::max(abat[i], bbat[i]);
    }
    std::vector<int> odims = obat;
    odims.push_back(m);
    odims.push_back(n);
    Tensor<S> out{Shape(odims)};

    std::int64_t batch = 1;
    for (int d : obat) batch *= d;
    auto offsets = [abat, bbat, obat](std::int64_t bi, std::int64_t& ao, std::int64_t& bo) {
        ao = bo = 0;
        std::int64_t rem = bi, amul = 1, bmul = 1;
        // strides accumulated right-to-left over the batch dims
        std::vector<std::int64_t> idx(obat.size());
        for (int i = static_cast<int>(obat.size()) - 1; i >= 0; --i) {
            idx[i] = rem % obat[i];
            rem /= obat[i];
        }
        for (int i = static_cast<int>(obat.size()) - 1; i >= 0; --i) {
            if (abat[i] != 1) ao += idx[i] * amul;
            if (bbat[i] != 1) bo += idx[i] * bmul;
            amul *= abat[i];
            bmul *= bbat[i];
        }
    };
    const std::int64_t asz = static_cast<std::int64_t>(m) * k;
    const std::int64_t bsz = static_cast<std::int64_t>(k) * n;
    const std::int64_t osz = static_cast<std::int64_t>(m) * n;
    for (std::int64_t bi = 0; bi < batch; ++bi) {
        std::int64_t ao, bo;
        offsets(bi, ao, bo);
        detail::gemm_nn(m, n, k, a.data() + ao * asz, b.data() + bo * bsz, out.data() + bi * osz);
    }

    if (detail::wants_grad(tape, {&a, &b})) {
        out.set_requires_grad(true);
        Tensor<S> ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc, abat, bbat, obat, m, n, k, batch, asz, bsz, osz,
                      offsets]() mutable {
            if (!oc.has_grad()) return;
            const bool need_a = ac.requires_grad(), need_b = bc.requires_grad();
            if (need_a) ac.ensure_grad();
            if (need_b) bc.ensure_grad();
            for (std::int64_t bi = 0; bi < batch; ++bi) {
                std::int64_t ao, bo;
                offsets(bi, ao, bo);
                const S* dy = oc.grad() + bi * osz;
                if (need_a)
                    detail::gemm_nt(m, k, n, dy, bc.data() + bo * bsz, ac.grad() + ao * asz);
                if (need_b)
                    detail::gemm_tn(k, n, m, ac.data() + ao * asz, dy, bc.grad() + bo * bsz);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// layout ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> reshape(Tape<S>* tape, const Tensor<S>& x, Shape shape) {
    detail::require(x.defined() && shape.numel() == x.numel(),
                    "reshape: element count mismatch " + std::to_string(x.numel()) + " -> " +
                        shape.str());
    Tensor<S> out(std::move(shape), x.vec());
    if (detail::wants_grad(tape, {&x})) {
        out.set_requires_grad(true);
        Tensor<S> xc = x, oc = out;
        tape->record([xc, oc]() mutable {
            if (!oc.has_grad()) return;
            xc.ensure_grad();
            const S* dy = oc.grad();
            S* dx = xc.grad();
            for (std::int64_t i = 0; i < xc.numel(); ++i) dx[i] += dy[i];
        });
    }
    return out;
}

template <typename S>
Tensor<S> permute(Tape<S>* tape, const Tensor<S>& x, const std::vector<int>& perm) {
    const int r = x.shape().rank();
    detail::require(static_cast<int>(perm.size()) == r, "permute: perm rank mismatch");
    std::vector<char> seen(static_cast<size_t>(r), 0);
    for (int p : perm) {
        detail::require(p >= 0 && p < r && !seen[static_cast<size_t>(p)], "permute: invalid perm");
        seen[static_cast<size_t>(p)] = 1;
    }
    std::vector<int> odims(static_cast<size_t>(r));
    std::vector<std::int64_t> istr(static_cast<size_t>(r), 1);
    for (int i = r - 2; i >= 0; --i) istr[i] = istr[i + 1] * x.shape()[i + 1];
    for (int i = 0; i < r; ++i) odims[i] = x.shape()[perm[i]];
    Tensor<S> out{Shape(odims)};
    std::vector<std::int64_t> ostr_in(static_cast<size_t>(r)); // input stride per output dim
    for (int i = 0; i < r; ++i) ostr_in[i] = istr[perm[i]];

    const std::int64_t total = out.numel();
    std::vector<std::int64_t> idx(static_cast<size_t>(r), 0);
    std::int64_t src = 0;
    for (std::int64_t o = 0; o < total; ++o) {
        out.data()[o] = x.data()[src];
        for (int d = r - 1; d >= 0; --d) {
            if (++idx[d] < odims[d]) {
                src += ostr_in[d];
                break;
            }
            src -= ostr_in[d] * (odims[d] - 1);
            idx[d] = 0;
        }
    }

    if (detail::wants_grad(tape, {&x})) {
        out.set_requires_grad(true);
        Tensor<S> xc = x, oc = out;
        tape->record([xc, oc, odims, ostr_in, r]() mutable {
            if (!oc.has_grad()) return;
            xc.ensure_grad();
            const std::int64_t total = oc.numel();
            std::vector<std::int64_t> idx(static_cast<size_t>(r), 0);
            std::int64_t src = 0;
            const S* dy = oc.grad();
            S* dx = xc.grad();
            for (std::int64_t o = 0; o < total; ++o) {
                dx[src] += dy[o];
                for (int d = r - 1; d >= 0; --d) {
                    if (++idx[d] < odims[d]) {
                        src += ostr_in[d];
                        break;
                    }
                    src -= ostr_in[d] * (odims[d] - 1);
                    idx[d] = 0;
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// softmax over the last dimension, max-subtracted for stability
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> softmax_lastdim(Tape<S>* tape, const Tensor<S>& x) {
    const int r = x.shape().rank();
    const std::int64_t last = x.shape()[r - 1];
    const std::int64_t rows = x.numel() / last;
    Tensor<S> out(x.shape());
    for (std::int64_t row = 0; row < rows; ++row) {
        const S* xp = x.data() + row * last;
        S* yp = out.data() + row * last;
        S mx = xp[0];
        for (std::int64_t i = 1; i < last; ++i) mx = std::max(mx, xp[i]);
        S sum = S(0);
        for (std::int64_t i = 0; i < last; ++i) {
            yp[i] = std::exp(xp[i] - mx);
            sum += yp[i];
        }
        const S inv = S(1) / sum;
        for (std::int64_t i = 0; i < last; ++i) yp[i] *= inv;
    }
    if (detail::wants_grad(tape, {&x})) {
        out.set_requires_grad(true);
        Tensor<S> xc = x, oc = out;
        tape->record([xc, oc, rows, last]() mutable {
            if (!oc.has_grad()) return;
            xc.ensure_grad();
            const S* y = oc.data();
            const S* dy = oc.grad();
            S* dx = xc.grad();
            for (std::int64_t row = 0; row < rows; ++row) {
                const S* yr = y + row * last;
                const S* dyr = dy + row * last;
                S dot = S(0);
                for (std::int64_t i = 0; i < last; ++i) dot += dyr[i] * yr[i];
                S* dxr = dx + row * last;
                for (std::int64_t i = 0; i < last; ++i) dxr[i] += yr[i] * (dyr[i] - dot);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// pointwise family
// ---------------------------------------------------------------------------

namespace detail {

// Shared wrapper for unary elementwise ops: fwd(x) -> y, bwd(x, y, dy) -> dx contribution.
template <typename S, typename F, typename B>
Tensor<S> unary(Tape<S>* tape, const Tensor<S>& x, F fwd, B bwd) {
    Tensor<S> out(x.shape());
    const S* xp = x.data();
    S* yp = out.data();
    for (std::int64_t i = 0; i < x.numel(); ++i) yp[i] = fwd(xp[i]);
    if (wants_grad(tape, {&x})) {
        out.set_requires_grad(true);
        Tensor<S> xc = x, oc = out;
        tape->record([xc, oc, bwd]() mutable {
            if (!oc.has_grad()) return;
            xc.ensure_grad();
            const S* xv = xc.data();
            const S* yv = oc.data();
            const S* dy = oc.grad();
            S* dx = xc.grad();
            for (std::int64_t i = 0; i < xc.numel(); ++i) dx[i] += bwd(xv[i], yv[i], dy[i]);
        });
    }
    return out;
}

} // namespace detail

template <typename S>
Tensor<S> sigmoid(Tape<S>* tape, const Tensor<S>& x) {
    return detail::unary(
        tape, x,
        [](S v) {
            if (v >= S(0)) return S(1) / (S(1) + std::exp(-v));
            const S e = std::exp(v);
            return e / (S(1) + e);
        },
        [](S, S y, S dy) { return dy * y * (S(1) - y); });
}

template <typename S>
Tensor<S> relu(Tape<S>* tape, const Tensor<S>& x) {
    return detail::unary(
        tape, x, [](S v) { return v > S(0) ? v : S(0); },
        [](S xv, S, S dy) { return xv > S(0) ? dy : S(0); });
}

/// Natural log; caller is responsible for keeping inputs positive (clamp first).
template <typename S>
Tensor<S> log(Tape<S>* tape, const Tensor<S>& x) {
    return detail::unary(
        tape, x, [](S v) { return std::log(v); }, [](S xv, S, S dy) { return dy / xv; });
}

template <typename S>
Tensor<S> clamp(Tape<S>* tape, const Tensor<S>& x, S lo, S hi) {
    return detail::unary(
        tape, x, [lo, hi](S v) { return std::min(std::max(v, lo), hi); },
        [lo, hi](S xv, S, S dy) { return (xv > lo && xv < hi) ? dy : S(0); });
}

template <typename S>
Tensor<S> one_minus(Tape<S>* tape, const Tensor<S>& x) {
    return detail::unary(
        tape, x, [](S v) { return S(1) - v; }, [](S, S, S dy) { return -dy; });
}

template <typename S>
Tensor<S> scale_by(Tape<S>* tape, const Tensor<S>& x, S c) {
    return detail::unary(
        tape, x, [c](S v) { return c * v; }, [c](S, S, S dy) { return c * dy; });
}

template <typename S>
Tensor<S> add_scalar(Tape<S>* tape, const Tensor<S>& x, S c) {
    return detail::unary(
        tape, x, [c](S v) { return v + c; }, [](S, S, S dy) { return dy; });
}

namespace detail {

template <typename S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
    require(a.defined() && b.defined(), std::string(op) + ": undefined input");
    require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + a.shape().str() +
                                        " vs " + b.shape().str());
}

} // namespace detail

template <typename S>
Tensor<S> add(Tape<S>* tape, const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape(a, b, "add");
    Tensor<S> out(a.shape());
    for (std::int64_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
    if (detail::wants_grad(tape, {&a, &b})) {
        out.set_requires_grad(true);
        Tensor<S> ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc]() mutable {
            if (!oc.has_grad()) return;
            const S* dy = oc.grad();
            if (ac.requires_grad()) {
                ac.ensure_grad();
                for (std::int64_t i = 0; i < ac.numel(); ++i) ac.grad()[i] += dy[i];
            }
            if (bc.requires_grad()) {
                bc.ensure_grad();
                for (std::int64_t i = 0; i < bc.numel(); ++i) bc.grad()[i] += dy[i];
            }
        });
    }
    return out;
}

template <typename S>
Tensor<S> sub(Tape<S>* tape, const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape(a, b, "sub");
    Tensor<S> out(a.shape());
    for (std::int64_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
    if (detail::wants_grad(tape, {&a, &b})) {
        out.set_requires_grad(true);
        Tensor<S> ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc]() mutable {
            if (!oc.has_grad()) return;
            const S* dy = oc.grad();
            if (ac.requires_grad()) {
                ac.ensure_grad();
                for (std::int64_t i = 0; i < ac.numel(); ++i) ac.grad()[i] += dy[i];
            }
            if (bc.requires_grad()) {
                bc.ensure_grad();
                for (std::int64_t i = 0; i < bc.numel(); ++i) bc.grad()[i] -= dy[i];
            }
        });
    }
    return out;
}

template <typename S>
Tensor<S> mul(Tape<S>* tape, const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape(a, b, "mul");
    Tensor<S> out(a.shape());
    for (std::int64_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    if (detail::wants_grad(tape, {&a, &b})) {
        out.set_requires_grad(true);
        Tensor<S> ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc]() mutable {
            if (!oc.has_grad()) return;
            const S* dy = oc.grad();
            if (ac.requires_grad()) {
                ac.ensure_grad();
                for (std::int64_t i = 0; i < ac.numel(); ++i) ac.grad()[i] += dy[i] * bc.data()[i];
            }
            if (bc.requires_grad()) {
                bc.ensure_grad();
                for (std::int64_t i = 0; i < bc.numel(); ++i) bc.grad()[i] += dy[i] * ac.data()[i];
            }
        });
    }
    return out;
}

template <typename S>
Tensor<S> divide(Tape<S>* tape, const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape(a, b, "divide");
    Tensor<S> out(a.shape());
    for (std::int64_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] / b.data()[i];
    if (detail::wants_grad(tape, {&a, &b})) {
        out.set_requires_grad(true);
        Tensor<S> ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc]() mutable {
            if (!oc.has_grad()) return;
            const S* dy = oc.grad();
            if (ac.requires_grad()) {
                ac.ensure_grad();
                for (std::int64_t i = 0; i < ac.numel(); ++i) ac.grad()[i] += dy[i] / bc.data()[i];
            }
            if (bc.requires_grad()) {
                bc.ensure_grad();
                for (std::int64_t i = 0; i < bc.numel(); ++i)
                    bc.grad()[i] -= dy[i] * oc.data()[i] / bc.data()[i];
            }
        });
    }
    return out;
}

/// x[..., C] + row vector b[C] broadcast over all leading dims.
template <typename S>
Tensor<S> add_rowvec(Tape<S>* tape, const Tensor<S>& x, const Tensor<S>& b) {
    const int r = x.shape().rank();
    const std::int64_t C = x.shape()[r - 1];
    detail::require(b.defined() && b.numel() == C, "add_rowvec: vector length mismatch");
    Tensor<S> out(x.shape());
    const std::int64_t rows = x.numel() / C;
    for (std::int64_t row = 0; row < rows; ++row)
        for (std::int64_t c = 0; c < C; ++c)
            out.data()[row * C + c] = x.data()[row * C + c] + b.data()[c];
    if (detail::wants_grad(tape, {&x, &b})) {
        out.set_requires_grad(true);
        Tensor<S> xc = x, bc = b, oc = out;
        tape->record([xc, bc, oc, rows, C]() mutable {
            if (!oc.has_grad()) return;
            const S* dy = oc.grad();
            if (xc.requires_grad()) {
                xc.ensure_grad();
                for (std::int64_t i = 0; i < xc.numel(); ++i) xc.grad()[i] += dy[i];
            }
            if (bc.requires_grad()) {
                bc.ensure_grad();
                for (std::int64_t row = 0; row < rows; ++row)
                    for (std::int64_t c = 0; c < C; ++c) bc.grad()[c] += dy[row * C + c];
            }
        });
    }
    return out;
}

/// x[N,C,H,W] * m[N,1,H,W]: one spatial map gating every channel.
template <typename S>
Tensor<S> mul_channelmap(Tape<S>* tape, const Tensor<S>& x, const Tensor<S>& m) {
    detail::require(x.shape().rank() == 4 && m.shape().rank() == 4, "mul_channelmap: rank-4 only");
    detail::require(m.shape()[1] == 1, "mul_channelmap: map must have one channel");
    detail::require(m.shape()[0] == x.shape()[0] && m.shape()[2] == x.shape()[2] &&
                        m.shape()[3] == x.shape()[3],
                    "mul_channelmap: spatial/batch mismatch " + x.shape().str() + " vs " +
                        m.shape().str());
    const int N = x.shape()[0], C = x.shape()[1];
    const std::int64_t pix = static_cast<std::int64_t>(x.shape()[2]) * x.shape()[3];
    Tensor<S> out(x.shape());
    for (int n = 0; n < N; ++n) {
        const S* mp = m.data() + n * pix;
        for (int c = 0; c < C; ++c) {
            const S* xp = x.data() + (static_cast<std::int64_t>(n) * C + c) * pix;
            S* yp = out.data() + (static_cast<std::int64_t>(n) * C + c) * pix;
            for (std::int64_t i = 0; i < pix; ++i) yp[i] = xp[i] * mp[i];
        }
    }
    if (detail::wants_grad(tape, {&x, &m})) {
        out.set_requires_grad(true);
        Tensor<S> xc = x, mc = m, oc = out;
        tape->record([xc, mc, oc, N, C, pix]() mutable {
            if (!oc.has_grad()) return;
            const S* dy = oc.grad();
            if (xc.requires_grad()) {
                xc.ensure_grad();
                for (int n = 0; n < N; ++n) {
                    const S* mp = mc.data() + n * pix;
                    for (int c = 0; c < C; ++c) {
                        const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * pix;
                        for (std::int64_t i = 0; i < pix; ++i)
                            xc.grad()[off + i] += dy[off + i] * mp[i];
                    }
                }
            }
            if (mc.requires_grad()) {
                mc.ensure_grad();
                for (int n = 0; n < N; ++n) {
                    S* dm = mc.grad() + n * pix;
                    for (int c = 0; c < C; ++c) {
                        const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * pix;
                        for (std::int64_t i = 0; i < pix; ++i)
                            dm[i] += dy[off + i] * xc.data()[off + i];
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// batch norm
// ---------------------------------------------------------------------------

enum class NormMode { train, eval };

/// Per-channel batch normalization over [N,C,H,W]. Train mode normalizes by
/// biased batch statistics and updates running stats in place with momentum
/// 0.1 (outside the autodiff record); eval mode reads running stats and never
/// mutates them.
template <typename S>
Tensor<S> batch_norm(Tape<S>* tape, const Tensor<S>& x, const Tensor<S>& gamma,
                     const Tensor<S>& beta, Tensor<S>& running_mean, Tensor<S>& running_var,
                     NormMode mode, S momentum = S(0.1), S eps = S(1e-5)) {
    using detail::require;
    require(x.defined() && x.shape().rank() == 4, "batch_norm: input must be rank-4 [N,C,H,W]");
    const int N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    require(gamma.numel() == C && beta.numel() == C && running_mean.numel() == C &&
                running_var.numel() == C,
            "batch_norm: affine/running stat length != C");
    const std::int64_t pix = static_cast<std::int64_t>(H) * W;
    const std::int64_t cnt = static_cast<std::int64_t>(N) * pix;
    Tensor<S> out(x.shape());

    if (mode == NormMode::train) {
        require(cnt >= 2, "batch_norm: train mode needs N*H*W >= 2, got " + std::to_string(cnt));
        std::vector<S> mean(static_cast<size_t>(C), S(0)), var(static_cast<size_t>(C), S(0)),
            invstd(static_cast<size_t>(C));
        for (int c = 0; c < C; ++c) {
            S acc = S(0);
            for (int n = 0; n < N; ++n) {
                const S* xp = x.data() + (static_cast<std::int64_t>(n) * C + c) * pix;
                for (std::int64_t i = 0; i < pix; ++i) acc += xp[i];
            }
            mean[static_cast<size_t>(c)] = acc / static_cast<S>(cnt);
        }
        for (int c = 0; c < C; ++c) {
            S acc = S(0);
            const S mu = mean[static_cast<size_t>(c)];
            for (int n = 0; n < N; ++n) {
                const S* xp = x.data() + (static_cast<std::int64_t>(n) * C + c) * pix;
                for (std::int64_t i = 0; i < pix; ++i) {
                    const S d = xp[i] - mu;
                    acc += d * d;
                }
            }
            var[static_cast<size_t>(c)] = acc / static_cast<S>(cnt);
            invstd[static_cast<size_t>(c)] = S(1) / std::sqrt(var[static_cast<size_t>(c)] + eps);
        }
        // normalized values are saved for the backward pass
        Tensor<S> xhat(x.shape());
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * pix;
                const S mu = mean[static_cast<size_t>(c)], is = invstd[static_cast<size_t>(c)];
                const S g = gamma.data()[c], bt = beta.data()[c];
                for (std::int64_t i = 0; i < pix; ++i) {
                    const S xh = (x.data()[off + i] - mu) * is;
                    xhat.data()[off + i] = xh;
                    out.data()[off + i] = g * xh + bt;
                }
            }
        for (int c = 0; c < C; ++c) {
            running_mean.data()[c] = (S(1) - momentum) * running_mean.data()[c] +
                                     momentum * mean[static_cast<size_t>(c)];
            running_var.data()[c] =
                (S(1) - momentum) * running_var.data()[c] + momentum * var[static_cast<size_t>(c)];
        }
        if (detail::wants_grad(tape, {&x, &gamma, &beta})) {
            out.set_requires_grad(true);
            Tensor<S> xc = x, gc = gamma, bc = beta, oc = out, xh = xhat;
            tape->record([xc, gc, bc, oc, xh, invstd, N, C, pix, cnt]() mutable {
                if (!oc.has_grad()) return;
                const S* dy = oc.grad();
                std::vector<S> dsum(static_cast<size_t>(C), S(0)),
                    dxhsum(static_cast<size_t>(C), S(0));
                for (int n = 0; n < N; ++n)
                    for (int c = 0; c < C; ++c) {
                        const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * pix;
                        S a = S(0), b2 = S(0);
                        for (std::int64_t i = 0; i < pix; ++i) {
                            a += dy[off + i];
                            b2 += dy[off + i] * xh.data()[off + i];
                        }
                        dsum[static_cast<size_t>(c)] += a;
                        dxhsum[static_cast<size_t>(c)] += b2;
                    }
                if (bc.requires_grad()) {
                    bc.ensure_grad();
                    for (int c = 0; c < C; ++c) bc.grad()[c] += dsum[static_cast<size_t>(c)];
                }
                if (gc.requires_grad()) {
                    gc.ensure_grad();
                    for (int c = 0; c < C; ++c) gc.grad()[c] += dxhsum[static_cast<size_t>(c)];
                }
                if (xc.requires_grad()) {
                    xc.ensure_grad();
                    for (int n = 0; n < N; ++n)
                        for (int c = 0; c < C; ++c) {
                            const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * pix;
                            const S g = gc.data()[c], is = invstd[static_cast<size_t>(c)];
                            const S mdy = dsum[static_cast<size_t>(c)] / static_cast<S>(cnt);
                            const S mdyxh = dxhsum[static_cast<size_t>(c)] / static_cast<S>(cnt);
                            for (std::int64_t i = 0; i < pix; ++i)
                                xc.grad()[off + i] +=
                                    g * is *
                                    (dy[off + i] - mdy - xh.data()[off + i] * mdyxh);
                        }
                }
            });
        }
        return out;
    }

    // eval: pure affine transform per channel from frozen running statistics
    std::vector<S> invstd(static_cast<size_t>(C));
    for (int c = 0; c < C; ++c) invstd[static_cast<size_t>(c)] = S(1) / std::sqrt(running_var.data()[c] + eps);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * pix;
            const S mu = running_mean.data()[c], is = invstd[static_cast<size_t>(c)];
            const S g = gamma.data()[c], bt = beta.data()[c];
            for (std::int64_t i = 0; i < pix; ++i)
                out.data()[off + i] = (x.data()[off + i] - mu) * is * g + bt;
        }
    if (detail::wants_grad(tape, {&x, &gamma, &beta})) {
        out.set_requires_grad(true);
        Tensor<S> xc = x, gc = gamma, bc = beta, oc = out, rm = running_mean;
        tape->record([xc, gc, bc, oc, rm, invstd, N, C, pix]() mutable {
            if (!oc.has_grad()) return;
            const S* dy = oc.grad();
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * pix;
                    const S is = invstd[static_cast<size_t>(c)];
                    const S g = gc.data()[c];
                    const S mu = rm.data()[c];
                    if (xc.requires_grad()) {
                        xc.ensure_grad();
                        for (std::int64_t i = 0; i < pix; ++i)
                            xc.grad()[off + i] += dy[off + i] * g * is;
                    }
                    if (gc.requires_grad()) {
                        gc.ensure_grad();
                        S acc = S(0);
                        for (std::int64_t i = 0; i < pix; ++i)
                            acc += dy[off + i] * (xc.data()[off + i] - mu) * is;
                        gc.grad()[c] += acc;
                    }
                    if (bc.requires_grad()) {
                        bc.ensure_grad();
                        S acc = S(0);
                        for (std::int64_t i = 0; i < pix; ++i) acc += dy[off + i];
                        bc.grad()[c] += acc;
                    }
                }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// bilinear upsampling (align-corners = false)
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> upsample_bilinear(Tape<S>* tape, const Tensor<S>& x, int out_h, int out_w) {
    using detail::require;
    require(x.defined() && x.shape().rank() == 4, "upsample_bilinear: rank-4 input required");
    require(out_h >= 1 && out_w >= 1, "upsample_bilinear: target dims must be >= 1");
    const int N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    Tensor<S> out(Shape{N, C, out_h, out_w});

    // source coordinate per output row/col: (o + 0.5) * in/out - 0.5, clamped
    auto coords = [](int in, int outn, std::vector<int>& i0, std::vector<int>& i1,
                     std::vector<S>& w1) {
        i0.resize(static_cast<size_t>(outn));
        i1.resize(static_cast<size_t>(outn));
        w1.resize(static_cast<size_t>(outn));
        const double scale = static_cast<double>(in) / outn;
        for (int o = 0; o < outn; ++o) {
            double src = (o + 0.5) * scale - 0.5;
            if (src < 0) src = 0;
            if (src > in - 1) src = in - 1;
            int lo = static_cast<int>(src);
            i0[static_cast<size_t>(o)] = lo;
            i1[static_cast<size_t>(o)] = std::min(lo + 1, in - 1);
            w1[static_cast<size_t>(o)] = static_cast<S>(src - lo);
        }
    };
    std::vector<int> y0, y1, x0, x1;
    std::vector<S> wy, wx;
    coords(H, out_h, y0, y1, wy);
    coords(W, out_w, x0, x1, wx);

    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const S* xp = x.data() + (static_cast<std::int64_t>(n) * C + c) * H * W;
            S* yp = out.data() + (static_cast<std::int64_t>(n) * C + c) * out_h * out_w;
            for (int oy = 0; oy < out_h; ++oy) {
                const S fy = wy[static_cast<size_t>(oy)];
                const S* r0 = xp + static_cast<std::int64_t>(y0[static_cast<size_t>(oy)]) * W;
                const S* r1 = xp + static_cast<std::int64_t>(y1[static_cast<size_t>(oy)]) * W;
                for (int ox = 0; ox < out_w; ++ox) {
                    const S fx = wx[static_cast<size_t>(ox)];
                    const S a = r0[x0[static_cast<size_t>(ox)]], b = r0[x1[static_cast<size_t>(ox)]];
                    const S cde = r1[x0[static_cast<size_t>(ox)]], d = r1[x1[static_cast<size_t>(ox)]];
                    yp[static_cast<std::int64_t>(oy) * out_w + ox] =
                        (S(1) - fy) * ((S(1) - fx) * a + fx * b) + fy * ((S(1) - fx) * cde + fx * d);
                }
            }
        }

    if (detail::wants_grad(tape, {&x})) {
        out.set_requires_grad(true);
        Tensor<S> xc = x, oc = out;
        tape->record([xc, oc, y0, y1, x0, x1, wy, wx, N, C, H, W, out_h, out_w]() mutable {
            if (!oc.has_grad()) return;
            xc.ensure_grad();
            const S* dy = oc.grad();
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    S* dx = xc.grad() + (static_cast<std::int64_t>(n) * C + c) * H * W;
                    const S* dyp = dy + (static_cast<std::int64_t>(n) * C + c) * out_h * out_w;
                    for (int oy = 0; oy < out_h; ++oy) {
                        const S fy = wy[static_cast<size_t>(oy)];
                        for (int ox = 0; ox < out_w; ++ox) {
                            const S fx = wx[static_cast<size_t>(ox)];
                            const S g = dyp[static_cast<std::int64_t>(oy) * out_w + ox];
                            dx[static_cast<std::int64_t>(y0[static_cast<size_t>(oy)]) * W +
                               x0[static_cast<size_t>(ox)]] += (S(1) - fy) * (S(1) - fx) * g;
                            dx[static_cast<std::int64_t>(y0[static_cast<size_t>(oy)]) * W +
                               x1[static_cast<size_t>(ox)]] += (S(1) - fy) * fx * g;
                            dx[static_cast<std::int64_t>(y1[static_cast<size_t>(oy)]) * W +
                               x0[static_cast<size_t>(ox)]] += fy * (S(1) - fx) * g;
                            dx[static_cast<std::int64_t>(y1[static_cast<size_t>(oy)]) * W +
                               x1[static_cast<size_t>(ox)]] += fy * fx * g;
                        }
                    }
                }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// channel concat / slice
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> concat_channels(Tape<S>* tape, const std::vector<Tensor<S>>& parts) {
    using detail::require;
    require(!parts.empty(), "concat_channels: empty part list");
    const int N = parts[0].shape()[0], H = parts[0].shape()[2], W = parts[0].shape()[3];
    int Ctot = 0;
    for (const auto& p : parts) {
        require(p.defined() && p.shape().rank() == 4, "concat_channels: parts must be rank-4");
        require(p.shape()[0] == N && p.shape()[2] == H && p.shape()[3] == W,
                "concat_channels: spatial/batch mismatch " + p.shape().str());
        Ctot += p.shape()[1];
    }
    Tensor<S> out(Shape{N, Ctot, H, W});
    const std::int64_t pix = static_cast<std::int64_t>(H) * W;
    for (int n = 0; n < N; ++n) {
        std::int64_t coff = 0;
        for (const auto& p : parts) {
            const int pc = p.shape()[1];
            std::copy_n(p.data() + static_cast<std::int64_t>(n) * pc * pix, pc * pix,
                        out.data() + (static_cast<std::int64_t>(n) * Ctot + coff) * pix);
            coff += pc;
        }
    }
    bool any = false;
    for (const auto& p : parts) any = any || p.requires_grad();
    if (tape && any) {
        out.set_requires_grad(true);
        std::vector<Tensor<S>> pc = parts;
        Tensor<S> oc = out;
        tape->record([pc, oc, N, Ctot, pix]() mutable {
            if (!oc.has_grad()) return;
            const S* dy = oc.grad();
            for (int n = 0; n < N; ++n) {
                std::int64_t coff = 0;
                for (auto& p : pc) {
                    const int c = p.shape()[1];
                    if (p.requires_grad()) {
                        p.ensure_grad();
                        S* dp = p.grad() + static_cast<std::int64_t>(n) * c * pix;
                        const S* src = dy + (static_cast<std::int64_t>(n) * Ctot + coff) * pix;
                        for (std::int64_t i = 0; i < c * pix; ++i) dp[i] += src[i];
                    }
                    coff += c;
                }
            }
        });
    }
    return out;
}

/// y = x[:, c0 : c0+len]. Exact inverse of concat_channels slicing.
template <typename S>
Tensor<S> slice_channels(Tape<S>* tape, const Tensor<S>& x, int c0, int len) {
    using detail::require;
    require(x.defined() && x.shape().rank() == 4, "slice_channels: rank-4 input required");
    const int N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    require(c0 >= 0 && len >= 1 && c0 + len <= C, "slice_channels: range [" + std::to_string(c0) +
                                                      "," + std::to_string(c0 + len) +
                                                      ") out of " + std::to_string(C));
    Tensor<S> out(Shape{N, len, H, W});
    const std::int64_t pix = static_cast<std::int64_t>(H) * W;
    for (int n = 0; n < N; ++n)
        std::copy_n(x.data() + (static_cast<std::int64_t>(n) * C + c0) * pix, len * pix,
                    out.data() + static_cast<std::int64_t>(n) * len * pix);
    if (detail::wants_grad(tape, {&x})) {
        out.set_requires_grad(true);
        Tensor<S> xc = x, oc = out;
        tape->record([xc, oc, N, C, c0, len, pix]() mutable {
            if (!oc.has_grad()) return;
            xc.ensure_grad();
            const S* dy = oc.grad();
            for (int n = 0; n < N; ++n) {
                S* dx = xc.grad() + (static_cast<std::int64_t>(n) * C + c0) * pix;
                const S* src = dy + static_cast<std::int64_t>(n) * len * pix;
                for (std::int64_t i = 0; i < len * pix; ++i) dx[i] += src[i];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// phase subsampling (the stitch primitive)
// ---------------------------------------------------------------------------

/// Pure gather of one phase sub-grid. Offsets are 1-based in [1, s]:
/// out(i,j) = x(offset_r-1 + i*s, offset_c-1 + j*s). Gradient is a
/// scatter-add onto the sampled positions and zero elsewhere.
template <typename S>
Tensor<S> strided_subsample(Tape<S>* tape, const Tensor<S>& x, int s, int offset_r,
                            int offset_c) {
    using detail::require;
    require(x.defined() && x.shape().rank() == 4, "strided_subsample: rank-4 input required");
    require(s >= 1, "strided_subsample: stride must be >= 1");
    require(offset_r >= 1 && offset_r <= s && offset_c >= 1 && offset_c <= s,
            "strided_subsample: offsets must lie in [1, s]");
    const int N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    require(H % s == 0, "strided_subsample: height " + std::to_string(H) +
                            " not divisible by stride " + std::to_string(s));
    require(W % s == 0, "strided_subsample: width " + std::to_string(W) +
                            " not divisible by stride " + std::to_string(s));
    const int oh = H / s, ow = W / s;
    Tensor<S> out(Shape{N, C, oh, ow});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const S* xp = x.data() + (static_cast<std::int64_t>(n) * C + c) * H * W;
            S* yp = out.data() + (static_cast<std::int64_t>(n) * C + c) * oh * ow;
            for (int i = 0; i < oh; ++i) {
                const S* row = xp + static_cast<std::int64_t>(offset_r - 1 + i * s) * W;
                for (int j = 0; j < ow; ++j) yp[static_cast<std::int64_t>(i) * ow + j] = row[offset_c - 1 + j * s];
            }
        }
    if (detail::wants_grad(tape, {&x})) {
        out.set_requires_grad(true);
        Tensor<S> xc = x, oc = out;
        tape->record([xc, oc, s, offset_r, offset_c, N, C, H, W, oh, ow]() mutable {
            if (!oc.has_grad()) return;
            xc.ensure_grad();
            const S* dy = oc.grad();
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    S* dx = xc.grad() + (static_cast<std::int64_t>(n) * C + c) * H * W;
                    const S* dyp = dy + (static_cast<std::int64_t>(n) * C + c) * oh * ow;
                    for (int i = 0; i < oh; ++i)
                        for (int j = 0; j < ow; ++j)
                            dx[static_cast<std::int64_t>(offset_r - 1 + i * s) * W + offset_c - 1 +
                               j * s] += dyp[static_cast<std::int64_t>(i) * ow + j];
                }
        });
    }
    return out;
}

/// Exact inverse of phase decomposition: scatters s*s phase grids (ordered
/// (a-1)*s + (b-1) for 1-based phase offsets a, b) back to the full grid.
template <typename S>
Tensor<S> phase_combine(Tape<S>* tape, const std::vector<Tensor<S>>& phases, int s) {
    using detail::require;
    require(s >= 1, "phase_combine: stride must be >= 1");
    require(static_cast<int>(phases.size()) == s * s,
            "phase_combine: expected " + std::to_string(s * s) + " phases, got " +
                std::to_string(phases.size()));
    const Shape& ps = phases[0].shape();
    require(ps.rank() == 4, "phase_combine: phases must be rank-4");
    for (const auto& p : phases)
        require(p.shape() == ps, "phase_combine: phase shape mismatch");
    const int N = ps[0], C = ps[1], h = ps[2], w = ps[3];
    Tensor<S> out(Shape{N, C, h * s, w * s});
    const int W = w * s;
    for (int a = 1; a <= s; ++a)
        for (int b = 1; b <= s; ++b) {
            const Tensor<S>& p = phases[static_cast<size_t>((a - 1) * s + (b - 1))];
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const S* pp = p.data() + (static_cast<std::int64_t>(n) * C + c) * h * w;
                    S* yp = out.data() + (static_cast<std::int64_t>(n) * C + c) * h * s * W;
                    for (int i = 0; i < h; ++i)
                        for (int j = 0; j < w; ++j)
                            yp[static_cast<std::int64_t>(a - 1 + i * s) * W + b - 1 + j * s] =
                                pp[static_cast<std::int64_t>(i) * w + j];
                }
        }
    bool any = false;
    for (const auto& p : phases) any = any || p.requires_grad();
    if (tape && any) {
        out.set_requires_grad(true);
        std::vector<Tensor<S>> pc = phases;
        Tensor<S> oc = out;
        tape->record([pc, oc, s, N, C, h, w, W]() mutable {
            if (!oc.has_grad()) return;
            const S* dy = oc.grad();
            for (int a = 1; a <= s; ++a)
                for (int b = 1; b <= s; ++b) {
                    Tensor<S>& p = pc[static_cast<size_t>((a - 1) * s + (b - 1))];
                    if (!p.requires_grad()) continue;
                    p.ensure_grad();
                    for (int n = 0; n < N; ++n)
                        for (int c = 0; c < C; ++c) {
                            S* dp = p.grad() + (static_cast<std::int64_t>(n) * C + c) * h * w;
                            const S* dyp =
                                dy + (static_cast<std::int64_t>(n) * C + c) * h * s * W;
                            for (int i = 0; i < h; ++i)
                                for (int j = 0; j < w; ++j)
                                    dp[static_cast<std::int64_t>(i) * w + j] +=
                                        dyp[static_cast<std::int64_t>(a - 1 + i * s) * W + b - 1 +
                                            j * s];
                        }
                }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// padding / cropping
// ---------------------------------------------------------------------------

enum class PadMode { zero, replicate, symmetric };

/// Pads the two spatial dims. symmetric mirrors including the edge pixel
/// (supports pad amounts up to the full extent, unlike edge-exclusive
/// reflection); replicate clamps to the border.
template <typename S>
Tensor<S> pad2d(Tape<S>* tape, const Tensor<S>& x, int top, int bottom, int left, int right,
                PadMode mode) {
    using detail::require;
    require(x.defined() && x.shape().rank() == 4, "pad2d: rank-4 input required");
    require(top >= 0 && bottom >= 0 && left >= 0 && right >= 0, "pad2d: negative pad");
    const int N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    if (mode == PadMode::symmetric)
        require(top <= H && bottom <= H && left <= W && right <= W,
                "pad2d: symmetric pad cannot exceed the input extent");
    const int OH = H + top + bottom, OW = W + left + right;

    auto map_coord = [mode](int i, int n) -> int {
        if (i >= 0 && i < n) return i;
        switch (mode) {
            case PadMode::zero: return -1;
            case PadMode::replicate: return i < 0 ? 0 : n - 1;
            case PadMode::symmetric: return i < 0 ? -1 - i : 2 * n - 1 - i;
        }
        return -1;
    };

    Tensor<S> out(Shape{N, C, OH, OW});
    std::vector<int> ymap(static_cast<size_t>(OH)), xmap(static_cast<size_t>(OW));
    for (int oy = 0; oy < OH; ++oy) ymap[static_cast<size_t>(oy)] = map_coord(oy - top, H);
    for (int ox = 0; ox < OW; ++ox) xmap[static_cast<size_t>(ox)] = map_coord(ox - left, W);

    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const S* xp = x.data() + (static_cast<std::int64_t>(n) * C + c) * H * W;
            S* yp = out.data() + (static_cast<std::int64_t>(n) * C + c) * OH * OW;
            for (int oy = 0; oy < OH; ++oy) {
                const int iy = ymap[static_cast<size_t>(oy)];
                for (int ox = 0; ox < OW; ++ox) {
                    const int ix = xmap[static_cast<size_t>(ox)];
                    yp[static_cast<std::int64_t>(oy) * OW + ox] =
                        (iy < 0 || ix < 0) ? S(0) : xp[static_cast<std::int64_t>(iy) * W + ix];
                }
            }
        }
    if (detail::wants_grad(tape, {&x})) {
        out.set_requires_grad(true);
        Tensor<S> xc = x, oc = out;
        tape->record([xc, oc, ymap, xmap, N, C, H, W, OH, OW]() mutable {
            if (!oc.has_grad()) return;
            xc.ensure_grad();
            const S* dy = oc.grad();
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    S* dx = xc.grad() + (static_cast<std::int64_t>(n) * C + c) * H * W;
                    const S* dyp = dy + (static_cast<std::int64_t>(n) * C + c) * OH * OW;
                    for (int oy = 0; oy < OH; ++oy) {
                        const int iy = ymap[static_cast<size_t>(oy)];
                        if (iy < 0) continue;
                        for (int ox = 0; ox < OW; ++ox) {
                            const int ix = xmap[static_cast<size_t>(ox)];
                            if (ix < 0) continue;
                            dx[static_cast<std::int64_t>(iy) * W + ix] +=
                                dyp[static_cast<std::int64_t>(oy) * OW + ox];
                        }
                    }
                }
        });
    }
    return out;
}

template <typename S>
Tensor<S> crop2d(Tape<S>* tape, const Tensor<S>& x, int top, int left, int h, int w) {
    using detail::require;
    require(x.defined() && x.shape().rank() == 4, "crop2d: rank-4 input required");
    const int N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    require(top >= 0 && left >= 0 && h >= 1 && w >= 1 && top + h <= H && left + w <= W,
            "crop2d: window out of bounds");
    Tensor<S> out(Shape{N, C, h, w});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const S* xp = x.data() + (static_cast<std::int64_t>(n) * C + c) * H * W;
            S* yp = out.data() + (static_cast<std::int64_t>(n) * C + c) * h * w;
            for (int i = 0; i < h; ++i)
                std::copy_n(xp + static_cast<std::int64_t>(top + i) * W + left, w,
                            yp + static_cast<std::int64_t>(i) * w);
        }
    if (detail::wants_grad(tape, {&x})) {
        out.set_requires_grad(true);
        Tensor<S> xc = x, oc = out;
        tape->record([xc, oc, top, left, h, w, N, C, H, W]() mutable {
            if (!oc.has_grad()) return;
            xc.ensure_grad();
            const S* dy = oc.grad();
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    S* dx = xc.grad() + (static_cast<std::int64_t>(n) * C + c) * H * W;
                    const S* dyp = dy + (static_cast<std::int64_t>(n) * C + c) * h * w;
                    for (int i = 0; i < h; ++i)
                        for (int j = 0; j < w; ++j)
                            dx[static_cast<std::int64_t>(top + i) * W + left + j] +=
                                dyp[static_cast<std::int64_t>(i) * w + j];
                }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// max pooling (floor output arithmetic, padding cells never win)
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> max_pool2d(Tape<S>* tape, const Tensor<S>& x, int k, int stride, int padding) {
    using detail::require;
    require(x.defined() && x.shape().rank() == 4, "max_pool2d: rank-4 input required");
    require(k >= 1 && stride >= 1 && padding >= 0 && padding < k, "max_pool2d: bad window");
    const int N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    require(H + 2 * padding >= k && W + 2 * padding >= k, "max_pool2d: window larger than input");
    const int OH = (H + 2 * padding - k) / stride + 1;
    const int OW = (W + 2 * padding - k) / stride + 1;
    Tensor<S> out(Shape{N, C, OH, OW});
    std::vector<std::int32_t> argmax(static_cast<size_t>(out.numel()));
    std::int64_t o = 0;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const S* xp = x.data() + (static_cast<std::int64_t>(n) * C + c) * H * W;
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox, ++o) {
                    S best = -std::numeric_limits<S>::infinity();
                    std::int32_t bi = -1;
                    for (int i = 0; i < k; ++i) {
                        const int iy = oy * stride + i - padding;
                        if (iy < 0 || iy >= H) continue;
                        for (int j = 0; j < k; ++j) {
                            const int ix = ox * stride + j - padding;
                            if (ix < 0 || ix >= W) continue;
                            const S v = xp[static_cast<std::int64_t>(iy) * W + ix];
                            if (v > best) {
                                best = v;
                                bi = static_cast<std::int32_t>(iy * W + ix);
                            }
                        }
                    }
                    out.data()[o] = best;
                    argmax[static_cast<size_t>(o)] = bi;
                }
        }
    if (detail::wants_grad(tape, {&x})) {
        out.set_requires_grad(true);
        Tensor<S> xc = x, oc = out;
        const std::int64_t pix = static_cast<std::int64_t>(H) * W;
        const std::int64_t opix = static_cast<std::int64_t>(OH) * OW;
        tape->record([xc, oc, argmax, pix, opix]() mutable {
            if (!oc.has_grad()) return;
            xc.ensure_grad();
            const S* dy = oc.grad();
            const std::int64_t planes = oc.numel() / opix;
            for (std::int64_t p = 0; p < planes; ++p)
                for (std::int64_t i = 0; i < opix; ++i)
                    xc.grad()[p * pix + argmax[static_cast<size_t>(p * opix + i)]] +=
                        dy[p * opix + i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> sum_all(Tape<S>* tape, const Tensor<S>& x) {
    S acc = S(0);
    for (std::int64_t i = 0; i < x.numel(); ++i) acc += x.data()[i];
    Tensor<S> out = Tensor<S>::scalar(acc);
    if (detail::wants_grad(tape, {&x})) {
        out.set_requires_grad(true);
        Tensor<S> xc = x, oc = out;
        tape->record([xc, oc]() mutable {
            if (!oc.has_grad()) return;
            xc.ensure_grad();
            const S g = oc.grad()[0];
            for (std::int64_t i = 0; i < xc.numel(); ++i) xc.grad()[i] += g;
        });
    }
    return out;
}

template <typename S>
Tensor<S> mean_all(Tape<S>* tape, const Tensor<S>& x) {
    const S inv = S(1) / static_cast<S>(x.numel());
    S acc = S(0);
    for (std::int64_t i = 0; i < x.numel(); ++i) acc += x.data()[i];
    Tensor<S> out = Tensor<S>::scalar(acc * inv);
    if (detail::wants_grad(tape, {&x})) {
        out.set_requires_grad(true);
        Tensor<S> xc = x, oc = out;
        tape->record([xc, oc, inv]() mutable {
            if (!oc.has_grad()) return;
            xc.ensure_grad();
            const S g = oc.grad()[0] * inv;
            for (std::int64_t i = 0; i < xc.numel(); ++i) xc.grad()[i] += g;
        });
    }
    return out;
}

} // namespace cto::ops
