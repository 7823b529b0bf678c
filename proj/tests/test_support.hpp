#pragma once

// Shared helpers for the test suites: random tensor builders and the
// independent reference implementations (oracles) that the fast paths are
// checked against. Oracles are deliberately written as plain nested loops,
// not in terms of the library ops they verify.

#include <cmath>
#include <cstdint>
#include <vector>

#include "cto/ops.hpp"
#include "cto/rng.hpp"
#include "cto/tensor.hpp"

namespace testsup {

using cto::CounterRng;
using cto::Shape;
using cto::Tensor;

template <typename S>
Tensor<S> random_tensor(Shape shape, CounterRng& rng, double lo = -1.0, double hi = 1.0,
                        bool requires_grad = false) {
    Tensor<S> t(std::move(shape), S(0), requires_grad);
    for (auto& v : t.vec()) v = static_cast<S>(rng.uniform(lo, hi));
    return t;
}

// Random values kept away from zero (for relu kink safety): |v| in [margin, 1].
template <typename S>
Tensor<S> random_away_from_zero(Shape shape, CounterRng& rng, double margin = 1e-3,
                                bool requires_grad = false) {
    Tensor<S> t(std::move(shape), S(0), requires_grad);
    for (auto& v : t.vec()) {
        double m = rng.uniform(margin, 1.0);
        v = static_cast<S>(rng.uniform() < 0.5 ? -m : m);
    }
    return t;
}

// ---- six-nested-loop conv2d reference (cross-correlation, zero pad) ------
template <typename S>
Tensor<S> conv2d_reference(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias,
                           int stride, int pad, int groups = 1) {
    const int N = x.shape()[0], Cin = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const int Cout = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
    const int OH = (H + 2 * pad - kh) / stride + 1;
    const int OW = (W + 2 * pad - kw) / stride + 1;
    const int Cg = Cin / groups, Og = Cout / groups;
    Tensor<S> out(Shape{N, Cout, OH, OW});
    for (int n = 0; n < N; ++n)
        for (int co = 0; co < Cout; ++co) {
            const int g = co / Og;
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    S acc = bias.defined() ? bias.data()[co] : S(0);
                    for (int ci = 0; ci < Cg; ++ci)
                        for (int i = 0; i < kh; ++i)
                            for (int j = 0; j < kw; ++j) {
                                const int iy = oy * stride + i - pad;
                                const int ix = ox * stride + j - pad;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += x.at(n, g * Cg + ci, iy, ix) *
                                       w.at(co, ci, i, j);
                            }
                    out.at(n, co, oy, ox) = acc;
                }
        }
    return out;
}

// ---- triple-loop matmul reference (2-D only) ------------------------------
template <typename S>
Tensor<S> matmul_reference(const Tensor<S>& a, const Tensor<S>& b) {
    const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    Tensor<S> out(Shape{m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            S acc = S(0);
            for (int p = 0; p < k; ++p) acc += a.at(i, p) * b.data()[p * n + j];
            out.at(i, j) = acc;
        }
    return out;
}

// ---- per-pixel closed-form bilinear reference (align-corners = false) ----
template <typename S>
Tensor<S> bilinear_reference(const Tensor<S>& x, int oh, int ow) {
    const int N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    Tensor<S> out(Shape{N, C, oh, ow});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    double sy = (oy + 0.5) * (static_cast<double>(H) / oh) - 0.5;
                    double sx = (ox + 0.5) * (static_cast<double>(W) / ow) - 0.5;
                    sy = std::min(std::max(sy, 0.0), static_cast<double>(H - 1));
                    sx = std::min(std::max(sx, 0.0), static_cast<double>(W - 1));
                    const int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
                    const int y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
                    const double fy = sy - y0, fx = sx - x0;
                    const double v = (1 - fy) * ((1 - fx) * x.at(n, c, y0, x0) +
                                                 fx * x.at(n, c, y0, x1)) +
                                     fy * ((1 - fx) * x.at(n, c, y1, x0) +
                                           fx * x.at(n, c, y1, x1));
                    out.at(n, c, oy, ox) = static_cast<S>(v);
                }
    return out;
}

// ---- brute-force multi-head attention reference ---------------------------
// tokens: [T, C] row-major; weights [C, C]; biases length C. Explicit loops
// over heads, queries, keys; nothing shared with the library path.
template <typename S>
std::vector<S> attention_reference(const std::vector<S>& tokens, int T, int C,
                                   const std::vector<S>& wq, const std::vector<S>& bq,
                                   const std::vector<S>& wk, const std::vector<S>& bk,
                                   const std::vector<S>& wv, const std::vector<S>& bv,
                                   const std::vector<S>& wo, const std::vector<S>& bo,
                                   int heads) {
    const int dk = C / heads;
    auto project = [&](const std::vector<S>& w, const std::vector<S>& b) {
        std::vector<S> out(static_cast<size_t>(T) * C, S(0));
        for (int t = 0; t < T; ++t)
            for (int o = 0; o < C; ++o) {
                S acc = b[static_cast<size_t>(o)];
                for (int i = 0; i < C; ++i)
                    acc += tokens[static_cast<size_t>(t) * C + i] * w[static_cast<size_t>(i) * C + o];
                out[static_cast<size_t>(t) * C + o] = acc;
            }
        return out;
    };
    std::vector<S> q = project(wq, bq), k = project(wk, bk), v = project(wv, bv);
    std::vector<S> mixed(static_cast<size_t>(T) * C, S(0));
    for (int h = 0; h < heads; ++h) {
        const int off = h * dk;
        for (int t = 0; t < T; ++t) {
            std::vector<double> logits(static_cast<size_t>(T));
            double mx = -1e300;
            for (int u = 0; u < T; ++u) {
                double acc = 0;
                for (int d = 0; d < dk; ++d)
                    acc += static_cast<double>(q[static_cast<size_t>(t) * C + off + d]) *
                           static_cast<double>(k[static_cast<size_t>(u) * C + off + d]);
                logits[static_cast<size_t>(u)] = acc / std::sqrt(static_cast<double>(dk));
                mx = std::max(mx, logits[static_cast<size_t>(u)]);
            }
            double denom = 0;
            for (int u = 0; u < T; ++u) {
                logits[static_cast<size_t>(u)] = std::exp(logits[static_cast<size_t>(u)] - mx);
                denom += logits[static_cast<size_t>(u)];
            }
            for (int d = 0; d < dk; ++d) {
                double acc = 0;
                for (int u = 0; u < T; ++u)
                    acc += logits[static_cast<size_t>(u)] / denom *
                           static_cast<double>(v[static_cast<size_t>(u) * C + off + d]);
                mixed[static_cast<size_t>(t) * C + off + d] = static_cast<S>(acc);
            }
        }
    }
    std::vector<S> out(static_cast<size_t>(T) * C, S(0));
    for (int t = 0; t < T; ++t)
        for (int o = 0; o < C; ++o) {
            S acc = bo[static_cast<size_t>(o)];
            for (int i = 0; i < C; ++i)
                acc += mixed[static_cast<size_t>(t) * C + i] * wo[static_cast<size_t>(i) * C + o];
            out[static_cast<size_t>(t) * C + o] = acc;
        }
    return out;
}

template <typename S>
double max_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
    double m = 0;
    for (std::int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])));
    return m;
}

} // namespace testsup
