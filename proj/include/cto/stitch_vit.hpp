#pragma once

// Auxiliary transformer stream. A feature grid is decomposed into s*s
// phase-offset sub-grids per stitch rate s ("stitch" sampling); multi-head
// self-attention runs independently inside each sub-grid, which cuts the
// token-mixing cost by s^2 while keeping a grid-wide receptive field.
// Channels are split across the rate groups; group outputs are reassembled,
// passed through a convolutional FFN, concatenated and fused, then brought
// to the deepest CNN stride by a ladder of stride-2 convs.

#include <cstdint>
#include <string>
#include <vector>

#include "cto/macs.hpp"
#include "cto/nn.hpp"
#include "cto/ops.hpp"

namespace cto {

struct StitchConfig {
    std::vector<int> rates{2, 4, 8, 16};
    int heads_per_rate = 2;
    int group_dim = 8; // embedding width of each rate group

    int total_channels() const { return group_dim * static_cast<int>(rates.size()); }
    int max_rate() const {
        int m = 1;
        for (int r : rates) m = std::max(m, r);
        return m;
    }

    void validate() const {
        if (rates.empty()) throw ShapeError("StitchConfig: at least one rate required");
        for (size_t i = 0; i + 1 < rates.size(); ++i)
            if (rates[i] >= rates[i + 1])
                throw ShapeError("StitchConfig: rates must be strictly ascending");
        for (int r : rates)
            if (r < 1) throw ShapeError("StitchConfig: rates must be >= 1");
        if (heads_per_rate < 1) throw ShapeError("StitchConfig: heads_per_rate must be >= 1");
        if (group_dim % heads_per_rate != 0)
            throw ShapeError("StitchConfig: group_dim " + std::to_string(group_dim) +
                             " not divisible by heads_per_rate " +
                             std::to_string(heads_per_rate));
    }
};

// The s*s phase sub-grids of one rate group, in (row_offset-1)*s + col_offset
// order for 1-based offsets.
template <typename S>
struct PatchGroup {
    int rate = 1;
    std::vector<Tensor<S>> phases;
};

/// Decomposes [N,C,H,W] into its s*s phase sub-grids (s^2 strided_subsample
/// gathers). Requires H, W divisible by s; the stream pads beforehand.
template <typename S>
PatchGroup<S> stitch(Tape<S>* tape, const Tensor<S>& x, int s) {
    PatchGroup<S> g;
    g.rate = s;
    g.phases.reserve(static_cast<size_t>(s) * s);
    for (int a = 1; a <= s; ++a)
        for (int b = 1; b <= s; ++b) g.phases.push_back(ops::strided_subsample(tape, x, s, a, b));
    return g;
}

/// Exact inverse of stitch: scatters every phase back to its offsets.
template <typename S>
Tensor<S> unstitch(Tape<S>* tape, const PatchGroup<S>& g, int s) {
    if (g.rate != s || static_cast<int>(g.phases.size()) != s * s)
        throw ShapeError("unstitch: expected " + std::to_string(s * s) + " phases at rate " +
                         std::to_string(s) + ", got " + std::to_string(g.phases.size()));
    return ops::phase_combine(tape, g.phases, s);
}

template <typename S>
struct AttentionParams {
    nn::Linear<S> wq, wk, wv, wo;

    AttentionParams() = default;
    AttentionParams(nn::ParamStore<S>& store, const std::string& name, int dim,
                    std::uint64_t seed)
        : wq(store, name + ".wq", dim, dim, seed),
          wk(store, name + ".wk", dim, dim, seed),
          wv(store, name + ".wv", dim, dim, seed),
          wo(store, name + ".wo", dim, dim, seed) {}
};

/// Multi-head self-attention inside each phase sub-grid; phases never attend
/// to each other. softmax(Q K^T / sqrt(d_k)) V per head, heads concatenated,
/// output projection. No positional embedding.
template <typename S>
PatchGroup<S> group_mhsa(Tape<S>* tape, const PatchGroup<S>& g, const AttentionParams<S>& p,
                         int heads) {
    const int C = g.phases.at(0).shape()[1];
    if (C % heads != 0)
        throw ShapeError("group_mhsa: embedding dim " + std::to_string(C) +
                         " not divisible by heads " + std::to_string(heads));
    const int dk = C / heads;
    const S inv_sqrt_dk = S(1) / std::sqrt(static_cast<S>(dk));
    PatchGroup<S> out;
    out.rate = g.rate;
    out.phases.reserve(g.phases.size());
    for (const Tensor<S>& phase : g.phases) {
        const int N = phase.shape()[0], h = phase.shape()[2], w = phase.shape()[3];
        const int T = h * w;
        // [N,C,h,w] -> [N,T,C] token layout
        auto tokens = ops::reshape(tape, ops::permute(tape, phase, {0, 2, 3, 1}), Shape{N, T, C});
        auto q = p.wq.forward(tape, tokens);
        auto k = p.wk.forward(tape, tokens);
        auto v = p.wv.forward(tape, tokens);
        // [N,T,C] -> [N,heads,T,dk]
        auto split = [&](const Tensor<S>& t) {
            return ops::permute(tape, ops::reshape(tape, t, Shape{N, T, heads, dk}),
                                {0, 2, 1, 3});
        };
        auto qh = split(q), kh = split(k), vh = split(v);
        Tensor<S> logits;
        {
            macs::ScopeGuard scope("attn_qk");
            logits = ops::matmul(tape, qh, ops::permute(tape, kh, {0, 1, 3, 2}));
        }
        auto attn = ops::softmax_lastdim(tape, ops::scale_by(tape, logits, inv_sqrt_dk));
        auto mixed = ops::matmul(tape, attn, vh); // [N,heads,T,dk]
        auto merged =
            ops::reshape(tape, ops::permute(tape, mixed, {0, 2, 1, 3}), Shape{N, T, C});
        auto projected = p.wo.forward(tape, merged);
        // back to [N,C,h,w]
        out.phases.push_back(ops::permute(
            tape, ops::reshape(tape, projected, Shape{N, h, w, C}), {0, 3, 1, 2}));
    }
    return out;
}

template <typename S>
struct ConvFfn {
    nn::Conv2d<S> conv1, conv2;

    ConvFfn() = default;
    ConvFfn(nn::ParamStore<S>& store, const std::string& name, int c, std::uint64_t seed)
        : conv1(store, name + ".conv1", c, c, 3, 1, 1, seed),
          conv2(store, name + ".conv2", c, c, 3, 1, 1, seed) {}

    // conv3x3 -> ReLU -> conv3x3, channel preserving
    Tensor<S> forward(Tape<S>* tape, const Tensor<S>& x) const {
        return conv2.forward(tape, ops::relu(tape, conv1.forward(tape, x)));
    }
};

template <typename S>
struct StitchVit {
    StitchConfig cfg;
    nn::Conv2d<S> stem_conv; // one 4x4/stride-4 conv from the image, own stream
    nn::BatchNorm2d<S> stem_bn;
    std::vector<AttentionParams<S>> attn; // one per rate group
    std::vector<ConvFfn<S>> ffn;
    nn::Conv2d<S> fuse;
    std::vector<nn::ConvBnRelu<S>> ladder; // three stride-2 convs: H/4 -> H/32

    StitchVit() = default;
    StitchVit(nn::ParamStore<S>& store, const std::string& name, const StitchConfig& cfg_,
              std::uint64_t seed)
        : cfg(cfg_) {
        cfg.validate();
        const int ct = cfg.total_channels();
        stem_conv = nn::Conv2d<S>(store, name + ".stem.conv", 3, ct, 4, 4, 0, seed,
                                  /*bias=*/false);
        stem_bn = nn::BatchNorm2d<S>(store, name + ".stem.bn", ct);
        for (size_t i = 0; i < cfg.rates.size(); ++i) {
            const std::string gname = name + ".group" + std::to_string(i);
            attn.emplace_back(store, gname + ".attn", cfg.group_dim, seed);
            ffn.emplace_back(store, gname + ".ffn", cfg.group_dim, seed);
        }
        fuse = nn::Conv2d<S>(store, name + ".fuse", ct, ct, 3, 1, 1, seed);
        for (int i = 0; i < 3; ++i)
            ladder.emplace_back(store, name + ".ladder" + std::to_string(i), ct, ct, 4, 2, 1,
                                seed);
    }

    // Stride-4 feature grid [N,Ct,H/4,W/4] -> F_t [N,Ct,H/32,W/32]: pad to a
    // multiple of the largest rate (symmetric reflection), run each rate
    // group (stitch -> attention -> unstitch -> residual -> conv FFN ->
    // residual), concatenate and fuse, crop the pad, then descend the
    // stride-2 ladder.
    Tensor<S> forward_features(Tape<S>* tape, const Tensor<S>& f_h4, ops::NormMode mode) const {
        if (f_h4.shape()[1] != cfg.total_channels())
            throw ShapeError("stitch stream: feature channels " +
                             std::to_string(f_h4.shape()[1]) + " do not match the rate groups (" +
                             std::to_string(cfg.total_channels()) + ")");
        const int h4 = f_h4.shape()[2], w4 = f_h4.shape()[3];
        const int m = cfg.max_rate();
        const int ph = (m - h4 % m) % m, pw = (m - w4 % m) % m;
        Tensor<S> f = f_h4;
        if (ph || pw) f = ops::pad2d(tape, f, 0, ph, 0, pw, ops::PadMode::symmetric);

        std::vector<Tensor<S>> outs;
        for (size_t i = 0; i < cfg.rates.size(); ++i) {
            const int s = cfg.rates[i];
            auto part = ops::slice_channels(tape, f, static_cast<int>(i) * cfg.group_dim,
                                            cfg.group_dim);
            auto attended = unstitch(
                tape, group_mhsa(tape, stitch(tape, part, s), attn[i], cfg.heads_per_rate), s);
            auto res1 = ops::add(tape, part, attended);
            auto res2 = ops::add(tape, res1, ffn[i].forward(tape, res1));
            outs.push_back(res2);
        }
        auto fused = fuse.forward(tape, ops::concat_channels(tape, outs));
        if (ph || pw) fused = ops::crop2d(tape, fused, 0, 0, h4, w4);
        for (const auto& step : ladder) fused = step.forward(tape, fused, mode);
        return fused;
    }

    // image [N,3,H,W] (H, W divisible by 32) -> F_t [N,Ct,H/32,W/32]
    Tensor<S> forward(Tape<S>* tape, const Tensor<S>& image, ops::NormMode mode) const {
        auto f = ops::relu(tape, stem_bn.forward(tape, stem_conv.forward(tape, image), mode));
        return forward_features(tape, f, mode);
    }
};

// ---------------------------------------------------------------------------
// attention cost accounting
// ---------------------------------------------------------------------------

struct AttentionMacRow {
    int rate = 1;
    std::uint64_t analytic = 0; // n^2 * d / s^2 token-mixing MACs
    std::uint64_t measured = 0; // instrumented counter over the real QK^T path
};

struct AttentionMacReport {
    std::uint64_t dense_macs = 0; // n^2 * d, n = grid_h * grid_w
    std::vector<AttentionMacRow> per_rate;
};

// Analytic token-mixing MAC counts next to a measurement taken by running
// group_mhsa's QK^T matmuls under the MAC counter.
template <typename S = float>
AttentionMacReport count_attention_macs(int grid_h, int grid_w, int channels,
                                        const std::vector<int>& rates) {
    const std::uint64_t n = static_cast<std::uint64_t>(grid_h) * grid_w;
    AttentionMacReport report;
    report.dense_macs = n * n * static_cast<std::uint64_t>(channels);
    for (int s : rates) {
        if (grid_h % s != 0 || grid_w % s != 0)
            throw ShapeError("count_attention_macs: grid not divisible by rate " +
                             std::to_string(s));
        AttentionMacRow row;
        row.rate = s;
        row.analytic = report.dense_macs / (static_cast<std::uint64_t>(s) * s);

        nn::ParamStore<S> store;
        AttentionParams<S> params(store, "probe", channels, /*seed=*/1);
        CounterRng rng(static_cast<std::uint64_t>(s) * 7919 + 17);
        auto x = Tensor<S>::randn(Shape{1, channels, grid_h, grid_w}, rng, 0.1);
        macs::MacCounter counter;
        {
            macs::CountingSession session(counter);
            auto g = stitch<S>(nullptr, x, s);
            (void)group_mhsa<S>(nullptr, g, params, /*heads=*/1);
        }
        row.measured = counter.scoped("attn_qk");
        report.per_rate.push_back(row);
    }
    return report;
}

} // namespace cto
