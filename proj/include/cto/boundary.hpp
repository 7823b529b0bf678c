#pragma once

// Boundary-Extracted Module and Boundary-Injected Module.
//
// BEM gates encoder features with sigmoid-normalized Sobel responses, fuses
// the gated shallowest and deepest features, and predicts a boundary map
// that is supervised directly. BIM decodes with two paths: a foreground path
// over the concatenated boundary/skip/decoder features, and a background
// path that weights the skip by one minus the sigmoid of the previous
// decoder output.

#include <string>
#include <vector>

#include "cto/nn.hpp"
#include "cto/ops.hpp"

namespace cto {

// Fixed horizontal/vertical gradient kernels. Stored pre-oriented for the
// cross-correlation convention; never trained, never checkpointed.
template <typename S>
struct SobelKernels {
    static const std::vector<double>& kx_values() {
        static const std::vector<double> v{-1, 0, 1, -2, 0, 2, -1, 0, 1};
        return v;
    }
    static const std::vector<double>& ky_values() {
        static const std::vector<double> v{-1, -2, -1, 0, 0, 0, 1, 2, 1};
        return v;
    }

    // Depthwise kernel stacks [C,1,3,3] replicating K_x / K_y per channel.
    static Tensor<S> kx(int channels) { return depthwise(kx_values(), channels); }
    static Tensor<S> ky(int channels) { return depthwise(ky_values(), channels); }

  private:
    static Tensor<S> depthwise(const std::vector<double>& v, int channels) {
        Tensor<S> k(Shape{channels, 1, 3, 3});
        for (int c = 0; c < channels; ++c)
            for (int i = 0; i < 9; ++i)
                k.data()[c * 9 + i] = static_cast<S>(v[static_cast<size_t>(i)]);
        return k;
    }
};

/// Depthwise Sobel responses (M_x, M_y) of a feature map, replicate-padded so
/// image borders do not read as edges. The kernels take no gradient; the
/// input does.
template <typename S>
std::pair<Tensor<S>, Tensor<S>> sobel_gradients(Tape<S>* tape, const Tensor<S>& f) {
    // replicate padding defines the window everywhere, so maps smaller than
    // the kernel (the deepest encoder level at desk scale) are fine: their
    // responses are simply zero wherever the padded window is constant
    if (f.shape().rank() != 4)
        throw ShapeError("sobel_gradients: need a rank-4 [N,C,H,W] input, got " +
                         f.shape().str());
    const int C = f.shape()[1];
    auto padded = ops::pad2d(tape, f, 1, 1, 1, 1, ops::PadMode::replicate);
    auto mx = ops::conv2d(tape, padded, SobelKernels<S>::kx(C), Tensor<S>{}, 1, 0, C);
    auto my = ops::conv2d(tape, padded, SobelKernels<S>::ky(C), Tensor<S>{}, 1, 0, C);
    return {mx, my};
}

/// F_e = F_c (*) sigmoid(M_xy), where the two-direction gradient stack is
/// brought back to C channels by a fixed per-channel average of M_x and M_y
/// (a parameter-free 1x1 projection).
template <typename S>
Tensor<S> bem_enhance(Tape<S>* tape, const Tensor<S>& f_c) {
    auto [mx, my] = sobel_gradients(tape, f_c);
    auto mxy = ops::scale_by(tape, ops::add(tape, mx, my), S(0.5));
    return ops::mul(tape, f_c, ops::sigmoid(tape, mxy));
}

// Learned stand-in for the fixed kernels (the "CBM" ablation): same depthwise
// 3x3 shape and the same gating, but the kernels are trained.
template <typename S>
struct CbmEnhance {
    Tensor<S> kx, ky; // [C,1,3,3], trainable

    CbmEnhance() = default;
    CbmEnhance(nn::ParamStore<S>& store, const std::string& name, int channels,
               std::uint64_t seed) {
        kx = store.add_param(name + ".kx",
                             nn::kaiming_conv<S>(Shape{channels, 1, 3, 3}, seed, name + ".kx"));
        ky = store.add_param(name + ".ky",
                             nn::kaiming_conv<S>(Shape{channels, 1, 3, 3}, seed, name + ".ky"));
    }

    Tensor<S> forward(Tape<S>* tape, const Tensor<S>& f_c) const {
        const int C = f_c.shape()[1];
        auto padded = ops::pad2d(tape, f_c, 1, 1, 1, 1, ops::PadMode::replicate);
        auto mx = ops::conv2d(tape, padded, kx, Tensor<S>{}, 1, 0, C);
        auto my = ops::conv2d(tape, padded, ky, Tensor<S>{}, 1, 0, C);
        auto mxy = ops::scale_by(tape, ops::add(tape, mx, my), S(0.5));
        return ops::mul(tape, f_c, ops::sigmoid(tape, mxy));
    }
};

template <typename S>
struct BoundaryBundle {
    Tensor<S> f_b;             // boundary-enhanced fused feature
    Tensor<S> boundary_logits; // [N,1,H/4,W/4]
};

// Cross-level fusion of the gated shallow (stride-4) and deep (stride-32)
// features plus the supervised boundary head.
template <typename S>
struct BemFuse {
    int width = 0;
    nn::Conv2d<S> reduce_deep;   // 1x1 before upsampling
    nn::Conv2d<S> align_deep;    // 1x1 to the common width
    nn::Conv2d<S> align_shallow; // 1x1 to the common width
    nn::ConvBnRelu<S> fuse1, fuse2;
    nn::Conv2d<S> head; // 1x1 -> 1 channel boundary logits

    BemFuse() = default;
    BemFuse(nn::ParamStore<S>& store, const std::string& name, int c_shallow, int c_deep,
            int width_, std::uint64_t seed)
        : width(width_),
          reduce_deep(store, name + ".reduce_deep", c_deep, width_, 1, 1, 0, seed),
          align_deep(store, name + ".align_deep", width_, width_, 1, 1, 0, seed),
          align_shallow(store, name + ".align_shallow", c_shallow, width_, 1, 1, 0, seed),
          fuse1(store, name + ".fuse1", 2 * width_, width_, 3, 1, 1, seed),
          fuse2(store, name + ".fuse2", width_, width_, 3, 1, 1, seed),
          head(store, name + ".head", width_, 1, 1, 1, 0, seed) {}

    BoundaryBundle<S> forward(Tape<S>* tape, const Tensor<S>& f_e1, const Tensor<S>& f_e4,
                              ops::NormMode mode) const {
        const int h1 = f_e1.shape()[2], w1 = f_e1.shape()[3];
        if (h1 != 8 * f_e4.shape()[2] || w1 != 8 * f_e4.shape()[3])
            throw ShapeError("bem_fuse: spatial ratio between inputs must be exactly 8, got " +
                             f_e1.shape().str() + " vs " + f_e4.shape().str());
        auto deep = ops::upsample_bilinear(tape, reduce_deep.forward(tape, f_e4), h1, w1);
        deep = align_deep.forward(tape, deep);
        auto shallow = align_shallow.forward(tape, f_e1);
        auto cat = ops::concat_channels(tape, std::vector<Tensor<S>>{shallow, deep});
        auto fused = fuse2.forward(tape, fuse1.forward(tape, cat, mode), mode);
        BoundaryBundle<S> out;
        out.f_b = fused;
        out.boundary_logits = head.forward(tape, fused);
        return out;
    }
};

// One decoder level. All three inputs share spatial dims (the caller
// upsamples the previous decoder feature and resizes F_b).
template <typename S>
struct BimBlock {
    int out_channels = 0;
    nn::ConvBnRelu<S> fg1, fg2;
    nn::Conv2d<S> bg_reduce; // previous decoder feature -> one-channel map
    nn::ConvBnRelu<S> bg1, bg2, bg3;
    nn::ConvBnRelu<S> out_conv;

    BimBlock() = default;
    BimBlock(nn::ParamStore<S>& store, const std::string& name, int c_boundary, int c_skip,
             int c_prev, int c_out, std::uint64_t seed)
        : out_channels(c_out),
          fg1(store, name + ".fg1", c_boundary + c_skip + c_prev, c_out, 3, 1, 1, seed),
          fg2(store, name + ".fg2", c_out, c_out, 3, 1, 1, seed),
          bg_reduce(store, name + ".bg_reduce", c_prev, 1, 1, 1, 0, seed),
          bg1(store, name + ".bg1", c_skip, c_out, 3, 1, 1, seed),
          bg2(store, name + ".bg2", c_out, c_out, 3, 1, 1, seed),
          bg3(store, name + ".bg3", c_out, c_out, 3, 1, 1, seed),
          out_conv(store, name + ".out", c_out + c_out + c_prev, c_out, 3, 1, 1, seed) {}

    Tensor<S> forward(Tape<S>* tape, const Tensor<S>& f_b_resized, const Tensor<S>& f_c_skip,
                      const Tensor<S>& f_d_prev, ops::NormMode mode) const {
        auto same_hw = [](const Tensor<S>& a, const Tensor<S>& b) {
            return a.shape()[0] == b.shape()[0] && a.shape()[2] == b.shape()[2] &&
                   a.shape()[3] == b.shape()[3];
        };
        if (!same_hw(f_b_resized, f_c_skip) || !same_hw(f_c_skip, f_d_prev))
            throw ShapeError("bim_forward: inputs must share batch and spatial dims: " +
                             f_b_resized.shape().str() + ", " + f_c_skip.shape().str() + ", " +
                             f_d_prev.shape().str());
        // foreground path
        auto fg_in =
            ops::concat_channels(tape, std::vector<Tensor<S>>{f_b_resized, f_c_skip, f_d_prev});
        auto f_fg = fg2.forward(tape, fg1.forward(tape, fg_in, mode), mode);
        // background path: (1 - sigmoid(reduced prev)) gates the skip
        auto attn_fg = ops::sigmoid(tape, bg_reduce.forward(tape, f_d_prev));
        auto attn_bg = ops::one_minus(tape, attn_fg);
        auto gated = ops::mul_channelmap(tape, f_c_skip, attn_bg);
        auto f_bg = bg3.forward(tape, bg2.forward(tape, bg1.forward(tape, gated, mode), mode),
                                mode);
        auto cat = ops::concat_channels(tape, std::vector<Tensor<S>>{f_fg, f_bg, f_d_prev});
        return out_conv.forward(tape, cat, mode);
    }
};

} // namespace cto
