#pragma once

// Mainstream CNN encoder: convolutional stem plus four stages of cascaded
// multi-scale residual modules, yielding features at strides 4/8/16/32.
//
// Output arithmetic is exact (no floor division), which forces two departures
// from the classic layer shapes: the 7x7/stride-2 stem conv runs on an
// asymmetrically zero-padded input (3 top/left, 2 bottom/right), and modules
// that downsample use 2x2/stride-2 entry and shortcut convs instead of 1x1.

#include <string>
#include <vector>

#include "cto/nn.hpp"
#include "cto/ops.hpp"

namespace cto {

// One residual module with a scale dimension of 4: the post-entry channels
// split into groups X1..X4; Y1 = X1 and Yi = Conv3x3(Xi + Y(i-1)), cascading
// the receptive field across groups before the 1x1 recombination.
template <typename S>
struct Res2Module {
    static constexpr int kScale = 4;

    int in_channels = 0, out_channels = 0, stride = 1;
    nn::Conv2d<S> conv_in;
    nn::BatchNorm2d<S> bn_in;
    std::vector<nn::ConvBnRelu<S>> scale_convs; // kScale - 1 of them
    nn::Conv2d<S> conv_out;
    nn::BatchNorm2d<S> bn_out;
    bool has_projection = false;
    nn::Conv2d<S> proj;
    nn::BatchNorm2d<S> proj_bn;

    Res2Module() = default;
    Res2Module(nn::ParamStore<S>& store, const std::string& name, int cin, int cout, int stride_,
               std::uint64_t seed)
        : in_channels(cin), out_channels(cout), stride(stride_) {
        if (cout % kScale != 0)
            throw ShapeError(name + ": channel count " + std::to_string(cout) +
                             " not divisible by scale dimension " + std::to_string(kScale));
        const int entry_k = stride_ == 1 ? 1 : 2;
        conv_in = nn::Conv2d<S>(store, name + ".conv_in", cin, cout, entry_k, stride_, 0, seed,
                                /*bias=*/false);
        bn_in = nn::BatchNorm2d<S>(store, name + ".bn_in", cout);
        const int cg = cout / kScale;
        for (int i = 2; i <= kScale; ++i)
            scale_convs.emplace_back(store, name + ".scale" + std::to_string(i), cg, cg, 3, 1, 1,
                                     seed);
        conv_out = nn::Conv2d<S>(store, name + ".conv_out", cout, cout, 1, 1, 0, seed,
                                 /*bias=*/false);
        bn_out = nn::BatchNorm2d<S>(store, name + ".bn_out", cout);
        has_projection = (cin != cout) || (stride_ != 1);
        if (has_projection) {
            proj = nn::Conv2d<S>(store, name + ".proj", cin, cout, entry_k, stride_, 0, seed,
                                 /*bias=*/false);
            proj_bn = nn::BatchNorm2d<S>(store, name + ".proj_bn", cout);
        }
    }

    Tensor<S> forward(Tape<S>* tape, const Tensor<S>& x, ops::NormMode mode) const {
        auto entry = ops::relu(tape, bn_in.forward(tape, conv_in.forward(tape, x), mode));
        const int cg = out_channels / kScale;
        std::vector<Tensor<S>> ys;
        ys.push_back(ops::slice_channels(tape, entry, 0, cg)); // Y1 = X1
        for (int i = 1; i < kScale; ++i) {
            auto xi = ops::slice_channels(tape, entry, i * cg, cg);
            ys.push_back(scale_convs[static_cast<size_t>(i - 1)].forward(
                tape, ops::add(tape, xi, ys.back()), mode));
        }
        auto merged = bn_out.forward(tape, conv_out.forward(tape, ops::concat_channels(tape, ys)),
                                     mode);
        Tensor<S> shortcut = x;
        if (has_projection)
            shortcut = proj_bn.forward(tape, proj.forward(tape, x), mode);
        return ops::relu(tape, ops::add(tape, merged, shortcut));
    }
};

template <typename S>
struct EncoderFeatures {
    Tensor<S> f1, f2, f3, f4; // strides 4, 8, 16, 32
};

template <typename S>
struct CnnEncoder {
    nn::Conv2d<S> stem_conv;
    nn::BatchNorm2d<S> stem_bn;
    std::vector<Res2Module<S>> stages;

    CnnEncoder() = default;
    CnnEncoder(nn::ParamStore<S>& store, const std::string& name,
               const std::vector<int>& stage_channels, std::uint64_t seed) {
        stem_conv = nn::Conv2d<S>(store, name + ".stem.conv", 3, stage_channels[0], 7, 2, 0, seed,
                                  /*bias=*/false);
        stem_bn = nn::BatchNorm2d<S>(store, name + ".stem.bn", stage_channels[0]);
        int cin = stage_channels[0];
        for (int i = 0; i < 4; ++i) {
            stages.emplace_back(store, name + ".stage" + std::to_string(i + 1), cin,
                                stage_channels[static_cast<size_t>(i)], i == 0 ? 1 : 2, seed);
            cin = stage_channels[static_cast<size_t>(i)];
        }
    }

    EncoderFeatures<S> forward(Tape<S>* tape, const Tensor<S>& image, ops::NormMode mode) const {
        if (image.shape().rank() != 4 || image.shape()[1] != 3)
            throw ShapeError("encoder: input must be [N,3,H,W], got " + image.shape().str());
        const int H = image.shape()[2], W = image.shape()[3];
        if (H % 32 != 0 || W % 32 != 0)
            throw ShapeError("encoder: input " + std::to_string(H) + "x" + std::to_string(W) +
                             " must be divisible by 32");
        auto padded = ops::pad2d(tape, image, 3, 2, 3, 2, ops::PadMode::zero);
        auto stem = ops::relu(tape, stem_bn.forward(tape, stem_conv.forward(tape, padded), mode));
        auto pooled = ops::max_pool2d(tape, stem, 3, 2, 1); // H/4
        EncoderFeatures<S> out;
        out.f1 = stages[0].forward(tape, pooled, mode);
        out.f2 = stages[1].forward(tape, out.f1, mode);
        out.f3 = stages[2].forward(tape, out.f2, mode);
        out.f4 = stages[3].forward(tape, out.f3, mode);
        return out;
    }
};

} // namespace cto
