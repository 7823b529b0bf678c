#pragma once

// Assembly of the dual-stream encoder, boundary modules and the three-level
// boundary-guided decoder with deep-supervision heads. The same class builds
// every ablation variant; wiring is selected by AblationFlags.

#include <cstdint>
#include <string>
#include <vector>

#include "cto/boundary.hpp"
#include "cto/cnn_stream.hpp"
#include "cto/macs.hpp"
#include "cto/nn.hpp"
#include "cto/ops.hpp"
#include "cto/stitch_vit.hpp"

namespace cto {

enum class BoundaryKind { none, cbm, bem };

struct AblationFlags {
    bool cnn = true;
    bool vit = true;
    BoundaryKind boundary = BoundaryKind::bem;
    bool bim = true;

    bool operator==(const AblationFlags&) const = default;
};

struct ModelConfig {
    std::vector<int> stage_channels{16, 32, 64, 128};
    StitchConfig vit;
    std::vector<int> decoder_channels{64, 32, 16};
    int boundary_width = 16;
    int num_classes = 1; // 1 selects the sigmoid regime, >= 2 softmax
    double alpha = 3.0;  // boundary loss weight
    int levels = 3;      // decoder depth L (fixed by the architecture)
    int input_h = 64, input_w = 64;
    std::uint64_t seed = 42;
    AblationFlags flags;

    std::vector<std::string> violations() const {
        std::vector<std::string> v;
        if (stage_channels.size() != 4) v.push_back("stage_channels must list 4 widths");
        for (int c : stage_channels)
            if (c < 4 || c % 4 != 0)
                v.push_back("stage channel " + std::to_string(c) + " must be a multiple of 4");
        if (decoder_channels.size() != 3) v.push_back("decoder_channels must list 3 widths");
        for (int c : decoder_channels)
            if (c < 1) v.push_back("decoder channel must be >= 1");
        if (boundary_width < 1) v.push_back("boundary_width must be >= 1");
        if (num_classes < 1) v.push_back("num_classes must be >= 1");
        if (alpha <= 0) v.push_back("alpha must be > 0");
        if (levels != 3) v.push_back("levels is fixed at 3");
        if (input_h < 32 || input_h % 32 != 0 || input_w < 32 || input_w % 32 != 0)
            v.push_back("input size must be a positive multiple of 32");
        if (flags.vit) {
            try {
                vit.validate();
            } catch (const Error& e) {
                v.push_back(e.what());
            }
        }
        if (!flags.cnn && !flags.vit) v.push_back("at least one encoder stream must be enabled");
        if (flags.boundary != BoundaryKind::none && !flags.cnn)
            v.push_back("the boundary branch requires the CNN stream");
        if (flags.bim && flags.boundary == BoundaryKind::none)
            v.push_back("BIM requires a boundary branch");
        return v;
    }

    void validate() const {
        auto v = violations();
        if (v.empty()) return;
        std::string msg = "invalid model config:";
        for (const auto& s : v) msg += "\n  - " + s;
        throw ShapeError(msg);
    }
};

struct VariantSpec {
    std::string name;
    AblationFlags flags;
};

// The six ablation rows: components accumulate from a pure-CNN baseline up
// to the full model.
inline std::vector<VariantSpec> ablation_variants() {
    return {
        {"cnn_only", {true, false, BoundaryKind::none, false}},
        {"vit_only", {false, true, BoundaryKind::none, false}},
        {"dual", {true, true, BoundaryKind::none, false}},
        {"dual+cbm", {true, true, BoundaryKind::cbm, false}},
        {"dual+bem", {true, true, BoundaryKind::bem, false}},
        {"dual+bem+bim", {true, true, BoundaryKind::bem, true}},
    };
}

inline std::vector<ModelConfig> ablation_variants(const ModelConfig& base) {
    base.validate();
    std::vector<ModelConfig> out;
    for (const auto& v : ablation_variants()) {
        ModelConfig c = base;
        c.flags = v.flags;
        out.push_back(c);
    }
    return out;
}

template <typename S>
struct ModelOutputs {
    std::vector<Tensor<S>> seg_logits; // one per decoder level, full resolution
    Tensor<S> boundary_logits;         // [N,1,H/4,W/4]; undefined without a boundary branch
};

// Plain decoder block used when BIM is ablated away: two Conv-BN-ReLU layers
// over the concatenated (skip, upsampled previous) features.
template <typename S>
struct PlainDecodeBlock {
    nn::ConvBnRelu<S> c1, c2;

    PlainDecodeBlock() = default;
    PlainDecodeBlock(nn::ParamStore<S>& store, const std::string& name, int cin, int cout,
                     std::uint64_t seed)
        : c1(store, name + ".c1", cin, cout, 3, 1, 1, seed),
          c2(store, name + ".c2", cout, cout, 3, 1, 1, seed) {}

    Tensor<S> forward(Tape<S>* tape, const Tensor<S>& x, ops::NormMode mode) const {
        return c2.forward(tape, c1.forward(tape, x, mode), mode);
    }
};

template <typename S>
class CtoModel {
  public:
    explicit CtoModel(const ModelConfig& config) : cfg_(config) {
        cfg_.validate();
        const auto seed = cfg_.seed;
        const int c4 = cfg_.stage_channels[3];
        if (cfg_.flags.cnn) cnn_ = CnnEncoder<S>(store_, "cnn", cfg_.stage_channels, seed);
        if (cfg_.flags.vit) vit_ = StitchVit<S>(store_, "vit", cfg_.vit, seed);
        int bneck_in = (cfg_.flags.cnn ? c4 : 0) + (cfg_.flags.vit ? cfg_.vit.total_channels() : 0);
        bottleneck_ = nn::Conv2d<S>(store_, "bottleneck", bneck_in, c4, 3, 1, 1, seed);

        if (cfg_.flags.boundary != BoundaryKind::none) {
            if (cfg_.flags.boundary == BoundaryKind::cbm) {
                cbm1_ = CbmEnhance<S>(store_, "cbm.enhance1", cfg_.stage_channels[0], seed);
                cbm4_ = CbmEnhance<S>(store_, "cbm.enhance4", c4, seed);
            }
            bem_fuse_ = BemFuse<S>(store_, "bem.fuse", cfg_.stage_channels[0], c4,
                                   cfg_.boundary_width, seed);
        }

        int prev = c4;
        for (int j = 1; j <= cfg_.levels; ++j) {
            const std::string lname = "dec.level" + std::to_string(j);
            const int skip = cfg_.flags.cnn ? cfg_.stage_channels[static_cast<size_t>(3 - j)] : 0;
            const int cout = cfg_.decoder_channels[static_cast<size_t>(j - 1)];
            if (cfg_.flags.bim) {
                fb_proj_.emplace_back(store_, lname + ".fb_proj", cfg_.boundary_width,
                                      cfg_.boundary_width, 1, 1, 0, seed);
                bim_.emplace_back(store_, lname, cfg_.boundary_width, skip, prev, cout, seed);
            } else {
                plain_.emplace_back(store_, lname, skip + prev, cout, seed);
            }
            heads_.emplace_back(store_, "head.level" + std::to_string(j), cout, cfg_.num_classes,
                                1, 1, 0, seed);
            prev = cout;
        }
    }

    const ModelConfig& config() const { return cfg_; }
    nn::ParamStore<S>& store() { return store_; }
    const nn::ParamStore<S>& store() const { return store_; }
    std::int64_t parameter_count() const { return store_.parameter_count(); }

    ModelOutputs<S> forward(Tape<S>* tape, const Tensor<S>& image, ops::NormMode mode) const {
        if (image.shape().rank() != 4 || image.shape()[1] != 3)
            throw ShapeError("forward: image must be [N,3,H,W], got " + image.shape().str());
        const int H = image.shape()[2], W = image.shape()[3];
        if (H % 32 != 0 || W % 32 != 0)
            throw ShapeError("forward: input " + std::to_string(H) + "x" + std::to_string(W) +
                             " must be divisible by 32");

        EncoderFeatures<S> fc;
        std::vector<Tensor<S>> bneck_parts;
        if (cfg_.flags.cnn) {
            macs::ScopeGuard scope("cnn");
            fc = cnn_.forward(tape, image, mode);
            bneck_parts.push_back(fc.f4);
        }
        if (cfg_.flags.vit) {
            macs::ScopeGuard scope("vit");
            bneck_parts.push_back(vit_.forward(tape, image, mode));
        }
        auto bneck = bottleneck_.forward(tape, ops::concat_channels(tape, bneck_parts));

        BoundaryBundle<S> bundle;
        if (cfg_.flags.boundary != BoundaryKind::none) {
            macs::ScopeGuard scope("bem");
            Tensor<S> fe1, fe4;
            if (cfg_.flags.boundary == BoundaryKind::bem) {
                fe1 = bem_enhance(tape, fc.f1);
                fe4 = bem_enhance(tape, fc.f4);
            } else {
                fe1 = cbm1_.forward(tape, fc.f1);
                fe4 = cbm4_.forward(tape, fc.f4);
            }
            bundle = bem_fuse_.forward(tape, fe1, fe4, mode);
        }

        ModelOutputs<S> out;
        out.boundary_logits = bundle.boundary_logits;
        Tensor<S> prev = bneck;
        const Tensor<S> skips[3] = {fc.f3, fc.f2, fc.f1};
        for (int j = 1; j <= cfg_.levels; ++j) {
            macs::ScopeGuard scope("dec" + std::to_string(j));
            const int th = prev.shape()[2] * 2, tw = prev.shape()[3] * 2;
            auto up = ops::upsample_bilinear(tape, prev, th, tw);
            Tensor<S> next;
            if (cfg_.flags.bim) {
                auto fb = ops::upsample_bilinear(tape, bundle.f_b, th, tw);
                fb = fb_proj_[static_cast<size_t>(j - 1)].forward(tape, fb);
                next = bim_[static_cast<size_t>(j - 1)].forward(
                    tape, fb, skips[j - 1], up, mode);
            } else {
                std::vector<Tensor<S>> parts;
                if (cfg_.flags.cnn) parts.push_back(skips[j - 1]);
                parts.push_back(up);
                next = plain_[static_cast<size_t>(j - 1)].forward(
                    tape, ops::concat_channels(tape, parts), mode);
            }
            auto logits = heads_[static_cast<size_t>(j - 1)].forward(tape, next);
            out.seg_logits.push_back(ops::upsample_bilinear(tape, logits, H, W));
            prev = next;
        }
        return out;
    }

  private:
    ModelConfig cfg_;
    nn::ParamStore<S> store_;
    CnnEncoder<S> cnn_;
    StitchVit<S> vit_;
    nn::Conv2d<S> bottleneck_;
    CbmEnhance<S> cbm1_, cbm4_;
    BemFuse<S> bem_fuse_;
    std::vector<nn::Conv2d<S>> fb_proj_;
    std::vector<BimBlock<S>> bim_;
    std::vector<PlainDecodeBlock<S>> plain_;
    std::vector<nn::Conv2d<S>> heads_;
};

} // namespace cto
