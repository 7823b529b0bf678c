#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "cto/boundary.hpp"
#include "test_support.hpp"

using namespace cto;
using testsup::max_abs_diff;
using testsup::random_tensor;

namespace {

// hand-rolled 3x3 correlation with replicate padding, per channel
Tensor<double> sobel_reference(const Tensor<double>& f, const std::vector<double>& k) {
    const int N = f.shape()[0], C = f.shape()[1], H = f.shape()[2], W = f.shape()[3];
    Tensor<double> out(f.shape());
    auto clampi = [](int v, int n) { return std::min(std::max(v, 0), n - 1); };
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int r = 0; r < H; ++r)
                for (int x = 0; x < W; ++x) {
                    double acc = 0;
                    for (int i = 0; i < 3; ++i)
                        for (int j = 0; j < 3; ++j)
                            acc += k[static_cast<size_t>(i * 3 + j)] *
                                   f.at(n, c, clampi(r + i - 1, H), clampi(x + j - 1, W));
                    out.at(n, c, r, x) = acc;
                }
    return out;
}

} // namespace

TEST_CASE("Sobel kernels hold the fixed gradient coefficients, bit-exact") {
    CHECK(SobelKernels<double>::kx_values() ==
          std::vector<double>{-1, 0, 1, -2, 0, 2, -1, 0, 1});
    CHECK(SobelKernels<double>::ky_values() ==
          std::vector<double>{-1, -2, -1, 0, 0, 0, 1, 2, 1});
    auto kx = SobelKernels<double>::kx(3);
    CHECK(kx.shape() == Shape{3, 1, 3, 3});
    for (int c = 0; c < 3; ++c) {
        double sum = 0;
        for (int i = 0; i < 9; ++i) sum += kx.data()[c * 9 + i];
        CHECK(sum == 0.0); // zero-sum per kernel
    }
    CHECK_FALSE(kx.requires_grad());
}

TEST_CASE("Sobel kernels receive no gradient while the input does") {
    CounterRng rng(1);
    auto f = random_tensor<double>(Shape{1, 2, 5, 5}, rng, -1, 1, true);
    Tape<double> tape;
    auto [mx, my] = sobel_gradients(&tape, f);
    auto loss = ops::sum_all(&tape, ops::mul(&tape, mx, my));
    ops::backward(loss, tape);
    CHECK(f.has_grad());
    // the kernels are constructed fresh and never expose a grad buffer
    CHECK_FALSE(SobelKernels<double>::kx(2).has_grad());
}

TEST_CASE("constant channels produce zero gradients everywhere") {
    Tensor<double> f(Shape{1, 2, 6, 6}, 3.7);
    auto [mx, my] = sobel_gradients<double>(nullptr, f);
    // zero up to accumulation roundoff of the zero-sum kernels
    for (std::int64_t i = 0; i < mx.numel(); ++i) {
        CHECK(std::abs(mx.data()[i]) < 1e-12);
        CHECK(std::abs(my.data()[i]) < 1e-12);
    }
    // a 1x1 map is all padding: responses are exactly representable zeros
    Tensor<double> tiny(Shape{1, 4, 1, 1}, 5.0);
    auto [tx, ty] = sobel_gradients<double>(nullptr, tiny);
    for (std::int64_t i = 0; i < tx.numel(); ++i) CHECK(std::abs(tx.data()[i]) < 1e-12);
    (void)ty;
}

TEST_CASE("horizontal unit ramp: interior M_x = 8, M_y = 0") {
    Tensor<double> f(Shape{1, 1, 6, 8});
    for (int r = 0; r < 6; ++r)
        for (int c = 0; c < 8; ++c) f.at(0, 0, r, c) = c;
    auto [mx, my] = sobel_gradients<double>(nullptr, f);
    for (int r = 0; r < 6; ++r)
        for (int c = 1; c < 7; ++c) {
            CHECK(mx.at(0, 0, r, c) == doctest::Approx(8.0));
            CHECK(my.at(0, 0, r, c) == doctest::Approx(0.0));
        }
}

TEST_CASE("vertical step edge equals the nested-loop correlation oracle exactly") {
    Tensor<double> f(Shape{1, 1, 8, 8});
    for (int r = 0; r < 8; ++r)
        for (int c = 5; c < 8; ++c) f.at(0, 0, r, c) = 1.0;
    auto [mx, my] = sobel_gradients<double>(nullptr, f);
    auto rx = sobel_reference(f, SobelKernels<double>::kx_values());
    auto ry = sobel_reference(f, SobelKernels<double>::ky_values());
    CHECK(max_abs_diff(mx, rx) == 0.0);
    CHECK(max_abs_diff(my, ry) == 0.0);

    CounterRng rng(2);
    auto g = random_tensor<double>(Shape{2, 3, 7, 9}, rng);
    auto [gx, gy] = sobel_gradients<double>(nullptr, g);
    CHECK(max_abs_diff(gx, sobel_reference(g, SobelKernels<double>::kx_values())) < 1e-12);
    CHECK(max_abs_diff(gy, sobel_reference(g, SobelKernels<double>::ky_values())) < 1e-12);
}

TEST_CASE("bem_enhance: constant input halves, zero input stays zero") {
    Tensor<double> c(Shape{1, 2, 5, 5}, 0.8);
    auto e = bem_enhance<double>(nullptr, c);
    for (std::int64_t i = 0; i < e.numel(); ++i)
        CHECK(e.data()[i] == doctest::Approx(0.4)); // sigmoid(0) = 0.5 gate

    Tensor<double> z(Shape{1, 2, 5, 5});
    auto ez = bem_enhance<double>(nullptr, z);
    for (std::int64_t i = 0; i < ez.numel(); ++i) CHECK(ez.data()[i] == 0.0);
}

TEST_CASE("bem_enhance equals its pointwise composition exactly") {
    CounterRng rng(3);
    auto f = random_tensor<double>(Shape{1, 3, 6, 6}, rng);
    auto fast = bem_enhance<double>(nullptr, f);
    auto [mx, my] = sobel_gradients<double>(nullptr, f);
    auto gate = ops::sigmoid<double>(
        nullptr, ops::scale_by<double>(nullptr, ops::add<double>(nullptr, mx, my), 0.5));
    auto ref = ops::mul<double>(nullptr, f, gate);
    CHECK(max_abs_diff(fast, ref) == 0.0);
}

TEST_CASE("enhancement never amplifies: |F_e| <= |F_c| elementwise") {
    CounterRng rng(4);
    auto f = random_tensor<double>(Shape{2, 4, 8, 8}, rng, -3, 3);
    auto e = bem_enhance<double>(nullptr, f);
    for (std::int64_t i = 0; i < f.numel(); ++i)
        CHECK(std::abs(e.data()[i]) <= std::abs(f.data()[i]));
}

TEST_CASE("bem_fuse contract: output at the shallow resolution, ratio enforced") {
    nn::ParamStore<double> store;
    BemFuse<double> fuse(store, "fuse", 8, 16, 8, 5);
    CounterRng rng(5);
    auto fe1 = random_tensor<double>(Shape{1, 8, 16, 16}, rng);
    auto fe4 = random_tensor<double>(Shape{1, 16, 2, 2}, rng);
    auto bundle = fuse.forward(nullptr, fe1, fe4, ops::NormMode::eval);
    CHECK(bundle.f_b.shape() == Shape{1, 8, 16, 16});
    CHECK(bundle.boundary_logits.shape() == Shape{1, 1, 16, 16});

    auto bad = random_tensor<double>(Shape{1, 16, 4, 4}, rng);
    CHECK_THROWS_AS(fuse.forward(nullptr, fe1, bad, ops::NormMode::eval), ShapeError);
}

TEST_CASE("boundary head gradient reaches both input paths") {
    nn::ParamStore<double> store;
    BemFuse<double> fuse(store, "fuse", 8, 16, 8, 6);
    CounterRng rng(6);
    auto fe1 = random_tensor<double>(Shape{1, 8, 16, 16}, rng, -1, 1, true);
    auto fe4 = random_tensor<double>(Shape{1, 16, 2, 2}, rng, -1, 1, true);
    Tape<double> tape;
    auto bundle = fuse.forward(&tape, fe1, fe4, ops::NormMode::train);
    auto loss = ops::sum_all(&tape, ops::mul(&tape, bundle.boundary_logits,
                                             bundle.boundary_logits));
    ops::backward(loss, tape);
    auto mag = [](Tensor<double> t) {
        double m = 0;
        if (!t.has_grad()) return m;
        for (std::int64_t i = 0; i < t.numel(); ++i) m += std::abs(t.grad()[i]);
        return m;
    };
    CHECK(mag(store.find("fuse.align_shallow.w")) > 0.0);
    CHECK(mag(store.find("fuse.align_deep.w")) > 0.0);
    CHECK(mag(store.find("fuse.reduce_deep.w")) > 0.0);
}

TEST_CASE("zero-parameter fusion emits the head bias everywhere") {
    nn::ParamStore<double> store;
    BemFuse<double> fuse(store, "fuse", 8, 16, 8, 7);
    for (auto& p : store.params())
        if (p.name.find(".gamma") == std::string::npos)
            std::fill(p.value.vec().begin(), p.value.vec().end(), 0.0);
    Tensor<double> bias = store.find("fuse.head.b");
    bias.vec()[0] = 0.37;
    CounterRng rng(7);
    auto fe1 = random_tensor<double>(Shape{1, 8, 16, 16}, rng);
    auto fe4 = random_tensor<double>(Shape{1, 16, 2, 2}, rng);
    auto bundle = fuse.forward(nullptr, fe1, fe4, ops::NormMode::eval);
    for (std::int64_t i = 0; i < bundle.boundary_logits.numel(); ++i)
        CHECK(bundle.boundary_logits.data()[i] == doctest::Approx(0.37));
}

TEST_CASE("foreground and background attention maps sum to one exactly") {
    CounterRng rng(8);
    auto logits = random_tensor<double>(Shape{1, 1, 4, 4}, rng, -6, 6);
    auto fg = ops::sigmoid<double>(nullptr, logits);
    auto bg = ops::one_minus<double>(nullptr, fg);
    for (std::int64_t i = 0; i < fg.numel(); ++i)
        CHECK(fg.data()[i] + bg.data()[i] == 1.0);
}

TEST_CASE("bim saturation: a huge previous-decoder activation zeroes the background path") {
    nn::ParamStore<double> store;
    BimBlock<double> bim(store, "bim", 4, 6, 8, 6, 9);
    Tensor<double> breduce_b = store.find("bim.bg_reduce.b");
    breduce_b.vec()[0] = 1e4; // sigmoid saturates to exactly 1.0
    Tensor<double> breduce_w = store.find("bim.bg_reduce.w");
    std::fill(breduce_w.vec().begin(), breduce_w.vec().end(), 0.0);

    CounterRng rng(9);
    auto fb = random_tensor<double>(Shape{1, 4, 6, 6}, rng);
    auto skip = random_tensor<double>(Shape{1, 6, 6, 6}, rng);
    auto prev = random_tensor<double>(Shape{1, 8, 6, 6}, rng);
    auto out = bim.forward(nullptr, fb, skip, prev, ops::NormMode::eval);

    // reference: identical wiring with the background branch fed zeros
    Tape<double>* t = nullptr;
    auto mode = ops::NormMode::eval;
    auto fg_in = ops::concat_channels(t, std::vector<Tensor<double>>{fb, skip, prev});
    auto f_fg = bim.fg2.forward(t, bim.fg1.forward(t, fg_in, mode), mode);
    Tensor<double> zeros(skip.shape());
    auto f_bg = bim.bg3.forward(t, bim.bg2.forward(t, bim.bg1.forward(t, zeros, mode), mode),
                                mode);
    auto ref = bim.out_conv.forward(
        t, ops::concat_channels(t, std::vector<Tensor<double>>{f_fg, f_bg, prev}), mode);
    CHECK(max_abs_diff(out, ref) == 0.0);
}

TEST_CASE("bim zero-logit case gates the skip at exactly one half") {
    nn::ParamStore<double> store;
    BimBlock<double> bim(store, "bim", 4, 6, 8, 6, 10);
    Tensor<double> w = store.find("bim.bg_reduce.w");
    std::fill(w.vec().begin(), w.vec().end(), 0.0);
    CounterRng rng(10);
    auto fb = random_tensor<double>(Shape{1, 4, 6, 6}, rng);
    auto skip = random_tensor<double>(Shape{1, 6, 6, 6}, rng);
    auto prev = random_tensor<double>(Shape{1, 8, 6, 6}, rng);
    auto out = bim.forward(nullptr, fb, skip, prev, ops::NormMode::eval);

    Tape<double>* t = nullptr;
    auto mode = ops::NormMode::eval;
    auto fg_in = ops::concat_channels(t, std::vector<Tensor<double>>{fb, skip, prev});
    auto f_fg = bim.fg2.forward(t, bim.fg1.forward(t, fg_in, mode), mode);
    auto halved = ops::scale_by<double>(t, skip, 0.5);
    auto f_bg = bim.bg3.forward(t, bim.bg2.forward(t, bim.bg1.forward(t, halved, mode), mode),
                                mode);
    auto ref = bim.out_conv.forward(
        t, ops::concat_channels(t, std::vector<Tensor<double>>{f_fg, f_bg, prev}), mode);
    CHECK(max_abs_diff(out, ref) < 1e-12);
}

TEST_CASE("bim matches a straight-line composition of its own layers") {
    nn::ParamStore<double> store;
    BimBlock<double> bim(store, "bim", 4, 6, 8, 6, 11);
    CounterRng rng(11);
    auto fb = random_tensor<double>(Shape{2, 4, 6, 6}, rng);
    auto skip = random_tensor<double>(Shape{2, 6, 6, 6}, rng);
    auto prev = random_tensor<double>(Shape{2, 8, 6, 6}, rng);
    auto out = bim.forward(nullptr, fb, skip, prev, ops::NormMode::eval);

    Tape<double>* t = nullptr;
    auto mode = ops::NormMode::eval;
    auto fg_in = ops::concat_channels(t, std::vector<Tensor<double>>{fb, skip, prev});
    auto f_fg = bim.fg2.forward(t, bim.fg1.forward(t, fg_in, mode), mode);
    auto attn = ops::one_minus(t, ops::sigmoid(t, bim.bg_reduce.forward(t, prev)));
    auto gated = ops::mul_channelmap(t, skip, attn);
    auto f_bg = bim.bg3.forward(t, bim.bg2.forward(t, bim.bg1.forward(t, gated, mode), mode),
                                mode);
    auto ref = bim.out_conv.forward(
        t, ops::concat_channels(t, std::vector<Tensor<double>>{f_fg, f_bg, prev}), mode);
    CHECK(max_abs_diff(out, ref) == 0.0);

    auto mismatched = random_tensor<double>(Shape{2, 6, 4, 4}, rng);
    CHECK_THROWS_AS(bim.forward(nullptr, fb, mismatched, prev, ops::NormMode::eval), ShapeError);
}

TEST_CASE("bim stays finite with an all-zero previous decoder feature") {
    nn::ParamStore<double> store;
    BimBlock<double> bim(store, "bim", 4, 6, 8, 6, 12);
    CounterRng rng(12);
    auto fb = random_tensor<double>(Shape{1, 4, 6, 6}, rng);
    auto skip = random_tensor<double>(Shape{1, 6, 6, 6}, rng);
    Tensor<double> prev(Shape{1, 8, 6, 6});
    auto a = bim.forward(nullptr, fb, skip, prev, ops::NormMode::eval);
    auto b = bim.forward(nullptr, fb, skip, prev, ops::NormMode::eval);
    CHECK(max_abs_diff(a, b) == 0.0);
    for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(std::isfinite(a.data()[i]));
}
