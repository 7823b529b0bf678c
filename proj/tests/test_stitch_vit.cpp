#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "cto/stitch_vit.hpp"
#include "test_support.hpp"

using namespace cto;
using testsup::max_abs_diff;
using testsup::random_tensor;

TEST_CASE("stitch at rate 1 is the identity group") {
    CounterRng rng(1);
    auto x = random_tensor<double>(Shape{1, 2, 4, 4}, rng);
    auto g = stitch<double>(nullptr, x, 1);
    REQUIRE(g.phases.size() == 1);
    CHECK(max_abs_diff(g.phases[0], x) == 0.0);
}

TEST_CASE("stitch worked example: 4x4 values 1..16 at rate 2") {
    std::vector<double> vals(16);
    for (int i = 0; i < 16; ++i) vals[static_cast<size_t>(i)] = i + 1;
    Tensor<double> x(Shape{1, 1, 4, 4}, vals);
    auto g = stitch<double>(nullptr, x, 2);
    REQUIRE(g.phases.size() == 4);
    CHECK(g.phases[0].vec() == std::vector<double>{1, 3, 9, 11});
    CHECK(g.phases[1].vec() == std::vector<double>{2, 4, 10, 12});
    CHECK(g.phases[2].vec() == std::vector<double>{5, 7, 13, 15});
    CHECK(g.phases[3].vec() == std::vector<double>{6, 8, 14, 16});
}

TEST_CASE("unstitch inverts stitch bitwise") {
    CounterRng rng(2);
    for (int s : {2, 4}) {
        for (int trial = 0; trial < 5; ++trial) {
            auto x = random_tensor<double>(Shape{2, 3, 8, 8}, rng);
            auto back = unstitch<double>(nullptr, stitch<double>(nullptr, x, s), s);
            CHECK(max_abs_diff(back, x) == 0.0);
        }
    }
}

TEST_CASE("unstitch rejects a wrong phase count") {
    CounterRng rng(3);
    auto x = random_tensor<double>(Shape{1, 1, 4, 4}, rng);
    auto g = stitch<double>(nullptr, x, 2);
    g.phases.pop_back();
    CHECK_THROWS_AS(unstitch<double>(nullptr, g, 2), ShapeError);
}

TEST_CASE("gradient of sum(unstitch(stitch(x))) is all ones") {
    CounterRng rng(4);
    auto x = random_tensor<double>(Shape{1, 2, 4, 4}, rng, -1, 1, true);
    Tape<double> tape;
    auto y = unstitch(&tape, stitch(&tape, x, 2), 2);
    auto loss = ops::sum_all(&tape, y);
    ops::backward(loss, tape);
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == 1.0);
}

TEST_CASE("a single-pixel perturbation lands at exactly one output position") {
    CounterRng rng(5);
    auto x = random_tensor<double>(Shape{1, 1, 4, 4}, rng);
    auto g = stitch<double>(nullptr, x, 2);
    g.phases[2].at(0, 0, 1, 0) += 1.0;
    auto back = unstitch<double>(nullptr, g, 2);
    int changed = 0;
    for (int i = 0; i < 16; ++i)
        if (back.at(i) != x.at(i)) ++changed;
    CHECK(changed == 1);
    // phase (a=2,b=1), in-phase (1,0) -> full-grid row 1*2+1=3, col 0
    CHECK(back.at(0, 0, 3, 0) == doctest::Approx(x.at(0, 0, 3, 0) + 1.0));
}

TEST_CASE("single-token patch collapses attention to Wo(Wv token)") {
    nn::ParamStore<double> store;
    AttentionParams<double> p(store, "attn", 4, 9);
    std::fill(p.wq.b.vec().begin(), p.wq.b.vec().end(), 0.0);
    std::fill(p.wk.b.vec().begin(), p.wk.b.vec().end(), 0.0);
    std::fill(p.wv.b.vec().begin(), p.wv.b.vec().end(), 0.0);
    std::fill(p.wo.b.vec().begin(), p.wo.b.vec().end(), 0.0);
    CounterRng rng(6);
    auto x = random_tensor<double>(Shape{1, 4, 1, 1}, rng);
    PatchGroup<double> g{1, {x}};
    auto out = group_mhsa<double>(nullptr, g, p, 2);
    // expected: token -> Wv -> Wo (softmax over one key is 1)
    std::vector<double> v(4, 0.0), e(4, 0.0);
    for (int o = 0; o < 4; ++o)
        for (int i = 0; i < 4; ++i) v[static_cast<size_t>(o)] += x.at(i) * p.wv.w.at(i, o);
    for (int o = 0; o < 4; ++o)
        for (int i = 0; i < 4; ++i)
            e[static_cast<size_t>(o)] += v[static_cast<size_t>(i)] * p.wo.w.at(i, o);
    for (int o = 0; o < 4; ++o)
        CHECK(out.phases[0].at(o) == doctest::Approx(e[static_cast<size_t>(o)]).epsilon(1e-12));
}

TEST_CASE("zero queries give uniform attention: every token mixes the patch mean of V") {
    nn::ParamStore<double> store;
    AttentionParams<double> p(store, "attn", 4, 10);
    std::fill(p.wq.w.vec().begin(), p.wq.w.vec().end(), 0.0);
    std::fill(p.wq.b.vec().begin(), p.wq.b.vec().end(), 0.0);
    CounterRng rng(7);
    auto x = random_tensor<double>(Shape{1, 4, 2, 2}, rng);
    PatchGroup<double> g{1, {x}};
    auto out = group_mhsa<double>(nullptr, g, p, 1);
    // all four token outputs must coincide (uniform mixing of the same V)
    for (int c = 0; c < 4; ++c) {
        const double ref = out.phases[0].at(0, c, 0, 0);
        for (int t = 1; t < 4; ++t)
            CHECK(out.phases[0].at(0, c, t / 2, t % 2) == doctest::Approx(ref).epsilon(1e-12));
    }
}

TEST_CASE("group_mhsa matches the brute-force loop oracle over 10 seeds") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        nn::ParamStore<double> store;
        const int C = 8, heads = 2, h = 3, w = 2, T = h * w;
        AttentionParams<double> p(store, "attn", C, seed);
        CounterRng rng(seed * 31);
        auto x = random_tensor<double>(Shape{1, C, h, w}, rng);
        PatchGroup<double> g{1, {x}};
        auto out = group_mhsa<double>(nullptr, g, p, heads);

        std::vector<double> tokens(static_cast<size_t>(T) * C);
        for (int t = 0; t < T; ++t)
            for (int c = 0; c < C; ++c)
                tokens[static_cast<size_t>(t) * C + c] = x.at(0, c, t / w, t % w);
        auto ref = testsup::attention_reference<double>(
            tokens, T, C, p.wq.w.vec(), p.wq.b.vec(), p.wk.w.vec(), p.wk.b.vec(), p.wv.w.vec(),
            p.wv.b.vec(), p.wo.w.vec(), p.wo.b.vec(), heads);
        double worst = 0;
        for (int t = 0; t < T; ++t)
            for (int c = 0; c < C; ++c)
                worst = std::max(worst, std::abs(out.phases[0].at(0, c, t / w, t % w) -
                                                 ref[static_cast<size_t>(t) * C + c]));
        INFO("seed ", seed);
        CHECK(worst < 1e-6);
    }
}

TEST_CASE("attention locality: other phases are bitwise unaffected by a perturbation") {
    nn::ParamStore<double> store;
    AttentionParams<double> p(store, "attn", 4, 21);
    CounterRng rng(8);
    auto x = random_tensor<double>(Shape{1, 4, 8, 8}, rng);
    auto g = stitch<double>(nullptr, x, 2);
    auto base = group_mhsa<double>(nullptr, g, p, 2);
    g.phases[1].at(0, 2, 1, 1) += 0.75; // perturb one token of phase 1
    auto pert = group_mhsa<double>(nullptr, g, p, 2);
    for (size_t ph = 0; ph < 4; ++ph) {
        if (ph == 1) continue;
        CHECK(max_abs_diff(base.phases[ph], pert.phases[ph]) == 0.0);
    }
    CHECK(max_abs_diff(base.phases[1], pert.phases[1]) > 0.0);
}

TEST_CASE("permuting patch order and unpermuting leaves attention unchanged") {
    nn::ParamStore<double> store;
    AttentionParams<double> p(store, "attn", 4, 22);
    CounterRng rng(9);
    auto x = random_tensor<double>(Shape{1, 4, 8, 8}, rng);
    auto g = stitch<double>(nullptr, x, 2);
    auto base = group_mhsa<double>(nullptr, g, p, 2);

    const std::vector<size_t> perm{2, 0, 3, 1};
    PatchGroup<double> shuffled{2, {}};
    for (size_t i : perm) shuffled.phases.push_back(g.phases[i]);
    auto mixed = group_mhsa<double>(nullptr, shuffled, p, 2);
    std::vector<Tensor<double>> unshuffled(4);
    for (size_t i = 0; i < 4; ++i) unshuffled[perm[i]] = mixed.phases[i];
    for (size_t i = 0; i < 4; ++i) CHECK(max_abs_diff(base.phases[i], unshuffled[i]) == 0.0);
}

TEST_CASE("conv_ffn: zero collapse and composition oracle") {
    nn::ParamStore<double> store;
    ConvFfn<double> ffn(store, "ffn", 3, 33);
    CounterRng rng(10);
    auto x = random_tensor<double>(Shape{1, 3, 5, 5}, rng);

    auto composed = ops::conv2d<double>(
        nullptr,
        ops::relu<double>(nullptr,
                          ops::conv2d<double>(nullptr, x, ffn.conv1.w, ffn.conv1.b, 1, 1)),
        ffn.conv2.w, ffn.conv2.b, 1, 1);
    CHECK(max_abs_diff(ffn.forward(nullptr, x), composed) == 0.0);

    std::fill(ffn.conv1.w.vec().begin(), ffn.conv1.w.vec().end(), 0.0);
    std::fill(ffn.conv1.b.vec().begin(), ffn.conv1.b.vec().end(), 0.0);
    std::fill(ffn.conv2.w.vec().begin(), ffn.conv2.w.vec().end(), 0.0);
    std::fill(ffn.conv2.b.vec().begin(), ffn.conv2.b.vec().end(), 0.0);
    auto zero = ffn.forward(nullptr, x);
    for (std::int64_t i = 0; i < zero.numel(); ++i) CHECK(zero.at(static_cast<int>(i)) == 0.0);
}

TEST_CASE("dense attention equals the rate-1 stitched path") {
    nn::ParamStore<double> store;
    const int C = 4, h = 4, w = 4, T = 16;
    AttentionParams<double> p(store, "attn", C, 44);
    CounterRng rng(11);
    auto x = random_tensor<double>(Shape{1, C, h, w}, rng);
    auto out = unstitch<double>(
        nullptr, group_mhsa<double>(nullptr, stitch<double>(nullptr, x, 1), p, 2), 1);

    std::vector<double> tokens(static_cast<size_t>(T) * C);
    for (int t = 0; t < T; ++t)
        for (int c = 0; c < C; ++c)
            tokens[static_cast<size_t>(t) * C + c] = x.at(0, c, t / w, t % w);
    auto ref = testsup::attention_reference<double>(
        tokens, T, C, p.wq.w.vec(), p.wq.b.vec(), p.wk.w.vec(), p.wk.b.vec(), p.wv.w.vec(),
        p.wv.b.vec(), p.wo.w.vec(), p.wo.b.vec(), 2);
    double worst = 0;
    for (int t = 0; t < T; ++t)
        for (int c = 0; c < C; ++c)
            worst = std::max(worst, std::abs(out.at(0, c, t / w, t % w) -
                                             ref[static_cast<size_t>(t) * C + c]));
    CHECK(worst < 1e-6);
}

TEST_CASE("stitch stream output aligns to the deepest CNN stride") {
    nn::ParamStore<float> store;
    StitchConfig cfg; // rates 2,4,8,16
    StitchVit<float> vit(store, "vit", cfg, 55);
    CounterRng rng(12);
    for (int size : {64, 96}) {
        auto img = testsup::random_tensor<float>(Shape{1, 3, size, size}, rng);
        auto ft = vit.forward(nullptr, img, ops::NormMode::eval);
        CHECK(ft.shape() == Shape{1, cfg.total_channels(), size / 32, size / 32});
    }
}

TEST_CASE("stitch config validation") {
    StitchConfig bad;
    bad.rates = {4, 2};
    CHECK_THROWS_AS(bad.validate(), ShapeError);
    StitchConfig odd;
    odd.heads_per_rate = 3; // group_dim 8 not divisible
    CHECK_THROWS_AS(odd.validate(), ShapeError);
}

TEST_CASE("token-mixing MAC accounting: formula, measurement, monotonicity") {
    auto report = count_attention_macs<double>(8, 8, 16, {1, 2, 4, 8});
    CHECK(report.dense_macs == 64ull * 64 * 16);
    REQUIRE(report.per_rate.size() == 4);
    CHECK(report.per_rate[0].analytic == report.dense_macs); // s=1 degenerate
    CHECK(report.per_rate[1].analytic == report.dense_macs / 4);
    for (const auto& row : report.per_rate) {
        INFO("rate ", row.rate);
        CHECK(row.measured == row.analytic); // instrumented counter equals n^2 d / s^2
    }
    for (size_t i = 0; i + 1 < report.per_rate.size(); ++i)
        CHECK(report.per_rate[i + 1].analytic < report.per_rate[i].analytic);
}
