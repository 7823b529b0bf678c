#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cto/cnn_stream.hpp"
#include "cto/gradcheck.hpp"
#include "test_support.hpp"

using namespace cto;
using testsup::max_abs_diff;
using testsup::random_tensor;

namespace {

template <typename S>
void zero_params(nn::ParamStore<S>& store) {
    for (auto& p : store.params())
        if (p.name.find(".gamma") == std::string::npos)
            std::fill(p.value.vec().begin(), p.value.vec().end(), S(0));
}

} // namespace

TEST_CASE("res2 module keeps shape at stride 1 with equal channels") {
    nn::ParamStore<double> store;
    Res2Module<double> mod(store, "m", 16, 16, 1, 7);
    CounterRng rng(1);
    auto x = random_tensor<double>(Shape{2, 16, 8, 8}, rng);
    auto y = mod.forward(nullptr, x, ops::NormMode::eval);
    CHECK(y.shape() == x.shape());
}

TEST_CASE("res2 module rejects channels not divisible by the scale dimension") {
    nn::ParamStore<double> store;
    CHECK_THROWS_AS(Res2Module<double>(store, "m", 16, 18, 1, 7), ShapeError);
}

TEST_CASE("zeroed weights collapse the module to ReLU of the shortcut") {
    nn::ParamStore<double> store;
    Res2Module<double> mod(store, "m", 16, 16, 1, 7);
    zero_params(store); // weights/biases/beta to zero, gamma kept at one
    CounterRng rng(2);
    auto x = random_tensor<double>(Shape{1, 16, 6, 6}, rng, -1, 1);
    auto y = mod.forward(nullptr, x, ops::NormMode::eval);
    auto expect = ops::relu<double>(nullptr, x); // identity shortcut, zero merged path
    CHECK(max_abs_diff(y, expect) == 0.0);
}

TEST_CASE("res2 module matches a straight-line rewiring of its own layers") {
    nn::ParamStore<double> store;
    Res2Module<double> mod(store, "m", 8, 8, 1, 11);
    CounterRng rng(3);
    auto x = random_tensor<double>(Shape{1, 8, 8, 8}, rng);
    auto fast = mod.forward(nullptr, x, ops::NormMode::eval);

    // independently written straight-line composition of the same wiring
    Tape<double>* t = nullptr;
    auto mode = ops::NormMode::eval;
    auto bn = [&](const nn::BatchNorm2d<double>& b, const Tensor<double>& v) {
        Tensor<double> rm = b.running_mean, rv = b.running_var;
        return ops::batch_norm(t, v, b.gamma, b.beta, rm, rv, mode);
    };
    auto entry = ops::relu(t, bn(mod.bn_in, ops::conv2d(t, x, mod.conv_in.w, mod.conv_in.b, 1, 0)));
    auto x1 = ops::slice_channels(t, entry, 0, 2);
    auto x2 = ops::slice_channels(t, entry, 2, 2);
    auto x3 = ops::slice_channels(t, entry, 4, 2);
    auto x4 = ops::slice_channels(t, entry, 6, 2);
    auto y1 = x1;
    auto y2 = ops::relu(t, bn(mod.scale_convs[0].bn,
                              ops::conv2d(t, ops::add(t, x2, y1), mod.scale_convs[0].conv.w,
                                          mod.scale_convs[0].conv.b, 1, 1)));
    auto y3 = ops::relu(t, bn(mod.scale_convs[1].bn,
                              ops::conv2d(t, ops::add(t, x3, y2), mod.scale_convs[1].conv.w,
                                          mod.scale_convs[1].conv.b, 1, 1)));
    auto y4 = ops::relu(t, bn(mod.scale_convs[2].bn,
                              ops::conv2d(t, ops::add(t, x4, y3), mod.scale_convs[2].conv.w,
                                          mod.scale_convs[2].conv.b, 1, 1)));
    auto cat = ops::concat_channels(t, std::vector<Tensor<double>>{y1, y2, y3, y4});
    auto merged = bn(mod.bn_out, ops::conv2d(t, cat, mod.conv_out.w, mod.conv_out.b, 1, 0));
    auto ref = ops::relu(t, ops::add(t, merged, x));
    CHECK(max_abs_diff(fast, ref) < 1e-6);
}

TEST_CASE("encoder stride ladder: 256 -> 64/32/16/8 and 64 -> 16/8/4/2") {
    nn::ParamStore<float> store;
    CnnEncoder<float> enc(store, "cnn", {16, 32, 64, 128}, 42);
    for (int size : {256, 64}) {
        CounterRng rng(4);
        auto img = testsup::random_tensor<float>(Shape{1, 3, size, size}, rng);
        auto f = enc.forward(nullptr, img, ops::NormMode::eval);
        CHECK(f.f1.shape() == Shape{1, 16, size / 4, size / 4});
        CHECK(f.f2.shape() == Shape{1, 32, size / 8, size / 8});
        CHECK(f.f3.shape() == Shape{1, 64, size / 16, size / 16});
        CHECK(f.f4.shape() == Shape{1, 128, size / 32, size / 32});
    }
}

TEST_CASE("encoder rejects sizes not divisible by 32, naming the multiple") {
    nn::ParamStore<float> store;
    CnnEncoder<float> enc(store, "cnn", {16, 32, 64, 128}, 42);
    TensorF img(Shape{1, 3, 48, 48});
    CHECK_THROWS_WITH_AS(enc.forward(nullptr, img, ops::NormMode::eval),
                         doctest::Contains("divisible by 32"), ShapeError);
}

TEST_CASE("zero image propagates to zero features through bias-free convs") {
    nn::ParamStore<float> store;
    CnnEncoder<float> enc(store, "cnn", {16, 32, 64, 128}, 42);
    TensorF img(Shape{1, 3, 64, 64}); // all zeros
    auto f = enc.forward(nullptr, img, ops::NormMode::eval); // running mean zero at init
    auto all_zero = [](const TensorF& t) {
        for (std::int64_t i = 0; i < t.numel(); ++i)
            if (t.data()[i] != 0.0f) return false;
        return true;
    };
    CHECK(all_zero(f.f1));
    CHECK(all_zero(f.f2));
    CHECK(all_zero(f.f3));
    CHECK(all_zero(f.f4));
}

TEST_CASE("module parameter counts match the closed-form sums") {
    auto conv_params = [](int cin, int cout, int k, bool bias) {
        return static_cast<std::int64_t>(cout) * cin * k * k + (bias ? cout : 0);
    };
    auto bn_params = [](int c) { return static_cast<std::int64_t>(2) * c; };

    struct Case {
        int cin, cout, stride;
    };
    for (const Case& c : {Case{16, 16, 1}, Case{16, 32, 2}, Case{64, 128, 2}}) {
        nn::ParamStore<float> store;
        Res2Module<float> mod(store, "m", c.cin, c.cout, c.stride, 5);
        const int k = c.stride == 1 ? 1 : 2;
        const int cg = c.cout / 4;
        std::int64_t expect = conv_params(c.cin, c.cout, k, false) + bn_params(c.cout); // entry
        expect += 3 * (conv_params(cg, cg, 3, false) + bn_params(cg));                  // cascade
        expect += conv_params(c.cout, c.cout, 1, false) + bn_params(c.cout);            // out
        if (c.cin != c.cout || c.stride != 1)
            expect += conv_params(c.cin, c.cout, k, false) + bn_params(c.cout); // projection
        CHECK(store.parameter_count() == expect);
    }
}

TEST_CASE("gradient reaches the stem from a loss on f4") {
    nn::ParamStore<double> store;
    CnnEncoder<double> enc(store, "cnn", {8, 8, 8, 8}, 13);
    CounterRng rng(5);
    auto img = random_tensor<double>(Shape{1, 3, 64, 64}, rng, 0, 1, false);
    Tape<double> tape;
    auto f = enc.forward(&tape, img, ops::NormMode::train);
    auto loss = ops::sum_all(&tape, ops::mul(&tape, f.f4, f.f4));
    ops::backward(loss, tape);
    auto stem_w = store.find("cnn.stem.conv.w");
    REQUIRE(stem_w.defined());
    REQUIRE(stem_w.has_grad());
    double mag = 0;
    for (std::int64_t i = 0; i < stem_w.numel(); ++i) mag += std::abs(stem_w.grad()[i]);
    CHECK(mag > 0.0);
}
