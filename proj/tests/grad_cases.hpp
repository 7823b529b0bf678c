#pragma once

// The op-level finite-difference suite: every differentiable primitive gets
// at least one case, trickier ones several. Shared between the unit tests
// and the acceptance run. All cases run in f64 with a random projection of
// the op output as the scalar loss, so per-element gradient errors cannot
// cancel.

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "cto/gradcheck.hpp"
#include "cto/ops.hpp"
#include "test_support.hpp"

namespace gradcases {

using cto::CounterRng;
using cto::GradCheckReport;
using cto::Shape;
using cto::Tape;
using cto::Tensor;
namespace ops = cto::ops;

struct OpGradCase {
    std::string name;
    std::function<GradCheckReport()> run;
};

namespace detail {

// Builds f(tape) = sum(op_output * R) with a fixed random projection R.
template <typename Builder>
GradCheckReport check(std::uint64_t seed,
                      std::vector<std::pair<std::string, Tensor<double>>> params,
                      Builder build_output) {
    Tensor<double> probe; // lazily sized from the first forward
    auto f = [params, build_output, probe, seed](Tape<double>* tape) mutable {
        Tensor<double> out = build_output(tape);
        if (!probe.defined()) {
            CounterRng prng(seed, 0x70726f6265);
            probe = testsup::random_tensor<double>(out.shape(), prng, -1.0, 1.0);
        }
        return ops::sum_all(tape, ops::mul(tape, out, probe));
    };
    return cto::finite_diff_check<double>(f, params, 1e-5, 1e-4, seed);
}

} // namespace detail

inline std::vector<OpGradCase> all_cases() {
    std::vector<OpGradCase> cases;
    auto add = [&](std::string name, std::function<GradCheckReport()> run) {
        cases.push_back({std::move(name), std::move(run)});
    };

    // conv2d: plain / strided / padded / grouped / biased
    add("conv2d 3x3 pad1", [] {
        CounterRng rng(11);
        auto x = testsup::random_tensor<double>(Shape{2, 3, 6, 6}, rng, -1, 1, true);
        auto w = testsup::random_tensor<double>(Shape{4, 3, 3, 3}, rng, -1, 1, true);
        auto b = testsup::random_tensor<double>(Shape{4}, rng, -1, 1, true);
        return detail::check(11, {{"x", x}, {"w", w}, {"b", b}}, [=](Tape<double>* t) {
            return ops::conv2d(t, x, w, b, 1, 1);
        });
    });
    add("conv2d 2x2 stride2", [] {
        CounterRng rng(12);
        auto x = testsup::random_tensor<double>(Shape{1, 4, 8, 8}, rng, -1, 1, true);
        auto w = testsup::random_tensor<double>(Shape{6, 4, 2, 2}, rng, -1, 1, true);
        return detail::check(12, {{"x", x}, {"w", w}}, [=](Tape<double>* t) {
            return ops::conv2d(t, x, w, Tensor<double>{}, 2, 0);
        });
    });
    add("conv2d depthwise groups=C", [] {
        CounterRng rng(13);
        auto x = testsup::random_tensor<double>(Shape{1, 4, 5, 5}, rng, -1, 1, true);
        auto w = testsup::random_tensor<double>(Shape{4, 1, 3, 3}, rng, -1, 1, true);
        return detail::check(13, {{"x", x}, {"w", w}}, [=](Tape<double>* t) {
            return ops::conv2d(t, x, w, Tensor<double>{}, 1, 1, 4);
        });
    });
    add("conv2d 1x1 grouped", [] {
        CounterRng rng(14);
        auto x = testsup::random_tensor<double>(Shape{2, 6, 4, 4}, rng, -1, 1, true);
        auto w = testsup::random_tensor<double>(Shape{4, 3, 1, 1}, rng, -1, 1, true);
        auto b = testsup::random_tensor<double>(Shape{4}, rng, -1, 1, true);
        return detail::check(14, {{"x", x}, {"w", w}, {"b", b}}, [=](Tape<double>* t) {
            return ops::conv2d(t, x, w, b, 1, 0, 2);
        });
    });

    // matmul: plain and broadcast-batched
    add("matmul 2d", [] {
        CounterRng rng(21);
        auto a = testsup::random_tensor<double>(Shape{4, 5}, rng, -1, 1, true);
        auto b = testsup::random_tensor<double>(Shape{5, 6}, rng, -1, 1, true);
        return detail::check(21, {{"a", a}, {"b", b}}, [=](Tape<double>* t) {
            return ops::matmul(t, a, b);
        });
    });
    add("matmul batched broadcast", [] {
        CounterRng rng(22);
        auto a = testsup::random_tensor<double>(Shape{3, 4, 5}, rng, -1, 1, true);
        auto b = testsup::random_tensor<double>(Shape{5, 2}, rng, -1, 1, true);
        return detail::check(22, {{"a", a}, {"b", b}}, [=](Tape<double>* t) {
            return ops::matmul(t, a, b);
        });
    });
    add("matmul rank4 batch", [] {
        CounterRng rng(23);
        auto a = testsup::random_tensor<double>(Shape{2, 3, 4, 5}, rng, -1, 1, true);
        auto b = testsup::random_tensor<double>(Shape{2, 3, 5, 4}, rng, -1, 1, true);
        return detail::check(23, {{"a", a}, {"b", b}}, [=](Tape<double>* t) {
            return ops::matmul(t, a, b);
        });
    });

    // softmax / pointwise family
    add("softmax_lastdim", [] {
        CounterRng rng(31);
        auto x = testsup::random_tensor<double>(Shape{3, 7}, rng, -2, 2, true);
        return detail::check(31, {{"x", x}}, [=](Tape<double>* t) {
            return ops::softmax_lastdim(t, x);
        });
    });
    add("sigmoid", [] {
        CounterRng rng(32);
        auto x = testsup::random_tensor<double>(Shape{2, 3, 4, 4}, rng, -3, 3, true);
        return detail::check(32, {{"x", x}}, [=](Tape<double>* t) { return ops::sigmoid(t, x); });
    });
    add("relu away from kink", [] {
        CounterRng rng(33);
        auto x = testsup::random_away_from_zero<double>(Shape{2, 3, 4, 4}, rng, 1e-3, true);
        return detail::check(33, {{"x", x}}, [=](Tape<double>* t) { return ops::relu(t, x); });
    });
    add("log of clamped", [] {
        CounterRng rng(34);
        auto x = testsup::random_tensor<double>(Shape{3, 5}, rng, 0.1, 0.9, true);
        return detail::check(34, {{"x", x}}, [=](Tape<double>* t) {
            return ops::log(t, ops::clamp(t, x, 1e-7, 1.0 - 1e-7));
        });
    });
    add("one_minus + mul + add", [] {
        CounterRng rng(35);
        auto a = testsup::random_tensor<double>(Shape{4, 4}, rng, -1, 1, true);
        auto b = testsup::random_tensor<double>(Shape{4, 4}, rng, -1, 1, true);
        return detail::check(35, {{"a", a}, {"b", b}}, [=](Tape<double>* t) {
            return ops::add(t, ops::mul(t, ops::one_minus(t, a), b), ops::scale_by(t, a, 0.5));
        });
    });
    add("divide", [] {
        CounterRng rng(36);
        auto a = testsup::random_tensor<double>(Shape{3, 3}, rng, -1, 1, true);
        auto b = testsup::random_tensor<double>(Shape{3, 3}, rng, 0.5, 2.0, true);
        return detail::check(36, {{"a", a}, {"b", b}}, [=](Tape<double>* t) {
            return ops::divide(t, a, b);
        });
    });
    add("add_rowvec", [] {
        CounterRng rng(37);
        auto x = testsup::random_tensor<double>(Shape{5, 6}, rng, -1, 1, true);
        auto b = testsup::random_tensor<double>(Shape{6}, rng, -1, 1, true);
        return detail::check(37, {{"x", x}, {"b", b}}, [=](Tape<double>* t) {
            return ops::add_rowvec(t, x, b);
        });
    });
    add("mul_channelmap", [] {
        CounterRng rng(38);
        auto x = testsup::random_tensor<double>(Shape{2, 3, 4, 4}, rng, -1, 1, true);
        auto m = testsup::random_tensor<double>(Shape{2, 1, 4, 4}, rng, -1, 1, true);
        return detail::check(38, {{"x", x}, {"m", m}}, [=](Tape<double>* t) {
            return ops::mul_channelmap(t, x, m);
        });
    });

    // batch norm, both modes
    add("batch_norm train", [] {
        CounterRng rng(41);
        auto x = testsup::random_tensor<double>(Shape{3, 4, 4, 4}, rng, -1, 1, true);
        auto g = testsup::random_tensor<double>(Shape{4}, rng, 0.5, 1.5, true);
        auto b = testsup::random_tensor<double>(Shape{4}, rng, -0.5, 0.5, true);
        return detail::check(41, {{"x", x}, {"g", g}, {"b", b}}, [=](Tape<double>* t) {
            // fresh running stats each evaluation: the train-mode update must
            // not perturb later numeric evaluations
            Tensor<double> rm(Shape{4}), rv(Shape{4}, 1.0);
            return ops::batch_norm(t, x, g, b, rm, rv, ops::NormMode::train);
        });
    });
    add("batch_norm eval", [] {
        CounterRng rng(42);
        auto x = testsup::random_tensor<double>(Shape{2, 3, 3, 3}, rng, -1, 1, true);
        auto g = testsup::random_tensor<double>(Shape{3}, rng, 0.5, 1.5, true);
        auto b = testsup::random_tensor<double>(Shape{3}, rng, -0.5, 0.5, true);
        CounterRng rng2(142);
        auto rm0 = testsup::random_tensor<double>(Shape{3}, rng2, -0.3, 0.3);
        auto rv0 = testsup::random_tensor<double>(Shape{3}, rng2, 0.5, 1.5);
        return detail::check(42, {{"x", x}, {"g", g}, {"b", b}}, [=](Tape<double>* t) mutable {
            return ops::batch_norm(t, x, g, b, rm0, rv0, ops::NormMode::eval);
        });
    });

    // geometry ops
    add("upsample_bilinear", [] {
        CounterRng rng(51);
        auto x = testsup::random_tensor<double>(Shape{1, 2, 3, 3}, rng, -1, 1, true);
        return detail::check(51, {{"x", x}}, [=](Tape<double>* t) {
            return ops::upsample_bilinear(t, x, 7, 5);
        });
    });
    add("concat + slice channels", [] {
        CounterRng rng(52);
        auto a = testsup::random_tensor<double>(Shape{1, 2, 3, 3}, rng, -1, 1, true);
        auto b = testsup::random_tensor<double>(Shape{1, 3, 3, 3}, rng, -1, 1, true);
        return detail::check(52, {{"a", a}, {"b", b}}, [=](Tape<double>* t) {
            auto cat = ops::concat_channels(t, std::vector<Tensor<double>>{a, b});
            return ops::slice_channels(t, cat, 1, 3);
        });
    });
    add("strided_subsample + phase_combine", [] {
        CounterRng rng(53);
        auto x = testsup::random_tensor<double>(Shape{1, 2, 4, 4}, rng, -1, 1, true);
        return detail::check(53, {{"x", x}}, [=](Tape<double>* t) {
            std::vector<Tensor<double>> phases;
            for (int a = 1; a <= 2; ++a)
                for (int b = 1; b <= 2; ++b)
                    phases.push_back(ops::strided_subsample(t, x, 2, a, b));
            return ops::phase_combine(t, phases, 2);
        });
    });
    add("pad2d symmetric + crop2d", [] {
        CounterRng rng(54);
        auto x = testsup::random_tensor<double>(Shape{1, 2, 4, 4}, rng, -1, 1, true);
        return detail::check(54, {{"x", x}}, [=](Tape<double>* t) {
            auto p = ops::pad2d(t, x, 2, 2, 3, 1, ops::PadMode::symmetric);
            return ops::crop2d(t, p, 1, 1, 5, 5);
        });
    });
    add("pad2d replicate", [] {
        CounterRng rng(55);
        auto x = testsup::random_tensor<double>(Shape{1, 1, 3, 3}, rng, -1, 1, true);
        return detail::check(55, {{"x", x}}, [=](Tape<double>* t) {
            return ops::pad2d(t, x, 1, 1, 1, 1, ops::PadMode::replicate);
        });
    });
    add("max_pool2d 3x3 s2 p1", [] {
        CounterRng rng(56);
        auto x = testsup::random_tensor<double>(Shape{1, 2, 6, 6}, rng, -1, 1, true);
        return detail::check(56, {{"x", x}}, [=](Tape<double>* t) {
            return ops::max_pool2d(t, x, 3, 2, 1);
        });
    });
    add("permute + reshape", [] {
        CounterRng rng(57);
        auto x = testsup::random_tensor<double>(Shape{2, 3, 2, 4}, rng, -1, 1, true);
        return detail::check(57, {{"x", x}}, [=](Tape<double>* t) {
            auto p = ops::permute(t, x, {0, 2, 3, 1});
            return ops::reshape(t, p, Shape{2, 8, 3});
        });
    });
    add("mean_all composite", [] {
        CounterRng rng(58);
        auto x = testsup::random_tensor<double>(Shape{3, 5}, rng, -1, 1, true);
        return detail::check(58, {{"x", x}}, [=](Tape<double>* t) {
            return ops::mean_all(t, ops::sigmoid(t, x));
        });
    });
    add("fan-out reuse (x used twice)", [] {
        CounterRng rng(59);
        auto x = testsup::random_tensor<double>(Shape{4, 4}, rng, -1, 1, true);
        return detail::check(59, {{"x", x}}, [=](Tape<double>* t) {
            return ops::mul(t, ops::add(t, x, x), ops::sigmoid(t, x));
        });
    });

    return cases;
}

} // namespace gradcases
