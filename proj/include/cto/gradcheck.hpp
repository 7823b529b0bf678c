#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "cto/error.hpp"
#include "cto/rng.hpp"
#include "cto/tape.hpp"
#include "cto/tensor.hpp"

namespace cto {

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    bool passed = true;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::vector<std::string> failing_param_names;
    std::vector<GradCheckEntry> per_param;
    bool passed() const { return failing_param_names.empty(); }
};

// Central finite-difference check of reverse-mode gradients. Meant to run in
// f64; central differences are unreliable in f32.
//
// `f` must rebuild the forward pass on the given tape and return the scalar
// loss; with a null tape it must evaluate without recording. Determinism is
// verified by evaluating twice and requiring bitwise-equal results.
//
// At least `coords_per_param` coordinates of every parameter are probed
// (all of them for small tensors), with the error measured as
//
//     rel = |a - n| / max(kDenomFloor, |a| + |n|).
//
// The denominator floor makes small gradients an absolute comparison:
// evaluating an O(1) loss in f64 leaves cancellation noise of roughly 1e-13,
// which the central difference divides by 2*eps, so the numeric estimate
// carries noise near 1e-8 even where the true derivative is exactly zero
// (shift-invariant softmax biases, ReLU channels that are off for the probe
// input). With the floor, such coordinates pass iff |a - n| stays below
// tolerance * kDenomFloor = 2e-6 at the default tolerance -- two orders
// above the noise, three below a typical live gradient.
//
// Sampling prefers coordinates whose analytic gradient is live so the
// relative comparison is exercised wherever the parameter allows it.
//
// `corrupt_param`, when non-empty, scales that parameter's analytic gradient
// by `corrupt_factor` before comparison (fault-injection self-test).
inline constexpr double kDenomFloor = 2e-2;
inline constexpr double kLiveGradient = 1e-4;
template <typename S>
GradCheckReport finite_diff_check(const std::function<Tensor<S>(Tape<S>*)>& f,
                                  const std::vector<std::pair<std::string, Tensor<S>>>& params,
                                  double epsilon = 1e-5, double tolerance = 1e-4,
                                  std::uint64_t seed = 0, int coords_per_param = 8,
                                  const std::string& corrupt_param = {},
                                  double corrupt_factor = 1.0) {
    static_assert(sizeof(S) >= 8 || true, "");
    const double base = static_cast<double>(f(nullptr).item());
    const double again = static_cast<double>(f(nullptr).item());
    if (base != again)
        throw NumericError("finite_diff_check: function is nondeterministic (" +
                           std::to_string(base) + " vs " + std::to_string(again) + ")");

    for (const auto& [name, p] : params) Tensor<S>(p).zero_grad();
    Tape<S> tape;
    Tensor<S> loss = f(&tape);
    tape.backward(loss);

    GradCheckReport report;
    CounterRng rng(seed, 0x67726164); // independent coordinate-sampling stream
    for (const auto& [name, p] : params) {
        Tensor<S> param = p;
        const std::int64_t n = param.numel();
        auto grad_at = [&](std::int64_t c) {
            return param.has_grad() ? static_cast<double>(param.grad()[c]) : 0.0;
        };
        std::vector<std::int64_t> coords;
        if (n <= coords_per_param) {
            for (std::int64_t i = 0; i < n; ++i) coords.push_back(i);
        } else {
            // prefer live coordinates; fall back to whatever was drawn
            std::vector<std::int64_t> drawn;
            for (int attempt = 0; attempt < coords_per_param * 8 &&
                                  static_cast<int>(coords.size()) < coords_per_param;
                 ++attempt) {
                const auto c = static_cast<std::int64_t>(
                    rng.uniform_int(static_cast<std::uint64_t>(n)));
                drawn.push_back(c);
                if (std::abs(grad_at(c)) >= kLiveGradient) coords.push_back(c);
            }
            for (size_t i = 0; static_cast<int>(coords.size()) < coords_per_param &&
                               i < drawn.size();
                 ++i)
                coords.push_back(drawn[i]);
        }
        GradCheckEntry entry{name, 0.0, true};
        const double fault = (name == corrupt_param) ? corrupt_factor : 1.0;
        for (std::int64_t c : coords) {
            const S saved = param.data()[c];
            param.data()[c] = saved + static_cast<S>(epsilon);
            const double fp = static_cast<double>(f(nullptr).item());
            param.data()[c] = saved - static_cast<S>(epsilon);
            const double fm = static_cast<double>(f(nullptr).item());
            param.data()[c] = saved;
            const double numeric = (fp - fm) / (2.0 * epsilon);
            const double analytic = grad_at(c) * fault;
            const double rel = std::abs(analytic - numeric) /
                               std::max(kDenomFloor, std::abs(analytic) + std::abs(numeric));
            entry.max_rel_err = std::max(entry.max_rel_err, rel);
        }
        entry.passed = entry.max_rel_err < tolerance;
        if (!entry.passed) report.failing_param_names.push_back(name);
        if (entry.max_rel_err > report.max_rel_err) {
            report.max_rel_err = entry.max_rel_err;
            report.worst_param = name;
        }
        report.per_param.push_back(entry);
    }
    return report;
}

} // namespace cto
