#pragma once

// Layer building blocks over the op set: a named parameter registry plus the
// Conv/BN units every stream of the model is assembled from. Parameter names
// are dot-separated module paths and double as the checkpoint namespace.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cto/ops.hpp"
#include "cto/rng.hpp"
#include "cto/tape.hpp"
#include "cto/tensor.hpp"

namespace cto::nn {

template <typename S>
struct Parameter {
    std::string name;
    Tensor<S> value;
};

// Registry of trainable parameters and non-trainable buffers (BN running
// stats). Registration order is deterministic and defines optimizer order;
// checkpoint serialization sorts by name.
template <typename S>
class ParamStore {
  public:
    Tensor<S> add_param(const std::string& name, Tensor<S> t) {
        check_unique(name);
        t.set_requires_grad(true);
        params_.push_back({name, t});
        index_.emplace(name, t);
        return t;
    }

    Tensor<S> add_buffer(const std::string& name, Tensor<S> t) {
        check_unique(name);
        t.set_requires_grad(false);
        buffers_.push_back({name, t});
        index_.emplace(name, t);
        return t;
    }

    std::vector<Parameter<S>>& params() { return params_; }
    const std::vector<Parameter<S>>& params() const { return params_; }
    std::vector<Parameter<S>>& buffers() { return buffers_; }
    const std::vector<Parameter<S>>& buffers() const { return buffers_; }

    // Returns an aliasing handle, or an undefined tensor when absent.
    Tensor<S> find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? Tensor<S>{} : it->second;
    }

    std::int64_t parameter_count() const {
        std::int64_t n = 0;
        for (const auto& p : params_) n += p.value.numel();
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) p.value.zero_grad();
    }

  private:
    void check_unique(const std::string& name) {
        if (index_.count(name)) throw ShapeError("ParamStore: duplicate name '" + name + "'");
    }

    std::vector<Parameter<S>> params_;
    std::vector<Parameter<S>> buffers_;
    std::map<std::string, Tensor<S>> index_; // aliases of the entries above
};

// Kaiming fan-in normal init, seeded per layer name so construction order
// changes don't reshuffle unrelated layers.
template <typename S>
Tensor<S> kaiming_conv(Shape shape, std::uint64_t seed, const std::string& name) {
    std::uint64_t h = 1469598103934665603ull;
    for (char c : name) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ull;
    CounterRng rng(seed, h);
    const double fan_in = static_cast<double>(shape[1]) * shape[2] * shape[3];
    const double stddev = std::sqrt(2.0 / fan_in);
    return Tensor<S>::randn(std::move(shape), rng, stddev);
}

template <typename S>
struct Conv2d {
    Tensor<S> w, b; // b undefined when bias is off (convs feeding a BN)
    int stride = 1, padding = 0, groups = 1;

    Conv2d() = default;
    Conv2d(ParamStore<S>& store, const std::string& name, int cin, int cout, int k, int stride_,
           int padding_, std::uint64_t seed, bool bias = true, int groups_ = 1)
        : stride(stride_), padding(padding_), groups(groups_) {
        w = store.add_param(name + ".w", kaiming_conv<S>(Shape{cout, cin / groups_, k, k}, seed,
                                                         name + ".w"));
        if (bias) b = store.add_param(name + ".b", Tensor<S>(Shape{cout}));
    }

    Tensor<S> forward(Tape<S>* tape, const Tensor<S>& x) const {
        return ops::conv2d(tape, x, w, b, stride, padding, groups);
    }
};

template <typename S>
struct BatchNorm2d {
    Tensor<S> gamma, beta, running_mean, running_var;

    BatchNorm2d() = default;
    BatchNorm2d(ParamStore<S>& store, const std::string& name, int c) {
        gamma = store.add_param(name + ".gamma", Tensor<S>(Shape{c}, S(1)));
        beta = store.add_param(name + ".beta", Tensor<S>(Shape{c}));
        running_mean = store.add_buffer(name + ".running_mean", Tensor<S>(Shape{c}));
        running_var = store.add_buffer(name + ".running_var", Tensor<S>(Shape{c}, S(1)));
    }

    Tensor<S> forward(Tape<S>* tape, const Tensor<S>& x, ops::NormMode mode) const {
        // running stats are mutated in train mode; the handles share storage
        Tensor<S> rm = running_mean, rv = running_var;
        return ops::batch_norm(tape, x, gamma, beta, rm, rv, mode);
    }
};

// Conv + BN + ReLU, the unit the decoder and fusion blocks are made of.
template <typename S>
struct ConvBnRelu {
    Conv2d<S> conv;
    BatchNorm2d<S> bn;

    ConvBnRelu() = default;
    ConvBnRelu(ParamStore<S>& store, const std::string& name, int cin, int cout, int k, int stride,
               int padding, std::uint64_t seed)
        : conv(store, name + ".conv", cin, cout, k, stride, padding, seed, /*bias=*/false),
          bn(store, name + ".bn", cout) {}

    Tensor<S> forward(Tape<S>* tape, const Tensor<S>& x, ops::NormMode mode) const {
        return ops::relu(tape, bn.forward(tape, conv.forward(tape, x), mode));
    }
};

// Token-side linear map y = x W + b for attention projections.
template <typename S>
struct Linear {
    Tensor<S> w, b;

    Linear() = default;
    Linear(ParamStore<S>& store, const std::string& name, int in, int out, std::uint64_t seed) {
        std::uint64_t h = 1469598103934665603ull;
        for (char c : name) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ull;
        CounterRng rng(seed, h);
        w = store.add_param(name + ".w",
                            Tensor<S>::randn(Shape{in, out}, rng, std::sqrt(2.0 / in)));
        b = store.add_param(name + ".b", Tensor<S>(Shape{out}));
    }

    Tensor<S> forward(Tape<S>* tape, const Tensor<S>& x) const {
        return ops::add_rowvec(tape, ops::matmul(tape, x, w), b);
    }
};

} // namespace cto::nn
