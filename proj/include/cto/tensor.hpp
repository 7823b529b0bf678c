#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <vector>

#include "cto/rng.hpp"
#include "cto/shape.hpp"

namespace cto {

// Dense N-dimensional array over a flat row-major buffer. Copying a Tensor
// copies the handle, not the buffer; value and gradient storage are shared.
// The gradient buffer is allocated lazily on first accumulation.
//
// Scalar type S is float for training and double for verification runs.
template <typename S>
class Tensor {
    struct Data {
        Shape shape;
        std::vector<S> v;
        std::vector<S> grad; // empty until ensure_grad()
        bool requires_grad = false;
    };

  public:
    Tensor() = default;

    explicit Tensor(Shape shape, S fill = S(0), bool requires_grad = false)
        : d_(std::make_shared<Data>()) {
        d_->shape = std::move(shape);
        d_->v.assign(static_cast<size_t>(d_->shape.numel()), fill);
        d_->requires_grad = requires_grad;
    }

    Tensor(Shape shape, std::vector<S> values, bool requires_grad = false)
        : d_(std::make_shared<Data>()) {
        if (static_cast<std::int64_t>(values.size()) != shape.numel())
            throw ShapeError("Tensor: buffer length " + std::to_string(values.size()) +
                             " does not match shape " + shape.str());
        d_->shape = std::move(shape);
        d_->v = std::move(values);
        d_->requires_grad = requires_grad;
    }

    static Tensor scalar(S value) { return Tensor(Shape{1}, std::vector<S>{value}); }

    static Tensor randn(Shape shape, CounterRng& rng, double stddev = 1.0,
                        bool requires_grad = false) {
        Tensor t(std::move(shape), S(0), requires_grad);
        for (auto& x : t.vec()) x = static_cast<S>(rng.normal(0.0, stddev));
        return t;
    }

    bool defined() const { return static_cast<bool>(d_); }
    const Shape& shape() const { return d_->shape; }
    std::int64_t numel() const { return d_->shape.numel(); }

    std::vector<S>& vec() { return d_->v; }
    const std::vector<S>& vec() const { return d_->v; }
    S* data() { return d_->v.data(); }
    const S* data() const { return d_->v.data(); }

    // Value of a one-element tensor.
    S item() const {
        if (numel() != 1) throw ShapeError("item(): tensor has " + std::to_string(numel()) + " elements");
        return d_->v[0];
    }

    S& at(int i) { return d_->v[static_cast<size_t>(i)]; }
    S at(int i) const { return d_->v[static_cast<size_t>(i)]; }
    S& at(int a, int b) { return d_->v[static_cast<size_t>(a) * shape()[1] + b]; }
    S at(int a, int b) const { return d_->v[static_cast<size_t>(a) * shape()[1] + b]; }
    S& at(int n, int c, int h, int w) {
        const Shape& s = shape();
        return d_->v[((static_cast<size_t>(n) * s[1] + c) * s[2] + h) * s[3] + w];
    }
    S at(int n, int c, int h, int w) const { return const_cast<Tensor*>(this)->at(n, c, h, w); }

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool rg) { d_->requires_grad = rg; }

    bool has_grad() const { return defined() && !d_->grad.empty(); }
    void ensure_grad() {
        if (d_->grad.empty()) d_->grad.assign(d_->v.size(), S(0));
    }
    std::vector<S>& grad_vec() {
        ensure_grad();
        return d_->grad;
    }
    S* grad() {
        ensure_grad();
        return d_->grad.data();
    }
    void zero_grad() {
        if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), S(0));
    }
    void drop_grad() { d_->grad.clear(); }

    // Deep copy of the value buffer; gradient state is not copied.
    Tensor clone() const {
        Tensor t;
        t.d_ = std::make_shared<Data>();
        t.d_->shape = d_->shape;
        t.d_->v = d_->v;
        t.d_->requires_grad = d_->requires_grad;
        return t;
    }

    bool same_object(const Tensor& o) const { return d_ == o.d_; }

  private:
    std::shared_ptr<Data> d_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

} // namespace cto
