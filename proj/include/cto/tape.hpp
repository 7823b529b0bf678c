#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "cto/error.hpp"
#include "cto/tensor.hpp"

namespace cto {

// Record of executed ops in forward order (which is a topological order by
// construction). backward() replays the record in reverse, accumulating
// gradients additively across fan-out, then clears the record.
//
// One tape per model instance; forward/backward on a given instance are
// single-threaded by contract.
template <typename S>
class Tape {
  public:
    void record(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }

    std::size_t size() const { return nodes_.size(); }
    bool empty() const { return nodes_.empty(); }
    void clear() { nodes_.clear(); }

    void backward(Tensor<S> loss) {
        if (!loss.defined() || loss.numel() != 1)
            throw ShapeError("backward: loss must be a defined scalar tensor");
        if (nodes_.empty()) throw ShapeError("backward: computation record is empty");
        loss.ensure_grad();
        loss.grad_vec()[0] += S(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
        clear();
    }

  private:
    std::vector<std::function<void()>> nodes_;
};

namespace ops {

// Free-function form: populate grads of every requires_grad tensor reachable
// from `loss` through `record`, then clear the record.
template <typename S>
inline void backward(const Tensor<S>& loss, Tape<S>& record) {
    record.backward(loss);
}

} // namespace ops

} // namespace cto
