#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cto/error.hpp"

namespace cto {

// Dense tensor extents. Layout order for 4-D activations is [N, C, H, W].
class Shape {
  public:
    Shape() = default;
    Shape(std::initializer_list<int> d) : dims_(d) { validate(); }
    explicit Shape(std::vector<int> d) : dims_(std::move(d)) { validate(); }

    int rank() const { return static_cast<int>(dims_.size()); }
    int operator[](int i) const { return dims_[static_cast<size_t>(i)]; }
    const std::vector<int>& dims() const { return dims_; }

    std::int64_t numel() const {
        std::int64_t n = 1;
        for (int d : dims_) n *= d;
        return n;
    }

    bool operator==(const Shape& o) const { return dims_ == o.dims_; }
    bool operator!=(const Shape& o) const { return !(*this == o); }

    std::string str() const {
        std::ostringstream os;
        os << "[";
        for (size_t i = 0; i < dims_.size(); ++i) os << (i ? "," : "") << dims_[i];
        os << "]";
        return os.str();
    }

  private:
    void validate() const {
        for (int d : dims_)
            if (d < 1) throw ShapeError("Shape: all dims must be >= 1, got " + str());
    }

    std::vector<int> dims_;
};

} // namespace cto
