#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "polyseg/error.hpp"

namespace polyseg {

/// NCHW extents of a rank-4 tensor.
struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    std::size_t numel() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

/// Dense float32 NCHW array with an optional gradient slot of identical shape.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f);
    Tensor(Shape shape, std::vector<float> values);

    const Shape& shape() const { return shape_; }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<float> data() { return data_; }
    std::span<const float> data() const { return data_; }
    float* ptr() { return data_.data(); }
    const float* ptr() const { return data_.data(); }

    std::size_t index(int n, int c, int y, int x) const {
        return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
    }
    float& at(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
    float at(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }

    bool has_grad() const { return grad_.has_value(); }
    /// Allocates a zeroed gradient slot if none exists.
    std::span<float> grad();
    std::span<const float> grad() const;
    void zero_grad();
    void drop_grad() { grad_.reset(); }

    /// Bitwise equality of shape and data (gradients ignored).
    bool same_bits(const Tensor& other) const;
    bool all_finite() const;

  private:
    Shape shape_;
    std::vector<float> data_;
    std::optional<std::vector<float>> grad_;
};

void require_shape(bool ok, const std::string& what);

}  // namespace polyseg
