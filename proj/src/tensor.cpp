#include "polyseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace polyseg {

std::string Shape::str() const {
    std::ostringstream os;
    os << n << "x" << c << "x" << h << "x" << w;
    return os.str();
}

Tensor::Tensor(Shape shape, float fill) : shape_(shape) {
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
        fail(ErrorKind::Shape, "negative tensor extent " + shape.str());
    }
    data_.assign(shape.numel(), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> values) : shape_(shape), data_(std::move(values)) {
    if (data_.size() != shape.numel()) {
        fail(ErrorKind::Shape, "tensor data length " + std::to_string(data_.size()) +
                                   " does not match shape " + shape.str());
    }
}

std::span<float> Tensor::grad() {
    if (!grad_) grad_.emplace(data_.size(), 0.0f);
    return *grad_;
}

std::span<const float> Tensor::grad() const {
    if (!grad_) fail(ErrorKind::State, "tensor has no gradient slot");
    return *grad_;
}

void Tensor::zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0f);
}

bool Tensor::same_bits(const Tensor& other) const {
    return shape_ == other.shape_ &&
           (data_.empty() ||
            std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0);
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

void require_shape(bool ok, const std::string& what) {
    if (!ok) fail(ErrorKind::Shape, what);
}

}  // namespace polyseg
