#include "hfr/grad/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace hfr::grad {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

DimensionError::DimensionError(std::string op, std::string axis, const std::string& detail)
    : std::invalid_argument(op + ": dimension mismatch on axis '" + axis + "': " + detail),
      op_(std::move(op)),
      axis_(std::move(axis)) {}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    for (auto d : shape_) {
        if (d == 0) throw DimensionError("tensor", "shape", "zero-length axis in " + shape_to_string(shape_));
    }
    data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    for (auto d : shape_) {
        if (d == 0) throw DimensionError("tensor", "shape", "zero-length axis in " + shape_to_string(shape_));
    }
    if (shape_numel(shape_) != data_.size()) {
        throw DimensionError("tensor", "data",
                             shape_to_string(shape_) + " needs " + std::to_string(shape_numel(shape_)) +
                                 " values, got " + std::to_string(data_.size()));
    }
}

std::span<double> Tensor::ensure_grad() {
    if (grad_.size() != data_.size()) grad_.assign(data_.size(), 0.0);
    return grad_;
}

void Tensor::zero_grad() {
    std::fill(grad_.begin(), grad_.end(), 0.0);
}

void Tensor::reshape(Shape shape) {
    if (shape_numel(shape) != data_.size()) {
        throw DimensionError("reshape", "numel", shape_to_string(shape_) + " -> " + shape_to_string(shape));
    }
    shape_ = std::move(shape);
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace hfr::grad
