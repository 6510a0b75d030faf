#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hfr::grad {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Raised when an operation receives operands whose shapes do not line up.
/// Carries the operation name and the axis that failed to match.
class DimensionError : public std::invalid_argument {
public:
    DimensionError(std::string op, std::string axis, const std::string& detail);

    const std::string& op() const noexcept { return op_; }
    const std::string& axis() const noexcept { return axis_; }

private:
    std::string op_;
    std::string axis_;
};

/// Dense row-major tensor of doubles with an optional gradient buffer.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t numel() const noexcept { return data_.size(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    const std::vector<double>& values() const noexcept { return data_; }

    bool has_grad() const noexcept { return !grad_.empty(); }
    std::span<double> grad() noexcept { return grad_; }
    std::span<const double> grad() const noexcept { return grad_; }
    /// Allocates a zero gradient if none exists yet.
    std::span<double> ensure_grad();
    void zero_grad();
    void drop_grad() { grad_.clear(); grad_.shrink_to_fit(); }

    /// Reinterprets the shape; element count must be preserved.
    void reshape(Shape shape);

    bool all_finite() const;

private:
    Shape shape_;
    std::vector<double> data_;
    std::vector<double> grad_;
};

}  // namespace hfr::grad
