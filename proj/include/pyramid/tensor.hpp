#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pyramid {

using Shape = std::vector<std::size_t>;

/// Thrown when extents or lengths do not line up.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Thrown when an index region falls outside a tensor or image.
class RangeError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

std::string to_string(const Shape& shape);
std::size_t element_count(const Shape& shape);

/// Dense row-major array of doubles. Images and feature maps use the axis
/// order (height, width, channel).
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> values);
    explicit Tensor(Shape shape, double fill = 0.0);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<const double> values() const { return data_; }
    std::span<double> values() { return data_; }
    const double* data() const { return data_.data(); }
    double* data() { return data_.data(); }

    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }

    /// Row-major element access; the index count must equal rank().
    double at(std::initializer_list<std::size_t> index) const;
    double& at(std::initializer_list<std::size_t> index);

    // 3-axis accessors for (h, w, c) feature maps.
    double operator()(std::size_t y, std::size_t x, std::size_t c) const {
        return data_[(y * shape_[1] + x) * shape_[2] + c];
    }
    double& operator()(std::size_t y, std::size_t x, std::size_t c) {
        return data_[(y * shape_[1] + x) * shape_[2] + c];
    }

    /// Same data, new shape of equal element count.
    Tensor reshaped(Shape shape) const;

    bool all_finite() const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    std::size_t offset(std::initializer_list<std::size_t> index) const;

    Shape shape_;
    std::vector<double> data_;
};

Tensor create_tensor(Shape shape, std::span<const double> values);

/// Copies the sub-block [origin, origin + extent) on every axis.
Tensor crop(const Tensor& t, std::span<const std::size_t> origin,
            std::span<const std::size_t> extent);

/// Shapes equal and max |a - b| <= tol. Never throws.
bool approx_equal(const Tensor& a, const Tensor& b, double tol);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace pyramid
