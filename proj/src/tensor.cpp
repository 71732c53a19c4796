#include "pyramid/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace pyramid {

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
}

namespace {

void check_shape(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one axis");
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (shape[i] == 0) {
            throw ShapeError("tensor extent on axis " + std::to_string(i) +
                             " is zero in shape " + to_string(shape));
        }
    }
}

}  // namespace

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
    check_shape(shape_);
    if (element_count(shape_) != data_.size()) {
        throw ShapeError("shape " + to_string(shape_) + " holds " +
                         std::to_string(element_count(shape_)) + " elements but " +
                         std::to_string(data_.size()) + " values were given");
    }
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(element_count(shape_), fill);
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> index) const {
    if (index.size() != shape_.size()) {
        throw ShapeError("index of rank " + std::to_string(index.size()) +
                         " used on tensor of shape " + to_string(shape_));
    }
    std::size_t off = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
        if (i >= shape_[axis]) {
            throw RangeError("index " + std::to_string(i) + " out of range on axis " +
                             std::to_string(axis) + " of shape " + to_string(shape_));
        }
        off = off * shape_[axis] + i;
        ++axis;
    }
    return off;
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
    return data_[offset(index)];
}

double& Tensor::at(std::initializer_list<std::size_t> index) {
    return data_[offset(index)];
}

Tensor Tensor::reshaped(Shape shape) const {
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](double v) { return std::isfinite(v); });
}

Tensor create_tensor(Shape shape, std::span<const double> values) {
    return Tensor(std::move(shape), std::vector<double>(values.begin(), values.end()));
}

Tensor crop(const Tensor& t, std::span<const std::size_t> origin,
            std::span<const std::size_t> extent) {
    const Shape& shape = t.shape();
    if (origin.size() != shape.size() || extent.size() != shape.size()) {
        throw ShapeError("crop origin/extent rank does not match tensor shape " +
                         to_string(shape));
    }
    for (std::size_t axis = 0; axis < shape.size(); ++axis) {
        if (extent[axis] == 0 || origin[axis] + extent[axis] > shape[axis]) {
            throw RangeError("crop region [" + std::to_string(origin[axis]) + ", " +
                             std::to_string(origin[axis] + extent[axis]) +
                             ") exceeds axis " + std::to_string(axis) + " of extent " +
                             std::to_string(shape[axis]));
        }
    }

    Shape out_shape(extent.begin(), extent.end());
    std::vector<double> out(element_count(out_shape));

    // Strides of the source tensor.
    std::vector<std::size_t> stride(shape.size(), 1);
    for (std::size_t axis = shape.size() - 1; axis > 0; --axis) {
        stride[axis - 1] = stride[axis] * shape[axis];
    }

    // Walk the output in row-major order, copying contiguous innermost runs.
    const std::size_t inner = extent.back();
    const std::size_t runs = out.size() / inner;
    std::vector<std::size_t> idx(shape.size() - 1, 0);
    for (std::size_t r = 0; r < runs; ++r) {
        std::size_t src = origin.back();
        for (std::size_t axis = 0; axis + 1 < shape.size(); ++axis) {
            src += (origin[axis] + idx[axis]) * stride[axis];
        }
        std::copy_n(t.data() + src, inner, out.data() + r * inner);
        for (std::size_t axis = idx.size(); axis-- > 0;) {
            if (++idx[axis] < extent[axis]) break;
            idx[axis] = 0;
        }
    }
    return Tensor(std::move(out_shape), std::move(out));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(a[i] - b[i]));
    }
    return worst;
}

bool approx_equal(const Tensor& a, const Tensor& b, double tol) {
    if (a.shape() != b.shape()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!(std::abs(a[i] - b[i]) <= tol)) return false;
    }
    return true;
}

}  // namespace pyramid
