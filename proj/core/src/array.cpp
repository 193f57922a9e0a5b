#include "ihd/array.hpp"

#include <cmath>
#include <sstream>

#include "ihd/errors.hpp"

namespace ihd {

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

std::size_t shape_product(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

static void check_extents(const Shape& shape) {
    for (std::size_t e : shape) {
        if (e == 0) throw ShapeError("DenseArray: zero extent in shape " + shape_to_string(shape));
    }
}

DenseArray::DenseArray(Shape shape, double fill) : shape_(std::move(shape)) {
    check_extents(shape_);
    data_.assign(shape_product(shape_), fill);
}

DenseArray::DenseArray(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents(shape_);
    if (shape_product(shape_) != data_.size()) {
        throw ShapeError("DenseArray: shape " + shape_to_string(shape_) + " does not match data length " +
                         std::to_string(data_.size()));
    }
}

bool DenseArray::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void DenseArray::fill(double v) {
    for (double& x : data_) x = v;
}

}  // namespace ihd
