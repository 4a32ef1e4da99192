#include "fdflare/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace fdflare {

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_to_string(shape));
        n *= d;
    }
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

bool shapes_equal(const Shape& a, const Shape& b) { return a == b; }

Tensor::Tensor(Shape shape)
    : shape_(std::move(shape)),
      numel_(shape_numel(shape_)),
      data_(std::make_shared<std::vector<double>>(static_cast<size_t>(numel_), 0.0)) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), numel_(shape_numel(shape_)) {
    if (static_cast<int64_t>(data.size()) != numel_) {
        throw ShapeError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_to_string(shape_));
    }
    data_ = std::make_shared<std::vector<double>>(std::move(data));
}

Tensor Tensor::zeros(Shape shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(Shape shape, double value) {
    Tensor t(std::move(shape));
    std::fill(t.data_->begin(), t.data_->end(), value);
    return t;
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::from(Shape shape, std::initializer_list<double> values) {
    return Tensor(std::move(shape), std::vector<double>(values));
}

double* Tensor::mutable_data() {
    if (!data_) throw DataError("mutable_data on empty tensor");
    return data_->data();
}

double Tensor::at2(int64_t i, int64_t j) const {
    return (*data_)[static_cast<size_t>(i * shape_[1] + j)];
}

double Tensor::at4(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return (*data_)[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
}

double Tensor::value() const {
    if (numel_ != 1) throw ShapeError("value() on non-scalar tensor " + shape_to_string(shape_));
    return (*data_)[0];
}

bool Tensor::all_finite() const {
    if (!data_) return true;
    for (double v : *data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Tensor::ensure_finite(const std::string& op) const {
    if (!all_finite()) throw NumericError("non-finite value in result of " + op);
}

Tensor Tensor::reshaped(Shape new_shape) const {
    if (shape_numel(new_shape) != numel_) {
        throw ShapeError("reshape " + shape_to_string(shape_) + " -> " +
                         shape_to_string(new_shape) + " changes element count");
    }
    Tensor out;
    out.shape_ = std::move(new_shape);
    out.numel_ = numel_;
    out.data_ = data_;
    return out;
}

bool Tensor::bitwise_equal(const Tensor& other) const {
    if (shape_ != other.shape_) return false;
    if (numel_ == 0) return true;
    return std::memcmp(data_->data(), other.data_->data(),
                       static_cast<size_t>(numel_) * sizeof(double)) == 0;
}

}  // namespace fdflare
