#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "fdflare/errors.hpp"

namespace fdflare {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);
bool shapes_equal(const Shape& a, const Shape& b);

// Dense row-major tensor of 64-bit reals. The payload is shared between
// copies and treated as immutable once the tensor has been handed to a
// tape, a model, or another thread; mutate only through mutable_data()
// right after construction.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(Shape shape);                      // zero-filled
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);
    static Tensor from(Shape shape, std::initializer_list<double> values);

    const Shape& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int64_t dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
    int64_t numel() const { return numel_; }
    bool empty() const { return data_ == nullptr; }

    const double* data() const { return data_ ? data_->data() : nullptr; }
    double* mutable_data();

    double operator[](int64_t i) const { return (*data_)[static_cast<size_t>(i)]; }
    double at2(int64_t i, int64_t j) const;
    double at4(int64_t n, int64_t c, int64_t h, int64_t w) const;

    // Scalar extraction; throws unless numel() == 1.
    double value() const;

    bool all_finite() const;
    // Throws NumericError naming `op` when any element is NaN/Inf.
    void ensure_finite(const std::string& op) const;

    bool requires_grad() const { return requires_grad_; }
    Tensor& set_requires_grad(bool flag) {
        requires_grad_ = flag;
        return *this;
    }

    Tensor reshaped(Shape new_shape) const;

    bool same_data(const Tensor& other) const { return data_ == other.data_; }
    bool bitwise_equal(const Tensor& other) const;

  private:
    Shape shape_;
    int64_t numel_ = 0;
    std::shared_ptr<std::vector<double>> data_;
    bool requires_grad_ = false;
};

}  // namespace fdflare
