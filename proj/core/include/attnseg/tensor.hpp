#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "attnseg/errors.hpp"

namespace attnseg {

/// Dimensions of a rank-4 tensor in (batch, channel, height, width) order.
struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    std::size_t size() const noexcept {
        return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) *
               static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    }
    std::size_t plane() const noexcept {
        return static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    }
    bool operator==(const Shape&) const = default;

    std::string str() const;
};

enum class Precision { Single, Double };

template <class T>
constexpr Precision precision_of() noexcept {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    return std::is_same_v<T, float> ? Precision::Single : Precision::Double;
}

/// Dense NCHW tensor with contiguous row-major storage.
template <class T>
class Tensor4 {
public:
    using value_type = T;

    Tensor4() = default;
    explicit Tensor4(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.size(), fill) {
        if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0)
            throw DimensionError("shape", "negative tensor dimension in " + shape.str());
    }
    Tensor4(int n, int c, int h, int w, T fill = T(0)) : Tensor4(Shape{n, c, h, w}, fill) {}
    Tensor4(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
        if (data_.size() != shape_.size())
            throw DimensionError("data", "buffer of " + std::to_string(data_.size()) +
                                             " elements does not match shape " + shape_.str());
    }

    const Shape& shape() const noexcept { return shape_; }
    int n() const noexcept { return shape_.n; }
    int c() const noexcept { return shape_.c; }
    int h() const noexcept { return shape_.h; }
    int w() const noexcept { return shape_.w; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> span() noexcept { return data_; }
    std::span<const T> span() const noexcept { return data_; }
    std::vector<T>& vec() noexcept { return data_; }
    const std::vector<T>& vec() const noexcept { return data_; }

    std::size_t offset(int ni, int ci, int hi, int wi) const noexcept {
        return ((static_cast<std::size_t>(ni) * shape_.c + ci) * shape_.h + hi) * shape_.w + wi;
    }
    T& at(int ni, int ci, int hi, int wi) noexcept { return data_[offset(ni, ci, hi, wi)]; }
    const T& at(int ni, int ci, int hi, int wi) const noexcept {
        return data_[offset(ni, ci, hi, wi)];
    }
    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    /// Pointer to the h×w plane of (ni, ci).
    T* plane(int ni, int ci) noexcept { return data_.data() + offset(ni, ci, 0, 0); }
    const T* plane(int ni, int ci) const noexcept { return data_.data() + offset(ni, ci, 0, 0); }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
    void zero() { fill(T(0)); }

    /// Same buffer viewed with a different shape of equal element count.
    Tensor4 reshaped(Shape s) const {
        if (s.size() != size())
            throw DimensionError("shape", "cannot reshape " + shape_.str() + " to " + s.str());
        return Tensor4(s, data_);
    }

    template <class U>
    Tensor4<U> cast() const {
        return Tensor4<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
    }

    bool operator==(const Tensor4&) const = default;

private:
    Shape shape_{};
    std::vector<T> data_;
};

/// Learnable tensor with its gradient accumulator and Adam moment slots.
template <class T>
struct Param {
    std::string name;
    Tensor4<T> value;
    Tensor4<T> grad;
    Tensor4<T> opt_m;
    Tensor4<T> opt_v;

    Param() = default;
    Param(std::string param_name, Shape shape)
        : name(std::move(param_name)), value(shape), grad(shape), opt_m(shape), opt_v(shape) {}

    const Shape& shape() const noexcept { return value.shape(); }
    std::size_t size() const noexcept { return value.size(); }
    void zero_grad() { grad.zero(); }
};

/// Non-learnable persistent state (batch-norm running statistics).
template <class T>
struct Buffer {
    std::string name;
    Tensor4<T>* tensor;
};

template <class T>
struct ConstBuffer {
    std::string name;
    const Tensor4<T>* tensor;
};

void require_same_shape(const Shape& a, const Shape& b, const std::string& context);

template <class T>
bool all_finite(const Tensor4<T>& t);

extern template bool all_finite<float>(const Tensor4<float>&);
extern template bool all_finite<double>(const Tensor4<double>&);

using TensorF = Tensor4<float>;
using TensorD = Tensor4<double>;

}  // namespace attnseg
