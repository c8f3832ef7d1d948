#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "vc4d/errors.hpp"
#include "vc4d/rng.hpp"

namespace vc4d {

// Dense row-major tensor over a flat buffer. The scalar type is a template
// parameter: float everywhere at runtime, double in the gradient-check suite.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape, T fill = T{}) : shape_(std::move(shape)) {
        std::size_t n = 1;
        for (int d : shape_) {
            if (d <= 0) throw ShapeError("tensor dimensions must be positive");
            n *= static_cast<std::size_t>(d);
        }
        data_.assign(n, fill);
    }

    Tensor(std::vector<int> shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (element_count(shape_) != data_.size())
            throw ShapeError("tensor data length does not match shape");
    }

    static std::size_t element_count(const std::vector<int>& shape) {
        std::size_t n = 1;
        for (int d : shape) {
            if (d <= 0) throw ShapeError("tensor dimensions must be positive");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
    void zero() { fill(T{}); }

    // Reinterpret the buffer under a new shape with the same element count.
    Tensor reshaped(std::vector<int> new_shape) const {
        if (element_count(new_shape) != data_.size())
            throw ShapeError("reshape changes element count");
        Tensor out;
        out.shape_ = std::move(new_shape);
        out.data_ = data_;
        return out;
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    bool all_finite() const {
        for (const T& v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    void fill_uniform(Rng& rng, double lo, double hi) {
        for (T& v : data_) v = static_cast<T>(rng.uniform(lo, hi));
    }

    void fill_gaussian(Rng& rng) {
        for (T& v : data_) v = static_cast<T>(rng.gaussian());
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out = Tensor<U>(shape_);
        for (std::size_t i = 0; i < data_.size(); ++i)
            out[i] = static_cast<U>(data_[i]);
        return out;
    }

    static std::string shape_string(const std::vector<int>& shape) {
        std::string s = "(";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ", ";
            s += std::to_string(shape[i]);
        }
        return s + ")";
    }

private:
    std::vector<int> shape_;
    std::vector<T> data_;
};

template <typename T>
inline void require_shape(const Tensor<T>& t, const std::vector<int>& expected,
                          const char* where) {
    if (t.shape() != expected)
        throw ShapeError(std::string(where) + ": expected shape " +
                         Tensor<T>::shape_string(expected) + ", got " +
                         Tensor<T>::shape_string(t.shape()));
}

}  // namespace vc4d
