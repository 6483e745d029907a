#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gbx {

/// Dense row-major array of 64-bit floats, rank 1 to 4.
///
/// All numeric state in the library lives in Tensors. Spatial coordinates
/// are always [row, col], 0-based.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
        : shape_(std::move(shape)) {
        check_rank();
        data_.assign(element_count(shape_), fill);
    }

    static Tensor from(std::vector<std::size_t> shape, std::vector<double> values) {
        Tensor t;
        t.shape_ = std::move(shape);
        t.check_rank();
        if (element_count(t.shape_) != values.size())
            throw std::invalid_argument("Tensor::from: " + std::to_string(values.size()) +
                                        " values for shape " + shape_string(t.shape_));
        t.data_ = std::move(values);
        return t;
    }

    std::size_t rank() const noexcept { return shape_.size(); }
    const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return data_.size(); }

    std::size_t extent(std::size_t axis) const {
        if (axis >= shape_.size())
            throw std::invalid_argument("Tensor::extent: axis " + std::to_string(axis) +
                                        " out of range for rank " + std::to_string(rank()));
        return shape_[axis];
    }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }

    double& operator[](std::size_t flat) { return data_[flat]; }
    double operator[](std::size_t flat) const { return data_[flat]; }

    double& operator()(std::size_t i) { return data_[i]; }
    double operator()(std::size_t i) const { return data_[i]; }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

    double& operator()(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double operator()(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    double& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
        return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }
    double operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
        return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }

    bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

    bool all_finite() const noexcept {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    static std::string shape_string(const std::vector<std::size_t>& shape) {
        std::string s = "[";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }

    std::string shape_string() const { return shape_string(shape_); }

private:
    static std::size_t element_count(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t e : shape) n *= e;
        return n;
    }

    void check_rank() const {
        if (shape_.empty() || shape_.size() > 4)
            throw std::invalid_argument("Tensor: rank must be 1-4, got shape " +
                                        shape_string(shape_));
        for (std::size_t e : shape_)
            if (e == 0)
                throw std::invalid_argument("Tensor: zero extent in shape " +
                                            shape_string(shape_));
    }

    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace gbx
