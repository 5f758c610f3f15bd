#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "coms2t/errors.hpp"

namespace coms2t {

/// Dense row-major array of doubles with up to 4 dimensions.
/// All model tensors, datasets and ledgers are stored in this type.
class NDArray {
public:
    NDArray() = default;

    explicit NDArray(std::vector<std::size_t> shape)
        : shape_(std::move(shape)),
          data_(count(shape_), 0.0) {}

    NDArray(std::vector<std::size_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != count(shape_))
            throw ShapeError("NDArray: data size does not match shape");
    }

    static NDArray zeros(std::vector<std::size_t> shape) { return NDArray(std::move(shape)); }

    static NDArray full(std::vector<std::size_t> shape, double v) {
        NDArray a(std::move(shape));
        for (auto& x : a.data_) x = v;
        return a;
    }

    static NDArray scalar(double v) { return NDArray({1}, {v}); }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_[i]; }
    std::size_t size() const { return data_.size(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& raw() { return data_; }
    const std::vector<double>& raw() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::size_t i) { return data_[i]; }
    double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double& at(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
        return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }
    double at(std::size_t i) const { return data_[i]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    double at(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
        return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }

    bool same_shape(const NDArray& o) const { return shape_ == o.shape_; }

    void fill(double v) { for (auto& x : data_) x = v; }

    static std::size_t count(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        return shape.empty() ? 0 : n;
    }

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

/// FNV-1a over the raw bytes of a list of arrays. Used for the bit-exact
/// freeze and stage-isolation checks.
inline std::uint64_t fnv1a64(const double* p, std::size_t n, std::uint64_t h = 1469598103934665603ull) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n * sizeof(double); ++i) {
        h ^= bytes[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t hash_array(const NDArray& a, std::uint64_t h = 1469598103934665603ull) {
    return fnv1a64(a.data(), a.size(), h);
}

}  // namespace coms2t
