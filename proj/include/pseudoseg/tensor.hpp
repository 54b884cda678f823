#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "pseudoseg/error.hpp"

namespace pseudoseg {

/// Dense row-major tensor. Axis convention is (batch, channel, spatial...).
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(std::vector<std::int64_t> dims, T fill = T{})
        : dims_(std::move(dims)), data_(static_cast<std::size_t>(count(dims_)), fill)
    {
    }
    Tensor(std::vector<std::int64_t> dims, std::vector<T> data) : dims_(std::move(dims)), data_(std::move(data))
    {
        require(static_cast<std::int64_t>(data_.size()) == count(dims_), "tensor data does not match dims " + dims_string());
    }

    const std::vector<std::int64_t>& dims() const { return dims_; }
    std::int64_t dim(std::size_t i) const { return dims_.at(i); }
    std::size_t rank() const { return dims_.size(); }
    std::size_t size() const { return data_.size(); }

    T* ptr() { return data_.data(); }
    const T* ptr() const { return data_.data(); }
    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    /// Same data, new dims with the same element count.
    void reshape(std::vector<std::int64_t> dims)
    {
        require(count(dims) == static_cast<std::int64_t>(data_.size()), "reshape changes element count");
        dims_ = std::move(dims);
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    template <typename U>
    Tensor<U> cast() const
    {
        return Tensor<U>(dims_, std::vector<U>(data_.begin(), data_.end()));
    }

    std::string dims_string() const
    {
        std::string s = "[";
        for (std::size_t i = 0; i < dims_.size(); ++i) s += (i ? "x" : "") + std::to_string(dims_[i]);
        return s + "]";
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

    static std::int64_t count(const std::vector<std::int64_t>& dims)
    {
        for (auto d : dims) require(d >= 0, "tensor dims must be non-negative");
        return std::accumulate(dims.begin(), dims.end(), std::int64_t{1}, std::multiplies<>());
    }

private:
    std::vector<std::int64_t> dims_;
    std::vector<T> data_;
};

} // namespace pseudoseg
