#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pseudoseg/tensor.hpp"

namespace pseudoseg::nn {

/// A learnable tensor and its accumulated gradient.
template <typename T>
struct Param {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;

    Param() = default;
    Param(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.dims()) {}
    void zero_grad() { grad.fill(T{}); }
};

/// Adaptive-moment gradient descent.
template <typename T>
class Adam {
public:
    struct Options {
        double lr = 1e-3;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    explicit Adam(Options o) : opt_(o) {}

    void step(std::vector<Param<T>>& params)
    {
        if (m_.empty()) {
            for (const auto& p : params) {
                m_.emplace_back(p.value.size(), 0.0);
                v_.emplace_back(p.value.size(), 0.0);
            }
        }
        ++t_;
        const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
        for (std::size_t k = 0; k < params.size(); ++k) {
            auto& p = params[k];
            auto& m = m_[k];
            auto& v = v_[k];
            for (std::size_t i = 0; i < p.value.size(); ++i) {
                const double g = static_cast<double>(p.grad[i]);
                m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g;
                v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g * g;
                const double update = opt_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + opt_.eps);
                p.value[i] = static_cast<T>(static_cast<double>(p.value[i]) - update);
            }
        }
    }

    std::int64_t steps() const { return t_; }

private:
    Options opt_;
    std::vector<std::vector<double>> m_, v_;
    std::int64_t t_ = 0;
};

} // namespace pseudoseg::nn
