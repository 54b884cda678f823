#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pseudoseg/tensor.hpp"

namespace pseudoseg::nn {

/// A differentiable op expressed over a list of double tensors (inputs and
/// parameters alike). `backward` receives the upstream gradient of the
/// output and returns one gradient tensor per argument; an empty tensor
/// marks an argument that is not differentiated.
struct CheckedOp {
    std::string name;
    std::function<Tensor<double>(const std::vector<Tensor<double>>&)> forward;
    std::function<std::vector<Tensor<double>>(const std::vector<Tensor<double>>&, const Tensor<double>&)> backward;
};

struct GradCheckOptions {
    double h = 1e-5;
    double tolerance = 1e-4;
    /// Tensors up to this many total coordinates are checked exhaustively;
    /// larger ones are checked on `sample_size` random coordinates.
    std::size_t exhaustive_limit = 2000;
    std::size_t sample_size = 400;
    std::uint64_t seed = 0x5eed;
};

struct GradCheckReport {
    std::string op;
    double max_rel_error = 0;
    double tolerance = 0;
    bool pass = false;
    std::size_t coordinates = 0;
    std::string worst; ///< "arg[i]" location of max_rel_error
};

/// Compares analytic gradients of L = sum(r * op(args)), r a fixed random
/// projection, against central differences with step h. Relative error uses
/// denominator max(|analytic|, |numeric|, 1e-8). Throws NumericalError on
/// non-finite values.
GradCheckReport grad_check(const CheckedOp& op, const std::vector<Tensor<double>>& point,
                           const GradCheckOptions& options = {});

} // namespace pseudoseg::nn
