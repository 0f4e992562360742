#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mvil/tensor.hpp"

namespace mvil {

/// Finite-difference gradient check.
///
/// The oracle evaluates only forward passes: each input entry is nudged by +-step
/// and the scalar loss is differenced centrally. The result is compared with what
/// backward() leaves in the inputs' gradients, per input tensor, as
///   ||analytic - numeric||_2 / max(||analytic||_2, ||numeric||_2, floor).
/// The floor keeps tensors whose true gradient vanishes (e.g. a row bias feeding a
/// layer norm) from turning rounding noise into a large relative error.
struct GradCheckOptions {
    double step = 1e-5;
    double floor = 1e-5;
};

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::string worst;      // label of the input with the largest error
    std::size_t checks = 0; // number of (seed, input) comparisons
};

/// Compares backward() of `loss_fn()` against central differences for every tensor in
/// `inputs` (each must be a requires_grad leaf). Gradients of the inputs are reset.
GradCheckResult check_gradients(const std::function<Tensor()>& loss_fn, std::span<const Tensor> inputs,
                                std::span<const std::string> labels, const GradCheckOptions& options = {});

/// Names accepted by run_gradcheck: primitive operations, the mixing modules, each
/// layer kind (both norm placements), the task heads and losses, and "model".
std::vector<std::string> gradcheck_targets();

/// Runs the check for `target` over `seeds` random draws of inputs and parameters,
/// using the loss sum(R * f(inputs)) for a fixed random R per seed.
/// ConfigError for an unknown target.
GradCheckResult run_gradcheck(std::string_view target, std::size_t seeds, std::uint64_t base_seed = 0,
                              const GradCheckOptions& options = {});

}  // namespace mvil
