#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mvil/tensor.hpp"

namespace mvil {

struct AdamWHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;

    void validate() const;
};

/// Moments are allocated (zero-filled) on the first step that touches a parameter.
struct OptimizerState {
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;
    std::uint64_t step = 0;
};

/// One AdamW step with decoupled weight decay and bias correction:
///   theta <- theta * (1 - lr * wd)
///   theta <- theta - lr * mhat / (sqrt(vhat) + eps)
/// `grads[i]` must have params[i].numel() entries; an empty gradient skips that
/// parameter (it was not reached by backward). Increments state.step.
void adamw_step(std::span<Tensor> params, std::span<const std::vector<double>> grads, OptimizerState& state,
                const AdamWHyper& hyper);

/// Parameter groups with their own hyperparameters, stepping from each tensor's grad.
class AdamW {
public:
    struct Group {
        std::vector<Tensor> params;
        AdamWHyper hyper;
    };

    explicit AdamW(std::vector<Group> groups);

    void step();
    void zero_grad();
    std::uint64_t step_count() const noexcept { return steps_; }
    const std::vector<Group>& groups() const noexcept { return groups_; }

private:
    std::vector<Group> groups_;
    std::vector<OptimizerState> states_;
    std::uint64_t steps_ = 0;
};

}  // namespace mvil
