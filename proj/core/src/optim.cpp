#include "mvil/optim.hpp"

#include <cmath>

#include <fmt/format.h>

#include "mvil/errors.hpp"

namespace mvil {

void AdamWHyper::validate() const {
    if (!(lr >= 0.0)) throw ConfigError(fmt::format("adamw: learning rate must be >= 0, got {}", lr));
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
        throw ConfigError(fmt::format("adamw: betas must lie in (0, 1), got ({}, {})", beta1, beta2));
    }
    if (!(eps > 0.0)) throw ConfigError("adamw: eps must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("adamw: weight decay must be >= 0");
}

void adamw_step(std::span<Tensor> params, std::span<const std::vector<double>> grads, OptimizerState& state,
                const AdamWHyper& hyper) {
    if (params.size() != grads.size()) {
        throw ContractError(fmt::format("adamw_step: {} parameters but {} gradients", params.size(), grads.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!grads[i].empty() && grads[i].size() != params[i].numel()) {
            throw ContractError(fmt::format("adamw_step: gradient {} has {} entries for parameter of shape {}", i,
                                            grads[i].size(), shape_to_string(params[i].shape())));
        }
    }
    state.first_moment.resize(params.size());
    state.second_moment.resize(params.size());
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(hyper.beta1, t);
    const double bc2 = 1.0 - std::pow(hyper.beta2, t);
    const double decay = 1.0 - hyper.lr * hyper.weight_decay;

    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& g = grads[i];
        if (g.empty()) continue;
        auto& m = state.first_moment[i];
        auto& v = state.second_moment[i];
        if (m.empty()) {
            m.assign(g.size(), 0.0);
            v.assign(g.size(), 0.0);
        }
        auto theta = params[i].mutable_values();
        for (std::size_t j = 0; j < g.size(); ++j) {
            m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * g[j];
            v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            theta[j] = theta[j] * decay - hyper.lr * mhat / (std::sqrt(vhat) + hyper.eps);
        }
    }
}

AdamW::AdamW(std::vector<Group> groups) : groups_(std::move(groups)), states_(groups_.size()) {
    for (const auto& g : groups_) g.hyper.validate();
}

void AdamW::step() {
    for (std::size_t k = 0; k < groups_.size(); ++k) {
        auto& group = groups_[k];
        std::vector<std::vector<double>> grads;
        grads.reserve(group.params.size());
        for (const auto& p : group.params) {
            grads.emplace_back(p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end()) : std::vector<double>{});
        }
        adamw_step(group.params, grads, states_[k], group.hyper);
    }
    ++steps_;
}

void AdamW::zero_grad() {
    for (auto& group : groups_)
        for (auto& p : group.params) p.zero_grad();
}

}  // namespace mvil
