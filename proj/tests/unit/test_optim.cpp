#include "support.hpp"

#include "mvil/errors.hpp"
#include "mvil/optim.hpp"

using namespace mvil;

namespace {

double one_step(double g, const AdamWHyper& h, OptimizerState& state, Tensor& p) {
    std::vector<Tensor> params{p};
    std::vector<std::vector<double>> grads{{g}};
    adamw_step(params, grads, state, h);
    return p.values()[0];
}

}  // namespace

TEST_CASE("lr = 0 and no decay leave parameters unchanged") {
    auto p = Tensor::vector({0.3, -1.2}, true);
    OptimizerState state;
    std::vector<Tensor> params{p};
    std::vector<std::vector<double>> grads{{5.0, -7.0}};
    adamw_step(params, grads, state, AdamWHyper{.lr = 0.0, .weight_decay = 0.0});
    CHECK(p.values()[0] == 0.3);
    CHECK(p.values()[1] == -1.2);
}

TEST_CASE("zero gradient applies decoupled decay only") {
    auto p = Tensor::vector({2.0, -4.0}, true);
    OptimizerState state;
    std::vector<Tensor> params{p};
    std::vector<std::vector<double>> grads{{0.0, 0.0}};
    const AdamWHyper h{.lr = 0.1, .weight_decay = 0.5};
    adamw_step(params, grads, state, h);
    CHECK(p.values()[0] == doctest::Approx(2.0 * (1 - 0.05)).epsilon(1e-15));
    CHECK(p.values()[1] == doctest::Approx(-4.0 * (1 - 0.05)).epsilon(1e-15));
}

TEST_CASE("first and second steps match a hand-evaluated recurrence") {
    // theta0 = 0.5, g1 = 1, g2 = -2, lr = 1e-3, wd = 0.01, defaults otherwise.
    // Step 1: mhat = 1, vhat = 1, theta1 = 0.5(1 - 1e-5) - 1e-3 / (1 + 1e-8).
    // Values below were evaluated with 30-digit arithmetic.
    const AdamWHyper h{.lr = 1e-3, .weight_decay = 0.01};
    auto p = Tensor::vector({0.5}, true);
    OptimizerState state;
    CHECK(std::abs(one_step(1.0, h, state, p) - 0.498995000009999999900) < 1e-15);
    CHECK(std::abs(one_step(-2.0, h, state, p) - 0.499356113584720650882) < 1e-15);
    CHECK(state.step == 2u);
}

TEST_CASE("shape mismatch is a contract error") {
    auto p = Tensor::vector({1.0, 2.0}, true);
    OptimizerState state;
    std::vector<Tensor> params{p};
    std::vector<std::vector<double>> grads{{1.0}};
    CHECK_THROWS_AS(adamw_step(params, grads, state, AdamWHyper{}), ContractError);
}

TEST_CASE("parameters without a gradient are skipped") {
    auto p = Tensor::vector({1.0}, true);
    OptimizerState state;
    std::vector<Tensor> params{p};
    std::vector<std::vector<double>> grads{{}};
    adamw_step(params, grads, state, AdamWHyper{});
    CHECK(p.values()[0] == 1.0);
}

TEST_CASE("AdamW groups use their own learning rates and read tensor gradients") {
    auto a = Tensor::vector({1.0}, true);
    auto b = Tensor::vector({1.0}, true);
    AdamW opt({{{a}, AdamWHyper{.lr = 0.1, .weight_decay = 0.0}}, {{b}, AdamWHyper{.lr = 0.01, .weight_decay = 0.0}}});
    backward(sum(add(a, b)));
    opt.step();
    // First step moves each parameter by lr / (1 + eps).
    CHECK(std::abs(a.values()[0] - (1.0 - 0.1 / (1.0 + 1e-8))) < 1e-15);
    CHECK(std::abs(b.values()[0] - (1.0 - 0.01 / (1.0 + 1e-8))) < 1e-15);
    opt.zero_grad();
    CHECK(a.grad()[0] == 0.0);
    CHECK(opt.step_count() == 1u);
}

TEST_CASE("invalid hyperparameters are rejected") {
    CHECK_THROWS_AS(AdamWHyper{.lr = -1.0}.validate(), ConfigError);
    CHECK_THROWS_AS(AdamWHyper{.beta1 = 1.0}.validate(), ConfigError);
}
