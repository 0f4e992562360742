#include "support.hpp"

#include "mvil/errors.hpp"
#include "mvil/gradcheck.hpp"

using namespace mvil;

TEST_CASE("every target passes over 20 seeds") {
    const auto targets = gradcheck_targets();
    for (const char* required : {"channel_ffn", "position_ffn", "multi_head_attention", "tiny_attention", "square_mixing",
                                 "Transformer", "Mlp", "MlpTinyAtt", "TinyAttOnly", "SquareMlp", "mlm_head", "itm_head",
                                 "vqa_head", "nlvr2_head", "mlm_loss", "itm_loss", "vqa_loss", "model"}) {
        CHECK(std::find(targets.begin(), targets.end(), required) != targets.end());
    }
    for (const auto& t : targets) {
        const auto r = run_gradcheck(t, 20, 1);
        CAPTURE(t);
        CAPTURE(r.worst);
        CHECK(r.max_relative_error < 1e-4);
        CHECK(r.checks >= 20u);
    }
}

TEST_CASE("the oracle catches a missing gradient") {
    const auto x = Tensor::vector({0.5, -1.0, 2.0}, true);
    // One factor is detached, so backward sees half of the true derivative 2x.
    auto loss = [x] { return sum(mul(x, x.detach())); };
    const std::string label = "x";
    const auto r = check_gradients(loss, std::span(&x, 1), std::span(&label, 1));
    CHECK(r.max_relative_error == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("the oracle agrees on a hand-differentiated function") {
    const auto x = Tensor::vector({0.3, 1.7}, true);
    auto loss = [x] { return sum(mul(mul(x, x), x)); };
    const std::string label = "x";
    CHECK(check_gradients(loss, std::span(&x, 1), std::span(&label, 1)).max_relative_error < 1e-8);
}

TEST_CASE("unknown targets are rejected") {
    CHECK_THROWS_AS(run_gradcheck("nope", 1), ConfigError);
}
