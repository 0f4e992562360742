#include "support.hpp"

#include "mvil/errors.hpp"
#include "mvil/model.hpp"
#include "mvil/objectives.hpp"

using namespace mvil;

namespace {

std::vector<std::vector<int>> sequences(std::size_t count, std::size_t len, Rng& rng) {
    std::vector<std::vector<int>> out(count, std::vector<int>(len));
    for (auto& s : out)
        for (auto& t : s) t = 2 + static_cast<int>(rng.below(8));
    return out;
}

std::size_t masked_count(const MlmBatch& b) {
    std::size_t n = 0;
    for (const auto& row : b.labels)
        for (int l : row) n += l != kIgnoreLabel;
    return n;
}

}  // namespace

TEST_SUITE("mlm masking") {
    TEST_CASE("masked positions carry the mask id and the original as label") {
        Rng rng(1);
        const auto seqs = sequences(20, 12, rng);
        const auto b = apply_mlm_mask(seqs, 0.3, rng);
        for (std::size_t i = 0; i < seqs.size(); ++i)
            for (std::size_t j = 0; j < seqs[i].size(); ++j) {
                if (b.labels[i][j] == kIgnoreLabel) {
                    CHECK(b.tokens[i][j] == seqs[i][j]);
                } else {
                    CHECK(b.tokens[i][j] == kMaskId);
                    CHECK(b.labels[i][j] == seqs[i][j]);
                }
            }
    }

    TEST_CASE("a vanishing rate still masks exactly one token per sequence") {
        Rng rng(2);
        const auto b = apply_mlm_mask(sequences(50, 6, rng), 1e-12, rng);
        for (const auto& row : b.labels) {
            int n = 0;
            for (int l : row) n += l != kIgnoreLabel;
            CHECK(n == 1);
        }
    }

    TEST_CASE("rate 1 masks every non-pad token and never a pad") {
        Rng rng(3);
        std::vector<std::vector<int>> seqs{{5, 6, kPadId, kPadId}, {4, kPadId, 7, 3}};
        const auto b = apply_mlm_mask(seqs, 1.0, rng);
        CHECK(b.tokens[0] == std::vector<int>{kMaskId, kMaskId, kPadId, kPadId});
        CHECK(b.tokens[1] == std::vector<int>{kMaskId, kPadId, kMaskId, kMaskId});
        CHECK(b.labels[0][2] == kIgnoreLabel);
    }

    TEST_CASE("10,000 tokens at 0.15 fall inside the 99.9% binomial interval") {
        // Binomial(10000, 0.15) central 99.9% interval: [1386, 1616].
        Rng rng(4);
        const auto b = apply_mlm_mask(sequences(100, 100, rng), 0.15, rng);
        const auto n = masked_count(b);
        CHECK(n >= 1386u);
        CHECK(n <= 1616u);
    }

    TEST_CASE("same seed gives the same masks") {
        Rng data(5);
        const auto seqs = sequences(10, 10, data);
        Rng a(6), b(6);
        CHECK(apply_mlm_mask(seqs, 0.15, a).tokens == apply_mlm_mask(seqs, 0.15, b).tokens);
    }

    TEST_CASE("invalid input") {
        Rng rng(7);
        CHECK_THROWS_AS(apply_mlm_mask({{kPadId, kPadId}}, 0.15, rng), ContractError);
        CHECK_THROWS_AS(apply_mlm_mask({{3, 4}}, 0.0, rng), ContractError);
        CHECK_THROWS_AS(apply_mlm_mask({{3, 4}}, 1.5, rng), ContractError);
    }
}

TEST_SUITE("itm corruption") {
    TEST_CASE("p = 0 keeps every pair") {
        Rng rng(8);
        const auto b = apply_itm_corruption(16, 0.0, rng);
        for (std::size_t i = 0; i < 16; ++i) {
            CHECK(b.text_source[i] == i);
            CHECK(b.labels[i] == kItmMatched);
        }
    }

    TEST_CASE("p = 1 replaces every pair with another pair's text") {
        Rng rng(9);
        const auto b = apply_itm_corruption(16, 1.0, rng);
        for (std::size_t i = 0; i < 16; ++i) {
            CHECK(b.text_source[i] != i);
            CHECK(b.text_source[i] < 16u);
            CHECK(b.labels[i] == kItmReplaced);
        }
    }

    TEST_CASE("10,000 pairs at 0.5 fall inside the 99.9% binomial interval") {
        // Binomial(10000, 0.5) central 99.9% interval: [4836, 5164].
        Rng rng(10);
        const auto b = apply_itm_corruption(10000, 0.5, rng);
        std::size_t replaced = 0;
        for (std::size_t i = 0; i < b.labels.size(); ++i) {
            replaced += b.labels[i] == kItmReplaced;
            CHECK((b.labels[i] == kItmMatched) == (b.text_source[i] == i));
        }
        CHECK(replaced >= 4836u);
        CHECK(replaced <= 5164u);
    }

    TEST_CASE("replacement text is uniform over the other pairs") {
        Rng rng(11);
        std::vector<int> counts(4, 0);
        const int trials = 30000;
        for (int t = 0; t < trials; ++t) ++counts[apply_itm_corruption(4, 1.0, rng).text_source[0]];
        CHECK(counts[0] == 0);
        // Each of 3 choices: Binomial(30000, 1/3), 99.9% band is about +-269.
        for (int i = 1; i < 4; ++i) CHECK(std::abs(counts[i] - 10000) < 270);
    }

    TEST_CASE("a batch of one cannot be corrupted") {
        Rng rng(12);
        CHECK_THROWS_AS(apply_itm_corruption(1, 0.5, rng), ContractError);
    }
}

TEST_SUITE("losses") {
    TEST_CASE("uniform MLM logits give ln V") {
        const std::vector<int> labels{kIgnoreLabel, 3, 0};
        CHECK(std::abs(mlm_loss(Tensor::zeros({3, 9}), labels).item() - std::log(9.0)) < 1e-14);
    }

    TEST_CASE("MLM without labels is rejected") {
        const std::vector<int> labels{kIgnoreLabel, kIgnoreLabel};
        CHECK_THROWS_AS(mlm_loss(Tensor::zeros({2, 4}), labels), ContractError);
    }

    TEST_CASE("ITM loss vanishes with a wide margin") {
        CHECK(itm_loss(Tensor::matrix({{-10, 10}}), kItmMatched).item() < 1e-8);
        CHECK(itm_loss(Tensor::matrix({{10, -10}}), kItmReplaced).item() < 1e-8);
        CHECK(std::abs(itm_loss(Tensor::matrix({{0, 0}}), kItmMatched).item() - std::log(2.0)) < 1e-15);
    }

    TEST_CASE("VQA with zero logits and a one-hot target of four answers is 4 ln 2") {
        const std::vector<double> target{0, 0, 1, 0};
        CHECK(std::abs(vqa_loss(Tensor::zeros({1, 4}), target).item() - 2.772588722239781237669) < 1e-14);
    }

    TEST_CASE("VQA loss approaches zero only at the target") {
        const std::vector<double> target{0, 1, 0};
        CHECK(vqa_loss(Tensor::matrix({{-40, 40, -40}}), target).item() < 1e-15);
        CHECK(vqa_loss(Tensor::matrix({{40, -40, -40}}), target).item() > 1.0);
        const std::vector<double> bad{0, 1.5, 0};
        CHECK_THROWS_AS(vqa_loss(Tensor::zeros({1, 3}), bad), ContractError);
    }

    TEST_CASE("losses are non-negative") {
        Rng rng(13);
        for (int t = 0; t < 100; ++t) {
            const auto logits = mvil::test::random_tensor({3, 5}, rng, 5.0);
            const std::vector<int> labels{static_cast<int>(rng.below(5)), kIgnoreLabel, static_cast<int>(rng.below(5))};
            CHECK(mlm_loss(logits, labels).item() >= 0.0);
            CHECK(itm_loss(mvil::test::random_tensor({1, 2}, rng, 5.0), static_cast<int>(rng.below(2))).item() >= 0.0);
            std::vector<double> target(5);
            for (auto& v : target) v = rng.uniform();
            CHECK(vqa_loss(mvil::test::random_tensor({1, 5}, rng, 5.0), target).item() >= 0.0);
        }
    }

    TEST_CASE("argmax takes the lowest index on ties") {
        const std::vector<double> v{1.0, 3.0, 3.0, 2.0};
        CHECK(argmax(v) == 1u);
        const std::vector<double> flat{0.0, 0.0};
        CHECK(argmax(flat) == 0u);
    }
}
