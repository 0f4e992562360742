#include "support.hpp"

#include <set>

#include "mvil/data.hpp"
#include "mvil/errors.hpp"
#include "mvil/model.hpp"

using namespace mvil;

namespace {

// Rule evaluator written from the task description alone: decode the question from the
// first text token and count it over the grid.
int brute_force_answer(const Sample& s, std::size_t alphabet) {
    const int question = s.tokens.at(0) - 2 - static_cast<int>(alphabet);
    int count = 0;
    for (int cell : s.grid)
        if (cell == question) ++count;
    return count;
}

}  // namespace

TEST_CASE("same spec and seed give identical datasets") {
    const SyntheticTaskSpec spec{.alphabet_size = 3, .grid_rows = 2, .grid_cols = 3};
    const auto a = generate_dataset(spec, 5), b = generate_dataset(spec, 5);
    CHECK(dataset_to_csv(a) == dataset_to_csv(b));
    CHECK(dataset_to_csv(a) != dataset_to_csv(generate_dataset(spec, 6)));
}

TEST_CASE("every answer agrees with the brute-force rule") {
    for (std::size_t alphabet : {2u, 4u, 7u}) {
        const SyntheticTaskSpec spec{.alphabet_size = alphabet, .grid_rows = 3, .grid_cols = 2, .train_size = 200};
        const auto data = generate_dataset(spec, alphabet);
        for (const auto* split : {&data.train, &data.val, &data.test})
            for (const auto& s : *split) {
                CHECK(s.answer == brute_force_answer(s, alphabet));
                CHECK(s.answer < static_cast<int>(spec.answer_vocab_size()));
            }
    }
}

TEST_CASE("text layout: question, caption of the first row, padding") {
    const SyntheticTaskSpec spec{.alphabet_size = 4, .grid_rows = 2, .grid_cols = 3};
    const auto data = generate_dataset(spec, 1);
    std::set<std::size_t> lengths;
    for (const auto& s : data.train) {
        REQUIRE(s.tokens.size() == spec.text_len());
        CHECK(question_symbol(s.tokens[0], 4) == s.question);
        std::size_t len = 0;
        while (len + 1 < s.tokens.size() && s.tokens[len + 1] != kPadId) {
            CHECK(s.tokens[len + 1] == caption_token(s.grid[len]));
            ++len;
        }
        for (std::size_t j = len + 1; j < s.tokens.size(); ++j) CHECK(s.tokens[j] == kPadId);
        CHECK(len >= 1u);
        lengths.insert(len);
        for (int t : s.tokens) CHECK(t < static_cast<int>(spec.vocab_size()));
    }
    CHECK(lengths.size() == 3u);
}

TEST_CASE("the answer needs both modalities") {
    const SyntheticTaskSpec spec{.alphabet_size = 3, .grid_rows = 2, .grid_cols = 2, .train_size = 200};
    const auto data = generate_dataset(spec, 2);
    bool question_matters = false, grid_matters = false;
    for (const auto& a : data.train)
        for (const auto& b : data.train) {
            if (a.grid == b.grid && a.question != b.question && a.answer != b.answer) question_matters = true;
            if (a.question == b.question && a.grid != b.grid && a.answer != b.answer) grid_matters = true;
        }
    CHECK(question_matters);
    CHECK(grid_matters);
}

TEST_CASE("splits are disjoint by sample id") {
    const auto data = generate_dataset(SyntheticTaskSpec{}, 3);
    std::set<std::uint64_t> ids;
    for (const auto* split : {&data.train, &data.val, &data.test})
        for (const auto& s : *split) CHECK(ids.insert(s.id).second);
    CHECK(ids.size() == 128u);
}

TEST_CASE("patches are one-hot rows") {
    const auto data = generate_dataset(SyntheticTaskSpec{}, 4);
    const auto& s = data.train.front();
    const auto p = s.patches(4);
    CHECK(p.shape() == Shape{4, 4});
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 4; ++c) CHECK(p.at(r, c) == (static_cast<int>(c) == s.grid[r] ? 1.0 : 0.0));
}

TEST_CASE("downsampling floors") {
    CHECK(downsampled_size(64, 0.33) == 21u);
    CHECK(downsampled_size(64, 0.66) == 42u);
    CHECK(downsampled_size(64, 1.0) == 64u);
    CHECK(downsampled_size(100, 0.33) == 33u);
    CHECK_THROWS_AS(downsampled_size(64, 0.0), ConfigError);
    CHECK_THROWS_AS(downsampled_size(64, 1.5), ConfigError);
}

TEST_CASE("inconsistent specs are rejected") {
    CHECK_THROWS_AS(generate_dataset(SyntheticTaskSpec{.alphabet_size = 1}, 0), ConfigError);
    CHECK_THROWS_AS(generate_dataset(SyntheticTaskSpec{.grid_rows = 0}, 0), ConfigError);
}
