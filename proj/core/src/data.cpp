#include "mvil/data.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "mvil/errors.hpp"
#include "mvil/model.hpp"
#include "mvil/rng.hpp"

namespace mvil {

void SyntheticTaskSpec::validate() const {
    if (alphabet_size < 2) throw ConfigError("task: alphabet_size must be at least 2");
    if (grid_rows == 0 || grid_cols == 0) throw ConfigError("task: grid must be non-empty");
    if (train_size == 0) throw ConfigError("task: train_size must be positive");
}

Tensor Sample::patches(std::size_t alphabet_size) const {
    std::vector<double> v(grid.size() * alphabet_size, 0.0);
    for (std::size_t i = 0; i < grid.size(); ++i) v[i * alphabet_size + static_cast<std::size_t>(grid[i])] = 1.0;
    return Tensor::from({grid.size(), alphabet_size}, std::move(v));
}

int caption_token(int symbol) { return 2 + symbol; }

int question_token(int symbol, std::size_t alphabet_size) { return 2 + static_cast<int>(alphabet_size) + symbol; }

int question_symbol(int token, std::size_t alphabet_size) {
    const int first = 2 + static_cast<int>(alphabet_size);
    if (token < first || token >= first + static_cast<int>(alphabet_size)) return -1;
    return token - first;
}

int vqa_answer(int question, std::span<const int> grid) {
    return static_cast<int>(std::count(grid.begin(), grid.end(), question));
}

namespace {

Sample make_sample(const SyntheticTaskSpec& spec, std::uint64_t seed, std::uint64_t id) {
    Rng rng = Rng::derive(seed, id);
    Sample s;
    s.id = id;
    s.grid.resize(spec.num_patches());
    for (auto& cell : s.grid) cell = static_cast<int>(rng.below(spec.alphabet_size));
    s.question = static_cast<int>(rng.below(spec.alphabet_size));
    const std::size_t caption_len = 1 + rng.below(spec.grid_cols);
    s.tokens.assign(spec.text_len(), kPadId);
    s.tokens[0] = question_token(s.question, spec.alphabet_size);
    for (std::size_t j = 0; j < caption_len; ++j) s.tokens[1 + j] = caption_token(s.grid[j]);
    s.answer = vqa_answer(s.question, s.grid);
    return s;
}

}  // namespace

Dataset generate_dataset(const SyntheticTaskSpec& spec, std::uint64_t seed) {
    spec.validate();
    Dataset data;
    data.spec = spec;
    std::uint64_t id = 0;
    for (auto [split, size] : {std::pair{&data.train, spec.train_size}, {&data.val, spec.val_size}, {&data.test, spec.test_size}}) {
        split->reserve(size);
        for (std::size_t i = 0; i < size; ++i) split->push_back(make_sample(spec, seed, id++));
    }
    return data;
}

std::size_t downsampled_size(std::size_t size, double fraction) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError(fmt::format("data fraction {} outside (0, 1]", fraction));
    return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(size)));
}

std::string dataset_to_csv(const Dataset& data) {
    std::string out = "id,split,question,answer,tokens,grid\n";
    auto emit = [&](const std::vector<Sample>& split, const char* name) {
        for (const auto& s : split) {
            out += fmt::format("{},{},{},{},{},{}\n", s.id, name, s.question, s.answer, fmt::join(s.tokens, " "),
                               fmt::join(s.grid, " "));
        }
    };
    emit(data.train, "train");
    emit(data.val, "val");
    emit(data.test, "test");
    return out;
}

}  // namespace mvil
