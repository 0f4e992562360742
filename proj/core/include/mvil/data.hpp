#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mvil/tensor.hpp"

namespace mvil {

/// Desk-scale cross-modal task.
///
/// Each image is a grid of symbols from an alphabet of size S, encoded one-hot per
/// patch. The text is a question token followed by a caption naming a prefix of the
/// grid's first row. The VQA answer is how often the question symbol occurs in the
/// whole grid, so it needs both the question (text) and the grid (image).
///
/// Vocabulary: 0 pad, 1 mask, 2..2+S caption symbols, 2+S..2+2S question symbols.
struct SyntheticTaskSpec {
    std::size_t alphabet_size = 4;
    std::size_t grid_rows = 2;
    std::size_t grid_cols = 2;
    std::size_t train_size = 64;
    std::size_t val_size = 32;
    std::size_t test_size = 32;

    std::size_t num_patches() const { return grid_rows * grid_cols; }
    std::size_t vocab_size() const { return 2 + 2 * alphabet_size; }
    std::size_t answer_vocab_size() const { return num_patches() + 1; }
    std::size_t patch_dim() const { return alphabet_size; }
    std::size_t text_len() const { return 1 + grid_cols; }

    void validate() const;
};

struct Sample {
    std::uint64_t id = 0;
    std::vector<int> grid;    // symbol per patch, row-major
    int question = 0;         // symbol being asked about
    std::vector<int> tokens;  // text_len ids, right-padded
    int answer = 0;

    /// [P x S] one-hot patch features.
    Tensor patches(std::size_t alphabet_size) const;
};

struct Dataset {
    SyntheticTaskSpec spec;
    std::vector<Sample> train;
    std::vector<Sample> val;
    std::vector<Sample> test;
};

int caption_token(int symbol);
int question_token(int symbol, std::size_t alphabet_size);
/// Inverse of question_token; -1 when `token` is not a question token.
int question_symbol(int token, std::size_t alphabet_size);

/// Number of cells of `grid` holding `question`.
int vqa_answer(int question, std::span<const int> grid);

/// Deterministic in (spec, seed). Sample ids are 0.. across train, val, test in that
/// order, and each sample depends only on (seed, id).
Dataset generate_dataset(const SyntheticTaskSpec& spec, std::uint64_t seed);

/// First floor(fraction * size) training samples; used by the data-scaling sweep.
std::size_t downsampled_size(std::size_t size, double fraction);

/// CSV rows "id,split,question,answer,tokens,grid" with space-separated lists.
std::string dataset_to_csv(const Dataset& data);

}  // namespace mvil
