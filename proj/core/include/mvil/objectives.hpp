#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mvil/rng.hpp"
#include "mvil/tensor.hpp"

namespace mvil {

inline constexpr int kIgnoreLabel = -1;

/// Masked copies of a batch of token sequences.
/// labels[b][i] holds the original id where a mask was applied, kIgnoreLabel elsewhere.
struct MlmBatch {
    std::vector<std::vector<int>> tokens;
    std::vector<std::vector<int>> labels;
    double rate = 0.15;
};

/// Pairing after text replacement. text_source[i] is the pair whose text now sits
/// with image i; labels[i] is 1 when text_source[i] == i (matched), 0 otherwise.
struct ItmBatch {
    std::vector<std::size_t> text_source;
    std::vector<int> labels;
    double replace_probability = 0.5;
};

inline constexpr int kItmMatched = 1;
inline constexpr int kItmReplaced = 0;

/// Each non-pad token is selected independently with probability `rate` and replaced
/// by kMaskId. A sequence that ends up with no selection is redrawn; after 64 empty
/// draws a single uniformly chosen non-pad token is masked instead.
/// ContractError for rate outside (0, 1] or a sequence with no non-pad token.
MlmBatch apply_mlm_mask(const std::vector<std::vector<int>>& token_ids, double rate, Rng& rng);

/// With probability p, pair i takes the text of another pair chosen uniformly from
/// the rest of the batch (never its own). ContractError for batches smaller than 2.
ItmBatch apply_itm_corruption(std::size_t batch_size, double p, Rng& rng);

/// Softmax cross-entropy averaged over the rows whose label is not kIgnoreLabel.
Tensor mlm_loss(const Tensor& logits, std::span<const int> labels);
/// Two-way softmax cross-entropy for a single [1 x 2] logit row.
Tensor itm_loss(const Tensor& logits, int label);
/// Sigmoid binary cross-entropy summed over the answer vocabulary.
Tensor vqa_loss(const Tensor& logits, std::span<const double> targets);

/// Index of the largest entry, lowest index on ties.
std::size_t argmax(std::span<const double> values);

}  // namespace mvil
