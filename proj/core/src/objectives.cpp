#include "mvil/objectives.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "mvil/errors.hpp"
#include "mvil/model.hpp"

namespace mvil {

namespace {
constexpr int kMaxMaskRedraws = 64;
}

MlmBatch apply_mlm_mask(const std::vector<std::vector<int>>& token_ids, double rate, Rng& rng) {
    if (!(rate > 0.0 && rate <= 1.0)) throw ContractError(fmt::format("apply_mlm_mask: rate {} outside (0, 1]", rate));
    MlmBatch batch;
    batch.rate = rate;
    batch.tokens = token_ids;
    batch.labels.reserve(token_ids.size());
    for (std::size_t b = 0; b < token_ids.size(); ++b) {
        const auto& seq = token_ids[b];
        std::vector<std::size_t> candidates;
        for (std::size_t i = 0; i < seq.size(); ++i)
            if (seq[i] != kPadId) candidates.push_back(i);
        if (candidates.empty()) throw ContractError(fmt::format("apply_mlm_mask: sequence {} has no non-pad token", b));

        std::vector<std::size_t> chosen;
        for (int attempt = 0; attempt < kMaxMaskRedraws && chosen.empty(); ++attempt) {
            for (auto i : candidates)
                if (rng.bernoulli(rate)) chosen.push_back(i);
        }
        if (chosen.empty()) chosen.push_back(candidates[rng.below(candidates.size())]);

        std::vector<int> labels(seq.size(), kIgnoreLabel);
        for (auto i : chosen) {
            labels[i] = seq[i];
            batch.tokens[b][i] = kMaskId;
        }
        batch.labels.push_back(std::move(labels));
    }
    return batch;
}

ItmBatch apply_itm_corruption(std::size_t batch_size, double p, Rng& rng) {
    if (batch_size < 2) throw ContractError("apply_itm_corruption: a batch of at least 2 pairs is required");
    if (!(p >= 0.0 && p <= 1.0)) throw ContractError(fmt::format("apply_itm_corruption: probability {} outside [0, 1]", p));
    ItmBatch batch;
    batch.replace_probability = p;
    batch.text_source.resize(batch_size);
    batch.labels.resize(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
        if (rng.bernoulli(p)) {
            // Uniform over the other batch_size - 1 pairs.
            std::size_t j = rng.below(batch_size - 1);
            if (j >= i) ++j;
            batch.text_source[i] = j;
            batch.labels[i] = kItmReplaced;
        } else {
            batch.text_source[i] = i;
            batch.labels[i] = kItmMatched;
        }
    }
    return batch;
}

Tensor mlm_loss(const Tensor& logits, std::span<const int> labels) {
    return cross_entropy_rows(logits, labels, kIgnoreLabel);
}

Tensor itm_loss(const Tensor& logits, int label) {
    if (logits.numel() != 2) throw ShapeError(fmt::format("itm_loss: expected 2 logits, got {}", logits.numel()));
    const int target[1] = {label};
    return cross_entropy_rows(logits, target, kIgnoreLabel);
}

Tensor vqa_loss(const Tensor& logits, std::span<const double> targets) {
    for (double t : targets) {
        if (!(t >= 0.0 && t <= 1.0)) throw ContractError(fmt::format("vqa_loss: target score {} outside [0, 1]", t));
    }
    return bce_with_logits(logits, targets);
}

std::size_t argmax(std::span<const double> values) {
    if (values.empty()) throw ContractError("argmax: empty input");
    return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

}  // namespace mvil
