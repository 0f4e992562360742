#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mvil/layers.hpp"
#include "mvil/rng.hpp"
#include "mvil/tensor.hpp"

namespace mvil {

inline constexpr int kPadId = 0;
inline constexpr int kMaskId = 1;

enum class VisionEncoderKind { PatchLinearOnly, MixerBlocks };
enum class Pooling { Cls, Average };
enum class PositionTag { Cls, Text, Vision, Pad };

std::string_view to_string(Pooling pooling);
Pooling parse_pooling(std::string_view text);

struct HeadSet {
    bool mlm = true;
    bool itm = true;
    bool vqa = true;
    bool nlvr2 = false;
};

/// Complete description of a model: toy encoders, fusion stack and task heads.
///
/// The fused sequence is [CLS] + text_len text rows + grid_rows*grid_cols patch rows;
/// every fusion layer is configured for exactly that n and the shared width d.
struct ModelConfig {
    std::size_t vocab_size = 0;
    std::size_t answer_vocab_size = 0;
    std::size_t text_len = 0;
    std::size_t grid_rows = 0;
    std::size_t grid_cols = 0;
    std::size_t patch_dim = 0;
    std::size_t d = 0;

    VisionEncoderKind vision_encoder = VisionEncoderKind::PatchLinearOnly;
    std::size_t vision_blocks = 0;  // MixerBlocks count
    std::size_t vision_h = 0;       // channel hidden width of the vision blocks
    std::size_t vision_h_pos = 0;   // position hidden width of the vision blocks

    std::vector<FusionLayerConfig> fusion_layers;
    Pooling pooling = Pooling::Cls;
    HeadSet heads;
    bool position_embeddings = true;
    std::size_t vqa_hidden = 0;
    std::size_t nlvr2_hidden = 0;

    std::size_t num_patches() const { return grid_rows * grid_cols; }
    std::size_t seq_len() const { return 1 + text_len + num_patches(); }
    /// Config of one Mixer-style vision block (an Mlp layer over the patch positions).
    FusionLayerConfig vision_block_config() const;

    void validate() const;
};

/// Template for a homogeneous stack; the returned configs share the model's n and d.
std::vector<FusionLayerConfig> uniform_stack(const FusionLayerConfig& layer, std::size_t count);

struct SequenceState {
    Tensor features;                // [n x d]
    std::vector<PositionTag> tags;  // per position
    std::vector<bool> valid;        // false exactly at Pad positions
};

struct ModelOutput {
    SequenceState sequence;
    Tensor hidden;  // [n x d]
    Tensor pooled;  // [1 x d]
};

/// Cls: row 0. Average: mean over rows whose `valid` flag is set.
Tensor pool(const Tensor& hidden, Pooling mode, const std::vector<bool>& valid);

/// Applies the layers in order. ContractError when a layer's n or d differs from the input.
Tensor fusion_forward(std::span<const FusionLayerConfig> configs, std::span<const LayerParams> params, const Tensor& x);

class Model {
public:
    /// Random initialization.
    Model(ModelConfig config, Rng& rng);

    const ModelConfig& config() const noexcept { return config_; }

    /// Embedding lookup plus the text type embedding. Shorter inputs are right-padded
    /// with kPadId. VocabularyError for ids outside the vocabulary.
    Tensor encode_text(std::span<const int> token_ids) const;

    /// Patch projection, optional Mixer blocks, then the vision type embedding.
    Tensor encode_vision(const Tensor& patches) const;

    /// CLS row, text rows, vision rows, position embeddings; pad rows zeroed.
    SequenceState assemble_sequence(const Tensor& text_features, const Tensor& vision_features,
                                    std::span<const int> token_ids) const;

    Tensor fusion_forward(const Tensor& x) const;
    Tensor pool(const Tensor& hidden, const SequenceState& seq) const;

    Tensor mlm_head(const Tensor& hidden) const;    // [n x vocab]
    Tensor itm_head(const Tensor& pooled) const;    // [1 x 2]
    Tensor vqa_head(const Tensor& pooled) const;    // [1 x answers]
    Tensor nlvr2_pair_head(const Tensor& pooled_a, const Tensor& pooled_b) const;  // [1 x 2]

    /// Encoders, assembly, fusion stack and pooling for one sample.
    ModelOutput forward(std::span<const int> token_ids, const Tensor& patches) const;

    /// Every trainable tensor with a stable, unique name, in a fixed order.
    std::vector<NamedTensor> parameters() const;
    std::size_t parameter_count() const;
    /// True for text/vision encoder parameters (the lower learning-rate group).
    static bool is_encoder_parameter(std::string_view name);

    const std::vector<LayerParams>& fusion_params() const noexcept { return fusion_; }
    const std::vector<LayerParams>& vision_block_params() const noexcept { return vision_blocks_; }

    void zero_grad();

private:
    ModelConfig config_;
    std::size_t vqa_hidden_ = 0;
    std::size_t nlvr2_hidden_ = 0;

    Tensor text_embed_, text_type_;
    Tensor patch_proj_, patch_bias_, vision_type_;
    std::vector<LayerParams> vision_blocks_;
    Tensor cls_, positions_;
    std::vector<LayerParams> fusion_;
    Tensor mlm_w_, mlm_b_;
    Tensor itm_w_, itm_b_;
    Tensor vqa_w1_, vqa_b1_, vqa_w2_, vqa_b2_;
    Tensor nlvr2_w1_, nlvr2_b1_, nlvr2_w2_, nlvr2_b2_;
};

}  // namespace mvil
