#include "mvil/model.hpp"

#include <cmath>

#include <fmt/format.h>

#include "mvil/errors.hpp"

namespace mvil {

std::string_view to_string(Pooling pooling) { return pooling == Pooling::Cls ? "cls" : "average"; }

Pooling parse_pooling(std::string_view text) {
    if (text == "cls") return Pooling::Cls;
    if (text == "average" || text == "avg") return Pooling::Average;
    throw ConfigError(fmt::format("unknown pooling '{}'", text));
}

FusionLayerConfig ModelConfig::vision_block_config() const {
    FusionLayerConfig c;
    c.kind = LayerKind::Mlp;
    c.d = d;
    c.n = num_patches();
    c.h = vision_h;
    c.h_pos = vision_h_pos;
    return c;
}

void ModelConfig::validate() const {
    if (d == 0) throw ConfigError("model: d must be positive");
    if (vocab_size < 3) throw ConfigError("model: vocab_size must cover pad, mask and at least one word");
    if (text_len == 0) throw ConfigError("model: text_len must be positive");
    if (grid_rows == 0 || grid_cols == 0) throw ConfigError("model: patch grid must be non-empty");
    if (patch_dim == 0) throw ConfigError("model: patch_dim must be positive");
    if (heads.vqa && answer_vocab_size == 0) throw ConfigError("model: VQA head needs answer_vocab_size > 0");
    if (vision_encoder == VisionEncoderKind::MixerBlocks && vision_blocks > 0) vision_block_config().validate();
    for (std::size_t i = 0; i < fusion_layers.size(); ++i) {
        const auto& layer = fusion_layers[i];
        if (layer.n != seq_len() || layer.d != d) {
            throw ConfigError(fmt::format("fusion layer {} is configured for [{}x{}] but the sequence is [{}x{}]", i,
                                          layer.n, layer.d, seq_len(), d));
        }
        layer.validate();
    }
}

std::vector<FusionLayerConfig> uniform_stack(const FusionLayerConfig& layer, std::size_t count) {
    return std::vector<FusionLayerConfig>(count, layer);
}

Tensor pool(const Tensor& hidden, Pooling mode, const std::vector<bool>& valid) {
    if (mode == Pooling::Cls) return slice_rows(hidden, 0, 1);
    return mean_rows(hidden, valid);
}

Tensor fusion_forward(std::span<const FusionLayerConfig> configs, std::span<const LayerParams> params, const Tensor& x) {
    if (configs.size() != params.size()) {
        throw ContractError(fmt::format("fusion_forward: {} layer configs but {} parameter sets", configs.size(), params.size()));
    }
    Tensor h = x;
    for (std::size_t i = 0; i < configs.size(); ++i) {
        if (configs[i].n != h.rows() || configs[i].d != h.cols()) {
            throw ContractError(fmt::format("fusion_forward: layer {} expects [{}x{}], input is {}", i, configs[i].n,
                                            configs[i].d, shape_to_string(h.shape())));
        }
        h = layer_forward(configs[i], params[i], h);
    }
    return h;
}

namespace {

Tensor normal_param(Shape shape, double stddev, Rng& rng) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.normal(0.0, stddev);
    return Tensor::from(std::move(shape), std::move(v), true);
}

double fan_in_std(std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

constexpr double kEmbedStd = 0.02;

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) { return add_row_bias(matmul(x, w), b); }

}  // namespace

Model::Model(ModelConfig config, Rng& rng) : config_(std::move(config)) {
    config_.validate();
    const auto& c = config_;
    const std::size_t d = c.d;
    vqa_hidden_ = c.vqa_hidden ? c.vqa_hidden : 2 * d;
    nlvr2_hidden_ = c.nlvr2_hidden ? c.nlvr2_hidden : 2 * d;

    text_embed_ = normal_param({c.vocab_size, d}, kEmbedStd, rng);
    text_type_ = normal_param({d}, kEmbedStd, rng);
    patch_proj_ = normal_param({c.patch_dim, d}, fan_in_std(c.patch_dim), rng);
    patch_bias_ = Tensor::zeros({d}, true);
    if (c.vision_encoder == VisionEncoderKind::MixerBlocks) {
        for (std::size_t i = 0; i < c.vision_blocks; ++i) vision_blocks_.push_back(init_layer_params(c.vision_block_config(), rng));
    }
    vision_type_ = normal_param({d}, kEmbedStd, rng);
    cls_ = normal_param({1, d}, kEmbedStd, rng);
    if (c.position_embeddings) positions_ = normal_param({c.seq_len() - 1, d}, kEmbedStd, rng);
    for (const auto& layer : c.fusion_layers) fusion_.push_back(init_layer_params(layer, rng));

    if (c.heads.mlm) {
        mlm_w_ = normal_param({d, c.vocab_size}, fan_in_std(d), rng);
        mlm_b_ = Tensor::zeros({c.vocab_size}, true);
    }
    if (c.heads.itm) {
        itm_w_ = normal_param({d, 2}, fan_in_std(d), rng);
        itm_b_ = Tensor::zeros({2}, true);
    }
    if (c.heads.vqa) {
        vqa_w1_ = normal_param({d, vqa_hidden_}, fan_in_std(d), rng);
        vqa_b1_ = Tensor::zeros({vqa_hidden_}, true);
        vqa_w2_ = normal_param({vqa_hidden_, c.answer_vocab_size}, fan_in_std(vqa_hidden_), rng);
        vqa_b2_ = Tensor::zeros({c.answer_vocab_size}, true);
    }
    if (c.heads.nlvr2) {
        nlvr2_w1_ = normal_param({2 * d, nlvr2_hidden_}, fan_in_std(2 * d), rng);
        nlvr2_b1_ = Tensor::zeros({nlvr2_hidden_}, true);
        nlvr2_w2_ = normal_param({nlvr2_hidden_, 2}, fan_in_std(nlvr2_hidden_), rng);
        nlvr2_b2_ = Tensor::zeros({2}, true);
    }
}

Tensor Model::encode_text(std::span<const int> token_ids) const {
    if (token_ids.size() > config_.text_len) {
        throw ContractError(fmt::format("encode_text: {} tokens exceed text_len={}", token_ids.size(), config_.text_len));
    }
    std::vector<int> ids(token_ids.begin(), token_ids.end());
    ids.resize(config_.text_len, kPadId);
    return add_row_bias(embedding(text_embed_, ids), text_type_);
}

Tensor Model::encode_vision(const Tensor& patches) const {
    if (patches.rank() != 2 || patches.rows() != config_.num_patches() || patches.cols() != config_.patch_dim) {
        throw ContractError(fmt::format("encode_vision: expected [{}x{}] patches, got {}", config_.num_patches(),
                                        config_.patch_dim, shape_to_string(patches.shape())));
    }
    Tensor x = affine(patches, patch_proj_, patch_bias_);
    if (!vision_blocks_.empty()) {
        const auto block = config_.vision_block_config();
        for (const auto& params : vision_blocks_) x = layer_forward(block, params, x);
    }
    return add_row_bias(x, vision_type_);
}

SequenceState Model::assemble_sequence(const Tensor& text_features, const Tensor& vision_features,
                                       std::span<const int> token_ids) const {
    const auto& c = config_;
    if (text_features.cols() != c.d || vision_features.cols() != c.d) {
        throw ShapeError(fmt::format("assemble_sequence: feature widths {} / {} differ from d={}",
                                     shape_to_string(text_features.shape()), shape_to_string(vision_features.shape()), c.d));
    }
    const std::size_t n = 1 + text_features.rows() + vision_features.rows();
    if (n != c.seq_len()) {
        throw ContractError(fmt::format("assemble_sequence: {} rows exceed the sequence budget n={}", n, c.seq_len()));
    }
    if (token_ids.size() > c.text_len) throw ContractError("assemble_sequence: more token ids than text rows");

    SequenceState seq;
    seq.tags.reserve(n);
    seq.tags.push_back(PositionTag::Cls);
    for (std::size_t i = 0; i < c.text_len; ++i) {
        const bool pad = i >= token_ids.size() || token_ids[i] == kPadId;
        seq.tags.push_back(pad ? PositionTag::Pad : PositionTag::Text);
    }
    for (std::size_t i = 0; i < vision_features.rows(); ++i) seq.tags.push_back(PositionTag::Vision);
    seq.valid.reserve(n);
    for (auto tag : seq.tags) seq.valid.push_back(tag != PositionTag::Pad);

    Tensor body = concat_rows({text_features, vision_features});
    if (positions_.defined()) body = add(body, positions_);
    seq.features = mask_rows(concat_rows({cls_, body}), seq.valid);
    return seq;
}

Tensor Model::fusion_forward(const Tensor& x) const {
    return mvil::fusion_forward(config_.fusion_layers, fusion_, x);
}

Tensor Model::pool(const Tensor& hidden, const SequenceState& seq) const {
    return mvil::pool(hidden, config_.pooling, seq.valid);
}

Tensor Model::mlm_head(const Tensor& hidden) const {
    if (!mlm_w_.defined()) throw ConfigError("model has no MLM head");
    return affine(hidden, mlm_w_, mlm_b_);
}

Tensor Model::itm_head(const Tensor& pooled) const {
    if (!itm_w_.defined()) throw ConfigError("model has no ITM head");
    return affine(pooled, itm_w_, itm_b_);
}

Tensor Model::vqa_head(const Tensor& pooled) const {
    if (!vqa_w1_.defined()) throw ConfigError("model has no VQA head");
    return affine(gelu(affine(pooled, vqa_w1_, vqa_b1_)), vqa_w2_, vqa_b2_);
}

Tensor Model::nlvr2_pair_head(const Tensor& pooled_a, const Tensor& pooled_b) const {
    if (!nlvr2_w1_.defined()) throw ConfigError("model has no NLVR2 pair head");
    return affine(gelu(affine(concat_cols({pooled_a, pooled_b}), nlvr2_w1_, nlvr2_b1_)), nlvr2_w2_, nlvr2_b2_);
}

ModelOutput Model::forward(std::span<const int> token_ids, const Tensor& patches) const {
    ModelOutput out;
    out.sequence = assemble_sequence(encode_text(token_ids), encode_vision(patches), token_ids);
    out.hidden = fusion_forward(out.sequence.features);
    out.pooled = pool(out.hidden, out.sequence);
    return out;
}

std::vector<NamedTensor> Model::parameters() const {
    std::vector<NamedTensor> out;
    auto put = [&](std::string name, const Tensor& t) {
        if (t.defined()) out.emplace_back(std::move(name), t);
    };
    put("text.embed", text_embed_);
    put("text.type", text_type_);
    put("vision.proj", patch_proj_);
    put("vision.proj_bias", patch_bias_);
    for (std::size_t i = 0; i < vision_blocks_.size(); ++i)
        for (const auto& [name, t] : vision_blocks_[i].named()) put(fmt::format("vision.block.{}.{}", i, name), t);
    put("vision.type", vision_type_);
    put("seq.cls", cls_);
    put("seq.pos", positions_);
    for (std::size_t i = 0; i < fusion_.size(); ++i)
        for (const auto& [name, t] : fusion_[i].named()) put(fmt::format("fusion.{}.{}", i, name), t);
    put("head.mlm.w", mlm_w_);
    put("head.mlm.b", mlm_b_);
    put("head.itm.w", itm_w_);
    put("head.itm.b", itm_b_);
    put("head.vqa.w1", vqa_w1_);
    put("head.vqa.b1", vqa_b1_);
    put("head.vqa.w2", vqa_w2_);
    put("head.vqa.b2", vqa_b2_);
    put("head.nlvr2.w1", nlvr2_w1_);
    put("head.nlvr2.b1", nlvr2_b1_);
    put("head.nlvr2.w2", nlvr2_w2_);
    put("head.nlvr2.b2", nlvr2_b2_);
    return out;
}

std::size_t Model::parameter_count() const {
    std::size_t total = 0;
    for (const auto& [name, t] : parameters()) total += t.numel();
    return total;
}

bool Model::is_encoder_parameter(std::string_view name) {
    return name.starts_with("text.") || name.starts_with("vision.");
}

void Model::zero_grad() {
    for (auto& [name, t] : parameters()) {
        Tensor handle = t;
        handle.zero_grad();
    }
}

}  // namespace mvil
