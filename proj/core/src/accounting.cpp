#include "mvil/accounting.hpp"

#include <fmt/format.h>

namespace mvil {

MechanismCounts& MechanismCounts::operator+=(const MechanismCounts& o) {
    attention += o.attention;
    position_mixing += o.position_mixing;
    channel_ffn += o.channel_ffn;
    norm += o.norm;
    embedding += o.embedding;
    head += o.head;
    convolution += o.convolution;
    return *this;
}

MechanismCounts CostReport::total_params() const {
    MechanismCounts sum;
    for (const auto& m : params) sum += m;
    return sum;
}

MechanismCounts CostReport::total_flops() const {
    MechanismCounts sum;
    for (const auto& m : flops) sum += m;
    return sum;
}

double CostReport::fusion_attention_share() const {
    const auto total = fusion_params();
    return total == 0 ? 0.0 : static_cast<double>(fusion_attention_params()) / static_cast<double>(total);
}

namespace {

using u64 = std::uint64_t;

// 2abc for an [a x b] . [b x c] product.
constexpr u64 mm(u64 a, u64 b, u64 c) { return 2 * a * b * c; }

MechanismCounts& at(std::array<MechanismCounts, kCostModuleCount>& arr, CostModule m) {
    return arr[static_cast<std::size_t>(m)];
}

}  // namespace

MechanismCounts layer_param_counts(const FusionLayerConfig& c) {
    c.validate();
    const u64 d = c.d, n = c.n, h = c.h, hp = c.h_pos, m = c.heads, k = c.k;
    MechanismCounts out;
    switch (c.kind) {
        case LayerKind::Transformer: out.attention = m * (2 * d * k + d * (d / m)); break;
        case LayerKind::Mlp: out.position_mixing = 2 * n * hp + hp + n; break;
        case LayerKind::MlpTinyAtt:
            out.position_mixing = 2 * n * hp + hp + n;
            out.attention = 2 * d * k;
            break;
        case LayerKind::TinyAttOnly: out.attention = 2 * d * k; break;
        case LayerKind::SquareMlp: out.position_mixing = n * n; break;
    }
    out.channel_ffn = 2 * d * h + h + d;
    out.norm = 2 * (d + d);
    return out;
}

MechanismCounts layer_flops(const FusionLayerConfig& c, u64 n) {
    c.validate();
    const u64 d = c.d, h = c.h, hp = c.h_pos, m = c.heads, k = c.k;
    MechanismCounts out;
    // Single attention head with query/key width kq and value width dv:
    // X Wq, X Wk, X Wv, Q K^T, A V.
    auto head = [n, d](u64 kq, u64 dv) { return mm(n, d, kq) * 2 + mm(n, d, dv) + mm(n, kq, n) + mm(n, n, dv); };
    // Tiny attention: no value projection, A X instead of A V.
    auto tiny = [n, d](u64 kq) { return mm(n, d, kq) * 2 + mm(n, kq, n) + mm(n, n, d); };
    auto position = [n, d, hp] { return mm(hp, n, d) + mm(n, hp, d); };
    switch (c.kind) {
        case LayerKind::Transformer: out.attention = m * head(k, d / m); break;
        case LayerKind::Mlp: out.position_mixing = position(); break;
        case LayerKind::MlpTinyAtt:
            out.position_mixing = position();
            out.attention = tiny(k);
            break;
        case LayerKind::TinyAttOnly: out.attention = tiny(k); break;
        case LayerKind::SquareMlp: out.position_mixing = mm(n, n, d); break;
    }
    out.channel_ffn = mm(n, d, h) + mm(n, h, d);
    return out;
}

CostReport count_params(const ModelConfig& c) {
    c.validate();
    CostReport r;
    const u64 d = c.d;
    const u64 vqa_hidden = c.vqa_hidden ? c.vqa_hidden : 2 * d;
    const u64 nlvr2_hidden = c.nlvr2_hidden ? c.nlvr2_hidden : 2 * d;

    at(r.params, CostModule::TextEncoder).embedding = c.vocab_size * d + d;

    auto& vision = at(r.params, CostModule::VisionEncoder);
    vision.embedding = c.patch_dim * d + d + d;
    if (c.vision_encoder == VisionEncoderKind::MixerBlocks) {
        for (std::size_t i = 0; i < c.vision_blocks; ++i) vision += layer_param_counts(c.vision_block_config());
    }

    at(r.params, CostModule::Sequence).embedding = d + (c.position_embeddings ? (c.seq_len() - 1) * d : 0);

    for (const auto& layer : c.fusion_layers) at(r.params, CostModule::Fusion) += layer_param_counts(layer);

    auto& heads = at(r.params, CostModule::Heads).head;
    if (c.heads.mlm) heads += d * c.vocab_size + c.vocab_size;
    if (c.heads.itm) heads += d * 2 + 2;
    if (c.heads.vqa) heads += d * vqa_hidden + vqa_hidden + vqa_hidden * c.answer_vocab_size + c.answer_vocab_size;
    if (c.heads.nlvr2) heads += 2 * d * nlvr2_hidden + nlvr2_hidden + nlvr2_hidden * 2 + 2;
    return r;
}

CostReport estimate_flops(const ModelConfig& c) {
    c.validate();
    CostReport r;
    const u64 d = c.d, n = c.seq_len(), patches = c.num_patches();
    const u64 vqa_hidden = c.vqa_hidden ? c.vqa_hidden : 2 * d;
    const u64 nlvr2_hidden = c.nlvr2_hidden ? c.nlvr2_hidden : 2 * d;

    auto& vision = at(r.flops, CostModule::VisionEncoder);
    vision.embedding = mm(patches, c.patch_dim, d);
    if (c.vision_encoder == VisionEncoderKind::MixerBlocks) {
        for (std::size_t i = 0; i < c.vision_blocks; ++i) vision += layer_flops(c.vision_block_config(), patches);
    }

    for (const auto& layer : c.fusion_layers) at(r.flops, CostModule::Fusion) += layer_flops(layer, n);

    auto& heads = at(r.flops, CostModule::Heads).head;
    if (c.heads.mlm) heads += mm(n, d, c.vocab_size);
    if (c.heads.itm) heads += mm(1, d, 2);
    if (c.heads.vqa) heads += mm(1, d, vqa_hidden) + mm(1, vqa_hidden, c.answer_vocab_size);
    if (c.heads.nlvr2) heads += mm(1, 2 * d, nlvr2_hidden) + mm(1, nlvr2_hidden, 2);
    return r;
}

CostReport analyze(const ModelConfig& config) {
    CostReport r = count_params(config);
    r.flops = estimate_flops(config).flops;
    return r;
}

std::string format_millions(std::uint64_t count) { return fmt::format("{:.1f}M", static_cast<double>(count) / 1e6); }

std::string format_giga(std::uint64_t count) { return fmt::format("{:.1f}G", static_cast<double>(count) / 1e9); }

std::string emit_cost_table(const std::vector<CostTableRow>& rows) {
    std::string out = "model\tlayers\tparams\tattention_params\tflops\ttotal_params\ttotal_flops\n";
    for (const auto& row : rows) {
        const auto& r = row.report;
        out += fmt::format("{}\t{}\t{}\t{} ({:.1f}%)\t{}\t{}\t{}\n", row.model, row.layers, format_millions(r.fusion_params()),
                           format_millions(r.fusion_attention_params()), 100.0 * r.fusion_attention_share(),
                           format_giga(r.fusion_flops()), format_millions(r.total_params().total()),
                           format_giga(r.total_flops().total()));
    }
    return out;
}

}  // namespace mvil
