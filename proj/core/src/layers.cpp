#include "mvil/layers.hpp"

#include <cmath>

#include <fmt/format.h>

#include "mvil/errors.hpp"

namespace mvil {

std::string_view to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::Transformer: return "Transformer";
        case LayerKind::Mlp: return "Mlp";
        case LayerKind::MlpTinyAtt: return "MlpTinyAtt";
        case LayerKind::TinyAttOnly: return "TinyAttOnly";
        case LayerKind::SquareMlp: return "SquareMlp";
    }
    return "?";
}

LayerKind parse_layer_kind(std::string_view text) {
    for (auto kind : {LayerKind::Transformer, LayerKind::Mlp, LayerKind::MlpTinyAtt, LayerKind::TinyAttOnly,
                      LayerKind::SquareMlp}) {
        if (text == to_string(kind)) return kind;
    }
    throw ConfigError(fmt::format("unknown layer kind '{}'", text));
}

std::string_view to_string(NormPlacement placement) {
    return placement == NormPlacement::PostNorm ? "post" : "pre";
}

NormPlacement parse_norm_placement(std::string_view text) {
    if (text == "post" || text == "PostNorm") return NormPlacement::PostNorm;
    if (text == "pre" || text == "PreNorm") return NormPlacement::PreNorm;
    throw ConfigError(fmt::format("unknown norm placement '{}'", text));
}

bool has_position_ffn(LayerKind kind) { return kind == LayerKind::Mlp || kind == LayerKind::MlpTinyAtt; }

bool has_tiny_attention(LayerKind kind) { return kind == LayerKind::MlpTinyAtt || kind == LayerKind::TinyAttOnly; }

void FusionLayerConfig::validate() const {
    const auto name = to_string(kind);
    if (d == 0 || n == 0 || h == 0) {
        throw ConfigError(fmt::format("{} layer: d, n and h must be positive (d={}, n={}, h={})", name, d, n, h));
    }
    if (has_position_ffn(kind) && h_pos == 0) throw ConfigError(fmt::format("{} layer: h_pos must be positive", name));
    if (kind == LayerKind::Transformer) {
        if (heads == 0 || d % heads != 0) {
            throw ConfigError(fmt::format("Transformer layer: d={} is not divisible by m={} heads", d, heads));
        }
    }
    if ((kind == LayerKind::Transformer || has_tiny_attention(kind)) && k == 0) {
        throw ConfigError(fmt::format("{} layer: query/key width k must be positive", name));
    }
    if (!(norm_eps >= 0.0)) throw ConfigError("norm_eps must be >= 0");
}

std::vector<NamedTensor> LayerParams::named() const {
    std::vector<NamedTensor> out;
    auto put = [&](std::string name, const Tensor& t) {
        if (t.defined()) out.emplace_back(std::move(name), t);
    };
    put("pos.q", position.q);
    put("pos.b1", position.b1);
    put("pos.p", position.p);
    put("pos.b2", position.b2);
    for (std::size_t i = 0; i < attention.size(); ++i) {
        put(fmt::format("attn.{}.wq", i), attention[i].wq);
        put(fmt::format("attn.{}.wk", i), attention[i].wk);
        put(fmt::format("attn.{}.wv", i), attention[i].wv);
    }
    put("tiny.wq", tiny.wq);
    put("tiny.wk", tiny.wk);
    put("square.s", square);
    put("ffn.u", channel.u);
    put("ffn.b1", channel.b1);
    put("ffn.v", channel.v);
    put("ffn.b2", channel.b2);
    put("norm1.gamma", norm1.gamma);
    put("norm1.beta", norm1.beta);
    put("norm2.gamma", norm2.gamma);
    put("norm2.beta", norm2.beta);
    return out;
}

namespace {

Tensor activate(const Tensor& x, Activation act) { return act == Activation::Gelu ? gelu(x) : x; }

void require(const Tensor& t, const char* what, LayerKind kind) {
    if (!t.defined()) throw ConfigError(fmt::format("{} layer is missing parameter {}", to_string(kind), what));
}

Tensor normal_matrix(std::size_t rows, std::size_t cols, std::size_t fan_in, Rng& rng) {
    const double stddev = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> v(rows * cols);
    for (auto& x : v) x = rng.normal(0.0, stddev);
    return Tensor::from({rows, cols}, std::move(v), true);
}

NormParams init_norm(std::size_t d) {
    return {Tensor::full({d}, 1.0, true), Tensor::zeros({d}, true)};
}

Tensor norm(const FusionLayerConfig& config, const NormParams& p, const Tensor& x) {
    if (!config.use_norm) return x;
    return layer_norm(x, p.gamma, p.beta, config.norm_eps);
}

}  // namespace

Tensor channel_ffn(const Tensor& x, const ChannelFfnParams& params, Activation act) {
    if (!params.u.defined() || !params.v.defined()) throw ConfigError("channel_ffn: U and V are required");
    if (x.cols() != params.u.rows()) {
        throw ShapeError(fmt::format("channel_ffn: input {} does not match U {}", shape_to_string(x.shape()),
                                     shape_to_string(params.u.shape())));
    }
    Tensor hidden = matmul(x, params.u);
    if (params.b1.defined()) hidden = add_row_bias(hidden, params.b1);
    Tensor out = matmul(activate(hidden, act), params.v);
    if (params.b2.defined()) out = add_row_bias(out, params.b2);
    return out;
}

Tensor position_ffn(const Tensor& x, const PositionFfnParams& params, Activation act) {
    if (!params.q.defined() || !params.p.defined()) throw ConfigError("position_ffn: Q and P are required");
    if (x.rows() != params.q.cols()) {
        throw ContractError(fmt::format("position_ffn: sequence length {} differs from the configured n={}", x.rows(),
                                        params.q.cols()));
    }
    Tensor hidden = matmul(params.q, x);
    if (params.b1.defined()) hidden = add_col_bias(hidden, params.b1);
    Tensor out = matmul(params.p, activate(hidden, act));
    if (params.b2.defined()) out = add_col_bias(out, params.b2);
    return out;
}

Tensor attention_weights(const Tensor& x, const Tensor& wq, const Tensor& wk) {
    const double k = static_cast<double>(wq.cols());
    Tensor scores = matmul(matmul(x, wq), transpose(matmul(x, wk)));
    return softmax_rows(scale(scores, 1.0 / std::sqrt(k)));
}

Tensor multi_head_attention(const Tensor& x, const std::vector<AttentionHeadParams>& heads) {
    if (heads.empty()) throw ConfigError("multi_head_attention: no heads");
    std::vector<Tensor> outputs;
    outputs.reserve(heads.size());
    for (const auto& head : heads) {
        outputs.push_back(matmul(attention_weights(x, head.wq, head.wk), matmul(x, head.wv)));
    }
    return concat_cols(outputs);
}

Tensor tiny_attention(const Tensor& x, const TinyAttentionParams& params) {
    return matmul(attention_weights(x, params.wq, params.wk), x);
}

Tensor square_mixing(const Tensor& x, const Tensor& s, Activation act) {
    if (s.rank() != 2 || s.rows() != s.cols() || s.cols() != x.rows()) {
        throw ShapeError(fmt::format("square_mixing: S {} incompatible with input {}", shape_to_string(s.shape()),
                                     shape_to_string(x.shape())));
    }
    return activate(matmul(s, x), act);
}

LayerParams init_layer_params(const FusionLayerConfig& c, Rng& rng) {
    c.validate();
    LayerParams p;
    if (has_position_ffn(c.kind)) {
        p.position.q = normal_matrix(c.h_pos, c.n, c.n, rng);
        p.position.b1 = Tensor::zeros({c.h_pos}, true);
        p.position.p = normal_matrix(c.n, c.h_pos, c.h_pos, rng);
        p.position.b2 = Tensor::zeros({c.n}, true);
    }
    if (c.kind == LayerKind::Transformer) {
        for (std::size_t i = 0; i < c.heads; ++i) {
            AttentionHeadParams head;
            head.wq = normal_matrix(c.d, c.k, c.d, rng);
            head.wk = normal_matrix(c.d, c.k, c.d, rng);
            head.wv = normal_matrix(c.d, c.head_value_width(), c.d, rng);
            p.attention.push_back(std::move(head));
        }
    }
    if (has_tiny_attention(c.kind)) {
        p.tiny.wq = normal_matrix(c.d, c.k, c.d, rng);
        p.tiny.wk = normal_matrix(c.d, c.k, c.d, rng);
    }
    if (c.kind == LayerKind::SquareMlp) p.square = normal_matrix(c.n, c.n, c.n, rng);
    p.channel.u = normal_matrix(c.d, c.h, c.d, rng);
    p.channel.b1 = Tensor::zeros({c.h}, true);
    p.channel.v = normal_matrix(c.h, c.d, c.h, rng);
    p.channel.b2 = Tensor::zeros({c.d}, true);
    p.norm1 = init_norm(c.d);
    p.norm2 = init_norm(c.d);
    return p;
}

Tensor layer_forward(const FusionLayerConfig& c, const LayerParams& p, const Tensor& x) {
    c.validate();
    if (x.rank() != 2 || x.rows() != c.n || x.cols() != c.d) {
        throw ContractError(fmt::format("{} layer expects [{}x{}] input, got {}", to_string(c.kind), c.n, c.d,
                                        shape_to_string(x.shape())));
    }
    if (c.use_norm) {
        require(p.norm1.gamma, "norm1", c.kind);
        require(p.norm2.gamma, "norm2", c.kind);
    }
    const bool pre = c.norm_placement == NormPlacement::PreNorm;
    const Tensor mixer_in = pre ? norm(c, p.norm1, x) : x;

    Tensor mixed = x;
    switch (c.kind) {
        case LayerKind::Transformer:
            if (p.attention.size() != c.heads) {
                throw ConfigError(fmt::format("Transformer layer has {} heads of parameters, config says {}",
                                              p.attention.size(), c.heads));
            }
            mixed = add(mixed, multi_head_attention(mixer_in, p.attention));
            break;
        case LayerKind::Mlp:
            require(p.position.q, "pos.q", c.kind);
            mixed = add(mixed, position_ffn(mixer_in, p.position, c.activation));
            break;
        case LayerKind::MlpTinyAtt:
            require(p.position.q, "pos.q", c.kind);
            require(p.tiny.wq, "tiny.wq", c.kind);
            mixed = add(add(mixed, position_ffn(mixer_in, p.position, c.activation)), tiny_attention(mixer_in, p.tiny));
            break;
        case LayerKind::TinyAttOnly:
            require(p.tiny.wq, "tiny.wq", c.kind);
            mixed = add(mixed, tiny_attention(mixer_in, p.tiny));
            break;
        case LayerKind::SquareMlp:
            require(p.square, "square.s", c.kind);
            mixed = add(mixed, square_mixing(mixer_in, p.square, c.activation));
            break;
    }

    require(p.channel.u, "ffn.u", c.kind);
    if (pre) {
        return add(mixed, channel_ffn(norm(c, p.norm2, mixed), p.channel, c.activation));
    }
    const Tensor x1 = norm(c, p.norm1, mixed);
    return norm(c, p.norm2, add(x1, channel_ffn(x1, p.channel, c.activation)));
}

Tensor mixing_matrix(const FusionLayerConfig& c, const LayerParams& p) {
    if (!has_position_ffn(c.kind) || !p.position.q.defined() || !p.position.p.defined()) {
        throw UnsupportedLayerError(fmt::format("{} layer has no position-wise FFN to form P*Q", to_string(c.kind)));
    }
    return matmul(p.position.p.detach(), p.position.q.detach());
}

std::size_t instantiated_size(const LayerParams& params) {
    std::size_t total = 0;
    for (const auto& [name, t] : params.named()) total += t.numel();
    return total;
}

}  // namespace mvil
