#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mvil/rng.hpp"
#include "mvil/tensor.hpp"

namespace mvil {

enum class LayerKind { Transformer, Mlp, MlpTinyAtt, TinyAttOnly, SquareMlp };
enum class NormPlacement { PostNorm, PreNorm };
enum class Activation { Gelu, Identity };

std::string_view to_string(LayerKind kind);
LayerKind parse_layer_kind(std::string_view text);
std::string_view to_string(NormPlacement placement);
NormPlacement parse_norm_placement(std::string_view text);

bool has_position_ffn(LayerKind kind);
bool has_tiny_attention(LayerKind kind);

/// Shape and composition of one fusion layer.
///
/// `k` is the query/key width: per head for Transformer, of the single head for
/// the tiny-attention kinds. Fields a kind does not use are ignored.
struct FusionLayerConfig {
    LayerKind kind = LayerKind::Mlp;
    std::size_t d = 0;      // channel width
    std::size_t n = 0;      // sequence length, fixed for position mixing
    std::size_t h = 0;      // channel-FFN hidden width
    std::size_t h_pos = 0;  // position-FFN hidden width
    std::size_t heads = 1;  // m, Transformer only
    std::size_t k = 0;
    NormPlacement norm_placement = NormPlacement::PostNorm;
    // Diagnostic knobs: Identity activation and disabled norms linearize the layer.
    Activation activation = Activation::Gelu;
    bool use_norm = true;
    double norm_eps = 1e-5;

    void validate() const;
    std::size_t head_value_width() const { return d / heads; }
};

using NamedTensor = std::pair<std::string, Tensor>;

struct ChannelFfnParams {
    Tensor u;   // [d x h]
    Tensor b1;  // [h], optional
    Tensor v;   // [h x d]
    Tensor b2;  // [d], optional
};

struct PositionFfnParams {
    Tensor q;   // [h_pos x n]
    Tensor b1;  // [h_pos], optional
    Tensor p;   // [n x h_pos]
    Tensor b2;  // [n], optional
};

struct AttentionHeadParams {
    Tensor wq;  // [d x k]
    Tensor wk;  // [d x k]
    Tensor wv;  // [d x d/m]
};

struct TinyAttentionParams {
    Tensor wq;  // [d x k]
    Tensor wk;  // [d x k]
};

struct NormParams {
    Tensor gamma;
    Tensor beta;
};

/// Parameters of one fusion layer; only the members the kind uses are defined.
struct LayerParams {
    PositionFfnParams position;
    std::vector<AttentionHeadParams> attention;
    TinyAttentionParams tiny;
    Tensor square;  // [n x n]
    ChannelFfnParams channel;
    NormParams norm1;
    NormParams norm2;

    /// Defined tensors in a fixed order, names relative to the layer.
    std::vector<NamedTensor> named() const;
};

/// Y = act(X U + b1) V + b2.
Tensor channel_ffn(const Tensor& x, const ChannelFfnParams& params, Activation act = Activation::Gelu);

/// Y = P act(Q X + b1) + b2, mixing along positions with identical weights per channel.
/// ContractError if X does not have the n rows that Q expects.
Tensor position_ffn(const Tensor& x, const PositionFfnParams& params, Activation act = Activation::Gelu);

/// Softmax((X Wq)(X Wk)^T / sqrt(k)), the [n x n] row-stochastic attention matrix.
Tensor attention_weights(const Tensor& x, const Tensor& wq, const Tensor& wk);

/// Concatenation over heads of Softmax(Q K^T / sqrt(k)) (X Wv). No output projection.
Tensor multi_head_attention(const Tensor& x, const std::vector<AttentionHeadParams>& heads);

/// Single-head attention without a value projection: Softmax(X Wq (X Wk)^T / sqrt(k)) X.
Tensor tiny_attention(const Tensor& x, const TinyAttentionParams& params);

/// Y = act(S X).
Tensor square_mixing(const Tensor& x, const Tensor& s, Activation act = Activation::Gelu);

/// Random initialization: fan-in scaled normal weights, zero biases, unit gammas.
LayerParams init_layer_params(const FusionLayerConfig& config, Rng& rng);

/// Residual composition for the configured kind. With PostNorm:
///   Transformer  X1 = Norm(X + MHA(X))
///   Mlp          X1 = Norm(X + PosFFN(X))
///   MlpTinyAtt   X1 = Norm(X + PosFFN(X) + TinyAtt(X))
///   TinyAttOnly  X1 = Norm(X + TinyAtt(X))
///   SquareMlp    X1 = Norm(X + SquareMix(X))
/// followed by Y = Norm(X1 + ChannelFFN(X1)). PreNorm normalizes the branch inputs instead.
Tensor layer_forward(const FusionLayerConfig& config, const LayerParams& params, const Tensor& x);

/// The input-independent position interaction matrix P Q, [n x n].
/// UnsupportedLayerError for kinds without a position FFN.
Tensor mixing_matrix(const FusionLayerConfig& config, const LayerParams& params);

/// Exact number of scalars init_layer_params allocates.
std::size_t instantiated_size(const LayerParams& params);

}  // namespace mvil
