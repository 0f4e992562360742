#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mvil/layers.hpp"
#include "mvil/model.hpp"

namespace mvil {

/// Exact integer counts split by mechanism. Used for both parameters and FLOPs.
struct MechanismCounts {
    std::uint64_t attention = 0;        // every Wq/Wk/Wv of multi-head or tiny attention
    std::uint64_t position_mixing = 0;  // position-wise FFNs and square mixing
    std::uint64_t channel_ffn = 0;
    std::uint64_t norm = 0;
    std::uint64_t embedding = 0;        // lookups, type/position embeddings, patch projection
    std::uint64_t head = 0;
    std::uint64_t convolution = 0;      // no mechanism here is convolutional; kept for the all-MLP check

    std::uint64_t total() const {
        return attention + position_mixing + channel_ffn + norm + embedding + head + convolution;
    }
    MechanismCounts& operator+=(const MechanismCounts& other);
    friend MechanismCounts operator+(MechanismCounts a, const MechanismCounts& b) { return a += b; }
    friend bool operator==(const MechanismCounts&, const MechanismCounts&) = default;
};

enum class CostModule { TextEncoder, VisionEncoder, Sequence, Fusion, Heads };
inline constexpr std::size_t kCostModuleCount = 5;

/// Parameter and FLOP breakdown of a model. FLOPs follow the matmul-only convention:
/// an [a x b] by [b x c] product costs 2abc, elementwise work is not counted.
struct CostReport {
    std::array<MechanismCounts, kCostModuleCount> params{};
    std::array<MechanismCounts, kCostModuleCount> flops{};

    const MechanismCounts& params_of(CostModule m) const { return params[static_cast<std::size_t>(m)]; }
    const MechanismCounts& flops_of(CostModule m) const { return flops[static_cast<std::size_t>(m)]; }
    MechanismCounts total_params() const;
    MechanismCounts total_flops() const;

    std::uint64_t fusion_params() const { return params_of(CostModule::Fusion).total(); }
    std::uint64_t fusion_attention_params() const { return params_of(CostModule::Fusion).attention; }
    std::uint64_t fusion_flops() const { return flops_of(CostModule::Fusion).total(); }
    /// Fraction of fusion parameters that belong to attention (0 for an empty stack).
    double fusion_attention_share() const;
};

/// Parameters of one fusion layer, from shape formulas alone.
MechanismCounts layer_param_counts(const FusionLayerConfig& layer);
/// FLOPs of one forward pass of a layer at sequence length n.
MechanismCounts layer_flops(const FusionLayerConfig& layer, std::uint64_t n);

/// Parameter counts of every module; FLOP fields left zero.
CostReport count_params(const ModelConfig& config);
/// FLOPs of one forward pass at the config's sequence length; parameter fields left zero.
CostReport estimate_flops(const ModelConfig& config);
/// Both halves.
CostReport analyze(const ModelConfig& config);

struct CostTableRow {
    std::string model;
    std::size_t layers = 0;
    CostReport report;
};

/// Tab-separated table, one row per entry, fixed one-decimal M/G presentation:
///   model  layers  params  attention_params  flops  total_params  total_flops
/// The first five columns cover the fusion module; the last two the whole model.
std::string emit_cost_table(const std::vector<CostTableRow>& rows);

/// "18.9M"-style rendering with one decimal.
std::string format_millions(std::uint64_t count);
std::string format_giga(std::uint64_t count);

}  // namespace mvil
