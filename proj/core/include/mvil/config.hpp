#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "mvil/layers.hpp"
#include "mvil/model.hpp"

namespace mvil {

/// Flat `key = value` configuration. Blank lines and lines starting with '#' are
/// skipped. Later assignments, including --set overrides, replace earlier ones.
class KeyValueConfig {
public:
    static KeyValueConfig parse(std::string_view text, std::string_view origin = "<string>");
    static KeyValueConfig load(const std::filesystem::path& path);

    void set(const std::string& key, const std::string& value) { entries_[key] = value; }
    /// Applies a "key=value" override string.
    void apply_override(std::string_view assignment);

    bool has(const std::string& key) const { return entries_.contains(key); }
    std::string get_string(const std::string& key, const std::string& fallback) const;
    std::size_t get_size(const std::string& key, std::size_t fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    const std::map<std::string, std::string>& entries() const noexcept { return entries_; }
    /// Sorted "key = value" lines; parse(serialize()) reproduces the entries.
    std::string serialize() const;

private:
    std::map<std::string, std::string> entries_;
};

/// Shared settings from which each fusion layer of a homogeneous stack is built.
struct StackTemplate {
    std::size_t h = 0;
    std::size_t h_pos = 0;
    std::size_t heads = 1;
    std::size_t k_attention = 0;  // per-head query/key width; 0 means d / heads
    std::size_t k_tiny = 64;
    NormPlacement norm_placement = NormPlacement::PostNorm;
    double norm_eps = 1e-5;
};

/// One layer of `kind` sized for the model's n and d.
FusionLayerConfig make_layer(const ModelConfig& model, LayerKind kind, const StackTemplate& stack);
/// Replaces the model's fusion stack by `layers` copies of `kind`.
ModelConfig with_uniform_stack(ModelConfig model, LayerKind kind, std::size_t layers, const StackTemplate& stack);

struct ModelSetup {
    ModelConfig model;
    StackTemplate stack;
    LayerKind kind = LayerKind::Mlp;
    std::size_t layers = 0;
};

/// Reads model keys. The stack is either `fusion = Kind,Kind,...` or
/// `fusion_kind` + `layers`.
ModelSetup model_setup_from(const KeyValueConfig& kv);
/// Key-value echo of a model config, readable by model_config_from.
KeyValueConfig to_key_values(const ModelConfig& config);
ModelConfig model_config_from(const KeyValueConfig& kv);

/// Full-size reference settings: d=1024, 6 layers, m=16, k=64, tiny k=64, h=4d,
/// h_pos=1024, n = 1 + 31 + 16*16 = 288.
ModelSetup reference_setup(LayerKind kind, std::size_t layers = 6);

}  // namespace mvil
