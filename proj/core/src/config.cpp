#include "mvil/config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "mvil/errors.hpp"

namespace mvil {

namespace {

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream is(text);
    while (std::getline(is, item, ',')) {
        auto t = trim(item);
        if (!t.empty()) out.push_back(std::move(t));
    }
    return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T value{};
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end) throw ConfigError(fmt::format("config key '{}': '{}' is not a valid number", key, text));
    return value;
}

// std::from_chars for double is missing from older libstdc++; strtod is locale-independent enough for "C".
double parse_double(const std::string& key, const std::string& text) {
    char* end = nullptr;
    const double v = std::strtod(text.c_str(), &end);
    if (text.empty() || end != text.c_str() + text.size()) {
        throw ConfigError(fmt::format("config key '{}': '{}' is not a valid number", key, text));
    }
    return v;
}

std::string format_double(double v) { return fmt::format("{}", v); }

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::string_view text, std::string_view origin) {
    KeyValueConfig kv;
    std::istringstream is{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ConfigError(fmt::format("{}:{}: expected 'key = value'", origin, lineno));
        auto key = trim(std::string_view(t).substr(0, eq));
        if (key.empty()) throw ConfigError(fmt::format("{}:{}: empty key", origin, lineno));
        kv.entries_[key] = trim(std::string_view(t).substr(eq + 1));
    }
    return kv;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(fmt::format("cannot open config file '{}'", path.string()));
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse(buffer.str(), path.string());
}

void KeyValueConfig::apply_override(std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) throw ConfigError(fmt::format("override '{}' is not key=value", assignment));
    auto key = trim(assignment.substr(0, eq));
    if (key.empty()) throw ConfigError(fmt::format("override '{}' has an empty key", assignment));
    entries_[key] = trim(assignment.substr(eq + 1));
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? fallback : it->second;
}

std::size_t KeyValueConfig::get_size(const std::string& key, std::size_t fallback) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? fallback : parse_number<std::size_t>(key, it->second);
}

std::uint64_t KeyValueConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? fallback : parse_number<std::uint64_t>(key, it->second);
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? fallback : parse_double(key, it->second);
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    const auto& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(fmt::format("config key '{}': '{}' is not a boolean", key, v));
}

std::string KeyValueConfig::serialize() const {
    std::string out;
    for (const auto& [k, v] : entries_) out += fmt::format("{} = {}\n", k, v);
    return out;
}

FusionLayerConfig make_layer(const ModelConfig& model, LayerKind kind, const StackTemplate& stack) {
    FusionLayerConfig c;
    c.kind = kind;
    c.d = model.d;
    c.n = model.seq_len();
    c.h = stack.h;
    c.h_pos = stack.h_pos;
    c.heads = stack.heads;
    c.norm_placement = stack.norm_placement;
    c.norm_eps = stack.norm_eps;
    if (kind == LayerKind::Transformer) {
        c.k = stack.k_attention ? stack.k_attention : (stack.heads ? model.d / stack.heads : 0);
    } else if (has_tiny_attention(kind)) {
        c.k = stack.k_tiny;
    }
    return c;
}

ModelConfig with_uniform_stack(ModelConfig model, LayerKind kind, std::size_t layers, const StackTemplate& stack) {
    model.fusion_layers = uniform_stack(make_layer(model, kind, stack), layers);
    return model;
}

ModelSetup model_setup_from(const KeyValueConfig& kv) {
    ModelSetup s;
    auto& m = s.model;
    m.d = kv.get_size("d", 32);
    m.vocab_size = kv.get_size("vocab_size", 0);
    m.answer_vocab_size = kv.get_size("answer_vocab_size", 0);
    m.text_len = kv.get_size("text_len", 0);
    m.grid_rows = kv.get_size("grid_rows", 0);
    m.grid_cols = kv.get_size("grid_cols", 0);
    m.patch_dim = kv.get_size("patch_dim", 0);

    const auto vision = kv.get_string("vision_encoder", "linear");
    if (vision == "linear" || vision == "PatchLinearOnly") {
        m.vision_encoder = VisionEncoderKind::PatchLinearOnly;
    } else if (vision == "mixer" || vision == "MixerBlocks") {
        m.vision_encoder = VisionEncoderKind::MixerBlocks;
    } else {
        throw ConfigError(fmt::format("unknown vision_encoder '{}'", vision));
    }
    m.vision_blocks = kv.get_size("vision_blocks", m.vision_encoder == VisionEncoderKind::MixerBlocks ? 1 : 0);
    m.vision_h = kv.get_size("vision_h", 4 * m.d);
    m.vision_h_pos = kv.get_size("vision_h_pos", m.grid_rows * m.grid_cols);

    m.pooling = parse_pooling(kv.get_string("pooling", "cls"));
    m.position_embeddings = kv.get_bool("position_embeddings", true);
    m.vqa_hidden = kv.get_size("vqa_hidden", 0);
    m.nlvr2_hidden = kv.get_size("nlvr2_hidden", 0);
    if (kv.has("task_heads")) {
        m.heads = HeadSet{false, false, false, false};
        for (const auto& head : split_list(kv.get_string("task_heads", ""))) {
            if (head == "mlm") m.heads.mlm = true;
            else if (head == "itm") m.heads.itm = true;
            else if (head == "vqa") m.heads.vqa = true;
            else if (head == "nlvr2") m.heads.nlvr2 = true;
            else throw ConfigError(fmt::format("unknown task head '{}'", head));
        }
    }

    auto& st = s.stack;
    st.h = kv.get_size("h", 4 * m.d);
    st.h_pos = kv.get_size("h_pos", m.d);
    st.heads = kv.get_size("attention_heads", 1);
    st.k_attention = kv.get_size("k", 0);
    st.k_tiny = kv.get_size("k_tiny", 64);
    st.norm_placement = parse_norm_placement(kv.get_string("norm", "post"));
    st.norm_eps = kv.get_double("norm_eps", 1e-5);

    s.kind = parse_layer_kind(kv.get_string("fusion_kind", "Mlp"));
    s.layers = kv.get_size("layers", 2);

    if (kv.has("fusion.count")) {
        // Exact per-layer form, as written by to_key_values.
        const auto count = kv.get_size("fusion.count", 0);
        for (std::size_t i = 0; i < count; ++i) {
            const auto p = fmt::format("fusion.{}.", i);
            FusionLayerConfig c;
            c.kind = parse_layer_kind(kv.get_string(p + "kind", "Mlp"));
            c.d = m.d;
            c.n = m.seq_len();
            c.h = kv.get_size(p + "h", 0);
            c.h_pos = kv.get_size(p + "h_pos", 0);
            c.heads = kv.get_size(p + "heads", 1);
            c.k = kv.get_size(p + "k", 0);
            c.norm_placement = parse_norm_placement(kv.get_string(p + "norm", "post"));
            c.norm_eps = kv.get_double(p + "norm_eps", 1e-5);
            c.activation = kv.get_string(p + "activation", "gelu") == "identity" ? Activation::Identity : Activation::Gelu;
            c.use_norm = kv.get_bool(p + "use_norm", true);
            m.fusion_layers.push_back(c);
        }
        s.layers = count;
        if (count) s.kind = m.fusion_layers.front().kind;
    } else if (kv.has("fusion")) {
        const auto kinds = split_list(kv.get_string("fusion", ""));
        for (const auto& k : kinds) m.fusion_layers.push_back(make_layer(m, parse_layer_kind(k), st));
        s.layers = kinds.size();
        if (!kinds.empty()) s.kind = m.fusion_layers.front().kind;
    } else {
        m.fusion_layers = uniform_stack(make_layer(m, s.kind, st), s.layers);
    }
    return s;
}

ModelConfig model_config_from(const KeyValueConfig& kv) { return model_setup_from(kv).model; }

KeyValueConfig to_key_values(const ModelConfig& m) {
    KeyValueConfig kv;
    auto sz = [&](const std::string& k, std::size_t v) { kv.set(k, std::to_string(v)); };
    sz("d", m.d);
    sz("vocab_size", m.vocab_size);
    sz("answer_vocab_size", m.answer_vocab_size);
    sz("text_len", m.text_len);
    sz("grid_rows", m.grid_rows);
    sz("grid_cols", m.grid_cols);
    sz("patch_dim", m.patch_dim);
    kv.set("vision_encoder", m.vision_encoder == VisionEncoderKind::MixerBlocks ? "mixer" : "linear");
    sz("vision_blocks", m.vision_blocks);
    sz("vision_h", m.vision_h);
    sz("vision_h_pos", m.vision_h_pos);
    kv.set("pooling", std::string(to_string(m.pooling)));
    kv.set("position_embeddings", m.position_embeddings ? "true" : "false");
    sz("vqa_hidden", m.vqa_hidden);
    sz("nlvr2_hidden", m.nlvr2_hidden);
    std::vector<std::string> heads;
    if (m.heads.mlm) heads.emplace_back("mlm");
    if (m.heads.itm) heads.emplace_back("itm");
    if (m.heads.vqa) heads.emplace_back("vqa");
    if (m.heads.nlvr2) heads.emplace_back("nlvr2");
    kv.set("task_heads", fmt::format("{}", fmt::join(heads, ",")));
    sz("fusion.count", m.fusion_layers.size());
    for (std::size_t i = 0; i < m.fusion_layers.size(); ++i) {
        const auto& c = m.fusion_layers[i];
        const auto p = fmt::format("fusion.{}.", i);
        kv.set(p + "kind", std::string(to_string(c.kind)));
        sz(p + "h", c.h);
        sz(p + "h_pos", c.h_pos);
        sz(p + "heads", c.heads);
        sz(p + "k", c.k);
        kv.set(p + "norm", std::string(to_string(c.norm_placement)));
        kv.set(p + "norm_eps", format_double(c.norm_eps));
        kv.set(p + "activation", c.activation == Activation::Identity ? "identity" : "gelu");
        kv.set(p + "use_norm", c.use_norm ? "true" : "false");
    }
    return kv;
}

ModelSetup reference_setup(LayerKind kind, std::size_t layers) {
    ModelSetup s;
    auto& m = s.model;
    m.d = 1024;
    m.vocab_size = 50265;
    m.answer_vocab_size = 9500;
    m.text_len = 31;
    m.grid_rows = 16;
    m.grid_cols = 16;
    m.patch_dim = 3 * 32 * 32;
    m.vision_encoder = VisionEncoderKind::PatchLinearOnly;
    s.stack.h = 4 * m.d;
    s.stack.h_pos = 1024;
    s.stack.heads = 16;
    s.stack.k_attention = 64;
    s.stack.k_tiny = 64;
    s.kind = kind;
    s.layers = layers;
    m.fusion_layers = uniform_stack(make_layer(m, kind, s.stack), layers);
    return s;
}

}  // namespace mvil
