#include "mvil/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include <fmt/format.h>

#include "mvil/config.hpp"
#include "mvil/errors.hpp"

namespace mvil {

static_assert(std::numeric_limits<float>::is_iec559, "checkpoints store IEEE-754 binary32");

namespace {

constexpr char kMagic[4] = {'M', 'V', 'I', 'L'};

class Writer {
public:
    void bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const std::uint8_t*>(data);
        out_.insert(out_.end(), p, p + n);
    }
    template <typename T>
    void le(T value) {
        for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
    }
    void string(const std::string& s) {
        le(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return in_.size() - pos_; }

    void need(std::size_t n, const char* what) const {
        if (remaining() < n) {
            throw FormatError(fmt::format("truncated checkpoint: {} needs {} bytes, {} left", what, n, remaining()), pos_);
        }
    }
    template <typename T>
    T le(const char* what) {
        need(sizeof(T), what);
        T value = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(static_cast<T>(in_[pos_ + i]) << (8 * i));
        pos_ += sizeof(T);
        return value;
    }
    std::string string(const char* what) {
        const auto len = le<std::uint32_t>(what);
        need(len, what);
        std::string s(reinterpret_cast<const char*>(in_.data() + pos_), len);
        pos_ += len;
        return s;
    }

private:
    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
    Writer w;
    w.bytes(kMagic, sizeof kMagic);
    w.le(ckpt.version);
    w.string(ckpt.config_text);
    w.le(ckpt.step);
    w.string(ckpt.rng_state);
    w.le(static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& t : ckpt.tensors) {
        if (shape_numel(t.shape) != t.values.size()) {
            throw ContractError(fmt::format("checkpoint tensor '{}': shape {} does not hold {} values", t.name,
                                            shape_to_string(t.shape), t.values.size()));
        }
        w.string(t.name);
        w.le(static_cast<std::uint32_t>(t.shape.size()));
        for (auto dim : t.shape) w.le(static_cast<std::uint64_t>(dim));
        for (float v : t.values) w.le(std::bit_cast<std::uint32_t>(v));
    }
    return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    r.need(sizeof kMagic, "magic");
    if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw FormatError("bad magic, not an MVIL checkpoint", 0);
    for (std::size_t i = 0; i < sizeof kMagic; ++i) r.le<std::uint8_t>("magic");

    Checkpoint ckpt;
    const auto version_at = r.offset();
    ckpt.version = r.le<std::uint32_t>("version");
    if (ckpt.version != kCheckpointVersion) {
        throw FormatError(fmt::format("unsupported checkpoint version {}", ckpt.version), version_at);
    }
    ckpt.config_text = r.string("config echo");
    ckpt.step = r.le<std::uint64_t>("step");
    ckpt.rng_state = r.string("rng state");
    const auto count = r.le<std::uint32_t>("tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
        StoredTensor t;
        t.name = r.string("tensor name");
        const auto rank = r.le<std::uint32_t>("tensor rank");
        r.need(std::size_t{rank} * 8, "tensor dims");
        const auto dims_at = r.offset();
        std::uint64_t numel = 1;
        for (std::uint32_t k = 0; k < rank; ++k) {
            const auto dim = r.le<std::uint64_t>("tensor dim");
            if (dim != 0 && numel > std::numeric_limits<std::uint64_t>::max() / 4 / dim) {
                throw FormatError(fmt::format("tensor '{}' shape product overflows", t.name), dims_at);
            }
            numel *= dim;
            t.shape.push_back(static_cast<std::size_t>(dim));
        }
        if (numel * 4 > r.remaining()) {
            throw FormatError(fmt::format("truncated checkpoint: tensor '{}' of shape {} needs {} bytes, {} left", t.name,
                                          shape_to_string(t.shape), numel * 4, r.remaining()),
                              r.offset());
        }
        t.values.reserve(static_cast<std::size_t>(numel));
        for (std::uint64_t k = 0; k < numel; ++k) t.values.push_back(std::bit_cast<float>(r.le<std::uint32_t>("tensor values")));
        ckpt.tensors.push_back(std::move(t));
    }
    if (r.remaining() != 0) throw FormatError(fmt::format("{} trailing bytes after the last tensor", r.remaining()), r.offset());
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    const auto bytes = encode_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ContractError(fmt::format("cannot write checkpoint '{}'", path.string()));
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ContractError(fmt::format("short write to checkpoint '{}'", path.string()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ContractError(fmt::format("cannot open checkpoint '{}'", path.string()));
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

Checkpoint make_checkpoint(const Model& model, std::uint64_t step, const std::string& rng_state) {
    Checkpoint ckpt;
    ckpt.config_text = to_key_values(model.config()).serialize();
    ckpt.step = step;
    ckpt.rng_state = rng_state;
    for (const auto& [name, t] : model.parameters()) {
        StoredTensor s{name, t.shape(), {}};
        s.values.reserve(t.numel());
        for (double v : t.values()) s.values.push_back(static_cast<float>(v));
        ckpt.tensors.push_back(std::move(s));
    }
    return ckpt;
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
    Rng rng(0);
    Model model(model_config_from(KeyValueConfig::parse(ckpt.config_text, "<checkpoint config>")), rng);
    auto params = model.parameters();
    if (params.size() != ckpt.tensors.size()) {
        throw ContractError(fmt::format("checkpoint holds {} tensors, the model has {}", ckpt.tensors.size(), params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& [name, t] = params[i];
        const auto& s = ckpt.tensors[i];
        if (s.name != name || s.shape != t.shape()) {
            throw ContractError(fmt::format("checkpoint tensor {} is '{}' {}, expected '{}' {}", i, s.name,
                                            shape_to_string(s.shape), name, shape_to_string(t.shape())));
        }
        auto dst = t.mutable_values();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<double>(s.values[k]);
    }
    return model;
}

}  // namespace mvil
