#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mvil/model.hpp"
#include "mvil/tensor.hpp"

namespace mvil {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct StoredTensor {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

/// Binary layout, all integers little-endian:
///
///   "MVIL"                          4 bytes
///   version                         u32
///   config echo                     u32 length + bytes (key = value text)
///   step                            u64
///   rng state                       u32 length + bytes
///   tensor count                    u32
///   per tensor: name                u32 length + bytes
///               rank                u32
///               dims                rank x u64
///               values              product(dims) x f32
struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    std::string config_text;
    std::uint64_t step = 0;
    std::string rng_state;
    std::vector<StoredTensor> tensors;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
/// FormatError (with byte offset) on bad magic, unsupported version, truncation,
/// inconsistent shapes or trailing bytes.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Snapshot of a model's parameters, narrowed to single precision.
Checkpoint make_checkpoint(const Model& model, std::uint64_t step = 0, const std::string& rng_state = {});
/// Rebuilds the model from the config echo and copies every stored tensor in.
/// ContractError when names or shapes disagree with the config.
Model model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace mvil
