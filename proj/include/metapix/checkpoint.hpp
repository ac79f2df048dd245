#pragma once

#include "metapix/training.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

namespace metapix {

inline constexpr char kCheckpointMagic[4] = {'M', 'P', 'I', 'X'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// The file is not a checkpoint this build can read: bad magic, unsupported
/// version, truncation or malformed header.
class CheckpointFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The file is well formed but its tensors do not match its model configs.
class CheckpointShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Layout (little endian):
///   "MPIX" | u32 version | u32 len + model-config JSON | u32 tensor count |
///   per tensor: u32 len + name, u32 rank, u32 dims[rank], f32 data[numel]
/// Generator tensors come first, then discriminator tensors, each in name order.
std::string encode_checkpoint(const ModelPair& model);
ModelPair decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const ModelPair& model);
ModelPair load_checkpoint(const std::filesystem::path& path);

}  // namespace metapix
