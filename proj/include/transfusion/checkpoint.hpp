#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "transfusion/model.hpp"
#include "transfusion/serialize.hpp"
#include "transfusion/train.hpp"

namespace transfusion {

// Checkpoint file, little-endian:
//   "TFCK" | u32 version | u32 n + n bytes of key-sorted config JSON |
//   u32 count | count x (u32 len + name | TFTN record)
// Records are sorted by name. Optimizer state, when present, is stored as
// "adam.m.<param>", "adam.v.<param>" and the scalar "adam.t".
inline constexpr char kCheckpointMagic[4] = {'T', 'F', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  TransFusionModel model;
  std::optional<AdamState> adam;
};

std::string encode_checkpoint(const TransFusionModel& model, const AdamState* adam = nullptr,
                              io::DType dtype = io::DType::f64);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const TransFusionModel& model, const AdamState* adam = nullptr,
                     io::DType dtype = io::DType::f64);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace transfusion
