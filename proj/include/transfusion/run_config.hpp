#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "transfusion/data.hpp"
#include "transfusion/model.hpp"
#include "transfusion/serialize.hpp"
#include "transfusion/train.hpp"

namespace transfusion {

// Everything a command needs, fully resolved before it runs.
// Sources are layered: preset defaults < config file < command-line flags.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  data::SyntheticSpec synth;
  data::SplitRatios split;
  // Storage dtype for datasets and checkpoints. Arithmetic is always 64-bit.
  io::DType precision = io::DType::f64;
  std::size_t eval_batch_size = 32;
  std::string eval_split = "test";

  std::optional<std::filesystem::path> data_dir;
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> out_dir;

  void validate() const;
  // One seed for data, initialization and batch order.
  void set_seed(std::uint64_t seed);
  bool operator==(const RunConfig&) const = default;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

// "default": the published protocol on a 0..44 x 100 synthetic corpus.
// "tiny": small enough for exhaustive gradient checks and quick overfitting.
// "ablation": counts 0..10 x 30 and a reduced model, sized so all five
// ablation rows train in minutes.
RunConfig preset(const std::string& name);
std::vector<std::string> preset_names();
bool is_preset(const std::string& name);

// Preset defaults overlaid with a JSON document (RFC 7386 merge patch).
RunConfig overlay(const RunConfig& base, const nlohmann::json& patch);

// `spec` is a preset name or a path to a JSON file; the file may name its
// own base preset under "preset".
RunConfig load_run_config(const std::string& spec);

// Key-sorted, two-space indented.
std::string canonical_json(const RunConfig& c);

}  // namespace transfusion
