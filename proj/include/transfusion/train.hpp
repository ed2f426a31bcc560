#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "transfusion/data.hpp"
#include "transfusion/model.hpp"
#include "transfusion/serialize.hpp"

namespace transfusion {

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
  std::size_t max_epochs = 200;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  std::optional<std::size_t> early_stop_patience;
  // Global-norm gradient clipping; off when unset.
  std::optional<double> clip_norm;

  // Fixed parts of the protocol, carried in the config so they are echoed
  // with every run.
  static constexpr const char* kOptimizer = "adam";
  static constexpr const char* kSelection = "best_val_mae";

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct AdamState {
  std::uint64_t t = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  static AdamState zeros_like(const std::vector<Tensor>& params);
  bool operator==(const AdamState&) const = default;
};

// One Adam update from the gradients currently stored on the parameters.
// Throws NumericError naming the first parameter with a non-finite gradient,
// before anything is modified. A parameter without a gradient is treated as
// having a zero gradient.
void adam_step(const std::vector<std::pair<std::string, Tensor>>& params, AdamState& state, const TrainConfig& cfg);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_l1 = 0.0;  // sample-weighted mean over the epoch's batches
  double val_mae = 0.0;
  double val_mse = 0.0;
  bool is_best = false;

  bool operator==(const EpochRecord&) const = default;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_mae = 0.0;
  bool stopped_early = false;
};

// Header `epoch,train_l1,val_mae,val_mse,is_best`, one row per epoch.
std::string epoch_csv(const TrainLog& log);

struct FitOptions {
  // When set, the best model (and Adam state) is written here atomically each
  // time the validation MAE improves.
  std::optional<std::filesystem::path> checkpoint_path;
  // When set, the epoch CSV is rewritten here after every epoch.
  std::optional<std::filesystem::path> log_path;
  io::DType checkpoint_dtype = io::DType::f64;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct FitResult {
  TransFusionModel best;
  AdamState state;  // optimizer state at the best epoch
  TrainLog log;
};

// Adam on the mean L1 loss over shuffled mini-batches of `train`, validation
// MAE after every epoch, and the strictly-best epoch kept. A non-finite loss
// raises NumericError with the epoch and batch.
FitResult fit(const TransFusionModel& init, const data::Prepared& data, const std::vector<std::size_t>& train,
              const std::vector<std::size_t>& val, const TrainConfig& cfg, const FitOptions& options = {});

}  // namespace transfusion
