#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "transfusion/data.hpp"
#include "transfusion/model.hpp"
#include "transfusion/train.hpp"

namespace transfusion {

struct MetricsReport {
  double mae = 0.0;
  double mse = 0.0;
  // Over samples with a positive label only; unset when every label is 0.
  std::optional<double> mape;
  // Unset (the "undefined" sentinel) when the labels have zero variance.
  std::optional<double> r2;
  std::size_t m = 0;
  std::size_t mape_excluded = 0;
  std::string model_id;
  std::string dataset_id;
  std::string timestamp;
};

// Deterministic pairwise (tree) summation in index order.
double pairwise_sum(std::span<const double> v);

MetricsReport compute_metrics(std::span<const double> preds, std::span<const double> labels);

nlohmann::json to_json(const MetricsReport& r);
// "MAE 0.2069  MSE 0.3831  MAPE 0.0164  R2 0.9978"
std::string format_metrics(const MetricsReport& r);
std::string fixed4(std::optional<double> v);

// Predictions for `rows` in order, without recording a tape.
std::vector<double> predict(const TransFusionModel& model, const data::Prepared& data,
                            const std::vector<std::size_t>& rows, std::size_t batch_size);

MetricsReport evaluate(const TransFusionModel& model, const data::Prepared& data, const std::vector<std::size_t>& rows,
                       std::size_t batch_size = 32);

// ISO-8601 UTC time; honours SOURCE_DATE_EPOCH for reproducible outputs.
std::string utc_timestamp();

struct AblationRow {
  std::string name;  // full, -vision, -wifi, -multiscale, -linear_attention
  std::optional<Ablation> ablation;
  std::optional<MetricsReport> metrics;  // unset when the row failed
  std::string error;
  std::size_t best_epoch = 0;
  std::size_t parameters = 0;
};

struct AblationReport {
  std::vector<AblationRow> rows;  // full model first

  const AblationRow* find(const std::string& name) const;
  // row - full for every metric; unset if either side is missing.
  std::optional<double> delta(const AblationRow& row, const std::string& metric) const;

  std::string table() const;
  std::string csv() const;
  nlohmann::json to_json() const;
};

std::string ablation_row_name(std::optional<Ablation> a);

struct AblationOptions {
  // Per-row checkpoints and epoch logs go here when set.
  std::optional<std::filesystem::path> out_dir;
  std::size_t eval_batch_size = 32;
  std::function<void(const std::string& row, const EpochRecord&)> on_epoch;
};

// Trains the full model and one model per ablation with identical seeds on
// the dataset's own split, then evaluates each on the test split. A row whose
// training throws is recorded as failed; the others still run.
AblationReport ablation_study(const ModelConfig& base, const data::Dataset& ds, const TrainConfig& train_cfg,
                              const AblationOptions& options = {});

}  // namespace transfusion
