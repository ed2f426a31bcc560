#include "transfusion/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <sstream>

#include "transfusion/checkpoint.hpp"
#include "transfusion/ops.hpp"

namespace transfusion {

namespace {

constexpr const char* kMetricNames[] = {"mae", "mse", "mape", "r2"};

std::optional<double> metric(const MetricsReport& r, const std::string& name) {
  if (name == "mae") return r.mae;
  if (name == "mse") return r.mse;
  if (name == "mape") return r.mape;
  if (name == "r2") return r.r2;
  throw ConfigError("unknown metric '" + name + "'");
}

std::string signed4(std::optional<double> v) {
  if (!v) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%+.4f", *v == 0.0 ? 0.0 : *v);
  return buf;
}

nlohmann::json opt_json(std::optional<double> v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace

double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

namespace {

// Sorting first makes the sum independent of sample order, bit for bit.
double ordered_sum(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return pairwise_sum(v);
}

}  // namespace

MetricsReport compute_metrics(std::span<const double> preds, std::span<const double> labels) {
  if (preds.size() != labels.size()) {
    throw ShapeError("compute_metrics: " + std::to_string(preds.size()) + " predictions vs " +
                     std::to_string(labels.size()) + " labels");
  }
  if (preds.empty()) throw ShapeError("compute_metrics needs at least one sample");
  const std::size_t m = preds.size();
  const double dm = static_cast<double>(m);
  std::vector<double> abs_err(m), sq_err(m), pct;
  for (std::size_t i = 0; i < m; ++i) {
    const double e = preds[i] - labels[i];
    abs_err[i] = std::fabs(e);
    sq_err[i] = e * e;
    if (labels[i] > 0.0) pct.push_back(abs_err[i] / labels[i]);
  }
  MetricsReport r;
  r.m = m;
  r.mae = ordered_sum(abs_err) / dm;
  const double ss_res = ordered_sum(sq_err);
  r.mse = ss_res / dm;
  r.mape_excluded = m - pct.size();
  if (!pct.empty()) r.mape = ordered_sum(pct) / static_cast<double>(pct.size());

  const double ybar = ordered_sum({labels.begin(), labels.end()}) / dm;
  std::vector<double> dev(m);
  for (std::size_t i = 0; i < m; ++i) dev[i] = (labels[i] - ybar) * (labels[i] - ybar);
  const double ss_tot = ordered_sum(dev);
  if (ss_tot > 0.0) r.r2 = 1.0 - ss_res / ss_tot;
  return r;
}

std::string fixed4(std::optional<double> v) {
  if (!v) return "undef";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", *v);
  return buf;
}

std::string format_metrics(const MetricsReport& r) {
  return "MAE " + fixed4(r.mae) + "  MSE " + fixed4(r.mse) + "  MAPE " + fixed4(r.mape) + "  R2 " + fixed4(r.r2);
}

nlohmann::json to_json(const MetricsReport& r) {
  return nlohmann::json{{"mae", r.mae},
                        {"mse", r.mse},
                        {"mape", opt_json(r.mape)},
                        {"r2", opt_json(r.r2)},
                        {"m", r.m},
                        {"mape_excluded", r.mape_excluded},
                        {"model_id", r.model_id},
                        {"dataset_id", r.dataset_id},
                        {"timestamp", r.timestamp}};
}

std::vector<double> predict(const TransFusionModel& model, const data::Prepared& data,
                            const std::vector<std::size_t>& rows, std::size_t batch_size) {
  NoGradGuard guard;
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& group : data::batch_order(rows, batch_size, std::nullopt, 0)) {
    const auto batch = data::gather(data, group);
    const auto p = forward_batch(model, batch.x_w, batch.x_v);
    for (double v : p.data()) out.push_back(v);
  }
  return out;
}

MetricsReport evaluate(const TransFusionModel& model, const data::Prepared& data, const std::vector<std::size_t>& rows,
                       std::size_t batch_size) {
  if (rows.empty()) throw ShapeError("evaluate needs a non-empty subset");
  const auto& c = model.cfg;
  if (c.l_w != data.l_w || c.d_w != data.d_w || c.l_v != data.l_v || c.d_v != data.d_v) {
    throw ShapeError("model input geometry does not match the dataset");
  }
  const auto preds = predict(model, data, rows, batch_size);
  std::vector<double> labels;
  labels.reserve(rows.size());
  for (auto i : rows) labels.push_back(data.y[i]);
  auto r = compute_metrics(preds, labels);
  r.timestamp = utc_timestamp();
  return r;
}

std::string utc_timestamp() {
  std::time_t t = std::time(nullptr);
  if (const char* env = std::getenv("SOURCE_DATE_EPOCH")) t = static_cast<std::time_t>(std::strtoll(env, nullptr, 10));
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string ablation_row_name(std::optional<Ablation> a) {
  if (!a) return "full";
  switch (*a) {
    case Ablation::vision_stream: return "-vision";
    case Ablation::wifi_stream: return "-wifi";
    case Ablation::multiscale_cnn: return "-multiscale";
    case Ablation::linear_attention: return "-linear_attention";
  }
  return "?";
}

const AblationRow* AblationReport::find(const std::string& name) const {
  for (const auto& r : rows)
    if (r.name == name) return &r;
  return nullptr;
}

std::optional<double> AblationReport::delta(const AblationRow& row, const std::string& name) const {
  const AblationRow* full = find("full");
  if (!full || !full->metrics || !row.metrics) return std::nullopt;
  const auto a = metric(*row.metrics, name), b = metric(*full->metrics, name);
  if (!a || !b) return std::nullopt;
  return *a - *b;
}

std::string AblationReport::table() const {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-18s %9s %9s %9s %9s %9s %9s %9s %9s\n", "model", "MAE", "MSE", "MAPE", "R2",
                "dMAE", "dMSE", "dMAPE", "dR2");
  os << line;
  for (const auto& r : rows) {
    if (!r.metrics) {
      os << r.name << "  FAILED: " << r.error << '\n';
      continue;
    }
    const auto& m = *r.metrics;
    std::snprintf(line, sizeof line, "%-18s %9s %9s %9s %9s %9s %9s %9s %9s\n", r.name.c_str(), fixed4(m.mae).c_str(),
                  fixed4(m.mse).c_str(), fixed4(m.mape).c_str(), fixed4(m.r2).c_str(), signed4(delta(r, "mae")).c_str(),
                  signed4(delta(r, "mse")).c_str(), signed4(delta(r, "mape")).c_str(), signed4(delta(r, "r2")).c_str());
    os << line;
  }
  return os.str();
}

std::string AblationReport::csv() const {
  std::ostringstream os;
  os << "model,mae,mse,mape,r2,d_mae,d_mse,d_mape,d_r2,best_epoch,parameters,status\n";
  for (const auto& r : rows) {
    os << r.name;
    if (r.metrics) {
      const auto& m = *r.metrics;
      os << ',' << fixed4(m.mae) << ',' << fixed4(m.mse) << ',' << fixed4(m.mape) << ',' << fixed4(m.r2);
      for (const char* k : kMetricNames) os << ',' << signed4(delta(r, k));
      os << ',' << r.best_epoch << ',' << r.parameters << ",ok\n";
    } else {
      os << ",,,,,,,,," << r.best_epoch << ',' << r.parameters << ",failed\n";
    }
  }
  return os.str();
}

nlohmann::json AblationReport::to_json() const {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j{{"model", r.name}, {"best_epoch", r.best_epoch}, {"parameters", r.parameters}};
    if (r.metrics) {
      j["metrics"] = transfusion::to_json(*r.metrics);
      nlohmann::json d;
      for (const char* k : kMetricNames) d[k] = opt_json(delta(r, k));
      j["delta"] = d;
      j["status"] = "ok";
    } else {
      j["status"] = "failed";
      j["error"] = r.error;
    }
    out.push_back(j);
  }
  return nlohmann::json{{"rows", out}};
}

AblationReport ablation_study(const ModelConfig& base, const data::Dataset& ds, const TrainConfig& train_cfg,
                              const AblationOptions& options) {
  const auto prepared = data::prepare(ds);
  const auto train = ds.indices(data::Split::train);
  const auto val = ds.indices(data::Split::val);
  const auto test = ds.indices(data::Split::test);
  const ModelConfig full = data::with_geometry(base, ds.spec);

  std::vector<std::optional<Ablation>> variants{std::nullopt, Ablation::vision_stream, Ablation::wifi_stream,
                                                Ablation::multiscale_cnn, Ablation::linear_attention};
  AblationReport report;
  for (const auto& v : variants) {
    AblationRow row;
    row.name = ablation_row_name(v);
    row.ablation = v;
    try {
      const ModelConfig cfg = v ? ablate(full, *v) : full;
      auto model = build(cfg);
      row.parameters = model.parameter_count();
      FitOptions fo;
      if (options.out_dir) {
        std::filesystem::create_directories(*options.out_dir);
        const std::string stem = v ? "ablate_" + ablation_name(*v) : "full";
        fo.checkpoint_path = *options.out_dir / (stem + ".tfck");
        fo.log_path = *options.out_dir / (stem + "_epochs.csv");
      }
      if (options.on_epoch) fo.on_epoch = [&](const EpochRecord& e) { options.on_epoch(row.name, e); };
      auto res = fit(model, prepared, train, val, train_cfg, fo);
      row.best_epoch = res.log.best_epoch;
      auto m = evaluate(res.best, prepared, test, options.eval_batch_size);
      m.model_id = row.name;
      m.dataset_id = "synthetic-seed" + std::to_string(ds.spec.seed);
      row.metrics = m;
    } catch (const Error& e) {
      row.error = e.what();
    } catch (const std::filesystem::filesystem_error& e) {
      row.error = e.what();
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace transfusion
