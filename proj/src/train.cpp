#include "transfusion/train.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "transfusion/checkpoint.hpp"
#include "transfusion/eval.hpp"
#include "transfusion/ops.hpp"

namespace transfusion {

namespace {

void adam_update(const std::vector<std::pair<std::string, Tensor>>& params, AdamState& st, const TrainConfig& cfg,
                 double grad_scale) {
  if (st.m.size() != params.size() || st.v.size() != params.size()) {
    throw ShapeError("optimizer state does not match the parameter list");
  }
  for (const auto& [name, p] : params) {
    for (double g : p.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + name + "'");
    }
  }
  st.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i].second;
    auto g = p.grad();
    auto w = p.mutable_data();
    auto& m = st.m[i];
    auto& v = st.v[i];
    if (m.size() != w.size()) throw ShapeError("optimizer state shape mismatch for '" + params[i].first + "'");
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g.empty() ? 0.0 : g[k] * grad_scale;
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
      w[k] -= cfg.lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg.eps_adam);
    }
  }
}

double global_grad_norm(const std::vector<std::pair<std::string, Tensor>>& params) {
  double ss = 0.0;
  for (const auto& [name, p] : params)
    for (double g : p.grad()) ss += g * g;
  return std::sqrt(ss);
}

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0, 1)");
  if (!(eps_adam > 0.0)) throw ConfigError("eps_adam must be positive");
  if (max_epochs == 0) throw ConfigError("max_epochs must be at least 1");
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (early_stop_patience && *early_stop_patience == 0) throw ConfigError("early_stop_patience must be at least 1");
  if (clip_norm && !(*clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"lr", c.lr},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"eps_adam", c.eps_adam},
                     {"max_epochs", c.max_epochs},
                     {"batch_size", c.batch_size},
                     {"seed", c.seed},
                     {"optimizer", TrainConfig::kOptimizer},
                     {"selection", TrainConfig::kSelection}};
  j["early_stop_patience"] = c.early_stop_patience ? nlohmann::json(*c.early_stop_patience) : nlohmann::json(nullptr);
  j["clip_norm"] = c.clip_norm ? nlohmann::json(*c.clip_norm) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  try {
    TrainConfig d;
    c.lr = j.value("lr", d.lr);
    c.beta1 = j.value("beta1", d.beta1);
    c.beta2 = j.value("beta2", d.beta2);
    c.eps_adam = j.value("eps_adam", d.eps_adam);
    c.max_epochs = j.value("max_epochs", d.max_epochs);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.seed = j.value("seed", d.seed);
    if (j.contains("optimizer") && j["optimizer"] != TrainConfig::kOptimizer) {
      throw ConfigError("only the adam optimizer is supported");
    }
    if (j.contains("selection") && j["selection"] != TrainConfig::kSelection) {
      throw ConfigError("only best_val_mae selection is supported");
    }
    c.early_stop_patience.reset();
    if (j.contains("early_stop_patience") && !j["early_stop_patience"].is_null()) {
      c.early_stop_patience = j["early_stop_patience"].get<std::size_t>();
    }
    c.clip_norm.reset();
    if (j.contains("clip_norm") && !j["clip_norm"].is_null()) c.clip_norm = j["clip_norm"].get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
}

AdamState AdamState::zeros_like(const std::vector<Tensor>& params) {
  AdamState st;
  for (const auto& p : params) {
    st.m.emplace_back(p.numel(), 0.0);
    st.v.emplace_back(p.numel(), 0.0);
  }
  return st;
}

void adam_step(const std::vector<std::pair<std::string, Tensor>>& params, AdamState& state, const TrainConfig& cfg) {
  adam_update(params, state, cfg, 1.0);
}

std::string epoch_csv(const TrainLog& log) {
  std::ostringstream os;
  os << "epoch,train_l1,val_mae,val_mse,is_best\n";
  for (const auto& e : log.epochs) {
    os << e.epoch << ',' << fmt(e.train_l1) << ',' << fmt(e.val_mae) << ',' << fmt(e.val_mse) << ','
       << (e.is_best ? 1 : 0) << '\n';
  }
  return os.str();
}

FitResult fit(const TransFusionModel& init, const data::Prepared& data, const std::vector<std::size_t>& train,
              const std::vector<std::size_t>& val, const TrainConfig& cfg, const FitOptions& options) {
  cfg.validate();
  if (train.empty() || val.empty()) throw ShapeError("fit needs non-empty train and validation subsets");
  const auto& mc = init.cfg;
  if (mc.l_w != data.l_w || mc.d_w != data.d_w || mc.l_v != data.l_v || mc.d_v != data.d_v) {
    throw ShapeError("model input geometry does not match the dataset");
  }

  TransFusionModel model = clone(init);
  const auto params = model.named_parameters();
  std::vector<Tensor> plist;
  for (const auto& [n, t] : params) plist.push_back(t);

  FitResult res{clone(init), AdamState::zeros_like(plist), {}};
  AdamState state = res.state;
  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto order = data::batch_order(train, cfg.batch_size, cfg.seed, epoch);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < order.size(); ++b) {
      const auto batch = data::gather(data, order[b]);
      for (auto& p : plist) p.zero_grad();
      Tape::current().clear();
      Tensor loss;
      try {
        loss = l1_loss(forward_batch(model, batch.x_w, batch.x_v), batch.y);
      } catch (const NumericError& e) {
        Tape::current().clear();
        throw NumericError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) + ": " + e.what());
      }
      if (!std::isfinite(loss.item())) {
        Tape::current().clear();
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b));
      }
      backward(loss);
      double scale = 1.0;
      if (cfg.clip_norm) {
        const double norm = global_grad_norm(params);
        if (norm > *cfg.clip_norm) scale = *cfg.clip_norm / norm;
      }
      try {
        adam_update(params, state, cfg, scale);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) + ": " + e.what());
      }
      loss_sum += loss.item() * static_cast<double>(order[b].size());
    }

    const auto preds = predict(model, data, val, cfg.batch_size);
    std::vector<double> labels;
    for (auto i : val) labels.push_back(data.y[i]);
    const auto m = compute_metrics(preds, labels);

    EpochRecord rec{epoch, loss_sum / static_cast<double>(train.size()), m.mae, m.mse, m.mae < best};
    if (!std::isfinite(rec.val_mae)) throw NumericError("non-finite validation MAE at epoch " + std::to_string(epoch));
    if (rec.is_best) {
      best = rec.val_mae;
      since_best = 0;
      restore(res.best, snapshot(model));
      res.state = state;
      res.log.best_epoch = epoch;
      res.log.best_val_mae = best;
      if (options.checkpoint_path) save_checkpoint(*options.checkpoint_path, res.best, &res.state, options.checkpoint_dtype);
    } else {
      ++since_best;
    }
    res.log.epochs.push_back(rec);
    if (options.log_path) io::write_file_atomic(*options.log_path, epoch_csv(res.log));
    if (options.on_epoch) options.on_epoch(rec);
    if (cfg.early_stop_patience && since_best >= *cfg.early_stop_patience) {
      res.log.stopped_early = true;
      break;
    }
  }
  return res;
}

}  // namespace transfusion
