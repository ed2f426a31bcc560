#include "transfusion/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "transfusion/checkpoint.hpp"
#include "transfusion/errors.hpp"
#include "transfusion/eval.hpp"
#include "transfusion/grad_check.hpp"
#include "transfusion/ops.hpp"
#include "transfusion/preprocess.hpp"
#include "transfusion/run_config.hpp"

namespace transfusion::cli {

namespace {

namespace fs = std::filesystem;

constexpr const char* kExitCodeHelp =
    "Exit codes: 0 ok, 2 invalid configuration or flags, 3 I/O or file format error,\n"
    "4 non-finite values during training or evaluation, 5 gradcheck failure.";

struct Globals {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> precision;
  std::optional<std::string> out;
};

RunConfig resolve(const Globals& g, const char* default_preset, const std::function<void(RunConfig&)>& flags) {
  RunConfig c = load_run_config(g.config.value_or(default_preset));
  if (g.seed) c.set_seed(*g.seed);
  if (g.precision) c.precision = io::parse_dtype(*g.precision);
  if (g.out) c.out_dir = fs::path(*g.out);
  flags(c);
  c.validate();
  return c;
}

void echo(const RunConfig& c) {
  if (!c.out_dir) return;
  fs::create_directories(*c.out_dir);
  io::write_file_atomic(*c.out_dir / "run_config.json", canonical_json(c));
}

template <class T>
void set_if(const std::optional<T>& v, T& target) {
  if (v) target = *v;
}

std::string dataset_id(const data::Dataset& ds) { return "synthetic-seed" + std::to_string(ds.spec.seed); }

data::Dataset require_dataset(const RunConfig& c, const char* cmd) {
  if (!c.data_dir) throw ConfigError(std::string(cmd) + " needs --data DIR");
  return data::load(*c.data_dir);
}

// ---- synth ----

struct SynthFlags {
  std::optional<std::size_t> counts, per_count;
  std::optional<double> noise;
};

int cmd_synth(const RunConfig& c, std::ostream& out) {
  if (!c.out_dir) throw ConfigError("synth needs --out DIR");
  auto ds = data::generate(c.synth);
  if (!(c.split == data::SplitRatios{})) data::assign_split(ds, c.split, c.synth.seed);
  data::save(ds, *c.out_dir, c.precision);
  echo(c);
  out << ds.samples.size() << " samples (train " << ds.indices(data::Split::train).size() << ", val "
      << ds.indices(data::Split::val).size() << ", test " << ds.indices(data::Split::test).size() << ") -> "
      << c.out_dir->string() << '\n';
  return kOk;
}

// ---- train ----

struct TrainFlags {
  std::optional<std::string> data, streams, attention, residual;
  std::optional<std::size_t> epochs, batch_size, patience, d_model, heads, layers, d_ff;
  std::optional<double> lr, clip_norm;
  bool no_multiscale = false;
  bool quiet = false;
};

void apply(const TrainFlags& f, RunConfig& c) {
  if (f.data) c.data_dir = fs::path(*f.data);
  if (f.streams) c.model.streams = parse_streams(*f.streams);
  if (f.attention) c.model.attention_kernel = nn::parse_kernel(*f.attention);
  if (f.residual) c.model.residual = parse_residual(*f.residual);
  if (f.no_multiscale) c.model.use_multiscale = false;
  set_if(f.epochs, c.train.max_epochs);
  set_if(f.batch_size, c.train.batch_size);
  set_if(f.d_model, c.model.d_model);
  set_if(f.heads, c.model.n_heads);
  set_if(f.layers, c.model.n_layers);
  set_if(f.d_ff, c.model.d_ff);
  set_if(f.lr, c.train.lr);
  if (f.patience) c.train.early_stop_patience = *f.patience;
  if (f.clip_norm) c.train.clip_norm = *f.clip_norm;
}

void print_epoch(std::ostream& out, const EpochRecord& e, const std::string& prefix = "") {
  char line[160];
  std::snprintf(line, sizeof line, "%sepoch %3zu  train_l1 %.4f  val_mae %.4f%s\n", prefix.c_str(), e.epoch,
                e.train_l1, e.val_mae, e.is_best ? "  *" : "");
  out << line << std::flush;
}

int cmd_train(RunConfig c, bool quiet, std::ostream& out) {
  if (!c.out_dir) throw ConfigError("train needs --out DIR");
  const auto ds = require_dataset(c, "train");
  c.synth = ds.spec;
  c.model = data::with_geometry(c.model, ds.spec);
  c.validate();
  echo(c);
  const auto prepared = data::prepare(ds);
  FitOptions fo;
  fo.checkpoint_path = *c.out_dir / "best.tfck";
  fo.log_path = *c.out_dir / "epochs.csv";
  fo.checkpoint_dtype = c.precision;
  if (!quiet) fo.on_epoch = [&](const EpochRecord& e) { print_epoch(out, e); };
  const auto res = fit(build(c.model), prepared, ds.indices(data::Split::train), ds.indices(data::Split::val),
                       c.train, fo);
  char line[160];
  std::snprintf(line, sizeof line, "best epoch %zu  val_mae %.4f%s\n", res.log.best_epoch, res.log.best_val_mae,
                res.log.stopped_early ? "  (stopped early)" : "");
  out << line << "checkpoint " << fo.checkpoint_path->string() << '\n';
  return kOk;
}

// ---- eval ----

int cmd_eval(const RunConfig& c, bool json, std::ostream& out) {
  if (!c.checkpoint) throw ConfigError("eval needs --checkpoint FILE");
  const auto ck = load_checkpoint(*c.checkpoint);
  const auto ds = require_dataset(c, "eval");
  const auto prepared = data::prepare(ds);
  auto m = evaluate(ck.model, prepared, ds.indices(data::parse_split(c.eval_split)), c.eval_batch_size);
  m.model_id = c.checkpoint->stem().string();
  m.dataset_id = dataset_id(ds);
  const auto j = to_json(m);
  if (c.out_dir) {
    echo(c);
    io::write_file_atomic(*c.out_dir / "metrics.json", j.dump(2) + "\n");
  }
  if (json) {
    out << j.dump(2) << '\n';
  } else {
    out << c.eval_split << " (" << m.m << " samples): " << format_metrics(m) << '\n';
  }
  return kOk;
}

// ---- ablate ----

int cmd_ablate(RunConfig c, bool quiet, std::ostream& out) {
  data::Dataset ds;
  if (c.data_dir) {
    ds = data::load(*c.data_dir);
  } else {
    ds = data::generate(c.synth);
    if (!(c.split == data::SplitRatios{})) data::assign_split(ds, c.split, c.synth.seed);
  }
  c.synth = ds.spec;
  c.model = data::with_geometry(c.model, ds.spec);
  c.validate();
  echo(c);
  AblationOptions ao;
  ao.out_dir = c.out_dir;
  ao.eval_batch_size = c.eval_batch_size;
  if (!quiet) ao.on_epoch = [&](const std::string& row, const EpochRecord& e) { print_epoch(out, e, row + "  "); };
  const auto report = ablation_study(c.model, ds, c.train, ao);
  if (c.out_dir) {
    io::write_file_atomic(*c.out_dir / "ablation.txt", report.table());
    io::write_file_atomic(*c.out_dir / "ablation.csv", report.csv());
    io::write_file_atomic(*c.out_dir / "ablation.json", report.to_json().dump(2) + "\n");
  }
  out << report.table();
  for (const auto& r : report.rows)
    if (!r.metrics) return kNumeric;
  return kOk;
}

// ---- hampel ----

struct Series {
  std::optional<std::string> header;
  std::vector<std::vector<double>> columns;
};

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

bool parse_number(const std::string& s, double& v) {
  const char* b = s.c_str();
  char* end = nullptr;
  v = std::strtod(b, &end);
  if (end == b) return false;
  while (*end == ' ' || *end == '\t' || *end == '\r') ++end;
  return *end == '\0';
}

Series read_series(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open input '" + path.string() + "'");
  Series s;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    std::vector<double> row(cells.size());
    bool numeric = true;
    for (std::size_t i = 0; i < cells.size() && numeric; ++i) numeric = parse_number(cells[i], row[i]);
    if (!numeric) {
      if (s.columns.empty() && !s.header) {
        s.header = line;
        continue;
      }
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": not a numeric row");
    }
    if (s.columns.empty()) s.columns.resize(row.size());
    if (row.size() != s.columns.size()) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                        std::to_string(s.columns.size()) + " columns");
    }
    for (std::size_t i = 0; i < row.size(); ++i) s.columns[i].push_back(row[i]);
  }
  if (s.columns.empty()) throw FormatError("'" + path.string() + "' holds no numeric data");
  return s;
}

std::string write_rows(const Series& s, const std::function<std::string(std::size_t, std::size_t)>& cell,
                       std::size_t n) {
  std::ostringstream os;
  if (s.header) os << *s.header << '\n';
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < s.columns.size(); ++c) os << (c ? "," : "") << cell(r, c);
    os << '\n';
  }
  return os.str();
}

int cmd_hampel(const std::optional<std::string>& input, const prep::HampelOptions& opts,
               const std::optional<fs::path>& out_dir, std::ostream& out) {
  if (!input) throw ConfigError("hampel needs --input FILE");
  opts.validate();
  const auto series = read_series(*input);
  std::vector<prep::HampelResult> results;
  std::size_t flagged = 0;
  for (const auto& col : series.columns) {
    results.push_back(prep::hampel_filter(col, opts));
    flagged += results.back().outlier_count();
  }
  const std::size_t n = series.columns[0].size();
  auto value = [&](std::size_t r, std::size_t c) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", results[c].filtered[r]);
    return std::string(buf);
  };
  auto mask = [&](std::size_t r, std::size_t c) { return std::string(results[c].outliers[r] ? "1" : "0"); };
  if (out_dir) {
    fs::create_directories(*out_dir);
    io::write_file_atomic(*out_dir / "filtered.csv", write_rows(series, value, n));
    io::write_file_atomic(*out_dir / "mask.csv", write_rows(series, mask, n));
    out << n << " rows x " << series.columns.size() << " columns, " << flagged << " outliers replaced -> "
        << out_dir->string() << '\n';
  } else {
    out << write_rows(series, value, n);
  }
  return kOk;
}

// ---- gradcheck ----

Tensor uniform(Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

int cmd_gradcheck(const RunConfig& c, std::ostream& out) {
  constexpr double kEps = 1e-4, kTol = 1e-3;
  const auto model = build(c.model);
  std::mt19937_64 rng(c.model.seed);
  const auto xw = uniform({2, c.model.l_w, c.model.d_w}, rng);
  const auto xv = uniform({2, c.model.l_v, c.model.d_v}, rng);
  const auto labels = Tensor::from({2}, {3.0, 1.0});
  const auto rep = grad_check_leaves([&] { return l1_loss(forward_batch(model, xw, xv), labels); },
                                     model.parameters(), kEps, kTol);
  char line[200];
  std::snprintf(line, sizeof line, "%zu parameters: %zu checked, %zu at kinks, max rel err %.3e (tol %.0e)  %s\n",
                model.parameter_count(), rep.checked, rep.kink_coords.size(), rep.max_rel_err, kTol,
                rep.pass ? "PASS" : "FAIL");
  out << line;
  if (!rep.pass) {
    std::snprintf(line, sizeof line, "worst coordinate %zu: analytic %.6e numeric %.6e\n", rep.worst_coord,
                  rep.worst_analytic, rep.worst_numeric);
    out << line;
  }
  return rep.pass ? kOk : kCheck;
}

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multimodal (WiFi CSI + camera) crowd counting: data synthesis, training, evaluation"};
  app.footer(kExitCodeHelp);
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config, "Preset (default, tiny, ablation) or JSON config file");
  app.add_option("--seed", g.seed, "Seed for data, initialization and batch order");
  app.add_option("--precision", g.precision, "Storage dtype for datasets and checkpoints")
      ->check(CLI::IsMember({"f32", "f64"}));
  app.add_option("--out", g.out, "Output directory");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  SynthFlags sf;
  synth->add_option("--counts", sf.counts, "Largest person count (labels 0..N)");
  synth->add_option("--per-count", sf.per_count, "Samples per count");
  synth->add_option("--noise", sf.noise, "Sensor noise std");

  TrainFlags tf;
  auto add_model_flags = [&](CLI::App* cmd) {
    cmd->add_option("--data", tf.data, "Dataset directory");
    cmd->add_option("--streams", tf.streams, "both, wifi_only or vision_only");
    cmd->add_option("--attention", tf.attention, "linear or softmax");
    cmd->add_option("--residual", tf.residual, "normalized or raw");
    cmd->add_flag("--no-multiscale", tf.no_multiscale, "Drop the multi-scale conv sub-layer");
    cmd->add_option("--d-model", tf.d_model);
    cmd->add_option("--heads", tf.heads);
    cmd->add_option("--layers", tf.layers);
    cmd->add_option("--d-ff", tf.d_ff);
    cmd->add_option("--epochs", tf.epochs, "Maximum epochs");
    cmd->add_option("--batch-size", tf.batch_size);
    cmd->add_option("--lr", tf.lr);
    cmd->add_option("--patience", tf.patience, "Early-stopping patience in epochs");
    cmd->add_option("--clip-norm", tf.clip_norm, "Global gradient-norm clip");
    cmd->add_flag("--quiet", tf.quiet, "No per-epoch lines");
  };
  auto* train = app.add_subcommand("train", "Train one model; writes best.tfck and epochs.csv");
  add_model_flags(train);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  std::optional<std::string> ckpt, eval_data, eval_split;
  std::optional<std::size_t> eval_bs;
  bool json = false;
  eval->add_option("--checkpoint", ckpt, "Checkpoint file");
  eval->add_option("--data", eval_data, "Dataset directory");
  eval->add_option("--split", eval_split, "train, val or test");
  eval->add_option("--batch-size", eval_bs);
  eval->add_flag("--json", json, "Print the metrics as JSON");

  auto* ablate = app.add_subcommand("ablate", "Train the full model and four ablations; prints a 5-row table");
  add_model_flags(ablate);

  auto* hampel = app.add_subcommand("hampel", "Hampel-filter a numeric series (one column or CSV)");
  std::optional<std::string> input;
  prep::HampelOptions hopts;
  std::string mode = "mad";
  hampel->add_option("--input", input, "Input file");
  hampel->add_option("--k", hopts.half_width, "Window half-width K");
  hampel->add_option("--nsigma", hopts.n_sigmas, "Threshold in sigmas");
  hampel->add_option("--mode", mode, "Scale estimate: mad or std")->check(CLI::IsMember({"mad", "std"}));

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every model parameter");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfig;
  }

  if (synth->parsed()) {
    return cmd_synth(resolve(g, "default",
                             [&](RunConfig& c) {
                               set_if(sf.counts, c.synth.n_counts);
                               set_if(sf.per_count, c.synth.samples_per_count);
                               set_if(sf.noise, c.synth.noise_std);
                             }),
                     out);
  }
  if (train->parsed()) return cmd_train(resolve(g, "default", [&](RunConfig& c) { apply(tf, c); }), tf.quiet, out);
  if (ablate->parsed()) {
    return cmd_ablate(resolve(g, "ablation", [&](RunConfig& c) { apply(tf, c); }), tf.quiet, out);
  }
  if (eval->parsed()) {
    return cmd_eval(resolve(g, "default",
                            [&](RunConfig& c) {
                              if (ckpt) c.checkpoint = fs::path(*ckpt);
                              if (eval_data) c.data_dir = fs::path(*eval_data);
                              set_if(eval_split, c.eval_split);
                              set_if(eval_bs, c.eval_batch_size);
                            }),
                    json, out);
  }
  if (hampel->parsed()) {
    hopts.sigma_mode = prep::parse_sigma_mode(mode);
    std::optional<fs::path> dir;
    if (g.out) dir = fs::path(*g.out);
    return cmd_hampel(input, hopts, dir, out);
  }
  if (gradcheck->parsed()) {
    const auto c = resolve(g, "tiny", [](RunConfig&) {});
    echo(c);
    return cmd_gradcheck(c, out);
  }
  return kInternal;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  try {
    return dispatch(argc, argv, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const ShapeError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << '\n';
    return kIo;
  } catch (const fs::filesystem_error& e) {
    err << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kInternal;
  }
}

}  // namespace transfusion::cli
