#include "transfusion/run_config.hpp"

#include <fstream>
#include <sstream>

#include "transfusion/errors.hpp"

namespace transfusion {

namespace {

nlohmann::json opt_path(const std::optional<std::filesystem::path>& p) {
  return p ? nlohmann::json(p->string()) : nlohmann::json(nullptr);
}

std::optional<std::filesystem::path> read_path(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return std::filesystem::path(j[key].get<std::string>());
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  train.validate();
  synth.validate();
  if (split.train == 0 || split.val == 0 || split.test == 0) throw ConfigError("split ratios must all be positive");
  if (eval_batch_size == 0) throw ConfigError("eval batch size must be at least 1");
  data::parse_split(eval_split);
}

void RunConfig::set_seed(std::uint64_t seed) {
  model.seed = seed;
  train.seed = seed;
  synth.seed = seed;
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{{"model", c.model},
                     {"train", c.train},
                     {"synth", c.synth},
                     {"split", {{"train", c.split.train}, {"val", c.split.val}, {"test", c.split.test}}},
                     {"precision", io::dtype_name(c.precision)},
                     {"eval", {{"batch_size", c.eval_batch_size}, {"split", c.eval_split}}},
                     {"paths", {{"data", opt_path(c.data_dir)}, {"checkpoint", opt_path(c.checkpoint)},
                                {"out", opt_path(c.out_dir)}}}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  try {
    RunConfig d;
    c.model = j.value("model", nlohmann::json::object()).get<ModelConfig>();
    c.train = j.value("train", nlohmann::json::object()).get<TrainConfig>();
    c.synth = j.value("synth", nlohmann::json::object()).get<data::SyntheticSpec>();
    const auto s = j.value("split", nlohmann::json::object());
    c.split = {s.value("train", d.split.train), s.value("val", d.split.val), s.value("test", d.split.test)};
    c.precision = io::parse_dtype(j.value("precision", io::dtype_name(d.precision)));
    const auto e = j.value("eval", nlohmann::json::object());
    c.eval_batch_size = e.value("batch_size", d.eval_batch_size);
    c.eval_split = e.value("split", d.eval_split);
    const auto p = j.value("paths", nlohmann::json::object());
    c.data_dir = read_path(p, "data");
    c.checkpoint = read_path(p, "checkpoint");
    c.out_dir = read_path(p, "out");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
}

std::vector<std::string> preset_names() { return {"default", "tiny", "ablation"}; }

bool is_preset(const std::string& name) {
  for (const auto& n : preset_names())
    if (n == name) return true;
  return false;
}

RunConfig preset(const std::string& name) {
  RunConfig c;
  if (name == "default") return c;
  if (name == "tiny") {
    c.model = ModelConfig::tiny();
    c.synth.n_counts = 3;
    c.synth.samples_per_count = 4;
    c.synth.l_w = c.model.l_w;
    c.synth.d_w = c.model.d_w;
    c.synth.h = c.synth.w = 8;
    c.synth.p = 4;
    c.synth.n_packets = 120;
    c.synth.sample_rate_hz = 30.0;
    c.train.max_epochs = 500;
    c.train.batch_size = 16;
    c.model = data::with_geometry(c.model, c.synth);
    return c;
  }
  if (name == "ablation") {
    c.synth.n_counts = 10;
    c.synth.samples_per_count = 30;
    c.model.d_model = 16;
    c.model.n_heads = 2;
    c.model.n_layers = 1;
    c.model.d_ff = 32;
    // One linear map per patch; a width-3 window over raster-ordered patches
    // triples the largest weight matrix and overfits 264 training samples.
    c.model.embed_kernel_v = 1;
    c.train.max_epochs = 80;
    return c;
  }
  throw ConfigError("unknown preset '" + name + "'");
}

RunConfig overlay(const RunConfig& base, const nlohmann::json& patch) {
  if (!patch.is_object()) throw ConfigError("run config must be a JSON object");
  nlohmann::json merged = base;
  nlohmann::json p = patch;
  p.erase("preset");
  merged.merge_patch(p);
  RunConfig out = merged.get<RunConfig>();
  out.validate();
  return out;
}

RunConfig load_run_config(const std::string& spec) {
  if (is_preset(spec)) return preset(spec);
  std::ifstream in(spec);
  if (!in) throw IoError("cannot open config file '" + spec + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file '" + spec + "': " + e.what());
  }
  std::string base = "default";
  if (j.is_object() && j.contains("preset")) {
    if (!j["preset"].is_string()) throw ConfigError("\"preset\" must be a string");
    base = j["preset"].get<std::string>();
  }
  return overlay(preset(base), j);
}

std::string canonical_json(const RunConfig& c) {
  // nlohmann::json objects are std::map backed, so dump() is key-sorted.
  return nlohmann::json(c).dump(2) + "\n";
}

}  // namespace transfusion
