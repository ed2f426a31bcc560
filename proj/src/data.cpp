#include "transfusion/data.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>

namespace transfusion::data {

namespace {

constexpr std::uint64_t kCsiStream = 1;
constexpr std::uint64_t kImageStream = 2;
constexpr std::uint64_t kSplitStream = 0x53504c4954ULL;
constexpr std::uint64_t kBatchStream = 0x4241544348ULL;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string sample_id(std::size_t count, std::size_t rep) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "c%03zu_r%04zu", count, rep);
  return buf;
}

Tensor columns_standardized(const Tensor& csi, const CsiStats& st) {
  const std::size_t l = csi.dim(0), d = csi.dim(1);
  std::vector<double> out(csi.data().begin(), csi.data().end());
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = (out[i * d + j] - st.mean[j]) / st.std[j];
  return Tensor::from({l, d}, std::move(out));
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(splitmix64(seed) ^ a) ^ (b * 0x632be59bd9b4e019ULL));
}

void SyntheticSpec::validate() const {
  if (samples_per_count == 0) throw ConfigError("samples_per_count must be positive");
  if (l_w == 0 || d_w == 0 || h == 0 || w == 0 || c == 0 || p == 0) throw ConfigError("dimensions must be positive");
  if (h % p != 0 || w % p != 0) throw ConfigError("patch size must divide the image height and width");
  if (n_packets < l_w) throw ConfigError("n_packets must be at least l_w");
  if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be non-negative");
  if (!(illumination_jitter >= 0.0 && illumination_jitter < 1.0)) {
    throw ConfigError("illumination_jitter must lie in [0, 1)");
  }
  if (!(occlusion >= 0.0 && occlusion < 1.0)) throw ConfigError("occlusion must lie in [0, 1)");
  if (!(hidden_prob >= 0.0 && hidden_prob < 1.0)) throw ConfigError("hidden_prob must lie in [0, 1)");
  if (!(sample_rate_hz > 0.0)) throw ConfigError("sample_rate_hz must be positive");
  if (hampel_k == 0) throw ConfigError("hampel_k must be at least 1");
}

void to_json(nlohmann::json& j, const SyntheticSpec& s) {
  j = nlohmann::json{{"n_counts", s.n_counts},
                     {"samples_per_count", s.samples_per_count},
                     {"l_w", s.l_w},
                     {"d_w", s.d_w},
                     {"h", s.h},
                     {"w", s.w},
                     {"c", s.c},
                     {"p", s.p},
                     {"noise_std", s.noise_std},
                     {"illumination_jitter", s.illumination_jitter},
                     {"occlusion", s.occlusion},
                     {"hidden_prob", s.hidden_prob},
                     {"n_packets", s.n_packets},
                     {"sample_rate_hz", s.sample_rate_hz},
                     {"hampel_k", s.hampel_k},
                     {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, SyntheticSpec& s) {
  try {
    SyntheticSpec d;
    s.n_counts = j.value("n_counts", d.n_counts);
    s.samples_per_count = j.value("samples_per_count", d.samples_per_count);
    s.l_w = j.value("l_w", d.l_w);
    s.d_w = j.value("d_w", d.d_w);
    s.h = j.value("h", d.h);
    s.w = j.value("w", d.w);
    s.c = j.value("c", d.c);
    s.p = j.value("p", d.p);
    s.noise_std = j.value("noise_std", d.noise_std);
    s.illumination_jitter = j.value("illumination_jitter", d.illumination_jitter);
    s.occlusion = j.value("occlusion", d.occlusion);
    s.hidden_prob = j.value("hidden_prob", d.hidden_prob);
    s.n_packets = j.value("n_packets", d.n_packets);
    s.sample_rate_hz = j.value("sample_rate_hz", d.sample_rate_hz);
    s.hampel_k = j.value("hampel_k", d.hampel_k);
    s.seed = j.value("seed", d.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synthetic spec: ") + e.what());
  }
}

ModelConfig with_geometry(ModelConfig cfg, const SyntheticSpec& spec) {
  cfg.l_w = spec.l_w;
  cfg.d_w = spec.d_w;
  cfg.l_v = spec.l_v();
  cfg.d_v = spec.d_v();
  return cfg;
}

std::string split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw ConfigError("unknown split '" + name + "' (expected train, val or test)");
}

std::vector<std::size_t> Dataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignment.size(); ++i)
    if (assignment[i] == s) out.push_back(i);
  return out;
}

// Static path attenuated by the people in the room, a slow per-feature
// sinusoid, and one rotating multipath phasor per person whose strength
// decays with the person index. Complex Gaussian noise and sparse impulsive
// spikes are added before and after taking the magnitude.
Tensor raw_csi(const SyntheticSpec& spec, std::size_t count, std::size_t rep) {
  std::mt19937_64 rng(derive_seed(spec.seed, derive_seed(count, rep), kCsiStream));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  constexpr double kTwoPi = 2.0 * std::numbers::pi;

  const std::size_t n = spec.n_packets, d = spec.d_w;
  const double env_gain = uni(0.95, 1.05);
  const double attenuation = std::exp(-0.05 * static_cast<double>(count));
  const double env_phase = uni(0.0, kTwoPi);
  const double base_freq = uni(0.05, 0.2);

  std::vector<double> base_amp(d), base_phase(d), slow_phase(d);
  for (std::size_t j = 0; j < d; ++j) {
    base_amp[j] = 1.0 + 0.3 * std::sin(kTwoPi * 1.5 * static_cast<double>(j) / static_cast<double>(d) + env_phase);
    base_phase[j] = 0.3 * static_cast<double>(j);
    slow_phase[j] = uni(0.0, kTwoPi);
  }

  struct Person {
    double amp, freq, phase, slope;
  };
  std::vector<Person> people(count);
  for (std::size_t k = 0; k < count; ++k) {
    people[k] = {0.25 * std::pow(0.9, static_cast<double>(k)) * uni(0.8, 1.2), uni(0.3, 2.0), uni(0.0, kTwoPi),
                 uni(-0.5, 0.5)};
  }

  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> amp(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / spec.sample_rate_hz;
    for (std::size_t j = 0; j < d; ++j) {
      const double r = env_gain * attenuation * base_amp[j] * (1.0 + 0.05 * std::sin(kTwoPi * base_freq * t + slow_phase[j]));
      std::complex<double> hj = std::polar(r, base_phase[j]);
      for (const auto& p : people) {
        hj += std::polar(p.amp, kTwoPi * p.freq * t + p.phase + p.slope * static_cast<double>(j));
      }
      if (spec.noise_std > 0.0) hj += std::complex<double>(spec.noise_std * noise(rng), spec.noise_std * noise(rng));
      double a = std::abs(hj);
      if (spec.noise_std > 0.0 && u01(rng) < 0.002) a *= 5.0;
      amp[i * d + j] = a;
    }
  }
  return Tensor::from({n, d}, std::move(amp));
}

// Background plus one Gaussian blob per person, dimmed by a per-person
// visibility factor and a per-frame illumination gain. A person may also be
// entirely out of view. Blob centres keep 3 sigma
// from the border and are re-drawn (up to 200 times) to stay 2.5 sigma apart.
Tensor render_image(const SyntheticSpec& spec, std::size_t count, std::size_t rep) {
  std::mt19937_64 rng(derive_seed(spec.seed, derive_seed(count, rep), kImageStream));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double sigma = kBlobSigmaPerPatch * static_cast<double>(spec.p);
  const double margin = 3.0 * sigma;
  auto coord_range = [&](std::size_t extent) {
    const double lo = margin, hi = static_cast<double>(extent) - 1.0 - margin;
    return hi > lo ? std::pair{lo, hi} : std::pair{0.0, static_cast<double>(extent) - 1.0};
  };
  const auto [ylo, yhi] = coord_range(spec.h);
  const auto [xlo, xhi] = coord_range(spec.w);
  const double gain = 1.0 + spec.illumination_jitter * (2.0 * u01(rng) - 1.0);

  std::vector<std::pair<double, double>> centres;
  std::vector<double> visibility;
  const double min_dist2 = (2.5 * sigma) * (2.5 * sigma);
  for (std::size_t k = 0; k < count; ++k) {
    std::pair<double, double> cand;
    for (int attempt = 0; attempt < 200; ++attempt) {
      cand = {ylo + (yhi - ylo) * u01(rng), xlo + (xhi - xlo) * u01(rng)};
      bool ok = true;
      for (const auto& [cy, cx] : centres) {
        const double dy = cand.first - cy, dx = cand.second - cx;
        if (dy * dy + dx * dx < min_dist2) {
          ok = false;
          break;
        }
      }
      if (ok) break;
    }
    centres.push_back(cand);
    const double shade = 1.0 - spec.occlusion * u01(rng);
    visibility.push_back(u01(rng) < spec.hidden_prob ? 0.0 : shade);
  }

  std::normal_distribution<double> noise(0.0, spec.noise_std > 0.0 ? spec.noise_std : 1.0);
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  std::vector<double> img(spec.h * spec.w * spec.c);
  for (std::size_t y = 0; y < spec.h; ++y) {
    for (std::size_t x = 0; x < spec.w; ++x) {
      double v = kBackground;
      for (std::size_t k = 0; k < centres.size(); ++k) {
        const double dy = static_cast<double>(y) - centres[k].first, dx = static_cast<double>(x) - centres[k].second;
        v += kBlobAmplitude * gain * visibility[k] * std::exp(-(dy * dy + dx * dx) * inv2s2);
      }
      v = std::clamp(v, 0.0, 1.0);
      for (std::size_t ch = 0; ch < spec.c; ++ch) {
        double pix = v;
        if (spec.noise_std > 0.0) pix = std::clamp(pix + noise(rng), 0.0, 1.0);
        img[(y * spec.w + x) * spec.c + ch] = pix;
      }
    }
  }
  return Tensor::from({spec.h, spec.w, spec.c}, std::move(img));
}

Sample make_sample(const SyntheticSpec& spec, std::size_t count, std::size_t rep) {
  prep::RawCsiWindow raw{raw_csi(spec, count, rep), spec.sample_rate_hz,
                         static_cast<double>(spec.n_packets) / spec.sample_rate_hz};
  raw.packets = prep::hampel_columns(raw.packets, prep::HampelOptions{spec.hampel_k, 3.0, prep::SigmaMode::mad});
  Sample s;
  s.id = sample_id(count, rep);
  s.csi = prep::resample_window(raw, spec.l_w, prep::ResampleMethod::mean_pool);
  s.image = render_image(spec, count, rep);
  s.csi_label = count;
  s.img_label = count;
  return s;
}

Dataset generate(const SyntheticSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.spec = spec;
  ds.samples.reserve(spec.total_samples());
  for (std::size_t n = 0; n <= spec.n_counts; ++n)
    for (std::size_t r = 0; r < spec.samples_per_count; ++r) ds.samples.push_back(make_sample(spec, n, r));
  assign_split(ds, SplitRatios{}, spec.seed);
  return ds;
}

SplitIndices split(std::size_t m, const SplitRatios& ratios, std::uint64_t seed) {
  if (m == 0) throw ShapeError("cannot split an empty dataset");
  if (ratios.train == 0 || ratios.val == 0 || ratios.test == 0) throw ConfigError("split ratios must be positive");
  std::vector<std::size_t> perm(m);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, kSplitStream));
  std::shuffle(perm.begin(), perm.end(), rng);
  const std::size_t total = ratios.train + ratios.val + ratios.test;
  const std::size_t n_train = m * ratios.train / total;
  const std::size_t n_val = m * ratios.val / total;
  SplitIndices out;
  out.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.val.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train),
                 perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  out.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), perm.end());
  return out;
}

void assign_split(Dataset& ds, const SplitRatios& ratios, std::uint64_t seed) {
  auto s = split(ds.samples.size(), ratios, seed);
  ds.assignment.assign(ds.samples.size(), Split::train);
  for (auto i : s.val) ds.assignment[i] = Split::val;
  for (auto i : s.test) ds.assignment[i] = Split::test;
  ds.split_seed = seed;
  ds.ratios = ratios;
  std::sort(s.train.begin(), s.train.end());
  ds.stats = csi_stats(ds, s.train.empty() ? ds.indices(Split::val) : s.train);
}

CsiStats csi_stats(const Dataset& ds, const std::vector<std::size_t>& rows) {
  const std::size_t d = ds.spec.d_w;
  CsiStats st{std::vector<double>(d, 0.0), std::vector<double>(d, 1.0)};
  if (rows.empty()) return st;
  std::vector<double> sum(d, 0.0), sumsq(d, 0.0);
  std::size_t count = 0;
  for (auto r : rows) {
    const auto& csi = ds.samples[r].csi;
    const std::size_t l = csi.dim(0);
    auto v = csi.data();
    for (std::size_t i = 0; i < l; ++i)
      for (std::size_t j = 0; j < d; ++j) sum[j] += v[i * d + j];
    count += l;
  }
  for (std::size_t j = 0; j < d; ++j) st.mean[j] = sum[j] / static_cast<double>(count);
  for (auto r : rows) {
    const auto& csi = ds.samples[r].csi;
    auto v = csi.data();
    for (std::size_t i = 0; i < csi.dim(0); ++i)
      for (std::size_t j = 0; j < d; ++j) sumsq[j] += (v[i * d + j] - st.mean[j]) * (v[i * d + j] - st.mean[j]);
  }
  for (std::size_t j = 0; j < d; ++j) {
    const double sd = std::sqrt(sumsq[j] / static_cast<double>(count));
    st.std[j] = sd > 1e-12 ? sd : 1.0;
  }
  return st;
}

Prepared prepare(const Dataset& ds) {
  Prepared p;
  p.l_w = ds.spec.l_w;
  p.d_w = ds.spec.d_w;
  p.l_v = ds.spec.l_v();
  p.d_v = ds.spec.d_v();
  for (const auto& s : ds.samples) {
    p.x_w.push_back(columns_standardized(s.csi, ds.stats));
    p.x_v.push_back(prep::patchify(s.image, ds.spec.p));
    p.y.push_back(static_cast<double>(s.label()));
  }
  return p;
}

std::vector<std::vector<std::size_t>> batch_order(const std::vector<std::size_t>& subset, std::size_t batch_size,
                                                  std::optional<std::uint64_t> shuffle_seed, std::size_t epoch) {
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  std::vector<std::size_t> order = subset;
  if (shuffle_seed) {
    std::mt19937_64 rng(derive_seed(*shuffle_seed, kBatchStream, epoch));
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch_size)));
  }
  return out;
}

Batch gather(const Prepared& data, const std::vector<std::size_t>& rows) {
  if (rows.empty()) throw ShapeError("cannot gather an empty batch");
  const std::size_t b = rows.size();
  std::vector<double> w, v, y;
  w.reserve(b * data.l_w * data.d_w);
  v.reserve(b * data.l_v * data.d_v);
  for (auto r : rows) {
    if (r >= data.size()) throw ShapeError("batch index out of range");
    auto xw = data.x_w[r].data();
    auto xv = data.x_v[r].data();
    w.insert(w.end(), xw.begin(), xw.end());
    v.insert(v.end(), xv.begin(), xv.end());
    y.push_back(data.y[r]);
  }
  return Batch{Tensor::from({b, data.l_w, data.d_w}, std::move(w)), Tensor::from({b, data.l_v, data.d_v}, std::move(v)),
               Tensor::from({b}, std::move(y)), rows};
}

nlohmann::json manifest(const Dataset& ds) {
  nlohmann::json samples = nlohmann::json::array();
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    samples.push_back({{"id", s.id},
                       {"csi_label", s.csi_label},
                       {"img_label", s.img_label},
                       {"split", split_name(ds.assignment.at(i))}});
  }
  return nlohmann::json{{"format_version", kManifestVersion},
                        {"spec", ds.spec},
                        {"split_seed", ds.split_seed},
                        {"split_ratios", {ds.ratios.train, ds.ratios.val, ds.ratios.test}},
                        {"csi_stats", {{"mean", ds.stats.mean}, {"std", ds.stats.std}}},
                        {"samples", samples}};
}

void save(const Dataset& ds, const std::filesystem::path& dir, io::DType dtype) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "csi", ec);
  if (!ec) fs::create_directories(dir / "img", ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());
  for (const auto& s : ds.samples) {
    io::save_tensor(dir / "csi" / (s.id + ".tftn"), s.csi, dtype);
    io::save_tensor(dir / "img" / (s.id + ".tftn"), s.image, dtype);
  }
  // Manifest last: a directory with a manifest is complete.
  io::write_file_atomic(dir / "manifest.json", manifest(ds).dump(2) + "\n");
}

Dataset load(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const auto mpath = dir / "manifest.json";
  std::ifstream in(mpath);
  if (!in) throw IoError("missing dataset manifest " + mpath.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(mpath.string() + ": malformed JSON: " + e.what());
  }
  if (!j.is_object() || !j.contains("format_version")) throw FormatError(mpath.string() + ": no format_version");
  if (j["format_version"] != kManifestVersion) {
    throw VersionError(mpath.string() + ": unsupported manifest version " + j["format_version"].dump());
  }
  Dataset ds;
  try {
    ds.spec = j.at("spec").get<SyntheticSpec>();
    ds.split_seed = j.at("split_seed").get<std::uint64_t>();
    const auto r = j.at("split_ratios");
    ds.ratios = {r.at(0).get<std::size_t>(), r.at(1).get<std::size_t>(), r.at(2).get<std::size_t>()};
    ds.stats.mean = j.at("csi_stats").at("mean").get<std::vector<double>>();
    ds.stats.std = j.at("csi_stats").at("std").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(mpath.string() + ": " + e.what());
  }
  const Shape csi_shape{ds.spec.l_w, ds.spec.d_w};
  const Shape img_shape{ds.spec.h, ds.spec.w, ds.spec.c};
  for (const auto& e : j.at("samples")) {
    Sample s;
    try {
      s.id = e.at("id").get<std::string>();
      s.csi_label = e.at("csi_label").get<std::size_t>();
      s.img_label = e.at("img_label").get<std::size_t>();
      ds.assignment.push_back(parse_split(e.at("split").get<std::string>()));
    } catch (const nlohmann::json::exception& ex) {
      throw FormatError(mpath.string() + ": bad sample entry: " + ex.what());
    }
    if (s.csi_label != s.img_label) {
      throw LabelMismatchError("sample " + s.id + ": CSI label " + std::to_string(s.csi_label) +
                               " disagrees with image label " + std::to_string(s.img_label));
    }
    for (const auto& [sub, shape, slot] : {std::tuple{"csi", csi_shape, &s.csi}, std::tuple{"img", img_shape, &s.image}}) {
      const auto path = dir / sub / (s.id + ".tftn");
      if (!fs::exists(path)) throw IoError("missing sample file " + path.string());
      *slot = io::load_tensor(path);
      if (slot->shape() != shape) {
        throw FormatError(path.string() + ": shape " + shape_str(slot->shape()) + ", expected " + shape_str(shape));
      }
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace transfusion::data
