#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "transfusion/model.hpp"
#include "transfusion/preprocess.hpp"
#include "transfusion/serialize.hpp"
#include "transfusion/tensor.hpp"

namespace transfusion::data {

// Parameters of the synthetic meeting-room generator. Every sample is a
// (CSI window, camera frame) pair recorded with `count` people present.
struct SyntheticSpec {
  std::size_t n_counts = 44;  // labels 0..n_counts
  std::size_t samples_per_count = 100;
  std::size_t l_w = 100;
  std::size_t d_w = 30;
  std::size_t h = 64, w = 64, c = 1, p = 16;
  double noise_std = 0.05;
  // Per-frame gain on blob brightness drawn from 1 +- illumination_jitter.
  double illumination_jitter = 0.2;
  // Each person is partly hidden: blob brightness scaled by U(1 - occlusion, 1).
  double occlusion = 0.4;
  // Probability that a person is fully out of the camera's view.
  double hidden_prob = 0.15;
  std::size_t n_packets = 2000;
  double sample_rate_hz = 500.0;
  std::size_t hampel_k = 5;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t l_v() const { return (h / p) * (w / p); }
  std::size_t d_v() const { return p * p * c; }
  std::size_t total_samples() const { return (n_counts + 1) * samples_per_count; }
  bool operator==(const SyntheticSpec&) const = default;
};

void to_json(nlohmann::json& j, const SyntheticSpec& s);
void from_json(const nlohmann::json& j, SyntheticSpec& s);

// Model input geometry that consumes this dataset.
ModelConfig with_geometry(ModelConfig cfg, const SyntheticSpec& spec);

inline constexpr double kBackground = 0.15;
inline constexpr double kBlobAmplitude = 0.6;
// Blob sigma as a fraction of the patch size.
inline constexpr double kBlobSigmaPerPatch = 0.25;

struct Sample {
  std::string id;
  Tensor csi;    // [l_w x d_w] denoised, resampled amplitudes (not standardized)
  Tensor image;  // [h x w x c] in [0, 1]
  std::size_t csi_label = 0;
  std::size_t img_label = 0;

  std::size_t label() const { return csi_label; }
};

enum class Split { train, val, test };
std::string split_name(Split s);
Split parse_split(const std::string& name);

struct SplitRatios {
  std::size_t train = 8, val = 1, test = 1;
  bool operator==(const SplitRatios&) const = default;
};

struct CsiStats {
  std::vector<double> mean;  // per feature column
  std::vector<double> std;

  bool operator==(const CsiStats&) const = default;
};

inline constexpr std::uint32_t kManifestVersion = 1;

struct Dataset {
  SyntheticSpec spec;
  std::vector<Sample> samples;
  std::vector<Split> assignment;  // parallel to samples
  std::uint64_t split_seed = 0;
  SplitRatios ratios;
  CsiStats stats;  // from the train split only

  std::vector<std::size_t> indices(Split s) const;
};

// One raw CSI window [n_packets x d_w] before denoising, for the given
// count and repetition.
Tensor raw_csi(const SyntheticSpec& spec, std::size_t count, std::size_t rep);
Tensor render_image(const SyntheticSpec& spec, std::size_t count, std::size_t rep);
Sample make_sample(const SyntheticSpec& spec, std::size_t count, std::size_t rep);

// All samples, split with split_seed = spec.seed and 8:1:1.
Dataset generate(const SyntheticSpec& spec);

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

// Seeded shuffle of 0..m-1 and a contiguous cut; sizes floor(m*r_train/R),
// floor(m*r_val/R), remainder.
SplitIndices split(std::size_t m, const SplitRatios& ratios, std::uint64_t seed);

// Re-splits ds in place and recomputes the CSI statistics.
void assign_split(Dataset& ds, const SplitRatios& ratios, std::uint64_t seed);

CsiStats csi_stats(const Dataset& ds, const std::vector<std::size_t>& rows);

// Model-ready inputs: standardized CSI and patchified image per sample.
struct Prepared {
  std::vector<Tensor> x_w;  // [l_w x d_w]
  std::vector<Tensor> x_v;  // [l_v x d_v]
  std::vector<double> y;
  std::size_t l_w = 0, d_w = 0, l_v = 0, d_v = 0;

  std::size_t size() const { return y.size(); }
};

Prepared prepare(const Dataset& ds);

struct Batch {
  Tensor x_w;  // [B x l_w x d_w]
  Tensor x_v;  // [B x l_v x d_v]
  Tensor y;    // [B]
  std::vector<std::size_t> indices;
};

// Index groups for one epoch. Without a seed the subset order is kept;
// otherwise it is shuffled with a stream derived from (seed, epoch). The last
// batch may be short.
std::vector<std::vector<std::size_t>> batch_order(const std::vector<std::size_t>& subset, std::size_t batch_size,
                                                  std::optional<std::uint64_t> shuffle_seed, std::size_t epoch);

Batch gather(const Prepared& data, const std::vector<std::size_t>& rows);

// Layout: manifest.json, csi/<id>.tftn, img/<id>.tftn.
void save(const Dataset& ds, const std::filesystem::path& dir, io::DType dtype = io::DType::f64);
Dataset load(const std::filesystem::path& dir);

nlohmann::json manifest(const Dataset& ds);

// Mixes a seed with two indices into an independent 64-bit stream seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

}  // namespace transfusion::data
