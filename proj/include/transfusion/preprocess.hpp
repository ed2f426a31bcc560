#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "transfusion/tensor.hpp"

namespace transfusion::prep {

enum class SigmaMode { mad, sample_std };

SigmaMode parse_sigma_mode(const std::string& name);

// Scale factor turning a median absolute deviation into a Gaussian sigma.
inline constexpr double kMadScale = 1.4826;

struct HampelOptions {
  std::size_t half_width = 5;  // K; the window is 2K+1 wide away from the edges
  double n_sigmas = 3.0;
  SigmaMode sigma_mode = SigmaMode::mad;

  void validate() const;
};

struct HampelResult {
  std::vector<double> filtered;
  std::vector<bool> outliers;

  std::size_t outlier_count() const;
};

// Sliding-window outlier replacement. Windows are truncated at the sequence
// ends. A sample is replaced by its window median when it deviates from that
// median by more than n_sigmas * sigma.
HampelResult hampel_filter(std::span<const double> series, const HampelOptions& options = {});

// Filters every column of a [n x d] tensor independently.
// Writes the per-element outlier mask to `mask` when non-null.
Tensor hampel_columns(const Tensor& packets, const HampelOptions& options = {}, std::vector<bool>* mask = nullptr);

struct RawCsiWindow {
  Tensor packets;  // [n_packets x d_w] amplitudes
  double sample_rate_hz = 500.0;
  double duration_s = 4.0;
};

enum class ResampleMethod { stride, mean_pool };

// stride keeps every floor(n/l)-th packet; mean_pool averages disjoint bins of
// floor(n/l) packets. Packets past l*floor(n/l) are dropped.
Tensor resample_window(const RawCsiWindow& raw, std::size_t target_len, ResampleMethod method);

// [h x w x c] -> [(h/p)(w/p) x p*p*c]. Patches are row-major over the patch
// grid; inside a patch pixels are row-major with channels innermost.
Tensor patchify(const Tensor& image, std::size_t p);

Tensor unpatchify(const Tensor& patches, std::size_t h, std::size_t w, std::size_t c, std::size_t p);

}  // namespace transfusion::prep
