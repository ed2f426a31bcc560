#include "transfusion/preprocess.hpp"

#include <algorithm>
#include <cmath>

namespace transfusion::prep {

namespace {

// Median of a scratch buffer (reordered in place). Even sizes average the two
// middle order statistics.
double median_inplace(std::vector<double>& v) {
  const std::size_t n = v.size();
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(v.begin(), mid, v.end());
  const double upper = *mid;
  if (n % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), mid);
  return (lower + upper) / 2.0;
}

double sample_std(std::span<const double> w) {
  if (w.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : w) mean += x;
  mean /= static_cast<double>(w.size());
  double ss = 0.0;
  for (double x : w) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(w.size() - 1));
}

}  // namespace

SigmaMode parse_sigma_mode(const std::string& name) {
  if (name == "mad") return SigmaMode::mad;
  if (name == "std" || name == "sample_std") return SigmaMode::sample_std;
  throw ConfigError("unknown Hampel sigma mode '" + name + "' (expected mad or std)");
}

void HampelOptions::validate() const {
  if (half_width < 1) throw ConfigError("Hampel half-width K must be at least 1");
  if (!(n_sigmas > 0.0)) throw ConfigError("Hampel n_sigmas must be positive");
}

std::size_t HampelResult::outlier_count() const {
  return static_cast<std::size_t>(std::count(outliers.begin(), outliers.end(), true));
}

HampelResult hampel_filter(std::span<const double> series, const HampelOptions& options) {
  options.validate();
  if (series.empty()) throw ShapeError("Hampel filter needs a non-empty sequence");
  const std::size_t n = series.size();
  const std::size_t k = options.half_width;
  HampelResult result{std::vector<double>(series.begin(), series.end()), std::vector<bool>(n, false)};
  std::vector<double> scratch;
  scratch.reserve(2 * k + 1);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= k ? i - k : 0;
    const std::size_t hi = std::min(n, i + k + 1);
    const auto window = series.subspan(lo, hi - lo);
    scratch.assign(window.begin(), window.end());
    const double med = median_inplace(scratch);
    double sigma = 0.0;
    if (options.sigma_mode == SigmaMode::mad) {
      for (auto& x : scratch) x = std::fabs(x - med);
      sigma = kMadScale * median_inplace(scratch);
    } else {
      sigma = sample_std(window);
    }
    if (std::fabs(series[i] - med) > options.n_sigmas * sigma) {
      result.filtered[i] = med;
      result.outliers[i] = true;
    }
  }
  return result;
}

Tensor hampel_columns(const Tensor& packets, const HampelOptions& options, std::vector<bool>* mask) {
  if (packets.rank() != 2) throw ShapeError("hampel_columns expects [n x d], got " + shape_str(packets.shape()));
  const std::size_t n = packets.dim(0), d = packets.dim(1);
  auto src = packets.data();
  std::vector<double> out(src.begin(), src.end());
  if (mask) mask->assign(n * d, false);
  std::vector<double> column(n);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < n; ++i) column[i] = src[i * d + j];
    const auto r = hampel_filter(column, options);
    for (std::size_t i = 0; i < n; ++i) {
      out[i * d + j] = r.filtered[i];
      if (mask) (*mask)[i * d + j] = r.outliers[i];
    }
  }
  return Tensor::from({n, d}, std::move(out));
}

Tensor resample_window(const RawCsiWindow& raw, std::size_t target_len, ResampleMethod method) {
  const Tensor& p = raw.packets;
  if (p.rank() != 2) throw ShapeError("resample_window expects [n_packets x d], got " + shape_str(p.shape()));
  const std::size_t n = p.dim(0), d = p.dim(1);
  if (target_len == 0 || target_len > n) {
    throw ShapeError("resample target length " + std::to_string(target_len) + " exceeds " + std::to_string(n) +
                     " packets");
  }
  const std::size_t bin = n / target_len;
  auto src = p.data();
  std::vector<double> out(target_len * d, 0.0);
  for (std::size_t t = 0; t < target_len; ++t) {
    if (method == ResampleMethod::stride) {
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(t * bin * d), d, out.begin() + static_cast<std::ptrdiff_t>(t * d));
      continue;
    }
    for (std::size_t b = 0; b < bin; ++b) {
      for (std::size_t j = 0; j < d; ++j) out[t * d + j] += src[(t * bin + b) * d + j];
    }
    for (std::size_t j = 0; j < d; ++j) out[t * d + j] /= static_cast<double>(bin);
  }
  return Tensor::from({target_len, d}, std::move(out));
}

Tensor patchify(const Tensor& image, std::size_t p) {
  if (image.rank() != 3) throw ShapeError("patchify expects [h x w x c], got " + shape_str(image.shape()));
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  if (p == 0 || h % p != 0 || w % p != 0) {
    throw ShapeError("patch size " + std::to_string(p) + " does not divide image " + shape_str(image.shape()));
  }
  const std::size_t gh = h / p, gw = w / p, dv = p * p * c;
  auto src = image.data();
  std::vector<double> out(gh * gw * dv);
  for (std::size_t py = 0; py < gh; ++py) {
    for (std::size_t px = 0; px < gw; ++px) {
      double* dst = out.data() + (py * gw + px) * dv;
      for (std::size_t y = 0; y < p; ++y) {
        const double* row = src.data() + ((py * p + y) * w + px * p) * c;
        std::copy_n(row, p * c, dst + y * p * c);
      }
    }
  }
  return Tensor::from({gh * gw, dv}, std::move(out));
}

Tensor unpatchify(const Tensor& patches, std::size_t h, std::size_t w, std::size_t c, std::size_t p) {
  if (p == 0 || c == 0 || h % p != 0 || w % p != 0) throw ShapeError("unpatchify: p must divide h and w");
  const std::size_t gh = h / p, gw = w / p, dv = p * p * c;
  if (patches.rank() != 2 || patches.dim(0) != gh * gw || patches.dim(1) != dv) {
    throw ShapeError("unpatchify: patches " + shape_str(patches.shape()) + " inconsistent with " +
                     shape_str({h, w, c}) + " at p=" + std::to_string(p));
  }
  auto src = patches.data();
  std::vector<double> out(h * w * c);
  for (std::size_t py = 0; py < gh; ++py) {
    for (std::size_t px = 0; px < gw; ++px) {
      const double* patch = src.data() + (py * gw + px) * dv;
      for (std::size_t y = 0; y < p; ++y) {
        std::copy_n(patch + y * p * c, p * c, out.data() + ((py * p + y) * w + px * p) * c);
      }
    }
  }
  return Tensor::from({h, w, c}, std::move(out));
}

}  // namespace transfusion::prep
