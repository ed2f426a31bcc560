#include "transfusion/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace transfusion {

namespace {

thread_local KinkLog* g_kink_log = nullptr;

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!grad_enabled()) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

// Attaches a pullback to `out` when recording; make_fn is only invoked then,
// so saved activations are not copied for inference.
template <class MakeFn>
Tensor finish(Tensor out, bool record, MakeFn&& make_fn) {
  if (record) Tape::current().record(out, make_fn());
  return out;
}

std::int32_t side_of(double x, double at) {
  if (x > at + KinkLog::kBand) return 1;
  if (x < at - KinkLog::kBand) return -1;
  return 0;
}

Shape broadcast_shape(const Tensor& a, const Tensor& b, const char* name) {
  if (a.shape() == b.shape()) return a.shape();
  if (b.numel() == 1) return a.shape();
  if (a.numel() == 1) return b.shape();
  throw ShapeError(std::string(name) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                   shape_str(b.shape()));
}

template <class F, class DA, class DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, F f, DA da, DB db) {
  Shape shape = broadcast_shape(a, b, name);
  const std::size_t n = shape_numel(shape);
  const bool a_scalar = a.numel() == 1 && n != 1;
  const bool b_scalar = b.numel() == 1 && n != 1;
  auto ad = a.data();
  auto bd = b.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = f(ad[a_scalar ? 0 : i], bd[b_scalar ? 0 : i]);
  }
  return finish(make_tensor(std::move(shape), std::move(out)), should_record({&a, &b}), [=] {
    return [a, b, a_scalar, b_scalar, n, da, db](std::span<const double> g) {
      auto ad = a.data();
      auto bd = b.data();
      if (auto ga = grad_slot(a); !ga.empty()) {
        for (std::size_t i = 0; i < n; ++i) {
          const double x = ad[a_scalar ? 0 : i];
          const double y = bd[b_scalar ? 0 : i];
          ga[a_scalar ? 0 : i] += g[i] * da(x, y);
        }
      }
      if (auto gb = grad_slot(b); !gb.empty()) {
        for (std::size_t i = 0; i < n; ++i) {
          const double x = ad[a_scalar ? 0 : i];
          const double y = bd[b_scalar ? 0 : i];
          gb[b_scalar ? 0 : i] += g[i] * db(x, y);
        }
      }
    };
  });
}

// df receives (input, output).
template <class F, class DF>
Tensor unary(const Tensor& t, F f, DF df, double kink_at = std::numeric_limits<double>::quiet_NaN()) {
  auto td = t.data();
  std::vector<double> out(td.size());
  for (std::size_t i = 0; i < td.size(); ++i) out[i] = f(td[i]);
  if (g_kink_log != nullptr && !std::isnan(kink_at)) {
    for (double x : td) g_kink_log->push(side_of(x, kink_at));
  }
  Tensor result = make_tensor(t.shape(), std::move(out));
  return finish(result, should_record({&t}), [&] {
    return [t, y = result, df](std::span<const double> g) {
      auto gt = grad_slot(t);
      if (gt.empty()) return;
      auto td = t.data();
      auto yd = y.data();
      for (std::size_t i = 0; i < td.size(); ++i) gt[i] += g[i] * df(td[i], yd[i]);
    };
  });
}

void require_rank(const Tensor& t, std::size_t rank, const char* name) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(name) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
  }
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

KinkLog* KinkLog::active() noexcept { return g_kink_log; }

KinkLogScope::KinkLogScope(KinkLog& log) : previous_(g_kink_log) { g_kink_log = &log; }
KinkLogScope::~KinkLogScope() { g_kink_log = previous_; }

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ad[i * k + p];
      const double* brow = bd + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return finish(make_tensor({m, n}, std::move(out)), should_record({&a, &b}), [&] {
    return [a, b, m, k, n](std::span<const double> g) {
      const double* ad = a.data().data();
      const double* bd = b.data().data();
      if (auto ga = grad_slot(a); !ga.empty()) {
        // dA = G * B^T
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = g.data() + i * n;
          for (std::size_t p = 0; p < k; ++p) {
            const double* brow = bd + p * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            ga[i * k + p] += acc;
          }
        }
      }
      if (auto gb = grad_slot(b); !gb.empty()) {
        // dB = A^T * G
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = g.data() + i * n;
          for (std::size_t p = 0; p < k; ++p) {
            const double av = ad[i * k + p];
            double* gbrow = gb.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
          }
        }
      }
    };
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

Tensor scale(const Tensor& t, double s) {
  return unary(
      t, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& t, double s) {
  return unary(
      t, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& t) {
  return unary(
      t, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor relu(const Tensor& t) {
  return unary(
      t, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; }, 0.0);
}

Tensor exp(const Tensor& t) {
  return unary(
      t, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor abs(const Tensor& t) {
  return unary(
      t, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }, 0.0);
}

Tensor elu(const Tensor& t) {
  return unary(
      t, [](double x) { return x > 0.0 ? x : std::expm1(x); },
      [](double x, double y) { return x > 0.0 ? 1.0 : y + 1.0; });
}

Tensor sqrt(const Tensor& t) {
  return unary(
      t, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Tensor clamp_min(const Tensor& t, double floor) {
  return unary(
      t, [floor](double x) { return x > floor ? x : floor; },
      [floor](double x, double) { return x > floor ? 1.0 : 0.0; }, floor);
}

Tensor reduce(const Tensor& t, std::size_t axis, ReduceKind kind) {
  if (axis >= t.rank()) {
    throw ShapeError("reduce: axis " + std::to_string(axis) + " invalid for " + shape_str(t.shape()));
  }
  const auto s = split_axis(t.shape(), axis);
  Shape out_shape = t.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  auto td = t.data();
  std::vector<double> out(s.outer * s.inner);
  std::vector<std::size_t> argmax;
  if (kind == ReduceKind::max) argmax.resize(out.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      double acc = kind == ReduceKind::max ? td[base] : 0.0;
      std::size_t best = 0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const double v = td[base + e * s.inner];
        if (kind == ReduceKind::max) {
          if (v > acc) {
            acc = v;
            best = e;
          }
        } else {
          acc += v;
        }
      }
      if (kind == ReduceKind::mean) acc /= static_cast<double>(s.extent);
      out[o * s.inner + in] = acc;
      if (kind == ReduceKind::max) {
        argmax[o * s.inner + in] = best;
        if (g_kink_log != nullptr) g_kink_log->push(static_cast<std::int32_t>(best));
      }
    }
  }
  return finish(make_tensor(std::move(out_shape), std::move(out)), should_record({&t}), [&] {
    return [t, s, kind, argmax = std::move(argmax)](std::span<const double> g) {
      auto gt = grad_slot(t);
      if (gt.empty()) return;
      const double w = kind == ReduceKind::mean ? 1.0 / static_cast<double>(s.extent) : 1.0;
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
          const std::size_t base = o * s.extent * s.inner + in;
          const double go = g[o * s.inner + in];
          if (kind == ReduceKind::max) {
            gt[base + argmax[o * s.inner + in] * s.inner] += go;
          } else {
            for (std::size_t e = 0; e < s.extent; ++e) gt[base + e * s.inner] += go * w;
          }
        }
      }
    };
  });
}

Tensor sum(const Tensor& t) { return reduce(reshape(t, {t.numel()}), 0, ReduceKind::sum); }

Tensor mean(const Tensor& t) { return reduce(reshape(t, {t.numel()}), 0, ReduceKind::mean); }

Tensor transpose2d(const Tensor& t) {
  require_rank(t, 2, "transpose2d");
  const std::size_t r = t.dim(0), c = t.dim(1);
  auto td = t.data();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = td[i * c + j];
  }
  return finish(make_tensor({c, r}, std::move(out)), should_record({&t}), [&] {
    return [t, r, c](std::span<const double> g) {
      auto gt = grad_slot(t);
      if (gt.empty()) return;
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) gt[i * c + j] += g[j * r + i];
      }
    };
  });
}

Tensor reshape(const Tensor& t, Shape shape) {
  if (shape_numel(shape) != t.numel()) {
    throw ShapeError("reshape: " + shape_str(t.shape()) + " -> " + shape_str(shape) +
                     " changes element count");
  }
  auto td = t.data();
  return finish(make_tensor(std::move(shape), std::vector<double>(td.begin(), td.end())),
                should_record({&t}), [&] {
                  return [t](std::span<const double> g) {
                    auto gt = grad_slot(t);
                    if (gt.empty()) return;
                    for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
                  };
                });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  bool record = false;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool compatible = s.size() == first.size();
    for (std::size_t i = 0; compatible && i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) compatible = false;
    }
    if (!compatible) {
      throw ShapeError("concat: " + shape_str(s) + " incompatible with " + shape_str(first) +
                       " along axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
    record = record || (grad_enabled() && p.requires_grad());
  }
  auto s = split_axis(out_shape, axis);
  std::vector<double> out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t chunk = p.dim(axis) * s.inner;
    auto pd = p.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(pd.begin() + static_cast<std::ptrdiff_t>(o * chunk), chunk,
                  out.begin() + static_cast<std::ptrdiff_t>(o * s.extent * s.inner + offset));
    }
    offset += chunk;
  }
  return finish(make_tensor(std::move(out_shape), std::move(out)), record, [&] {
    return [parts, axis, s](std::span<const double> g) {
      std::size_t offset = 0;
      for (const auto& p : parts) {
        const std::size_t chunk = p.dim(axis) * s.inner;
        if (auto gp = grad_slot(p); !gp.empty()) {
          for (std::size_t o = 0; o < s.outer; ++o) {
            const double* src = g.data() + o * s.extent * s.inner + offset;
            for (std::size_t i = 0; i < chunk; ++i) gp[o * chunk + i] += src[i];
          }
        }
        offset += chunk;
      }
    };
  });
}

Tensor slice(const Tensor& t, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= t.rank()) throw ShapeError("slice: axis out of range for " + shape_str(t.shape()));
  if (begin >= end || end > t.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for extent " + std::to_string(t.dim(axis)));
  }
  const auto s = split_axis(t.shape(), axis);
  Shape out_shape = t.shape();
  out_shape[axis] = end - begin;
  const std::size_t chunk = (end - begin) * s.inner;
  auto td = t.data();
  std::vector<double> out(s.outer * chunk);
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(td.begin() + static_cast<std::ptrdiff_t>(o * s.extent * s.inner + begin * s.inner),
                chunk, out.begin() + static_cast<std::ptrdiff_t>(o * chunk));
  }
  return finish(make_tensor(std::move(out_shape), std::move(out)), should_record({&t}), [&] {
    return [t, s, begin, chunk](std::span<const double> g) {
      auto gt = grad_slot(t);
      if (gt.empty()) return;
      for (std::size_t o = 0; o < s.outer; ++o) {
        double* dst = gt.data() + o * s.extent * s.inner + begin * s.inner;
        for (std::size_t i = 0; i < chunk; ++i) dst[i] += g[o * chunk + i];
      }
    };
  });
}

Tensor expand_rows(const Tensor& t, std::size_t rows) {
  const bool ok = t.rank() == 1 || (t.rank() == 2 && t.dim(0) == 1);
  if (!ok || rows == 0) throw ShapeError("expand_rows: expects [d] or [1xd], got " + shape_str(t.shape()));
  const std::size_t d = t.numel();
  auto td = t.data();
  std::vector<double> out(rows * d);
  for (std::size_t r = 0; r < rows; ++r) std::copy(td.begin(), td.end(), out.begin() + static_cast<std::ptrdiff_t>(r * d));
  return finish(make_tensor({rows, d}, std::move(out)), should_record({&t}), [&] {
    return [t, rows, d](std::span<const double> g) {
      auto gt = grad_slot(t);
      if (gt.empty()) return;
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < d; ++j) gt[j] += g[r * d + j];
      }
    };
  });
}

Tensor expand_cols(const Tensor& t, std::size_t cols) {
  const bool ok = t.rank() == 1 || (t.rank() == 2 && t.dim(1) == 1);
  if (!ok || cols == 0) throw ShapeError("expand_cols: expects [l] or [lx1], got " + shape_str(t.shape()));
  const std::size_t l = t.numel();
  auto td = t.data();
  std::vector<double> out(l * cols);
  for (std::size_t i = 0; i < l; ++i) {
    std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(i * cols), cols, td[i]);
  }
  return finish(make_tensor({l, cols}, std::move(out)), should_record({&t}), [&] {
    return [t, l, cols](std::span<const double> g) {
      auto gt = grad_slot(t);
      if (gt.empty()) return;
      for (std::size_t i = 0; i < l; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < cols; ++j) acc += g[i * cols + j];
        gt[i] += acc;
      }
    };
  });
}

Tensor softmax_rows(const Tensor& t) {
  require_rank(t, 2, "softmax_rows");
  const std::size_t m = t.dim(0), n = t.dim(1);
  auto td = t.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = td.data() + i * n;
    double mx = row[0];
    for (std::size_t j = 0; j < n; ++j) {
      if (std::isnan(row[j])) throw NumericError("softmax_rows: NaN input in row " + std::to_string(i));
      mx = std::max(mx, row[j]);
    }
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = std::exp(row[j] - mx);
      total += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= total;
  }
  Tensor result = make_tensor({m, n}, std::move(out));
  return finish(result, should_record({&t}), [&] {
    return [t, y = result, m, n](std::span<const double> g) {
      auto gt = grad_slot(t);
      if (gt.empty()) return;
      auto yd = y.data();
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * yd[i * n + j];
        for (std::size_t j = 0; j < n; ++j) gt[i * n + j] += yd[i * n + j] * (g[i * n + j] - dot);
      }
    };
  });
}

}  // namespace transfusion
