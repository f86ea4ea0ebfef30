#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "atnbreak/tensor.hpp"

namespace atnbreak {
namespace {

using Values = std::shared_ptr<const std::vector<double>>;

DiffArray emit1(Shape shape, std::vector<double> values, const DiffArray& a, BackwardFn fn) {
  const std::array<const DiffArray*, 1> in{&a};
  return Record::emit(std::move(shape), std::move(values), in, std::move(fn));
}

DiffArray emit2(Shape shape, std::vector<double> values, const DiffArray& a, const DiffArray& b,
                BackwardFn fn) {
  const std::array<const DiffArray*, 2> in{&a, &b};
  return Record::emit(std::move(shape), std::move(values), in, std::move(fn));
}

void require_rank(const DiffArray& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_string(a.shape()));
  }
}

enum class Broadcast { same, left_scalar, right_scalar };

Broadcast broadcast_kind(const DiffArray& a, const DiffArray& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::same;
  if (b.size() == 1) return Broadcast::right_scalar;
  if (a.size() == 1) return Broadcast::left_scalar;
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) +
                       " and " + shape_string(b.shape()));
}

// Accumulates g into dst, summing to one element when dst is a broadcast scalar.
void accumulate(std::vector<double>& dst, const std::vector<double>& g, double factor = 1.0) {
  if (dst.size() == g.size()) {
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += factor * g[i];
  } else {
    double s = 0.0;
    for (double x : g) s += x;
    dst[0] += factor * s;
  }
}

template <typename Fn>
void binary_forward(const DiffArray& a, const DiffArray& b, Broadcast kind, Fn fn,
                         std::vector<double>& out) {
  const auto av = a.values();
  const auto bv = b.values();
  const std::size_t n = kind == Broadcast::left_scalar ? b.size() : a.size();
  out.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = kind == Broadcast::left_scalar ? av[0] : av[i];
    const double y = kind == Broadcast::right_scalar ? bv[0] : bv[i];
    out[i] = fn(x, y);
  }
}

const Shape& broadcast_shape(const DiffArray& a, const DiffArray& b, Broadcast kind) {
  return kind == Broadcast::left_scalar ? b.shape() : a.shape();
}

}  // namespace

DiffArray matmul(const DiffArray& a, const DiffArray& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) + " by " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  const double* A = a.values().data();
  const double* B = b.values().data();
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = c.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
  }
  Values as = a.storage(), bs = b.storage();
  return emit2({m, n}, std::move(c), a, b, [as, bs, m, k, n](const auto& g, GradSink& sink) {
    const double* A = as->data();
    const double* B = bs->data();
    if (auto* ga = sink.get(0)) {
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = B + p * n;
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
          (*ga)[i * k + p] += s;
        }
      }
    }
    if (auto* gb = sink.get(1)) {
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A[i * k + p];
          double* dst = gb->data() + p * n;
          for (std::size_t j = 0; j < n; ++j) dst[j] += aip * grow[j];
        }
      }
    }
  });
}

DiffArray transpose(const DiffArray& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  const auto av = a.values();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  return emit1({n, m}, std::move(out), a, [m, n](const auto& g, GradSink& sink) {
    if (auto* ga = sink.get(0)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*ga)[i * n + j] += g[j * m + i];
    }
  });
}

DiffArray add(const DiffArray& a, const DiffArray& b) {
  const auto kind = broadcast_kind(a, b, "add");
  std::vector<double> out;
  binary_forward(a, b, kind, [](double x, double y) { return x + y; }, out);
  return emit2(broadcast_shape(a, b, kind), std::move(out), a, b,
               [](const auto& g, GradSink& sink) {
                 if (auto* ga = sink.get(0)) accumulate(*ga, g);
                 if (auto* gb = sink.get(1)) accumulate(*gb, g);
               });
}

DiffArray sub(const DiffArray& a, const DiffArray& b) {
  const auto kind = broadcast_kind(a, b, "sub");
  std::vector<double> out;
  binary_forward(a, b, kind, [](double x, double y) { return x - y; }, out);
  return emit2(broadcast_shape(a, b, kind), std::move(out), a, b,
               [](const auto& g, GradSink& sink) {
                 if (auto* ga = sink.get(0)) accumulate(*ga, g);
                 if (auto* gb = sink.get(1)) accumulate(*gb, g, -1.0);
               });
}

DiffArray mul(const DiffArray& a, const DiffArray& b) {
  const auto kind = broadcast_kind(a, b, "mul");
  std::vector<double> out;
  binary_forward(a, b, kind, [](double x, double y) { return x * y; }, out);
  Values as = a.storage(), bs = b.storage();
  return emit2(broadcast_shape(a, b, kind), std::move(out), a, b,
               [as, bs, kind](const auto& g, GradSink& sink) {
                 const auto& av = *as;
                 const auto& bv = *bs;
                 const std::size_t n = g.size();
                 if (auto* ga = sink.get(0)) {
                   if (kind == Broadcast::left_scalar) {
                     double s = 0.0;
                     for (std::size_t i = 0; i < n; ++i) s += g[i] * bv[i];
                     (*ga)[0] += s;
                   } else {
                     for (std::size_t i = 0; i < n; ++i)
                       (*ga)[i] += g[i] * (kind == Broadcast::right_scalar ? bv[0] : bv[i]);
                   }
                 }
                 if (auto* gb = sink.get(1)) {
                   if (kind == Broadcast::right_scalar) {
                     double s = 0.0;
                     for (std::size_t i = 0; i < n; ++i) s += g[i] * av[i];
                     (*gb)[0] += s;
                   } else {
                     for (std::size_t i = 0; i < n; ++i)
                       (*gb)[i] += g[i] * (kind == Broadcast::left_scalar ? av[0] : av[i]);
                   }
                 }
               });
}

DiffArray scale(const DiffArray& a, double factor) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& x : out) x *= factor;
  return emit1(a.shape(), std::move(out), a, [factor](const auto& g, GradSink& sink) {
    if (auto* ga = sink.get(0)) accumulate(*ga, g, factor);
  });
}

DiffArray square(const DiffArray& a) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& x : out) x *= x;
  Values as = a.storage();
  return emit1(a.shape(), std::move(out), a, [as](const auto& g, GradSink& sink) {
    if (auto* ga = sink.get(0)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += 2.0 * (*as)[i] * g[i];
    }
  });
}

DiffArray sqrt(const DiffArray& a) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& x : out) x = std::sqrt(x);
  auto ys = std::make_shared<const std::vector<double>>(out);
  return emit1(a.shape(), std::move(out), a, [ys](const auto& g, GradSink& sink) {
    if (auto* ga = sink.get(0)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += 0.5 * g[i] / (*ys)[i];
    }
  });
}

DiffArray gelu(const DiffArray& a) {
  std::vector<double> out(a.size());
  const auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = av[i];
    const double t = std::tanh(kGeluSqrt2OverPi * (x + kGeluCubic * x * x * x));
    out[i] = 0.5 * x * (1.0 + t);
  }
  Values as = a.storage();
  return emit1(a.shape(), std::move(out), a, [as](const auto& g, GradSink& sink) {
    auto* ga = sink.get(0);
    if (!ga) return;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = (*as)[i];
      const double t = std::tanh(kGeluSqrt2OverPi * (x + kGeluCubic * x * x * x));
      const double du = kGeluSqrt2OverPi * (1.0 + 3.0 * kGeluCubic * x * x);
      (*ga)[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du);
    }
  });
}

DiffArray add_rowwise(const DiffArray& a, const DiffArray& bias) {
  if (a.rank() == 0 || bias.rank() != 1 || bias.shape()[0] != a.shape().back()) {
    throw DimensionError("add_rowwise: bias " + shape_string(bias.shape()) +
                         " does not match rows of " + shape_string(a.shape()));
  }
  const std::size_t m = bias.size();
  const std::size_t rows = m == 0 ? 0 : a.size() / m;
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto bv = bias.values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < m; ++j) out[r * m + j] += bv[j];
  return emit2(a.shape(), std::move(out), a, bias, [rows, m](const auto& g, GradSink& sink) {
    if (auto* ga = sink.get(0)) accumulate(*ga, g);
    if (auto* gb = sink.get(1)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < m; ++j) (*gb)[j] += g[r * m + j];
    }
  });
}

DiffArray softmax_rows(const DiffArray& a) {
  if (a.rank() == 0 || a.shape().back() == 0) {
    throw DimensionError("softmax_rows: needs a non-empty trailing axis, got " +
                         shape_string(a.shape()));
  }
  const std::size_t n = a.shape().back();
  const std::size_t rows = a.size() / n;
  const auto av = a.values();
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * n;
    double* y = out.data() + r * n;
    const double mx = *std::max_element(x, x + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - mx);
      s += y[j];
    }
    for (std::size_t j = 0; j < n; ++j) y[j] /= s;
  }
  auto ys = std::make_shared<const std::vector<double>>(out);
  return emit1(a.shape(), std::move(out), a, [ys, rows, n](const auto& g, GradSink& sink) {
    auto* ga = sink.get(0);
    if (!ga) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = ys->data() + r * n;
      const double* gr = g.data() + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += gr[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) (*ga)[r * n + j] += y[j] * (gr[j] - dot);
    }
  });
}

DiffArray layer_norm(const DiffArray& a, const DiffArray& gain, const DiffArray& bias,
                     double eps) {
  if (a.rank() == 0 || a.shape().back() == 0 || gain.shape() != Shape{a.shape().back()} ||
      bias.shape() != gain.shape()) {
    throw DimensionError("layer_norm: input " + shape_string(a.shape()) + ", gain " +
                         shape_string(gain.shape()) + ", bias " + shape_string(bias.shape()));
  }
  const std::size_t d = a.shape().back();
  const std::size_t rows = a.size() / d;
  const auto av = a.values();
  const auto gv = gain.values();
  const auto bv = bias.values();
  auto xhat = std::make_shared<std::vector<double>>(a.size());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += x[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (x[j] - mu) * rs;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  Values gs = gain.storage();
  const std::array<const DiffArray*, 3> in{&a, &gain, &bias};
  return Record::emit(
      a.shape(), std::move(out), in,
      [xhat, rstd, gs, rows, d](const std::vector<double>& g, GradSink& sink) {
        if (auto* gg = sink.get(1)) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) (*gg)[j] += g[r * d + j] * (*xhat)[r * d + j];
        }
        if (auto* gb = sink.get(2)) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) (*gb)[j] += g[r * d + j];
        }
        auto* ga = sink.get(0);
        if (!ga) return;
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_dh = 0.0, mean_dh_h = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = g[r * d + j] * (*gs)[j];
            mean_dh += dh;
            mean_dh_h += dh * (*xhat)[r * d + j];
          }
          mean_dh *= inv_d;
          mean_dh_h *= inv_d;
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = g[r * d + j] * (*gs)[j];
            (*ga)[r * d + j] += (*rstd)[r] * (dh - mean_dh - (*xhat)[r * d + j] * mean_dh_h);
          }
        }
      });
}

DiffArray reduce(const DiffArray& a, ReduceKind kind, std::vector<std::size_t> axes) {
  const std::size_t rank = a.rank();
  std::vector<bool> reduced(rank, axes.empty());
  for (std::size_t ax : axes) {
    if (ax >= rank || reduced[ax]) {
      throw DimensionError("reduce: invalid axis " + std::to_string(ax) + " for shape " +
                           shape_string(a.shape()));
    }
    reduced[ax] = true;
  }
  Shape out_shape;
  std::size_t count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    if (reduced[i]) {
      count *= a.shape()[i];
    } else {
      out_shape.push_back(a.shape()[i]);
    }
  }
  // Output slot of every input element.
  auto slot = std::make_shared<std::vector<std::size_t>>(a.size());
  {
    std::vector<std::size_t> idx(rank, 0);
    for (std::size_t flat = 0; flat < a.size(); ++flat) {
      std::size_t o = 0;
      for (std::size_t i = 0; i < rank; ++i)
        if (!reduced[i]) o = o * a.shape()[i] + idx[i];
      (*slot)[flat] = o;
      for (std::size_t i = rank; i-- > 0;) {
        if (++idx[i] < a.shape()[i]) break;
        idx[i] = 0;
      }
    }
  }
  const std::size_t out_n = shape_size(out_shape);
  const auto av = a.values();
  std::vector<double> out(out_n, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = av[i];
    out[(*slot)[i]] += kind == ReduceKind::l2norm ? x * x : x;
  }
  if (kind == ReduceKind::mean) {
    for (double& v : out) v /= static_cast<double>(count);
  } else if (kind == ReduceKind::l2norm) {
    for (double& v : out) v = std::sqrt(v);
  }
  auto norms = std::make_shared<const std::vector<double>>(out);
  Values as = a.storage();
  return emit1(std::move(out_shape), std::move(out), a,
               [slot, as, norms, kind, count](const auto& g, GradSink& sink) {
                 auto* ga = sink.get(0);
                 if (!ga) return;
                 const std::size_t n = ga->size();
                 for (std::size_t i = 0; i < n; ++i) {
                   const std::size_t o = (*slot)[i];
                   switch (kind) {
                     case ReduceKind::sum:
                       (*ga)[i] += g[o];
                       break;
                     case ReduceKind::mean:
                       (*ga)[i] += g[o] / static_cast<double>(count);
                       break;
                     case ReduceKind::l2norm:
                       if ((*norms)[o] > 0.0) (*ga)[i] += g[o] * (*as)[i] / (*norms)[o];
                       break;
                   }
                 }
               });
}

DiffArray reshape(const DiffArray& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + shape_string(a.shape()) + " as " +
                         shape_string(shape));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  return emit1(std::move(shape), std::move(out), a, [](const auto& g, GradSink& sink) {
    if (auto* ga = sink.get(0)) accumulate(*ga, g);
  });
}

DiffArray slice_rows(const DiffArray& a, std::size_t begin, std::size_t count) {
  if (a.rank() == 0 || begin + count > a.shape()[0]) {
    throw DimensionError("slice_rows: rows [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of range for " +
                         shape_string(a.shape()));
  }
  const std::size_t stride = a.shape()[0] == 0 ? 0 : a.size() / a.shape()[0];
  Shape shape = a.shape();
  shape[0] = count;
  const auto av = a.values();
  std::vector<double> out(av.begin() + begin * stride, av.begin() + (begin + count) * stride);
  const std::size_t offset = begin * stride;
  return emit1(std::move(shape), std::move(out), a, [offset](const auto& g, GradSink& sink) {
    if (auto* ga = sink.get(0)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[offset + i] += g[i];
    }
  });
}

DiffArray slice_cols(const DiffArray& a, std::size_t begin, std::size_t count) {
  require_rank(a, 2, "slice_cols");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  if (begin + count > n) {
    throw DimensionError("slice_cols: columns [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of range for " +
                         shape_string(a.shape()));
  }
  const auto av = a.values();
  std::vector<double> out(m * count);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = av[i * n + begin + j];
  return emit1({m, count}, std::move(out), a, [m, n, begin, count](const auto& g, GradSink& sink) {
    if (auto* ga = sink.get(0)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < count; ++j) (*ga)[i * n + begin + j] += g[i * count + j];
    }
  });
}

namespace {

DiffArray emit_many(Shape shape, std::vector<double> values, std::span<const DiffArray> parts,
                    BackwardFn fn) {
  std::vector<const DiffArray*> in;
  in.reserve(parts.size());
  for (const auto& p : parts) in.push_back(&p);
  return Record::emit(std::move(shape), std::move(values), in, std::move(fn));
}

}  // namespace

DiffArray concat_rows(std::span<const DiffArray> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  require_rank(parts[0], 2, "concat_rows");
  const std::size_t cols = parts[0].shape()[1];
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_rows");
    if (p.shape()[1] != cols) {
      throw DimensionError("concat_rows: column mismatch " + shape_string(parts[0].shape()) +
                           " vs " + shape_string(p.shape()));
    }
    rows += p.shape()[0];
  }
  std::vector<double> out;
  out.reserve(rows * cols);
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    out.insert(out.end(), p.values().begin(), p.values().end());
    sizes.push_back(p.size());
  }
  return emit_many({rows, cols}, std::move(out), parts, [sizes](const auto& g, GradSink& sink) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      if (auto* gk = sink.get(k)) {
        for (std::size_t i = 0; i < sizes[k]; ++i) (*gk)[i] += g[off + i];
      }
      off += sizes[k];
    }
  });
}

DiffArray concat_cols(std::span<const DiffArray> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  require_rank(parts[0], 2, "concat_cols");
  const std::size_t rows = parts[0].shape()[0];
  std::vector<std::size_t> widths;
  std::size_t cols = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.shape()[0] != rows) {
      throw DimensionError("concat_cols: row mismatch " + shape_string(parts[0].shape()) +
                           " vs " + shape_string(p.shape()));
    }
    widths.push_back(p.shape()[1]);
    cols += p.shape()[1];
  }
  std::vector<double> out(rows * cols);
  std::size_t c0 = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pv = parts[k].values();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j) out[i * cols + c0 + j] = pv[i * widths[k] + j];
    c0 += widths[k];
  }
  return emit_many({rows, cols}, std::move(out), parts,
                   [widths, rows, cols](const auto& g, GradSink& sink) {
                     std::size_t c0 = 0;
                     for (std::size_t k = 0; k < widths.size(); ++k) {
                       if (auto* gk = sink.get(k)) {
                         for (std::size_t i = 0; i < rows; ++i)
                           for (std::size_t j = 0; j < widths[k]; ++j)
                             (*gk)[i * widths[k] + j] += g[i * cols + c0 + j];
                       }
                       c0 += widths[k];
                     }
                   });
}

DiffArray stack(std::span<const DiffArray> parts) {
  if (parts.empty()) throw DimensionError("stack: no inputs");
  for (const auto& p : parts) {
    if (p.shape() != parts[0].shape()) {
      throw DimensionError("stack: shape mismatch " + shape_string(parts[0].shape()) + " vs " +
                           shape_string(p.shape()));
    }
  }
  Shape shape{parts.size()};
  shape.insert(shape.end(), parts[0].shape().begin(), parts[0].shape().end());
  const std::size_t each = parts[0].size();
  std::vector<double> out;
  out.reserve(each * parts.size());
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  const std::size_t count = parts.size();
  return emit_many(std::move(shape), std::move(out), parts,
                   [each, count](const auto& g, GradSink& sink) {
                     for (std::size_t k = 0; k < count; ++k) {
                       if (auto* gk = sink.get(k)) {
                         for (std::size_t i = 0; i < each; ++i) (*gk)[i] += g[k * each + i];
                       }
                     }
                   });
}

DiffArray gather(const DiffArray& a, std::vector<std::size_t> indices, Shape shape) {
  if (shape_size(shape) != indices.size()) {
    throw DimensionError("gather: " + std::to_string(indices.size()) +
                         " indices cannot fill shape " + shape_string(shape));
  }
  const auto av = a.values();
  std::vector<double> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= a.size()) {
      throw DimensionError("gather: index " + std::to_string(indices[i]) +
                           " out of range for shape " + shape_string(a.shape()));
    }
    out[i] = av[indices[i]];
  }
  auto idx = std::make_shared<const std::vector<std::size_t>>(std::move(indices));
  return emit1(std::move(shape), std::move(out), a, [idx](const auto& g, GradSink& sink) {
    if (auto* ga = sink.get(0)) {
      for (std::size_t i = 0; i < idx->size(); ++i) (*ga)[(*idx)[i]] += g[i];
    }
  });
}

DiffArray cross_entropy(const DiffArray& logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t n = logits.shape()[0], c = logits.shape()[1];
  if (labels.size() != n || n == 0 || c == 0) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) +
                         " labels for logits " + shape_string(logits.shape()));
  }
  const auto lv = logits.values();
  auto probs = std::make_shared<std::vector<double>>(n * c);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw DimensionError("cross_entropy: label " + std::to_string(labels[i]) +
                           " outside [0, " + std::to_string(c) + ")");
    }
    const double* x = lv.data() + i * c;
    const double mx = *std::max_element(x, x + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(x[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) (*probs)[i * c + j] = std::exp(x[j] - lse);
    total += lse - x[labels[i]];
  }
  std::vector<int> lab(labels.begin(), labels.end());
  return emit1({}, {total / static_cast<double>(n)}, logits,
               [probs, lab, n, c](const auto& g, GradSink& sink) {
                 auto* ga = sink.get(0);
                 if (!ga) return;
                 const double f = g[0] / static_cast<double>(n);
                 for (std::size_t i = 0; i < n; ++i) {
                   for (std::size_t j = 0; j < c; ++j) {
                     const double target = static_cast<std::size_t>(lab[i]) == j ? 1.0 : 0.0;
                     (*ga)[i * c + j] += f * ((*probs)[i * c + j] - target);
                   }
                 }
               });
}

}  // namespace atnbreak
