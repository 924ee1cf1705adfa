#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "dcnas/rng.hpp"
#include "dcnas/tensor.hpp"

namespace dcnas {

inline double neg_inf() { return -std::numeric_limits<double>::infinity(); }

namespace detail {

inline bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::active().recording()) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

inline std::size_t normalize_axis(int axis, std::size_t rank, const char* op) {
  int r = static_cast<int>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeError(std::string(op) + ": axis out of range for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(axis);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const bool rec = detail::should_record({&a, &b});
  Tensor out(a.shape(), rec);
  const std::size_t n = out.numel();
  const double* av = a.values().data();
  const double* bv = b.values().data();
  double* ov = out.values().data();
  for (std::size_t i = 0; i < n; ++i) ov[i] = av[i] + bv[i];
  if (rec) {
    Tape::active().record([an = a.state(), bn = b.state(), on = out.state()] {
      Tape& t = Tape::active();
      const auto* fo = t.flow(on.get());
      if (!fo) return;
      if (an->requires_grad) {
        auto& fa = t.flow_accum(an);
        for (std::size_t i = 0; i < fa.size(); ++i) fa[i] += (*fo)[i];
      }
      if (bn->requires_grad) {
        auto& fb = t.flow_accum(bn);
        for (std::size_t i = 0; i < fb.size(); ++i) fb[i] += (*fo)[i];
      }
    });
  }
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const bool rec = detail::should_record({&a, &b});
  Tensor out(a.shape(), rec);
  const std::size_t n = out.numel();
  const double* av = a.values().data();
  const double* bv = b.values().data();
  double* ov = out.values().data();
  for (std::size_t i = 0; i < n; ++i) ov[i] = av[i] * bv[i];
  if (rec) {
    Tape::active().record([an = a.state(), bn = b.state(), on = out.state()] {
      Tape& t = Tape::active();
      const auto* fo = t.flow(on.get());
      if (!fo) return;
      if (an->requires_grad) {
        auto& fa = t.flow_accum(an);
        for (std::size_t i = 0; i < fa.size(); ++i) fa[i] += (*fo)[i] * bn->value[i];
      }
      if (bn->requires_grad) {
        auto& fb = t.flow_accum(bn);
        for (std::size_t i = 0; i < fb.size(); ++i) fb[i] += (*fo)[i] * an->value[i];
      }
    });
  }
  return out;
}

inline Tensor scale(const Tensor& x, double factor) {
  const bool rec = detail::should_record({&x});
  Tensor out(x.shape(), rec);
  const std::size_t n = out.numel();
  const double* xv = x.values().data();
  double* ov = out.values().data();
  for (std::size_t i = 0; i < n; ++i) ov[i] = xv[i] * factor;
  if (rec) {
    Tape::active().record([xn = x.state(), on = out.state(), factor] {
      Tape& t = Tape::active();
      const auto* fo = t.flow(on.get());
      if (!fo) return;
      auto& fx = t.flow_accum(xn);
      for (std::size_t i = 0; i < fx.size(); ++i) fx[i] += (*fo)[i] * factor;
    });
  }
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

// x: [..., d] plus bias[d] broadcast over leading dims.
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() < 1 || bias.rank() != 1 || x.dim(x.rank() - 1) != bias.dim(0)) {
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match " +
                     shape_str(x.shape()));
  }
  const bool rec = detail::should_record({&x, &bias});
  Tensor out(x.shape(), rec);
  const std::size_t d = bias.dim(0);
  const std::size_t rows = x.numel() / d;
  const double* xv = x.values().data();
  const double* bv = bias.values().data();
  double* ov = out.values().data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < d; ++j) ov[r * d + j] = xv[r * d + j] + bv[j];
  }
  if (rec) {
    Tape::active().record([xn = x.state(), bn = bias.state(), on = out.state(), rows, d] {
      Tape& t = Tape::active();
      const auto* fo = t.flow(on.get());
      if (!fo) return;
      if (xn->requires_grad) {
        auto& fx = t.flow_accum(xn);
        for (std::size_t i = 0; i < fx.size(); ++i) fx[i] += (*fo)[i];
      }
      if (bn->requires_grad) {
        auto& fb = t.flow_accum(bn);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < d; ++j) fb[j] += (*fo)[r * d + j];
        }
      }
    });
  }
  return out;
}

// Multiply row t of x[T, ...] by the constant weight[t]. The weights are data,
// not parameters; used to zero padded frames.
inline Tensor scale_rows(const Tensor& x, const std::vector<double>& row_weights) {
  if (x.rank() < 1 || x.dim(0) != row_weights.size()) {
    throw ShapeError("scale_rows: " + std::to_string(row_weights.size()) +
                     " weights for tensor " + shape_str(x.shape()));
  }
  const bool rec = detail::should_record({&x});
  Tensor out(x.shape(), rec);
  const std::size_t rows = x.dim(0);
  const std::size_t cols = x.numel() / std::max<std::size_t>(rows, 1);
  const double* xv = x.values().data();
  double* ov = out.values().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double w = row_weights[r];
    for (std::size_t j = 0; j < cols; ++j) ov[r * cols + j] = xv[r * cols + j] * w;
  }
  if (rec) {
    Tape::active().record([xn = x.state(), on = out.state(), row_weights, rows, cols] {
      Tape& t = Tape::active();
      const auto* fo = t.flow(on.get());
      if (!fo) return;
      auto& fx = t.flow_accum(xn);
      for (std::size_t r = 0; r < rows; ++r) {
        const double w = row_weights[r];
        for (std::size_t j = 0; j < cols; ++j) fx[r * cols + j] += (*fo)[r * cols + j] * w;
      }
    });
  }
  return out;
}

// out = x * weights[index]; the scalar multiplier stays differentiable, which
// is how mixture weights feed gradient back into architecture logits.
inline Tensor scale_by_weight(const Tensor& x, const Tensor& weights, std::size_t index) {
  if (index >= weights.numel()) {
    throw ShapeError("scale_by_weight: index " + std::to_string(index) + " out of " +
                     std::to_string(weights.numel()));
  }
  const bool rec = detail::should_record({&x, &weights});
  Tensor out(x.shape(), rec);
  const double w = weights.values()[index];
  const std::size_t n = out.numel();
  const double* xv = x.values().data();
  double* ov = out.values().data();
  for (std::size_t i = 0; i < n; ++i) ov[i] = xv[i] * w;
  if (rec) {
    Tape::active().record([xn = x.state(), wn = weights.state(), on = out.state(), index] {
      Tape& t = Tape::active();
      const auto* fo = t.flow(on.get());
      if (!fo) return;
      const double w = wn->value[index];
      if (xn->requires_grad) {
        auto& fx = t.flow_accum(xn);
        for (std::size_t i = 0; i < fx.size(); ++i) fx[i] += (*fo)[i] * w;
      }
      if (wn->requires_grad) {
        auto& fw = t.flow_accum(wn);
        double acc = 0.0;
        for (std::size_t i = 0; i < xn->value.size(); ++i) acc += (*fo)[i] * xn->value[i];
        fw[index] += acc;
      }
    });
  }
  return out;
}

inline Tensor relu(const Tensor& x) {
  const bool rec = detail::should_record({&x});
  Tensor out(x.shape(), rec);
  const std::size_t n = out.numel();
  const double* xv = x.values().data();
  double* ov = out.values().data();
  for (std::size_t i = 0; i < n; ++i) ov[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  if (rec) {
    Tape::active().record([xn = x.state(), on = out.state()] {
      Tape& t = Tape::active();
      const auto* fo = t.flow(on.get());
      if (!fo) return;
      auto& fx = t.flow_accum(xn);
      for (std::size_t i = 0; i < fx.size(); ++i) {
        if (xn->value[i] > 0.0) fx[i] += (*fo)[i];
      }
    });
  }
  return out;
}

inline double sigmoid_scalar(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& x) {
  const bool rec = detail::should_record({&x});
  Tensor out(x.shape(), rec);
  const std::size_t n = out.numel();
  const double* xv = x.values().data();
  double* ov = out.values().data();
  for (std::size_t i = 0; i < n; ++i) ov[i] = sigmoid_scalar(xv[i]);
  if (rec) {
    Tape::active().record([xn = x.state(), on = out.state()] {
      Tape& t = Tape::active();
      const auto* fo = t.flow(on.get());
      if (!fo) return;
      auto& fx = t.flow_accum(xn);
      for (std::size_t i = 0; i < fx.size(); ++i) {
        const double s = on->value[i];
        fx[i] += (*fo)[i] * s * (1.0 - s);
      }
    });
  }
  return out;
}

inline Tensor swish(const Tensor& x) {
  const bool rec = detail::should_record({&x});
  Tensor out(x.shape(), rec);
  const std::size_t n = out.numel();
  const double* xv = x.values().data();
  double* ov = out.values().data();
  for (std::size_t i = 0; i < n; ++i) ov[i] = xv[i] * sigmoid_scalar(xv[i]);
  if (rec) {
    Tape::active().record([xn = x.state(), on = out.state()] {
      Tape& t = Tape::active();
      const auto* fo = t.flow(on.get());
      if (!fo) return;
      auto& fx = t.flow_accum(xn);
      for (std::size_t i = 0; i < fx.size(); ++i) {
        const double s = sigmoid_scalar(xn->value[i]);
        fx[i] += (*fo)[i] * s * (1.0 + xn->value[i] * (1.0 - s));
      }
    });
  }
  return out;
}

// Gated linear unit over the last dimension: [a; b] -> a * sigmoid(b).
inline Tensor glu(const Tensor& x) {
  if (x.rank() < 1 || x.dim(x.rank() - 1) % 2 != 0) {
    throw ShapeError("glu: last dimension must be even, got " + shape_str(x.shape()));
  }
  const std::size_t d2 = x.dim(x.rank() - 1);
  const std::size_t d = d2 / 2;
  const std::size_t rows = x.numel() / d2;
  Shape out_shape = x.shape();
  out_shape.back() = d;
  const bool rec = detail::should_record({&x});
  Tensor out(out_shape, rec);
  const double* xv = x.values().data();
  double* ov = out.values().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* a = xv + r * d2;
    const double* b = a + d;
    for (std::size_t j = 0; j < d; ++j) ov[r * d + j] = a[j] * sigmoid_scalar(b[j]);
  }
  if (rec) {
    Tape::active().record([xn = x.state(), on = out.state(), rows, d, d2] {
      Tape& t = Tape::active();
      const auto* fo = t.flow(on.get());
      if (!fo) return;
      auto& fx = t.flow_accum(xn);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* a = xn->value.data() + r * d2;
        const double* b = a + d;
        for (std::size_t j = 0; j < d; ++j) {
          const double s = sigmoid_scalar(b[j]);
          const double g = (*fo)[r * d + j];
          fx[r * d2 + j] += g * s;
          fx[r * d2 + d + j] += g * a[j] * s * (1.0 - s);
        }
      }
    });
  }
  return out;
}

// Inverted dropout with a counter-based RNG; identical masks for identical
// (seed, step, op_id), identity when probability is zero.
inline Tensor dropout(const Tensor& x, double probability, std::uint64_t seed, std::uint64_t step,
                      std::uint64_t op_id) {
  if (probability < 0.0 || probability >= 1.0) {
    throw ConfigError("dropout: probability must be in [0, 1), got " + std::to_string(probability));
  }
  if (probability == 0.0) return x;
  const bool rec = detail::should_record({&x});
  Tensor out(x.shape(), rec);
  const std::size_t n = out.numel();
  const double keep_scale = 1.0 / (1.0 - probability);
  std::vector<double> mask(n);
  for (std::size_t i = 0; i < n; ++i) {
    mask[i] = counter_uniform(seed, step, op_id, i) >= probability ? keep_scale : 0.0;
  }
  const double* xv = x.values().data();
  double* ov = out.values().data();
  for (std::size_t i = 0; i < n; ++i) ov[i] = xv[i] * mask[i];
  if (rec) {
    Tape::active().record([xn = x.state(), on = out.state(), mask = std::move(mask)] {
      Tape& t = Tape::active();
      const auto* fo = t.flow(on.get());
      if (!fo) return;
      auto& fx = t.flow_accum(xn);
      for (std::size_t i = 0; i < fx.size(); ++i) fx[i] += (*fo)[i] * mask[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// matmul and layout ops
// ---------------------------------------------------------------------------

// a: [batch..., m, k] times b: [k, n] or [batch..., k, n].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::string err = "matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                          shape_str(b.shape());
  if (a.rank() < 2 || b.rank() < 2) throw ShapeError(err);
  const bool broadcast_b = b.rank() == 2 && a.rank() > 2;
  if (!broadcast_b && a.rank() != b.rank()) throw ShapeError(err);
  const std::size_t m = a.dim(a.rank() - 2);
  const std::size_t k = a.dim(a.rank() - 1);
  const std::size_t n = b.dim(b.rank() - 1);
  if (b.dim(b.rank() - 2) != k) throw ShapeError(err);
  std::size_t batches = 1;
  Shape out_shape;
  for (std::size_t i = 0; i + 2 < a.rank(); ++i) {
    if (!broadcast_b && b.dim(i) != a.dim(i)) throw ShapeError(err);
    batches *= a.dim(i);
    out_shape.push_back(a.dim(i));
  }
  out_shape.push_back(m);
  out_shape.push_back(n);

  const bool rec = detail::should_record({&a, &b});
  Tensor out(out_shape, rec);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  double* ov = out.values().data();
  for (std::size_t batch = 0; batch < batches; ++batch) {
    const double* A = av + batch * m * k;
    const double* B = bv + (broadcast_b ? 0 : batch * k * n);
    double* C = ov + batch * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double aik = A[i * k + kk];
        if (aik == 0.0) continue;
        const double* Brow = B + kk * n;
        double* Crow = C + i * n;
        for (std::size_t j = 0; j < n; ++j) Crow[j] += aik * Brow[j];
      }
    }
  }
  if (rec) {
    Tape::active().record(
        [an = a.state(), bn = b.state(), on = out.state(), batches, m, n, k, broadcast_b] {
          Tape& t = Tape::active();
          const auto* fo = t.flow(on.get());
          if (!fo) return;
          const double* dy = fo->data();
          if (an->requires_grad) {
            auto& fa = t.flow_accum(an);
            for (std::size_t batch = 0; batch < batches; ++batch) {
              const double* B = bn->value.data() + (broadcast_b ? 0 : batch * k * n);
              const double* DY = dy + batch * m * n;
              double* DA = fa.data() + batch * m * k;
              // dA = dY * B^T
              for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t kk = 0; kk < k; ++kk) {
                  double acc = 0.0;
                  const double* Brow = B + kk * n;
                  const double* DYrow = DY + i * n;
                  for (std::size_t j = 0; j < n; ++j) acc += DYrow[j] * Brow[j];
                  DA[i * k + kk] += acc;
                }
              }
            }
          }
          if (bn->requires_grad) {
            auto& fb = t.flow_accum(bn);
            for (std::size_t batch = 0; batch < batches; ++batch) {
              const double* A = an->value.data() + batch * m * k;
              const double* DY = dy + batch * m * n;
              double* DB = fb.data() + (broadcast_b ? 0 : batch * k * n);
              // dB = A^T * dY, accumulated over batches when broadcast
              for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t kk = 0; kk < k; ++kk) {
                  const double aik = A[i * k + kk];
                  if (aik == 0.0) continue;
                  const double* DYrow = DY + i * n;
                  double* DBrow = DB + kk * n;
                  for (std::size_t j = 0; j < n; ++j) DBrow[j] += aik * DYrow[j];
                }
              }
            }
          }
        });
  }
  return out;
}

inline Tensor transpose_last2(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("transpose_last2: needs rank >= 2, got " + shape_str(x.shape()));
  const std::size_t a = x.dim(x.rank() - 2);
  const std::size_t b = x.dim(x.rank() - 1);
  Shape out_shape = x.shape();
  std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);
  const std::size_t batches = x.numel() / (a * b);
  const bool rec = detail::should_record({&x});
  Tensor out(out_shape, rec);
  const double* xv = x.values().data();
  double* ov = out.values().data();
  for (std::size_t batch = 0; batch < batches; ++batch) {
    const double* X = xv + batch * a * b;
    double* Y = ov + batch * a * b;
    for (std::size_t i = 0; i < a; ++i) {
      for (std::size_t j = 0; j < b; ++j) Y[j * a + i] = X[i * b + j];
    }
  }
  if (rec) {
    Tape::active().record([xn = x.state(), on = out.state(), batches, a, b] {
      Tape& t = Tape::active();
      const auto* fo = t.flow(on.get());
      if (!fo) return;
      auto& fx = t.flow_accum(xn);
      for (std::size_t batch = 0; batch < batches; ++batch) {
        const double* DY = fo->data() + batch * a * b;
        double* DX = fx.data() + batch * a * b;
        for (std::size_t i = 0; i < a; ++i) {
          for (std::size_t j = 0; j < b; ++j) DX[i * b + j] += DY[j * a + i];
        }
      }
    });
  }
  return out;
}

// [T, d] -> [heads, T, d/heads]
inline Tensor split_heads(const Tensor& x, std::size_t heads) {
  if (x.rank() != 2 || heads == 0 || x.dim(1) % heads != 0) {
    throw ShapeError("split_heads: cannot split " + shape_str(x.shape()) + " into " +
                     std::to_string(heads) + " heads");
  }
  const std::size_t t_len = x.dim(0);
  const std::size_t d = x.dim(1);
  const std::size_t dh = d / heads;
  const bool rec = detail::should_record({&x});
  Tensor out({heads, t_len, dh}, rec);
  const double* xv = x.values().data();
  double* ov = out.values().data();
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t t = 0; t < t_len; ++t) {
      for (std::size_t j = 0; j < dh; ++j) ov[(h * t_len + t) * dh + j] = xv[t * d + h * dh + j];
    }
  }
  if (rec) {
    Tape::active().record([xn = x.state(), on = out.state(), heads, t_len, d, dh] {
      Tape& t = Tape::active();
      const auto* fo = t.flow(on.get());
      if (!fo) return;
      auto& fx = t.flow_accum(xn);
      for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t tt = 0; tt < t_len; ++tt) {
          for (std::size_t j = 0; j < dh; ++j) {
            fx[tt * d + h * dh + j] += (*fo)[(h * t_len + tt) * dh + j];
          }
        }
      }
    });
  }
  return out;
}

// [heads, T, dh] -> [T, heads*dh]
inline Tensor merge_heads(const Tensor& x) {
  if (x.rank() != 3) throw ShapeError("merge_heads: needs rank 3, got " + shape_str(x.shape()));
  const std::size_t heads = x.dim(0);
  const std::size_t t_len = x.dim(1);
  const std::size_t dh = x.dim(2);
  const std::size_t d = heads * dh;
  const bool rec = detail::should_record({&x});
  Tensor out({t_len, d}, rec);
  const double* xv = x.values().data();
  double* ov = out.values().data();
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t t = 0; t < t_len; ++t) {
      for (std::size_t j = 0; j < dh; ++j) ov[t * d + h * dh + j] = xv[(h * t_len + t) * dh + j];
    }
  }
  if (rec) {
    Tape::active().record([xn = x.state(), on = out.state(), heads, t_len, d, dh] {
      Tape& t = Tape::active();
      const auto* fo = t.flow(on.get());
      if (!fo) return;
      auto& fx = t.flow_accum(xn);
      for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t tt = 0; tt < t_len; ++tt) {
          for (std::size_t j = 0; j < dh; ++j) {
            fx[(h * t_len + tt) * dh + j] += (*fo)[tt * d + h * dh + j];
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// normalizations and reductions
// ---------------------------------------------------------------------------

namespace detail {

struct AxisSpan {
  std::size_t outer;
  std::size_t n;
  std::size_t inner;
};

inline AxisSpan axis_span(const Shape& shape, std::size_t axis) {
  AxisSpan s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace detail

// Max-subtracted softmax along `axis`. Entries of -inf get exact zero weight.
inline Tensor softmax(const Tensor& x, int axis_in = -1) {
  const std::size_t axis = detail::normalize_axis(axis_in, x.rank(), "softmax");
  const auto span = detail::axis_span(x.shape(), axis);
  const bool rec = detail::should_record({&x});
  Tensor out(x.shape(), rec);
  const double* xv = x.values().data();
  double* ov = out.values().data();
  for (std::size_t o = 0; o < span.outer; ++o) {
    for (std::size_t in = 0; in < span.inner; ++in) {
      const std::size_t base = o * span.n * span.inner + in;
      double mx = neg_inf();
      for (std::size_t i = 0; i < span.n; ++i) mx = std::max(mx, xv[base + i * span.inner]);
      double sum = 0.0;
      for (std::size_t i = 0; i < span.n; ++i) {
        const double e = std::exp(xv[base + i * span.inner] - mx);
        ov[base + i * span.inner] = e;
        sum += e;
      }
      const double inv = 1.0 / sum;
      for (std::size_t i = 0; i < span.n; ++i) ov[base + i * span.inner] *= inv;
    }
  }
  if (rec) {
    Tape::active().record([xn = x.state(), on = out.state(), span] {
      Tape& t = Tape::active();
      const auto* fo = t.flow(on.get());
      if (!fo) return;
      auto& fx = t.flow_accum(xn);
      for (std::size_t o = 0; o < span.outer; ++o) {
        for (std::size_t in = 0; in < span.inner; ++in) {
          const std::size_t base = o * span.n * span.inner + in;
          double dot = 0.0;
          for (std::size_t i = 0; i < span.n; ++i) {
            const std::size_t idx = base + i * span.inner;
            dot += (*fo)[idx] * on->value[idx];
          }
          for (std::size_t i = 0; i < span.n; ++i) {
            const std::size_t idx = base + i * span.inner;
            fx[idx] += on->value[idx] * ((*fo)[idx] - dot);
          }
        }
      }
    });
  }
  return out;
}

inline Tensor log_softmax(const Tensor& x, int axis_in = -1) {
  const std::size_t axis = detail::normalize_axis(axis_in, x.rank(), "log_softmax");
  const auto span = detail::axis_span(x.shape(), axis);
  const bool rec = detail::should_record({&x});
  Tensor out(x.shape(), rec);
  const double* xv = x.values().data();
  double* ov = out.values().data();
  for (std::size_t o = 0; o < span.outer; ++o) {
    for (std::size_t in = 0; in < span.inner; ++in) {
      const std::size_t base = o * span.n * span.inner + in;
      double mx = neg_inf();
      for (std::size_t i = 0; i < span.n; ++i) mx = std::max(mx, xv[base + i * span.inner]);
      double sum = 0.0;
      for (std::size_t i = 0; i < span.n; ++i) sum += std::exp(xv[base + i * span.inner] - mx);
      const double lse = mx + std::log(sum);
      for (std::size_t i = 0; i < span.n; ++i) {
        ov[base + i * span.inner] = xv[base + i * span.inner] - lse;
      }
    }
  }
  if (rec) {
    Tape::active().record([xn = x.state(), on = out.state(), span] {
      Tape& t = Tape::active();
      const auto* fo = t.flow(on.get());
      if (!fo) return;
      auto& fx = t.flow_accum(xn);
      for (std::size_t o = 0; o < span.outer; ++o) {
        for (std::size_t in = 0; in < span.inner; ++in) {
          const std::size_t base = o * span.n * span.inner + in;
          double total = 0.0;
          for (std::size_t i = 0; i < span.n; ++i) total += (*fo)[base + i * span.inner];
          for (std::size_t i = 0; i < span.n; ++i) {
            const std::size_t idx = base + i * span.inner;
            fx[idx] += (*fo)[idx] - std::exp(on->value[idx]) * total;
          }
        }
      }
    });
  }
  return out;
}

// Per-vector normalization over the last dimension; eps sits inside the root.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() < 1) throw ShapeError("layer_norm: rank must be >= 1");
  const std::size_t d = x.dim(x.rank() - 1);
  if (gamma.numel() != d || beta.numel() != d) {
    throw ShapeError("layer_norm: gamma/beta " + shape_str(gamma.shape()) + "/" +
                     shape_str(beta.shape()) + " do not match last dim of " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  const bool rec = detail::should_record({&x, &gamma, &beta});
  Tensor out(x.shape(), rec);
  const double* xv = x.values().data();
  const double* gv = gamma.values().data();
  const double* bv = beta.values().data();
  double* ov = out.values().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      ov[r * d + j] = gv[j] * ((row[j] - mean) * inv) + bv[j];
    }
  }
  if (rec) {
    Tape::active().record(
        [xn = x.state(), gn = gamma.state(), bn = beta.state(), on = out.state(), rows, d, eps] {
          Tape& t = Tape::active();
          const auto* fo = t.flow(on.get());
          if (!fo) return;
          for (std::size_t r = 0; r < rows; ++r) {
            const double* row = xn->value.data() + r * d;
            double mean = 0.0;
            for (std::size_t j = 0; j < d; ++j) mean += row[j];
            mean /= static_cast<double>(d);
            double var = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double c = row[j] - mean;
              var += c * c;
            }
            var /= static_cast<double>(d);
            const double inv = 1.0 / std::sqrt(var + eps);
            const double* dy = fo->data() + r * d;
            double mg = 0.0;
            double mgx = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double xhat = (row[j] - mean) * inv;
              const double g = gn->value[j] * dy[j];
              mg += g;
              mgx += g * xhat;
            }
            mg /= static_cast<double>(d);
            mgx /= static_cast<double>(d);
            if (xn->requires_grad) {
              auto& fx = t.flow_accum(xn);
              for (std::size_t j = 0; j < d; ++j) {
                const double xhat = (row[j] - mean) * inv;
                const double g = gn->value[j] * dy[j];
                fx[r * d + j] += inv * (g - mg - xhat * mgx);
              }
            }
            if (gn->requires_grad) {
              auto& fg = t.flow_accum(gn);
              for (std::size_t j = 0; j < d; ++j) {
                fg[j] += dy[j] * ((row[j] - mean) * inv);
              }
            }
            if (bn->requires_grad) {
              auto& fb = t.flow_accum(bn);
              for (std::size_t j = 0; j < d; ++j) fb[j] += dy[j];
            }
          }
        });
  }
  return out;
}

// Per-channel convolution over the time axis with symmetric zero padding;
// x: [T, d], kernel: [K, d], K odd, output [T, d].
inline Tensor conv1d_depthwise(const Tensor& x, const Tensor& kernel) {
  if (x.rank() != 2 || kernel.rank() != 2) {
    throw ShapeError("conv1d_depthwise: want [T, d] and [K, d], got " + shape_str(x.shape()) +
                     " and " + shape_str(kernel.shape()));
  }
  const std::size_t t_len = x.dim(0);
  const std::size_t d = x.dim(1);
  const std::size_t k_len = kernel.dim(0);
  if (kernel.dim(1) != d) {
    throw ShapeError("conv1d_depthwise: channel mismatch " + shape_str(x.shape()) + " vs " +
                     shape_str(kernel.shape()));
  }
  if (k_len % 2 == 0) {
    throw ConfigError("conv1d_depthwise: kernel size must be odd, got " + std::to_string(k_len));
  }
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k_len / 2);
  const bool rec = detail::should_record({&x, &kernel});
  Tensor out(x.shape(), rec);
  const double* xv = x.values().data();
  const double* kv = kernel.values().data();
  double* ov = out.values().data();
  const std::ptrdiff_t st = static_cast<std::ptrdiff_t>(t_len);
  for (std::ptrdiff_t t = 0; t < st; ++t) {
    for (std::size_t j = 0; j < k_len; ++j) {
      const std::ptrdiff_t src = t + static_cast<std::ptrdiff_t>(j) - pad;
      if (src < 0 || src >= st) continue;
      const double* xrow = xv + src * static_cast<std::ptrdiff_t>(d);
      const double* krow = kv + j * d;
      double* orow = ov + t * static_cast<std::ptrdiff_t>(d);
      for (std::size_t c = 0; c < d; ++c) orow[c] += krow[c] * xrow[c];
    }
  }
  if (rec) {
    Tape::active().record([xn = x.state(), kn = kernel.state(), on = out.state(), t_len, d, k_len,
                           pad] {
      Tape& t = Tape::active();
      const auto* fo = t.flow(on.get());
      if (!fo) return;
      const std::ptrdiff_t st = static_cast<std::ptrdiff_t>(t_len);
      if (xn->requires_grad) {
        auto& fx = t.flow_accum(xn);
        for (std::ptrdiff_t tt = 0; tt < st; ++tt) {
          for (std::size_t j = 0; j < k_len; ++j) {
            const std::ptrdiff_t src = tt + static_cast<std::ptrdiff_t>(j) - pad;
            if (src < 0 || src >= st) continue;
            const double* dy = fo->data() + tt * static_cast<std::ptrdiff_t>(d);
            const double* krow = kn->value.data() + j * d;
            double* dx = fx.data() + src * static_cast<std::ptrdiff_t>(d);
            for (std::size_t c = 0; c < d; ++c) dx[c] += krow[c] * dy[c];
          }
        }
      }
      if (kn->requires_grad) {
        auto& fk = t.flow_accum(kn);
        for (std::ptrdiff_t tt = 0; tt < st; ++tt) {
          for (std::size_t j = 0; j < k_len; ++j) {
            const std::ptrdiff_t src = tt + static_cast<std::ptrdiff_t>(j) - pad;
            if (src < 0 || src >= st) continue;
            const double* dy = fo->data() + tt * static_cast<std::ptrdiff_t>(d);
            const double* xrow = xn->value.data() + src * static_cast<std::ptrdiff_t>(d);
            double* dk = fk.data() + j * d;
            for (std::size_t c = 0; c < d; ++c) dk[c] += xrow[c] * dy[c];
          }
        }
      }
    });
  }
  return out;
}

// table: [V, d], ids -> [len(ids), d]
inline Tensor embedding_lookup(const Tensor& table, const std::vector<std::size_t>& ids) {
  if (table.rank() != 2) throw ShapeError("embedding_lookup: table must be [V, d]");
  const std::size_t vocab = table.dim(0);
  const std::size_t d = table.dim(1);
  for (std::size_t id : ids) {
    if (id >= vocab) {
      throw DataError("embedding_lookup: id " + std::to_string(id) + " out of vocabulary " +
                      std::to_string(vocab));
    }
  }
  const bool rec = detail::should_record({&table});
  Tensor out({ids.size(), d}, rec);
  const double* tv = table.values().data();
  double* ov = out.values().data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const double* row = tv + ids[i] * d;
    for (std::size_t j = 0; j < d; ++j) ov[i * d + j] = row[j];
  }
  if (rec) {
    Tape::active().record([tn = table.state(), on = out.state(), ids, d] {
      Tape& t = Tape::active();
      const auto* fo = t.flow(on.get());
      if (!fo) return;
      auto& ft = t.flow_accum(tn);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        for (std::size_t j = 0; j < d; ++j) ft[ids[i] * d + j] += (*fo)[i * d + j];
      }
    });
  }
  return out;
}

// y[t] = x[t, ids[t]]
inline Tensor take_per_row(const Tensor& x, const std::vector<std::size_t>& ids) {
  if (x.rank() != 2 || ids.size() > x.dim(0)) {
    throw ShapeError("take_per_row: want [T, C] with at most T ids, got " + shape_str(x.shape()) +
                     " and " + std::to_string(ids.size()) + " ids");
  }
  const std::size_t cols = x.dim(1);
  for (std::size_t id : ids) {
    if (id >= cols) {
      throw DataError("take_per_row: column " + std::to_string(id) + " out of " +
                      std::to_string(cols));
    }
  }
  const bool rec = detail::should_record({&x});
  Tensor out({ids.size()}, rec);
  for (std::size_t t = 0; t < ids.size(); ++t) out.values()[t] = x.values()[t * cols + ids[t]];
  if (rec) {
    Tape::active().record([xn = x.state(), on = out.state(), ids, cols] {
      Tape& t = Tape::active();
      const auto* fo = t.flow(on.get());
      if (!fo) return;
      auto& fx = t.flow_accum(xn);
      for (std::size_t tt = 0; tt < ids.size(); ++tt) fx[tt * cols + ids[tt]] += (*fo)[tt];
    });
  }
  return out;
}

inline Tensor sum_all(const Tensor& x) {
  const bool rec = detail::should_record({&x});
  double total = 0.0;
  for (double v : x.values()) total += v;
  Tensor out = Tensor::from_values({}, {total}, rec);
  if (rec) {
    Tape::active().record([xn = x.state(), on = out.state()] {
      Tape& t = Tape::active();
      const auto* fo = t.flow(on.get());
      if (!fo) return;
      auto& fx = t.flow_accum(xn);
      const double g = (*fo)[0];
      for (double& v : fx) v += g;
    });
  }
  return out;
}

inline Tensor mean_all(const Tensor& x) {
  return scale(sum_all(x), 1.0 / static_cast<double>(x.numel()));
}

// Constant [T, d] table of interleaved sin/cos absolute positions.
inline Tensor sinusoidal_positions(std::size_t t_len, std::size_t d) {
  if (d % 2 != 0) {
    throw ConfigError("sinusoidal_positions: dimension must be even, got " + std::to_string(d));
  }
  Tensor out({t_len, d}, false);
  double* ov = out.values().data();
  for (std::size_t t = 0; t < t_len; ++t) {
    for (std::size_t i = 0; i < d / 2; ++i) {
      const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(d));
      const double angle = static_cast<double>(t) * freq;
      ov[t * d + 2 * i] = std::sin(angle);
      ov[t * d + 2 * i + 1] = std::cos(angle);
    }
  }
  return out;
}

// Glorot-uniform initialized tensor; fans chosen by the caller.
inline Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Tensor t(std::move(shape), true);
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : t.values()) v = rng.uniform(-limit, limit);
  return t;
}

}  // namespace dcnas
