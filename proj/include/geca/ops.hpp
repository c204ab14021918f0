#pragma once

// Differentiable primitives over Var. Every op computes its forward value
// eagerly and records the adjoint closure on the operands' tape.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "geca/neighborhood.hpp"
#include "geca/tape.hpp"

namespace geca {

namespace detail {

template <typename Scalar>
void accumulate(Tape<Scalar>& tape, Var<Scalar> v, const Tensor<Scalar>& g) {
  if (tape.requires_grad(v.id)) tape.grad_buffer(v.id).array() += g.array();
}

inline void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_string(s));
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  if (x >= 0) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

template <typename Scalar>
void require_grid_rows(const Var<Scalar>& x, const GridDims& dims, const char* op) {
  require_rank(x.shape(), 2, op);
  if (x.shape()[0] != dims.cells())
    throw DimensionError(std::string(op) + ": row count does not match grid extents");
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  detail::require_rank(a.shape(), 2, "matmul");
  detail::require_rank(b.shape(), 2, "matmul");
  if (a.shape()[1] != b.shape()[0])
    throw DimensionError("matmul: inner extents differ: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  Tensor<Scalar> out({a.shape()[0], b.shape()[1]});
  out.matrix().noalias() = a.value().matrix() * b.value().matrix();
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<Scalar>& tape, Index, const Tensor<Scalar>& g) {
    if (tape.requires_grad(a.id))
      tape.grad_buffer(a.id).matrix().noalias() += g.matrix() * tape.value(b.id).matrix().transpose();
    if (tape.requires_grad(b.id))
      tape.grad_buffer(b.id).matrix().noalias() += tape.value(a.id).matrix().transpose() * g.matrix();
  });
}

template <typename Scalar>
Var<Scalar> operator+(Var<Scalar> a, Var<Scalar> b) {
  require_shape(b.shape(), a.shape(), "add");
  Tensor<Scalar> out(a.shape(), a.value().array() + b.value().array());
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<Scalar>& tape, Index, const Tensor<Scalar>& g) {
    detail::accumulate(tape, a, g);
    detail::accumulate(tape, b, g);
  });
}

template <typename Scalar>
Var<Scalar> operator-(Var<Scalar> a, Var<Scalar> b) {
  require_shape(b.shape(), a.shape(), "sub");
  Tensor<Scalar> out(a.shape(), a.value().array() - b.value().array());
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<Scalar>& tape, Index, const Tensor<Scalar>& g) {
    detail::accumulate(tape, a, g);
    if (tape.requires_grad(b.id)) tape.grad_buffer(b.id).array() -= g.array();
  });
}

/// Element-wise product.
template <typename Scalar>
Var<Scalar> operator*(Var<Scalar> a, Var<Scalar> b) {
  require_shape(b.shape(), a.shape(), "mul");
  Tensor<Scalar> out(a.shape(), a.value().array() * b.value().array());
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<Scalar>& tape, Index, const Tensor<Scalar>& g) {
    if (tape.requires_grad(a.id)) tape.grad_buffer(a.id).array() += g.array() * tape.value(b.id).array();
    if (tape.requires_grad(b.id)) tape.grad_buffer(b.id).array() += g.array() * tape.value(a.id).array();
  });
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> a, Scalar s) {
  Tensor<Scalar> out(a.shape(), a.value().array() * s);
  return a.tape->record(std::move(out), {a}, [a, s](Tape<Scalar>& tape, Index, const Tensor<Scalar>& g) {
    tape.grad_buffer(a.id).array() += g.array() * s;
  });
}

/// a[N x D] + bias[D], broadcast over rows.
template <typename Scalar>
Var<Scalar> add_bias(Var<Scalar> a, Var<Scalar> bias) {
  detail::require_rank(bias.shape(), 1, "add_bias");
  if (bias.shape()[0] != a.value().cols()) throw DimensionError("add_bias: bias length does not match last axis");
  Tensor<Scalar> out = a.value();
  out.matrix().rowwise() += bias.value().matrix().row(0);
  return a.tape->record(std::move(out), {a, bias}, [a, bias](Tape<Scalar>& tape, Index, const Tensor<Scalar>& g) {
    detail::accumulate(tape, a, g);
    if (tape.requires_grad(bias.id)) tape.grad_buffer(bias.id).matrix().row(0) += g.matrix().colwise().sum();
  });
}

/// x * w + b for x[N x in], w[in x out], b[out].
template <typename Scalar>
Var<Scalar> linear(Var<Scalar> x, Var<Scalar> w, Var<Scalar> b) {
  return add_bias(matmul(x, w), b);
}

/// Repeats each row of a[B x D] `times` times consecutively -> [B*times x D].
template <typename Scalar>
Var<Scalar> repeat_rows(Var<Scalar> a, Index times) {
  detail::require_rank(a.shape(), 2, "repeat_rows");
  const Index rows = a.shape()[0], cols = a.shape()[1];
  Tensor<Scalar> out({rows * times, cols});
  for (Index r = 0; r < rows; ++r) out.matrix().middleRows(r * times, times).rowwise() = a.value().matrix().row(r);
  return a.tape->record(std::move(out), {a}, [a, rows, times](Tape<Scalar>& tape, Index, const Tensor<Scalar>& g) {
    auto& ga = tape.grad_buffer(a.id);
    for (Index r = 0; r < rows; ++r) ga.matrix().row(r) += g.matrix().middleRows(r * times, times).colwise().sum();
  });
}

/// Columns [offset, offset+width) of a rank-2 tensor.
template <typename Scalar>
Var<Scalar> slice_cols(Var<Scalar> a, Index offset, Index width) {
  detail::require_rank(a.shape(), 2, "slice_cols");
  if (offset < 0 || width < 0 || offset + width > a.shape()[1]) throw DimensionError("slice_cols: range out of bounds");
  Tensor<Scalar> out({a.shape()[0], width});
  out.matrix() = a.value().matrix().middleCols(offset, width);
  return a.tape->record(std::move(out), {a}, [a, offset, width](Tape<Scalar>& tape, Index, const Tensor<Scalar>& g) {
    tape.grad_buffer(a.id).matrix().middleCols(offset, width) += g.matrix();
  });
}

/// Numerically stable softmax along `axis` (max subtracted before exp).
template <typename Scalar>
Var<Scalar> softmax(Var<Scalar> x, Index axis = -1) {
  const Shape& shape = x.shape();
  const Index rank = static_cast<Index>(shape.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw DimensionError("softmax: axis out of range");
  Index outer = 1, inner = 1;
  for (Index i = 0; i < axis; ++i) outer *= shape[static_cast<std::size_t>(i)];
  for (Index i = axis + 1; i < rank; ++i) inner *= shape[static_cast<std::size_t>(i)];
  const Index len = shape[static_cast<std::size_t>(axis)];

  Tensor<Scalar> out(shape);
  const Scalar* in = x.value().data();
  Scalar* y = out.data();
  for (Index o = 0; o < outer; ++o) {
    for (Index i = 0; i < inner; ++i) {
      const Index base = o * len * inner + i;
      Scalar mx = in[base];
      for (Index k = 1; k < len; ++k) mx = std::max(mx, in[base + k * inner]);
      Scalar total = 0;
      for (Index k = 0; k < len; ++k) total += (y[base + k * inner] = std::exp(in[base + k * inner] - mx));
      for (Index k = 0; k < len; ++k) y[base + k * inner] /= total;
    }
  }
  return x.tape->record(std::move(out), {x}, [x, outer, inner, len](Tape<Scalar>& tape, Index self, const Tensor<Scalar>& g) {
    const Scalar* y = tape.value(self).data();
    const Scalar* gy = g.data();
    Scalar* gx = tape.grad_buffer(x.id).data();
    for (Index o = 0; o < outer; ++o) {
      for (Index i = 0; i < inner; ++i) {
        const Index base = o * len * inner + i;
        Scalar dot = 0;
        for (Index k = 0; k < len; ++k) dot += y[base + k * inner] * gy[base + k * inner];
        for (Index k = 0; k < len; ++k) gx[base + k * inner] += y[base + k * inner] * (gy[base + k * inner] - dot);
      }
    }
  });
}

/// Layer normalisation over the last axis followed by gain * x + bias.
template <typename Scalar>
Var<Scalar> layer_norm(Var<Scalar> x, Var<Scalar> gain, Var<Scalar> bias, Scalar eps = Scalar(1e-5)) {
  const Index d = x.value().cols();
  require_shape(gain.shape(), {d}, "layer_norm gain");
  require_shape(bias.shape(), {d}, "layer_norm bias");
  const auto xm = x.value().matrix();
  const Index n = xm.rows();

  Tensor<Scalar> xhat(x.shape());
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> rstd(n);
  auto xh = xhat.matrix();
  for (Index r = 0; r < n; ++r) {
    const Scalar mean = xm.row(r).mean();
    const Scalar var = (xm.row(r).array() - mean).square().mean();
    rstd[r] = Scalar(1) / std::sqrt(var + eps);
    xh.row(r) = (xm.row(r).array() - mean) * rstd[r];
  }
  Tensor<Scalar> out(x.shape());
  out.matrix() = (xh.array().rowwise() * gain.value().matrix().row(0).array()).rowwise() +
                 bias.value().matrix().row(0).array();

  return x.tape->record(std::move(out), {x, gain, bias},
                        [x, gain, bias, xhat = std::move(xhat), rstd = std::move(rstd)](
                            Tape<Scalar>& tape, Index, const Tensor<Scalar>& g) {
                          const auto gm = g.matrix();
                          const auto xh = xhat.matrix();
                          if (tape.requires_grad(gain.id))
                            tape.grad_buffer(gain.id).matrix().row(0) += (gm.array() * xh.array()).colwise().sum().matrix();
                          if (tape.requires_grad(bias.id))
                            tape.grad_buffer(bias.id).matrix().row(0) += gm.colwise().sum();
                          if (tape.requires_grad(x.id)) {
                            auto gx = tape.grad_buffer(x.id).matrix();
                            const auto gain_row = tape.value(gain.id).matrix().row(0).array();
                            for (Index r = 0; r < gm.rows(); ++r) {
                              const auto gxh = (gm.row(r).array() * gain_row).eval();
                              const Scalar m1 = gxh.mean();
                              const Scalar m2 = (gxh * xh.row(r).array()).mean();
                              gx.row(r).array() += rstd[r] * (gxh - m1 - xh.row(r).array() * m2);
                            }
                          }
                        });
}

namespace detail {

template <typename Scalar, typename F, typename DF>
Var<Scalar> unary(Var<Scalar> x, F f, DF df) {
  Tensor<Scalar> out(x.shape(), x.value().array().unaryExpr(f));
  return x.tape->record(std::move(out), {x}, [x, df](Tape<Scalar>& tape, Index, const Tensor<Scalar>& g) {
    tape.grad_buffer(x.id).array() += g.array() * tape.value(x.id).array().unaryExpr(df);
  });
}

}  // namespace detail

/// GELU, tanh approximation.
template <typename Scalar>
Var<Scalar> gelu(Var<Scalar> x) {
  constexpr Scalar c = Scalar(0.7978845608028654);  // sqrt(2/pi)
  constexpr Scalar k = Scalar(0.044715);
  return detail::unary(
      x,
      [](Scalar v) { return Scalar(0.5) * v * (Scalar(1) + std::tanh(c * (v + k * v * v * v))); },
      [](Scalar v) {
        const Scalar th = std::tanh(c * (v + k * v * v * v));
        return Scalar(0.5) * (Scalar(1) + th) +
               Scalar(0.5) * v * (Scalar(1) - th * th) * c * (Scalar(1) + Scalar(3) * k * v * v);
      });
}

template <typename Scalar>
Var<Scalar> silu(Var<Scalar> x) {
  return detail::unary(
      x, [](Scalar v) { return v * detail::sigmoid(v); },
      [](Scalar v) {
        const Scalar s = detail::sigmoid(v);
        return s * (Scalar(1) + v * (Scalar(1) - s));
      });
}

template <typename Scalar>
Var<Scalar> relu(Var<Scalar> x) {
  return detail::unary(
      x, [](Scalar v) { return v > 0 ? v : Scalar(0); }, [](Scalar v) { return v > 0 ? Scalar(1) : Scalar(0); });
}

/// Sum of all entries -> shape [1].
/// max(|x| - bound, 0), element-wise.
template <typename Scalar>
Var<Scalar> overflow(Var<Scalar> x, Scalar bound) {
  return detail::unary(
      x, [bound](Scalar v) { return std::max(std::abs(v) - bound, Scalar(0)); },
      [bound](Scalar v) { return std::abs(v) > bound ? (v > 0 ? Scalar(1) : Scalar(-1)) : Scalar(0); });
}

template <typename Scalar>
Var<Scalar> sum(Var<Scalar> x) {
  Tensor<Scalar> out({1});
  out[0] = x.value().array().sum();
  return x.tape->record(std::move(out), {x}, [x](Tape<Scalar>& tape, Index, const Tensor<Scalar>& g) {
    tape.grad_buffer(x.id).array() += g[0];
  });
}

template <typename Scalar>
Var<Scalar> mean(Var<Scalar> x) {
  return scale(sum(x), Scalar(1) / static_cast<Scalar>(x.value().size()));
}

/// Mean squared difference over all entries -> shape [1].
template <typename Scalar>
Var<Scalar> mse(Var<Scalar> a, Var<Scalar> b) {
  require_shape(b.shape(), a.shape(), "mse");
  Tensor<Scalar> out({1});
  const Scalar inv = Scalar(1) / static_cast<Scalar>(a.value().size());
  out[0] = (a.value().array() - b.value().array()).square().sum() * inv;
  return a.tape->record(std::move(out), {a, b}, [a, b, inv](Tape<Scalar>& tape, Index, const Tensor<Scalar>& g) {
    const Scalar s = Scalar(2) * inv * g[0];
    const auto diff = (tape.value(a.id).array() - tape.value(b.id).array()).eval();
    if (tape.requires_grad(a.id)) tape.grad_buffer(a.id).array() += s * diff;
    if (tape.requires_grad(b.id)) tape.grad_buffer(b.id).array() -= s * diff;
  });
}

/// Mean binary cross-entropy on logits against {0,1} targets -> shape [1].
template <typename Scalar>
Var<Scalar> bce_with_logits(Var<Scalar> logits, Var<Scalar> targets) {
  require_shape(targets.shape(), logits.shape(), "bce_with_logits");
  const auto z = logits.value().array();
  const auto y = targets.value().array();
  const Scalar inv = Scalar(1) / static_cast<Scalar>(z.size());
  Tensor<Scalar> out({1});
  out[0] = ((z.max(Scalar(0)) - z * y) + (Scalar(1) + (-z.abs()).exp()).log()).sum() * inv;
  return logits.tape->record(std::move(out), {logits, targets},
                             [logits, targets, inv](Tape<Scalar>& tape, Index, const Tensor<Scalar>& g) {
                               if (tape.requires_grad(targets.id))
                                 tape.grad_buffer(targets.id).array() -= tape.value(logits.id).array() * (inv * g[0]);
                               if (!tape.requires_grad(logits.id)) return;
                               const auto sig = tape.value(logits.id).array().unaryExpr(
                                   [](Scalar v) { return detail::sigmoid(v); });
                               tape.grad_buffer(logits.id).array() +=
                                   (sig - tape.value(targets.id).array()) * (inv * g[0]);
                             });
}

/// Adaptive-norm modulation: x * (1 + scale_b) + shift_b, where rows of
/// x[B*R x D] belong to item b = row / R and shift/scale are [B x D].
template <typename Scalar>
Var<Scalar> modulate(Var<Scalar> x, Var<Scalar> shift, Var<Scalar> scale_by, Index rows_per_item) {
  detail::require_rank(x.shape(), 2, "modulate");
  const Index items = shift.shape()[0];
  require_shape(shift.shape(), {items, x.shape()[1]}, "modulate shift");
  require_shape(scale_by.shape(), {items, x.shape()[1]}, "modulate scale");
  if (items * rows_per_item != x.shape()[0]) throw DimensionError("modulate: rows do not match item count");
  Tensor<Scalar> out(x.shape());
  for (Index b = 0; b < items; ++b) {
    const auto s = (scale_by.value().matrix().row(b).array() + Scalar(1)).eval();
    out.matrix().middleRows(b * rows_per_item, rows_per_item) =
        ((x.value().matrix().middleRows(b * rows_per_item, rows_per_item).array().rowwise() * s).rowwise() +
         shift.value().matrix().row(b).array())
            .matrix();
  }
  return x.tape->record(
      std::move(out), {x, shift, scale_by},
      [x, shift, scale_by, items, rows_per_item](Tape<Scalar>& tape, Index, const Tensor<Scalar>& g) {
        for (Index b = 0; b < items; ++b) {
          const auto gb = g.matrix().middleRows(b * rows_per_item, rows_per_item);
          if (tape.requires_grad(x.id)) {
            const auto s = (tape.value(scale_by.id).matrix().row(b).array() + Scalar(1)).eval();
            tape.grad_buffer(x.id).matrix().middleRows(b * rows_per_item, rows_per_item).array() +=
                gb.array().rowwise() * s;
          }
          if (tape.requires_grad(shift.id)) tape.grad_buffer(shift.id).matrix().row(b) += gb.colwise().sum();
          if (tape.requires_grad(scale_by.id)) {
            const auto xb = tape.value(x.id).matrix().middleRows(b * rows_per_item, rows_per_item);
            tape.grad_buffer(scale_by.id).matrix().row(b) += (gb.array() * xb.array()).colwise().sum().matrix();
          }
        }
      });
}

/// x + gate_b * y with per-item gates [B x D] broadcast over R rows each.
template <typename Scalar>
Var<Scalar> gated_residual(Var<Scalar> x, Var<Scalar> gate, Var<Scalar> y, Index rows_per_item) {
  require_shape(y.shape(), x.shape(), "gated_residual");
  const Index items = gate.shape()[0];
  require_shape(gate.shape(), {items, x.shape()[1]}, "gated_residual gate");
  if (items * rows_per_item != x.shape()[0]) throw DimensionError("gated_residual: rows do not match item count");
  Tensor<Scalar> out = x.value();
  for (Index b = 0; b < items; ++b)
    out.matrix().middleRows(b * rows_per_item, rows_per_item).array() +=
        y.value().matrix().middleRows(b * rows_per_item, rows_per_item).array().rowwise() *
        gate.value().matrix().row(b).array();
  return x.tape->record(
      std::move(out), {x, gate, y}, [x, gate, y, items, rows_per_item](Tape<Scalar>& tape, Index, const Tensor<Scalar>& g) {
        detail::accumulate(tape, x, g);
        for (Index b = 0; b < items; ++b) {
          const auto gb = g.matrix().middleRows(b * rows_per_item, rows_per_item);
          if (tape.requires_grad(y.id))
            tape.grad_buffer(y.id).matrix().middleRows(b * rows_per_item, rows_per_item).array() +=
                gb.array().rowwise() * tape.value(gate.id).matrix().row(b).array();
          if (tape.requires_grad(gate.id)) {
            const auto yb = tape.value(y.id).matrix().middleRows(b * rows_per_item, rows_per_item);
            tape.grad_buffer(gate.id).matrix().row(b) += (gb.array() * yb.array()).colwise().sum().matrix();
          }
        }
      });
}

/// Returns x with columns [offset, offset+w) incremented by mask[row] * delta.
/// The mask is a constant: gradient reaches delta only through rows whose
/// mask entry is nonzero.
template <typename Scalar>
Var<Scalar> masked_residual(Var<Scalar> x, Var<Scalar> delta, const Tensor<Scalar>& mask, Index offset) {
  detail::require_rank(x.shape(), 2, "masked_residual");
  detail::require_rank(delta.shape(), 2, "masked_residual");
  const Index rows = x.shape()[0], w = delta.shape()[1];
  if (delta.shape()[0] != rows || offset < 0 || offset + w > x.shape()[1] || mask.size() != rows)
    throw DimensionError("masked_residual: extents do not match");
  const Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> m(mask.data(), rows);
  Tensor<Scalar> out = x.value();
  out.matrix().middleCols(offset, w) += m.asDiagonal() * delta.value().matrix();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mcopy = m;
  return x.tape->record(std::move(out), {x, delta},
                        [x, delta, offset, w, mcopy = std::move(mcopy)](Tape<Scalar>& tape, Index, const Tensor<Scalar>& g) {
                          detail::accumulate(tape, x, g);
                          if (tape.requires_grad(delta.id))
                            tape.grad_buffer(delta.id).matrix() += mcopy.asDiagonal() * g.matrix().middleCols(offset, w);
                        });
}

/// Splits `width` channels into `heads` contiguous groups whose sizes differ
/// by at most one (larger groups first).
inline std::vector<std::pair<Index, Index>> head_ranges(Index width, Index heads) {
  if (heads < 1 || heads > width) throw ConfigError("head count must be in [1, width]");
  std::vector<std::pair<Index, Index>> out;
  const Index base = width / heads, extra = width % heads;
  Index off = 0;
  for (Index h = 0; h < heads; ++h) {
    const Index len = base + (h < extra ? 1 : 0);
    out.emplace_back(off, len);
    off += len;
  }
  return out;
}

/// Multi-head attention where every cell is the sole query over its own
/// 3x3 Moore window. q, k, v are [cells x D] for a batch of grids. Window
/// slots outside the grid are excluded from the softmax.
template <typename Scalar>
Var<Scalar> local_attention(Var<Scalar> q, Var<Scalar> k, Var<Scalar> v, const GridDims& dims, Index heads) {
  detail::require_grid_rows(q, dims, "local_attention");
  require_shape(k.shape(), q.shape(), "local_attention keys");
  require_shape(v.shape(), q.shape(), "local_attention values");
  const Index n = dims.cells();
  const auto ranges = head_ranges(q.shape()[1], heads);

  std::vector<Index> nbr(static_cast<std::size_t>(n * kNeighborhoodSize));
  for (Index r = 0; r < n; ++r)
    for (int s = 0; s < kNeighborhoodSize; ++s) nbr[static_cast<std::size_t>(r * kNeighborhoodSize + s)] = neighbor_row(dims, r, s);

  const auto qm = q.value().matrix();
  const auto km = k.value().matrix();
  const auto vm = v.value().matrix();
  Tensor<Scalar> out(q.shape());
  auto om = out.matrix();
  // Attention weights [n, heads, 9]; zero for padded slots.
  std::vector<Scalar> weights(static_cast<std::size_t>(n * heads * kNeighborhoodSize), Scalar(0));

  for (Index r = 0; r < n; ++r) {
    const Index* rn = &nbr[static_cast<std::size_t>(r * kNeighborhoodSize)];
    for (Index h = 0; h < heads; ++h) {
      const auto [off, len] = ranges[static_cast<std::size_t>(h)];
      const Scalar inv_sqrt = Scalar(1) / std::sqrt(static_cast<Scalar>(len));
      Scalar* w = &weights[static_cast<std::size_t>((r * heads + h) * kNeighborhoodSize)];
      Scalar mx = -std::numeric_limits<Scalar>::infinity();
      for (int s = 0; s < kNeighborhoodSize; ++s) {
        if (rn[s] < 0) continue;
        w[s] = qm.row(r).segment(off, len).dot(km.row(rn[s]).segment(off, len)) * inv_sqrt;
        mx = std::max(mx, w[s]);
      }
      Scalar total = 0;
      for (int s = 0; s < kNeighborhoodSize; ++s) {
        if (rn[s] < 0) continue;
        w[s] = std::exp(w[s] - mx);
        total += w[s];
      }
      for (int s = 0; s < kNeighborhoodSize; ++s) {
        if (rn[s] < 0) continue;
        w[s] /= total;
        om.row(r).segment(off, len) += w[s] * vm.row(rn[s]).segment(off, len);
      }
    }
  }

  return q.tape->record(
      std::move(out), {q, k, v},
      [q, k, v, n, heads, ranges, nbr = std::move(nbr), weights = std::move(weights)](
          Tape<Scalar>& tape, Index, const Tensor<Scalar>& g) {
        const auto qm = tape.value(q.id).matrix();
        const auto km = tape.value(k.id).matrix();
        const auto vm = tape.value(v.id).matrix();
        const auto gm = g.matrix();
        const bool need_q = tape.requires_grad(q.id), need_k = tape.requires_grad(k.id),
                   need_v = tape.requires_grad(v.id);
        Tensor<Scalar>* gq = need_q ? &tape.grad_buffer(q.id) : nullptr;
        Tensor<Scalar>* gk = need_k ? &tape.grad_buffer(k.id) : nullptr;
        Tensor<Scalar>* gv = need_v ? &tape.grad_buffer(v.id) : nullptr;
        for (Index r = 0; r < n; ++r) {
          const Index* rn = &nbr[static_cast<std::size_t>(r * kNeighborhoodSize)];
          for (Index h = 0; h < heads; ++h) {
            const auto [off, len] = ranges[static_cast<std::size_t>(h)];
            const Scalar inv_sqrt = Scalar(1) / std::sqrt(static_cast<Scalar>(len));
            const Scalar* w = &weights[static_cast<std::size_t>((r * heads + h) * kNeighborhoodSize)];
            Scalar dw[kNeighborhoodSize] = {};
            Scalar weighted = 0;
            for (int s = 0; s < kNeighborhoodSize; ++s) {
              if (rn[s] < 0) continue;
              dw[s] = gm.row(r).segment(off, len).dot(vm.row(rn[s]).segment(off, len));
              weighted += w[s] * dw[s];
              if (gv) gv->matrix().row(rn[s]).segment(off, len) += w[s] * gm.row(r).segment(off, len);
            }
            for (int s = 0; s < kNeighborhoodSize; ++s) {
              if (rn[s] < 0) continue;
              const Scalar dlogit = w[s] * (dw[s] - weighted) * inv_sqrt;
              if (gq) gq->matrix().row(r).segment(off, len) += dlogit * km.row(rn[s]).segment(off, len);
              if (gk) gk->matrix().row(rn[s]).segment(off, len) += dlogit * qm.row(r).segment(off, len);
            }
          }
        }
      });
}

/// im2col for a 3x3 window: [cells x C] -> [cells x 9C], zero padded, slot
/// order row-major over offsets -1..1.
template <typename Scalar>
Var<Scalar> gather_neighborhood(Var<Scalar> x, const GridDims& dims) {
  detail::require_grid_rows(x, dims, "gather_neighborhood");
  const Index n = dims.cells(), c = x.shape()[1];
  Tensor<Scalar> out({n, kNeighborhoodSize * c});
  auto om = out.matrix();
  const auto xm = x.value().matrix();
  for (Index r = 0; r < n; ++r)
    for (int s = 0; s < kNeighborhoodSize; ++s)
      if (const Index src = neighbor_row(dims, r, s); src >= 0) om.row(r).segment(s * c, c) = xm.row(src);
  return x.tape->record(std::move(out), {x}, [x, dims, n, c](Tape<Scalar>& tape, Index, const Tensor<Scalar>& g) {
    auto gx = tape.grad_buffer(x.id).matrix();
    const auto gm = g.matrix();
    for (Index r = 0; r < n; ++r)
      for (int s = 0; s < kNeighborhoodSize; ++s)
        if (const Index src = neighbor_row(dims, r, s); src >= 0) gx.row(src) += gm.row(r).segment(s * c, c);
  });
}

/// 2x2 average pooling with stride 2; height and width must be even.
template <typename Scalar>
Var<Scalar> avg_pool2(Var<Scalar> x, const GridDims& dims) {
  detail::require_grid_rows(x, dims, "avg_pool2");
  if (dims.height % 2 || dims.width % 2) throw DimensionError("avg_pool2: extents must be even");
  const GridDims od{dims.batch, dims.height / 2, dims.width / 2};
  const Index c = x.shape()[1];
  Tensor<Scalar> out({od.cells(), c});
  const auto xm = x.value().matrix();
  auto om = out.matrix();
  for (Index b = 0; b < od.batch; ++b)
    for (Index i = 0; i < od.height; ++i)
      for (Index j = 0; j < od.width; ++j)
        om.row(od.row(b, i, j)) = Scalar(0.25) * (xm.row(dims.row(b, 2 * i, 2 * j)) + xm.row(dims.row(b, 2 * i, 2 * j + 1)) +
                                                  xm.row(dims.row(b, 2 * i + 1, 2 * j)) +
                                                  xm.row(dims.row(b, 2 * i + 1, 2 * j + 1)));
  return x.tape->record(std::move(out), {x}, [x, dims, od](Tape<Scalar>& tape, Index, const Tensor<Scalar>& g) {
    auto gx = tape.grad_buffer(x.id).matrix();
    const auto gm = g.matrix();
    for (Index b = 0; b < od.batch; ++b)
      for (Index i = 0; i < od.height; ++i)
        for (Index j = 0; j < od.width; ++j) {
          const auto gr = (Scalar(0.25) * gm.row(od.row(b, i, j))).eval();
          gx.row(dims.row(b, 2 * i, 2 * j)) += gr;
          gx.row(dims.row(b, 2 * i, 2 * j + 1)) += gr;
          gx.row(dims.row(b, 2 * i + 1, 2 * j)) += gr;
          gx.row(dims.row(b, 2 * i + 1, 2 * j + 1)) += gr;
        }
  });
}

/// Mean over consecutive groups of rows: [B*R x C] -> [B x C].
template <typename Scalar>
Var<Scalar> group_mean_rows(Var<Scalar> x, Index groups) {
  detail::require_rank(x.shape(), 2, "group_mean_rows");
  if (groups < 1 || x.shape()[0] % groups) throw DimensionError("group_mean_rows: rows not divisible by groups");
  const Index per = x.shape()[0] / groups;
  Tensor<Scalar> out({groups, x.shape()[1]});
  for (Index b = 0; b < groups; ++b) out.matrix().row(b) = x.value().matrix().middleRows(b * per, per).colwise().mean();
  return x.tape->record(std::move(out), {x}, [x, groups, per](Tape<Scalar>& tape, Index, const Tensor<Scalar>& g) {
    auto gx = tape.grad_buffer(x.id).matrix();
    const Scalar inv = Scalar(1) / static_cast<Scalar>(per);
    for (Index b = 0; b < groups; ++b) gx.middleRows(b * per, per).rowwise() += inv * g.matrix().row(b);
  });
}

}  // namespace geca
