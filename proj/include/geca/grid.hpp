#pragma once

#include <array>
#include <cmath>
#include <string>

#include "geca/neighborhood.hpp"
#include "geca/tensor.hpp"

namespace geca {

enum class Channel { In, Gamma, Out, Hidden };

/// Per-cell channel partition, stored in memory as [in | gamma | out | hidden].
struct ChannelLayout {
  Index n_in = 1;
  Index n_gamma = 8;
  Index n_out = 1;
  Index n_h = 16;

  static ChannelLayout make(Index image_channels, Index gamma = 8, Index hidden = 16) {
    ChannelLayout l{image_channels, gamma, image_channels, hidden};
    l.validate();
    return l;
  }

  Index total() const { return n_in + n_gamma + n_out + n_h; }

  Index offset(Channel c) const {
    switch (c) {
      case Channel::In: return 0;
      case Channel::Gamma: return n_in;
      case Channel::Out: return n_in + n_gamma;
      case Channel::Hidden: return n_in + n_gamma + n_out;
    }
    return 0;
  }

  Index width(Channel c) const {
    switch (c) {
      case Channel::In: return n_in;
      case Channel::Gamma: return n_gamma;
      case Channel::Out: return n_out;
      case Channel::Hidden: return n_h;
    }
    return 0;
  }

  /// Channels written by the update rule: out followed by hidden.
  Index updated_offset() const { return offset(Channel::Out); }
  Index updated_width() const { return n_out + n_h; }

  void validate() const {
    if (n_in < 1 || n_gamma < 1 || n_out < 1 || n_h < 1) throw ConfigError("every channel block needs at least one channel");
    if (n_out != n_in) throw ConfigError("output channel count must equal input channel count");
    if (n_gamma % 2) throw ConfigError("positional-encoding channel count must be even");
  }

  friend bool operator==(const ChannelLayout&, const ChannelLayout&) = default;
};

struct CellIndex {
  Index i = 0;
  Index j = 0;
  friend bool operator==(const CellIndex&, const CellIndex&) = default;
};

/// The seeded cell: (floor(H/2), floor(W/2)).
inline CellIndex center_cell(Index height, Index width) { return {height / 2, width / 2}; }

/// Sinusoidal encoding [H x W x n_gamma]. The first half of the channels
/// encodes the row, the second half the column; within each half channel
/// 2k is sin and 2k+1 is cos of position * 10000^(-2k/half).
template <typename Scalar = float>
Tensor<Scalar> positional_encoding(Index height, Index width, Index n_gamma) {
  if (n_gamma < 2 || n_gamma % 2) throw ConfigError("positional encoding needs an even channel count >= 2");
  if (height < 1 || width < 1) throw ConfigError("grid extents must be positive");
  const Index half = n_gamma / 2;
  Tensor<Scalar> out({height, width, n_gamma});
  auto m = out.matrix();
  for (Index i = 0; i < height; ++i) {
    for (Index j = 0; j < width; ++j) {
      const Index r = i * width + j;
      for (Index c = 0; c < half; ++c) {
        const double freq = std::pow(10000.0, -2.0 * static_cast<double>(c / 2) / static_cast<double>(half));
        const double row_arg = static_cast<double>(i) * freq;
        const double col_arg = static_cast<double>(j) * freq;
        m(r, c) = static_cast<Scalar>(c % 2 == 0 ? std::sin(row_arg) : std::cos(row_arg));
        m(r, half + c) = static_cast<Scalar>(c % 2 == 0 ? std::sin(col_arg) : std::cos(col_arg));
      }
    }
  }
  return out;
}

/// A batch of H x W pix-cell grids; state is [B x H x W x layout.total()].
template <typename Scalar = float>
struct PixCellGrid {
  GridDims dims;
  ChannelLayout layout;
  Tensor<Scalar> state;

  PixCellGrid() = default;
  PixCellGrid(GridDims d, ChannelLayout l)
      : dims(d), layout(l), state({d.batch, d.height, d.width, l.total()}) {
    if (d.height < 3 || d.width < 3) throw ConfigError("grid extents must be at least 3x3");
    if (d.batch < 1) throw ConfigError("grid batch must be positive");
    l.validate();
  }

  Index height() const { return dims.height; }
  Index width() const { return dims.width; }
  Index batch() const { return dims.batch; }

  /// [cells x total] view.
  auto cells() { return state.matrix(); }
  auto cells() const { return state.matrix(); }

  auto block(Channel c) { return state.matrix().middleCols(layout.offset(c), layout.width(c)); }
  auto block(Channel c) const { return state.matrix().middleCols(layout.offset(c), layout.width(c)); }

  /// Copy of one channel block as [B x H x W x width].
  Tensor<Scalar> slice(Channel c) const {
    Tensor<Scalar> out({dims.batch, dims.height, dims.width, layout.width(c)});
    out.matrix() = block(c);
    return out;
  }

  void assign(Channel c, const Tensor<Scalar>& values) {
    if (values.size() != dims.cells() * layout.width(c))
      throw DimensionError("channel block size mismatch: got " + shape_string(values.shape()));
    block(c) = values.reshaped({dims.cells(), layout.width(c)}).matrix();
  }

  friend bool operator==(const PixCellGrid& a, const PixCellGrid& b) {
    return a.dims.batch == b.dims.batch && a.dims.height == b.dims.height && a.dims.width == b.dims.width &&
           a.layout == b.layout && a.state == b.state;
  }
};

/// Zeroes channel block `c`, then fills the centre cell of every item with
/// standard-normal draws.
template <typename Scalar>
void seed_center(PixCellGrid<Scalar>& grid, Channel c, Rng& rng) {
  grid.block(c).setZero();
  const CellIndex ctr = center_cell(grid.height(), grid.width());
  std::normal_distribution<Scalar> normal(Scalar(0), Scalar(1));
  for (Index b = 0; b < grid.batch(); ++b) {
    auto row = grid.block(c).row(grid.dims.row(b, ctr.i, ctr.j));
    for (Index k = 0; k < row.size(); ++k) row[k] = normal(rng);
  }
}

/// Builds the starting grid for a diffusion timestep: C_in from the noisy
/// image ([B x] H x W x n_in), C_gamma from the positional encoding, C_out
/// and C_h zero except for the seeded centre cell.
template <typename Scalar>
PixCellGrid<Scalar> init_grid(const Tensor<Scalar>& noisy_image, const ChannelLayout& layout, Rng& rng) {
  layout.validate();
  GridDims dims;
  if (noisy_image.rank() == 3) {
    dims = {1, noisy_image.dim(0), noisy_image.dim(1)};
  } else if (noisy_image.rank() == 4) {
    dims = {noisy_image.dim(0), noisy_image.dim(1), noisy_image.dim(2)};
  } else {
    throw DimensionError("init_grid: image must be [H x W x C] or [B x H x W x C], got " +
                         shape_string(noisy_image.shape()));
  }
  if (noisy_image.cols() != layout.n_in)
    throw DimensionError("init_grid: image has " + std::to_string(noisy_image.cols()) + " channels, layout expects " +
                         std::to_string(layout.n_in));
  PixCellGrid<Scalar> grid(dims, layout);
  grid.block(Channel::In) = noisy_image.matrix();
  const Tensor<Scalar> pe = positional_encoding<Scalar>(dims.height, dims.width, layout.n_gamma);
  for (Index b = 0; b < dims.batch; ++b)
    grid.block(Channel::Gamma).middleRows(b * dims.cells_per_item(), dims.cells_per_item()) = pe.matrix();
  seed_center(grid, Channel::Out, rng);
  seed_center(grid, Channel::Hidden, rng);
  return grid;
}

template <typename Scalar>
PixCellGrid<Scalar> init_grid(const Tensor<Scalar>& noisy_image, const ChannelLayout& layout, std::uint64_t seed) {
  Rng rng(seed);
  return init_grid(noisy_image, layout, rng);
}

/// The 3x3 Moore neighbourhood of cell (i, j) of item `b` as [9 x total],
/// slots row-major over offsets -1..1 (slot 4 is the cell itself).
/// Out-of-grid slots are zero state.
template <typename Scalar>
Tensor<Scalar> neighborhood8(const PixCellGrid<Scalar>& grid, Index i, Index j, Index b = 0) {
  if (i < 0 || i >= grid.height() || j < 0 || j >= grid.width() || b < 0 || b >= grid.batch())
    throw DimensionError("neighborhood8: cell index out of range");
  Tensor<Scalar> out({kNeighborhoodSize, grid.layout.total()});
  const Index row = grid.dims.row(b, i, j);
  for (int s = 0; s < kNeighborhoodSize; ++s)
    if (const Index src = neighbor_row(grid.dims, row, s); src >= 0) out.matrix().row(s) = grid.cells().row(src);
  return out;
}

}  // namespace geca
