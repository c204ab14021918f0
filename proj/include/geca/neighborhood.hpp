#pragma once

#include "geca/tensor.hpp"

namespace geca {

/// Extents of a batch of grids stored as [batch*height*width, channels] rows.
struct GridDims {
  Index batch = 1;
  Index height = 0;
  Index width = 0;

  Index cells_per_item() const { return height * width; }
  Index cells() const { return batch * height * width; }
  Index row(Index b, Index i, Index j) const { return (b * height + i) * width + j; }
};

/// Moore neighbourhood including the cell itself.
inline constexpr int kNeighborhoodSize = 9;
inline constexpr int kSelfSlot = 4;

inline constexpr int slot_row_offset(int slot) { return slot / 3 - 1; }
inline constexpr int slot_col_offset(int slot) { return slot % 3 - 1; }

/// Row of the neighbour in `slot` (row-major over offsets -1..1) of the cell
/// stored at `row`, or -1 when it falls outside the grid.
inline Index neighbor_row(const GridDims& dims, Index row, int slot) {
  const Index hw = dims.cells_per_item();
  const Index b = row / hw;
  const Index rem = row % hw;
  const Index i = rem / dims.width + slot_row_offset(slot);
  const Index j = rem % dims.width + slot_col_offset(slot);
  if (i < 0 || i >= dims.height || j < 0 || j >= dims.width) return -1;
  return dims.row(b, i, j);
}

}  // namespace geca
