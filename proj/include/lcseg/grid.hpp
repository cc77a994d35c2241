#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "lcseg/error.hpp"

namespace lcseg {

/// Dense row-major 2-D array.
template <typename T>
struct Grid {
  int height = 0;
  int width = 0;
  std::vector<T> cells;

  Grid() = default;
  Grid(int h, int w, T fill = T{})
      : height(h), width(w), cells(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill) {
    if (h < 0 || w < 0) throw InvalidArgument("grid dimensions must be non-negative");
  }

  [[nodiscard]] std::size_t size() const { return cells.size(); }
  [[nodiscard]] bool same_shape(const Grid& o) const { return height == o.height && width == o.width; }

  T& at(int row, int col) { return cells[static_cast<std::size_t>(row) * width + col]; }
  const T& at(int row, int col) const { return cells[static_cast<std::size_t>(row) * width + col]; }

  bool operator==(const Grid&) const = default;
};

/// Boolean grids hold one byte per cell, 0 or 1.
using BoolGrid = Grid<std::uint8_t>;
using LabelGrid = Grid<std::int32_t>;

}  // namespace lcseg
