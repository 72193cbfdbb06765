#pragma once

#include <cstddef>
#include <vector>

namespace mwi {

// A density sampled on a uniform grid: values[i] is the density at origin + i*step.
struct GridDensity {
  double origin = 0.0;
  double step = 1.0;
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  double x(std::size_t i) const { return origin + static_cast<double>(i) * step; }
  double back() const { return x(values.size() - 1); }

  // Trapezoidal integral over the grid.
  double integral() const;
};

template <class Density>
GridDensity tabulate(const Density& density, double lo, double hi, std::size_t points) {
  GridDensity grid;
  grid.origin = lo;
  grid.step = (hi - lo) / static_cast<double>(points - 1);
  grid.values.resize(points);
  for (std::size_t i = 0; i < points; ++i) grid.values[i] = density(grid.x(i));
  return grid;
}

}  // namespace mwi
