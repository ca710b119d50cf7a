#pragma once

#include <vector>

#include "cavity/volume.hpp"

namespace cavity {

struct GaussianKernel1D {
  double sigma = 1.5;
  int radius = 5;
  std::vector<double> weights;  // 2 * radius + 1 taps, unit sum

  int extent() const { return 2 * radius + 1; }
};

// weights proportional to exp(-t^2 / (2 sigma^2)), t in [-radius, radius].
GaussianKernel1D gaussian_kernel(double sigma, int radius);

// Reflect-without-repeat: -1 -> 1, n -> n - 2. Valid for any offset.
std::size_t mirror_index(long i, std::size_t n);

// Filters along x, then y, then z with mirror boundaries.
Volume convolve_separable(const Volume& v, const GaussianKernel1D& k);

// Transpose of convolve_separable as a linear map (mirror boundaries make
// the operator non-symmetric near faces).
Volume convolve_separable_adjoint(const Volume& g, const GaussianKernel1D& k);

// 2x2x2 mean pooling after mirror-padding odd dims; spacing doubles.
Volume downsample2(const Volume& v);

// Transpose of downsample2 onto a grid of dims `fine`.
Volume downsample2_adjoint(const Volume& g, const Dims& fine, const Spacing& fine_spacing);

Dims downsampled_dims(const Dims& d);

// Number of levels build_pyramid would produce for these dims.
int achievable_levels(const Dims& d, int levels, int window_extent);

// Level 0 is v; stops early once the next level would have any dim below
// window_extent. The achieved count is the returned size.
std::vector<Volume> build_pyramid(const Volume& v, int levels, int window_extent);

}  // namespace cavity
