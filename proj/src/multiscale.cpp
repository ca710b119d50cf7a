#include "cavity/multiscale.hpp"

#include <cmath>
#include <stdexcept>

namespace cavity {

GaussianKernel1D gaussian_kernel(double sigma, int radius) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("gaussian_kernel: sigma must be > 0");
  if (radius < 0) throw std::invalid_argument("gaussian_kernel: radius must be >= 0");
  GaussianKernel1D k{sigma, radius, std::vector<double>(2 * radius + 1)};
  double sum = 0.0;
  for (int t = -radius; t <= radius; ++t) {
    const double w = std::exp(-static_cast<double>(t * t) / (2.0 * sigma * sigma));
    k.weights[t + radius] = w;
    sum += w;
  }
  for (auto& w : k.weights) w /= sum;
  return k;
}

std::size_t mirror_index(long i, std::size_t n) {
  if (n == 1) return 0;
  const long period = 2 * (static_cast<long>(n) - 1);
  long m = i % period;
  if (m < 0) m += period;
  if (m >= static_cast<long>(n)) m = period - m;
  return static_cast<std::size_t>(m);
}

namespace {

// Visits every scan-line along `axis`, passing its starting offset.
template <typename F>
void for_each_line(const Dims& d, int axis, F&& f) {
  if (axis == 0) {
    for (std::size_t z = 0; z < d.z; ++z)
      for (std::size_t y = 0; y < d.y; ++y) f(d.x * (y + d.y * z), std::size_t{1}, d.x);
  } else if (axis == 1) {
    for (std::size_t z = 0; z < d.z; ++z)
      for (std::size_t x = 0; x < d.x; ++x) f(x + d.x * d.y * z, d.x, d.y);
  } else {
    for (std::size_t y = 0; y < d.y; ++y)
      for (std::size_t x = 0; x < d.x; ++x) f(x + d.x * y, d.x * d.y, d.z);
  }
}

// Source index table: taps[i * extent + t] = mirror(i + t - radius).
std::vector<std::size_t> tap_table(std::size_t n, int radius) {
  const int extent = 2 * radius + 1;
  std::vector<std::size_t> taps(n * extent);
  for (std::size_t i = 0; i < n; ++i)
    for (int t = 0; t < extent; ++t)
      taps[i * extent + t] = mirror_index(static_cast<long>(i) + t - radius, n);
  return taps;
}

void filter_axis(std::vector<double>& data, const Dims& d, int axis, const GaussianKernel1D& k, bool transpose) {
  const std::size_t n = d[axis];
  const int extent = k.extent();
  const auto taps = tap_table(n, k.radius);
  std::vector<double> in(n), out(n);
  for_each_line(d, axis, [&](std::size_t start, std::size_t stride, std::size_t len) {
    for (std::size_t i = 0; i < len; ++i) in[i] = data[start + i * stride];
    if (!transpose) {
      for (std::size_t i = 0; i < len; ++i) {
        double acc = 0.0;
        const std::size_t* row = &taps[i * extent];
        for (int t = 0; t < extent; ++t) acc += k.weights[t] * in[row[t]];
        out[i] = acc;
      }
    } else {
      std::fill(out.begin(), out.end(), 0.0);
      for (std::size_t i = 0; i < len; ++i) {
        const std::size_t* row = &taps[i * extent];
        for (int t = 0; t < extent; ++t) out[row[t]] += k.weights[t] * in[i];
      }
    }
    for (std::size_t i = 0; i < len; ++i) data[start + i * stride] = out[i];
  });
}

}  // namespace

Volume convolve_separable(const Volume& v, const GaussianKernel1D& k) {
  std::vector<double> data(v.data().begin(), v.data().end());
  for (int axis = 0; axis < 3; ++axis) filter_axis(data, v.dims(), axis, k, false);
  return Volume(v.dims(), std::move(data), v.spacing());
}

Volume convolve_separable_adjoint(const Volume& g, const GaussianKernel1D& k) {
  std::vector<double> data(g.data().begin(), g.data().end());
  for (int axis = 2; axis >= 0; --axis) filter_axis(data, g.dims(), axis, k, true);
  return Volume(g.dims(), std::move(data), g.spacing());
}

Dims downsampled_dims(const Dims& d) { return {(d.x + 1) / 2, (d.y + 1) / 2, (d.z + 1) / 2}; }

Volume downsample2(const Volume& v) {
  const Dims& in = v.dims();
  const Dims out = downsampled_dims(in);
  std::vector<double> data(out.size());
  for (std::size_t z = 0; z < out.z; ++z)
    for (std::size_t y = 0; y < out.y; ++y)
      for (std::size_t x = 0; x < out.x; ++x) {
        double acc = 0.0;
        for (std::size_t dz = 0; dz < 2; ++dz)
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx)
              acc += v(mirror_index(static_cast<long>(2 * x + dx), in.x),
                       mirror_index(static_cast<long>(2 * y + dy), in.y),
                       mirror_index(static_cast<long>(2 * z + dz), in.z));
        data[x + out.x * (y + out.y * z)] = acc / 8.0;
      }
  const Spacing& s = v.spacing();
  return Volume(out, std::move(data), {2 * s.x, 2 * s.y, 2 * s.z});
}

Volume downsample2_adjoint(const Volume& g, const Dims& fine, const Spacing& fine_spacing) {
  const Dims out = downsampled_dims(fine);
  require_same_dims(g.dims(), out, "downsample2_adjoint");
  std::vector<double> data(fine.size(), 0.0);
  for (std::size_t z = 0; z < out.z; ++z)
    for (std::size_t y = 0; y < out.y; ++y)
      for (std::size_t x = 0; x < out.x; ++x) {
        const double share = g(x, y, z) / 8.0;
        for (std::size_t dz = 0; dz < 2; ++dz)
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t sx = mirror_index(static_cast<long>(2 * x + dx), fine.x);
              const std::size_t sy = mirror_index(static_cast<long>(2 * y + dy), fine.y);
              const std::size_t sz = mirror_index(static_cast<long>(2 * z + dz), fine.z);
              data[sx + fine.x * (sy + fine.y * sz)] += share;
            }
      }
  return Volume(fine, std::move(data), fine_spacing);
}

int achievable_levels(const Dims& d, int levels, int window_extent) {
  if (levels < 1) throw std::invalid_argument("pyramid levels must be >= 1");
  int achieved = 1;
  Dims cur = d;
  const auto w = static_cast<std::size_t>(window_extent);
  while (achieved < levels) {
    const Dims next = downsampled_dims(cur);
    if (next.x < w || next.y < w || next.z < w) break;
    cur = next;
    ++achieved;
  }
  return achieved;
}

std::vector<Volume> build_pyramid(const Volume& v, int levels, int window_extent) {
  const int achieved = achievable_levels(v.dims(), levels, window_extent);
  std::vector<Volume> out;
  out.reserve(achieved);
  out.push_back(v);
  for (int j = 1; j < achieved; ++j) out.push_back(downsample2(out.back()));
  return out;
}

}  // namespace cavity
