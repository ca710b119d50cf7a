#include "cavity/smooth_loss.hpp"

namespace cavity {

namespace {

// Calls f(i, j) for every forward-difference pair (j = i + unit step).
template <typename F>
void for_each_edge(const Dims& d, F&& f) {
  const std::size_t sx = 1, sy = d.x, sz = d.x * d.y;
  for (std::size_t z = 0; z < d.z; ++z)
    for (std::size_t y = 0; y < d.y; ++y)
      for (std::size_t x = 0; x < d.x; ++x) {
        const std::size_t i = x + d.x * (y + d.y * z);
        if (x + 1 < d.x) f(i, i + sx);
        if (y + 1 < d.y) f(i, i + sy);
        if (z + 1 < d.z) f(i, i + sz);
      }
}

double reduction_scale(const Volume& v, SmoothReduction r) {
  return r == SmoothReduction::Sum ? 1.0 : 1.0 / static_cast<double>(v.size());
}

}  // namespace

double smooth_loss(const Volume& delta, SmoothReduction reduction) {
  double total = 0.0;
  const auto d = delta.data();
  for_each_edge(delta.dims(), [&](std::size_t i, std::size_t j) {
    const double diff = d[j] - d[i];
    total += diff * diff;
  });
  return total * reduction_scale(delta, reduction);
}

Volume smooth_loss_grad(const Volume& delta, SmoothReduction reduction) {
  const auto d = delta.data();
  const double scale = 2.0 * reduction_scale(delta, reduction);
  std::vector<double> g(delta.size(), 0.0);
  for_each_edge(delta.dims(), [&](std::size_t i, std::size_t j) {
    const double diff = scale * (d[j] - d[i]);
    g[j] += diff;
    g[i] -= diff;
  });
  return Volume(delta.dims(), std::move(g), delta.spacing());
}

}  // namespace cavity
