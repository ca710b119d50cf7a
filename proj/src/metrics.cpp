#include "cavity/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace cavity {

ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt) {
  require_same_dims(pred.dims(), gt.dims(), "confusion");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i], g = gt[i];
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

namespace {

double ratio_or_zero(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

OverlapMetrics overlap_metrics(const BinaryMask& pred, const BinaryMask& gt) {
  const auto c = confusion(pred, gt);
  OverlapMetrics m;
  const std::size_t p = c.tp + c.fp, g = c.tp + c.fn;
  if (p == 0 && g == 0) {
    m.dice = m.iou = 1.0;
  } else {
    m.dice = 2.0 * static_cast<double>(c.tp) / static_cast<double>(p + g);
    m.iou = static_cast<double>(c.tp) / static_cast<double>(p + g - c.tp);
  }
  m.acc = ratio_or_zero(c.tp + c.tn, c.total());
  m.precision = ratio_or_zero(c.tp, p);
  m.sensitivity = ratio_or_zero(c.tp, g);
  m.specificity = ratio_or_zero(c.tn, c.tn + c.fp);
  return m;
}

namespace {

bool is_surface(const BinaryMask& m, std::size_t x, std::size_t y, std::size_t z) {
  const Dims& d = m.dims();
  if (x == 0 || y == 0 || z == 0 || x + 1 == d.x || y + 1 == d.y || z + 1 == d.z) return true;
  return !m(x - 1, y, z) || !m(x + 1, y, z) || !m(x, y - 1, z) || !m(x, y + 1, z) || !m(x, y, z - 1) ||
         !m(x, y, z + 1);
}

std::vector<std::uint8_t> surface_flags(const BinaryMask& m) {
  const Dims& d = m.dims();
  std::vector<std::uint8_t> flags(d.size(), 0);
  for (std::size_t z = 0; z < d.z; ++z)
    for (std::size_t y = 0; y < d.y; ++y)
      for (std::size_t x = 0; x < d.x; ++x)
        if (m(x, y, z) && is_surface(m, x, y, z)) flags[m.index(x, y, z)] = 1;
  return flags;
}

struct GridPos {
  long x, y, z;
};

GridPos unravel(std::size_t i, const Dims& d) {
  return {static_cast<long>(i % d.x), static_cast<long>((i / d.x) % d.y), static_cast<long>(i / (d.x * d.y))};
}

// Shared by both distance paths so equal neighbours give bit-identical values.
double voxel_distance(std::size_t a, std::size_t b, const Dims& d, const Spacing& s) {
  const GridPos p = unravel(a, d), q = unravel(b, d);
  const double dx = static_cast<double>(p.x - q.x) * s.x;
  const double dy = static_cast<double>(p.y - q.y) * s.y;
  const double dz = static_cast<double>(p.z - q.z) * s.z;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

double voxel_distance_sq(std::size_t a, std::size_t b, const Dims& d, const Spacing& s) {
  const GridPos p = unravel(a, d), q = unravel(b, d);
  const double dx = static_cast<double>(p.x - q.x) * s.x;
  const double dy = static_cast<double>(p.y - q.y) * s.y;
  const double dz = static_cast<double>(p.z - q.z) * s.z;
  return dx * dx + dy * dy + dz * dz;
}

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

// One separable pass of the Felzenszwalb-Huttenlocher lower-envelope
// transform along `axis`, carrying the nearest feature index alongside the
// squared distance.
void envelope_pass(std::vector<double>& dist, std::vector<std::size_t>& nearest, const Dims& d, int axis, double w) {
  const std::size_t n = d[axis];
  const std::size_t stride = axis == 0 ? 1 : (axis == 1 ? d.x : d.x * d.y);
  const double w2 = w * w;
  std::vector<double> f(n), zb(n + 1);
  std::vector<std::size_t> src(n), v(n);
  std::vector<double> out_d(n);
  std::vector<std::size_t> out_n(n);

  auto line = [&](std::size_t start) {
    for (std::size_t i = 0; i < n; ++i) {
      f[i] = dist[start + i * stride];
      src[i] = nearest[start + i * stride];
    }
    long k = -1;
    auto intersect = [&](std::size_t q, std::size_t p) {
      const double qq = static_cast<double>(q), pp = static_cast<double>(p);
      return ((f[q] + w2 * qq * qq) - (f[p] + w2 * pp * pp)) / (2.0 * w2 * (qq - pp));
    };
    for (std::size_t q = 0; q < n; ++q) {
      if (f[q] == kInf) continue;
      if (k < 0) {
        k = 0;
        v[0] = q;
        zb[0] = -kInf;
        zb[1] = kInf;
        continue;
      }
      double s = intersect(q, v[k]);
      while (k > 0 && s <= zb[k]) {
        --k;
        s = intersect(q, v[k]);
      }
      if (k == 0 && s <= zb[0]) {
        v[0] = q;
        zb[1] = kInf;
        continue;
      }
      ++k;
      v[k] = q;
      zb[k] = s;
      zb[k + 1] = kInf;
    }
    if (k < 0) return;  // no features on this line; leave it infinite
    long j = 0;
    for (std::size_t p = 0; p < n; ++p) {
      while (zb[j + 1] < static_cast<double>(p)) ++j;
      const double diff = static_cast<double>(p) - static_cast<double>(v[j]);
      out_d[p] = w2 * diff * diff + f[v[j]];
      out_n[p] = src[v[j]];
    }
    for (std::size_t p = 0; p < n; ++p) {
      dist[start + p * stride] = out_d[p];
      nearest[start + p * stride] = out_n[p];
    }
  };

  if (axis == 0) {
    for (std::size_t z = 0; z < d.z; ++z)
      for (std::size_t y = 0; y < d.y; ++y) line(d.x * (y + d.y * z));
  } else if (axis == 1) {
    for (std::size_t z = 0; z < d.z; ++z)
      for (std::size_t x = 0; x < d.x; ++x) line(x + d.x * d.y * z);
  } else {
    for (std::size_t y = 0; y < d.y; ++y)
      for (std::size_t x = 0; x < d.x; ++x) line(x + d.x * y);
  }
}

// Index of the nearest flagged voxel for every voxel of the grid.
std::vector<std::size_t> nearest_feature(const std::vector<std::uint8_t>& flags, const Dims& d, const Spacing& s) {
  std::vector<double> dist(d.size(), kInf);
  std::vector<std::size_t> nearest(d.size(), kNone);
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (flags[i]) {
      dist[i] = 0.0;
      nearest[i] = i;
    }
  }
  envelope_pass(dist, nearest, d, 0, s.x);
  envelope_pass(dist, nearest, d, 1, s.y);
  envelope_pass(dist, nearest, d, 2, s.z);
  return nearest;
}

}  // namespace

SurfacePointSet surface_points(const BinaryMask& mask, const Spacing& spacing) {
  SurfacePointSet out;
  const auto flags = surface_flags(mask);
  const Dims& d = mask.dims();
  for (std::size_t i = 0; i < flags.size(); ++i) {
    if (!flags[i]) continue;
    const GridPos p = unravel(i, d);
    out.voxels.push_back(i);
    out.points.push_back({static_cast<double>(p.x) * spacing.x, static_cast<double>(p.y) * spacing.y,
                          static_cast<double>(p.z) * spacing.z});
  }
  return out;
}

std::vector<double> directed_surface_distances(const BinaryMask& from, const BinaryMask& to, const Spacing& spacing,
                                               DistanceMethod method) {
  require_same_dims(from.dims(), to.dims(), "surface distance");
  const Dims& d = from.dims();
  const auto a = surface_points(from, spacing);
  const auto b = surface_points(to, spacing);
  if (a.voxels.empty() || b.voxels.empty()) throw MetricUndefined("surface distance undefined for an empty mask");

  if (method == DistanceMethod::Auto) {
    method = (a.voxels.size() <= kBruteForceLimit && b.voxels.size() <= kBruteForceLimit) ? DistanceMethod::BruteForce
                                                                                       : DistanceMethod::DistanceTransform;
  }

  std::vector<double> out(a.voxels.size());
  if (method == DistanceMethod::BruteForce) {
    for (std::size_t i = 0; i < a.voxels.size(); ++i) {
      double best = kInf;
      std::size_t arg = b.voxels.front();
      for (std::size_t j : b.voxels) {
        const double d2 = voxel_distance_sq(a.voxels[i], j, d, spacing);
        if (d2 < best) {
          best = d2;
          arg = j;
        }
      }
      out[i] = voxel_distance(a.voxels[i], arg, d, spacing);
    }
    return out;
  }

  std::vector<std::uint8_t> flags(d.size(), 0);
  for (std::size_t j : b.voxels) flags[j] = 1;
  const auto nearest = nearest_feature(flags, d, spacing);
  for (std::size_t i = 0; i < a.voxels.size(); ++i) out[i] = voxel_distance(a.voxels[i], nearest[a.voxels[i]], d, spacing);
  return out;
}

double nearest_rank_percentile(std::vector<double> values, double q) {
  if (values.empty()) throw MetricUndefined("percentile of an empty sample");
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n)));
  rank = std::clamp<std::size_t>(rank, 1, n);
  return values[rank - 1];
}

double hd95(const BinaryMask& pred, const BinaryMask& gt, const Spacing& spacing, DistanceMethod method) {
  if (pred.count() == 0 || gt.count() == 0) throw MetricUndefined("hd95 undefined: empty mask");
  const double forward = nearest_rank_percentile(directed_surface_distances(pred, gt, spacing, method), 0.95);
  const double backward = nearest_rank_percentile(directed_surface_distances(gt, pred, spacing, method), 0.95);
  return std::max(forward, backward);
}

double asd(const BinaryMask& pred, const BinaryMask& gt, const Spacing& spacing, DistanceMethod method) {
  if (pred.count() == 0 || gt.count() == 0) throw MetricUndefined("asd undefined: empty mask");
  auto mean = [](const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  return 0.5 * (mean(directed_surface_distances(pred, gt, spacing, method)) +
                mean(directed_surface_distances(gt, pred, spacing, method)));
}

std::vector<double> signed_rank_midranks(const std::vector<double>& diffs) {
  const std::size_t n = diffs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return std::abs(diffs[i]) < std::abs(diffs[j]); });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(diffs[order[j + 1]]) == std::abs(diffs[order[i]])) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mid;
    i = j + 1;
  }
  return ranks;
}

WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) throw std::invalid_argument("wilcoxon: samples must be paired and non-empty");
  std::vector<double> diffs;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (d != 0.0) diffs.push_back(d);
  }
  if (diffs.empty()) throw MetricUndefined("wilcoxon: all differences are zero");

  const auto ranks = signed_rank_midranks(diffs);
  const int n = static_cast<int>(diffs.size());
  WilcoxonResult r;
  r.n_effective = n;
  for (int i = 0; i < n; ++i) {
    if (diffs[i] > 0) {
      r.w_plus += ranks[i];
      r.signed_rank_sum += ranks[i];
    } else {
      r.signed_rank_sum -= ranks[i];
    }
  }

  if (n <= kWilcoxonExactLimit) {
    // Mid-ranks are multiples of 1/2, so doubled ranks are integers and the
    // null distribution of doubled W+ is a subset-sum count.
    std::vector<int> r2(n);
    int total = 0;
    for (int i = 0; i < n; ++i) {
      r2[i] = static_cast<int>(std::lround(2.0 * ranks[i]));
      total += r2[i];
    }
    std::vector<double> counts(total + 1, 0.0);
    counts[0] = 1.0;
    int reach = 0;
    for (int i = 0; i < n; ++i) {
      for (int s = reach; s >= 0; --s)
        if (counts[s] != 0.0) counts[s + r2[i]] += counts[s];
      reach += r2[i];
    }
    const int observed = static_cast<int>(std::lround(2.0 * r.w_plus));
    const double all = std::ldexp(1.0, n);
    double lower = 0.0, upper = 0.0;
    for (int s = 0; s <= total; ++s) {
      if (s <= observed) lower += counts[s];
      if (s >= observed) upper += counts[s];
    }
    r.p_two_sided = std::min(1.0, 2.0 * std::min(lower, upper) / all);
    r.exact = true;
    return r;
  }

  const double nn = n;
  double tie_term = 0.0;
  {
    std::vector<double> sorted = ranks;
    std::sort(sorted.begin(), sorted.end());
    std::size_t i = 0;
    while (i < sorted.size()) {
      std::size_t j = i;
      while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
      const double t = static_cast<double>(j - i + 1);
      tie_term += t * t * t - t;
      i = j + 1;
    }
  }
  const double mean = nn * (nn + 1.0) / 4.0;
  const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
  const double z = (r.w_plus - mean) / std::sqrt(var);
  r.p_two_sided = std::min(1.0, std::erfc(std::abs(z) / std::sqrt(2.0)));
  r.exact = false;
  return r;
}

}  // namespace cavity
