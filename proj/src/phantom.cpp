#include "cavity/phantom.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include "cavity/multiscale.hpp"
#include "cavity/random.hpp"

namespace cavity {

namespace {

bool in_unit(double v) { return v >= 0.0 && v <= 1.0; }

using Vec3 = std::array<double, 3>;

Vec3 random_direction(SplitMix64& rng) {
  const double z = rng.uniform(-1.0, 1.0);
  const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
  return {rho * std::cos(phi), rho * std::sin(phi), z};
}

// Visits voxels whose centres lie within `radius` of `c`, clipped to dims.
template <typename F>
void for_each_in_sphere(const Dims& d, const Vec3& c, double radius, F&& f) {
  std::size_t lo[3], hi[3];
  for (int a = 0; a < 3; ++a) {
    lo[a] = static_cast<std::size_t>(std::max(0.0, std::ceil(c[a] - radius)));
    const double top = std::floor(c[a] + radius);
    hi[a] = top < 0 ? 0 : std::min(d[a], static_cast<std::size_t>(top) + 1);
  }
  const double r2 = radius * radius;
  for (std::size_t z = lo[2]; z < hi[2]; ++z)
    for (std::size_t y = lo[1]; y < hi[1]; ++y)
      for (std::size_t x = lo[0]; x < hi[0]; ++x) {
        const double dx = x - c[0], dy = y - c[1], dz = z - c[2];
        if (dx * dx + dy * dy + dz * dz <= r2) f(x + d.x * (y + d.y * z));
      }
}

struct Sphere {
  Vec3 centre;
  double radius;
};

bool sphere_inside(const Sphere& s, const BoneBlock& b) {
  for (int a = 0; a < 3; ++a) {
    if (s.centre[a] - s.radius < static_cast<double>(b.lo[a])) return false;
    if (s.centre[a] + s.radius > static_cast<double>(b.hi[a] - 1)) return false;
  }
  return true;
}

constexpr int kWalkRetries = 64;
constexpr int kStepRetries = 16;
constexpr double kStepLength = 1.5;

std::vector<Sphere> cavity_walk(const PhantomSpec& spec, const BoneBlock& block) {
  auto rng = substream(spec.seed, "cavity");
  // Anchor octant: upper x, lower y, upper z half of the bone block.
  double olo[3], ohi[3];
  for (int a = 0; a < 3; ++a) {
    const double mid = 0.5 * (block.lo[a] + block.hi[a] - 1);
    const bool upper = a != 1;
    olo[a] = upper ? mid : static_cast<double>(block.lo[a]);
    ohi[a] = upper ? static_cast<double>(block.hi[a] - 1) : mid;
  }

  for (int attempt = 0; attempt < kWalkRetries; ++attempt) {
    const int steps = spec.cavity_steps_min +
                      static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.cavity_steps_max - spec.cavity_steps_min + 1)));
    std::vector<Sphere> spheres;
    Sphere first{{rng.uniform(olo[0], ohi[0]), rng.uniform(olo[1], ohi[1]), rng.uniform(olo[2], ohi[2])},
                 rng.uniform(spec.cavity_radius_min, spec.cavity_radius_max)};
    if (!sphere_inside(first, block)) continue;
    spheres.push_back(first);

    bool escaped = false;
    for (int step = 1; step < steps && !escaped; ++step) {
      const double radius = rng.uniform(spec.cavity_radius_min, spec.cavity_radius_max);
      bool placed = false;
      for (int t = 0; t < kStepRetries && !placed; ++t) {
        const Vec3 dir = random_direction(rng);
        const Vec3& c = spheres.back().centre;
        Sphere next{{c[0] + kStepLength * dir[0], c[1] + kStepLength * dir[1], c[2] + kStepLength * dir[2]}, radius};
        if (sphere_inside(next, block)) {
          spheres.push_back(next);
          placed = true;
        }
      }
      escaped = !placed;
    }
    if (!escaped) return spheres;
  }
  throw PhantomError("cavity generation failed after " + std::to_string(kWalkRetries) +
                     " attempts; the bone block is too small for the cavity radius range");
}

// Multiplicative field 1 + a * trilinear interpolation of random corner
// values in [-1, 1].
std::vector<double> bias_field(const Dims& d, double amplitude, SplitMix64 rng) {
  std::vector<double> field(d.size(), 1.0);
  if (amplitude == 0.0) return field;
  double corner[8];
  for (double& c : corner) c = rng.uniform(-1.0, 1.0);
  auto frac = [](std::size_t i, std::size_t n) { return n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.0; };
  for (std::size_t z = 0; z < d.z; ++z)
    for (std::size_t y = 0; y < d.y; ++y)
      for (std::size_t x = 0; x < d.x; ++x) {
        const double u = frac(x, d.x), v = frac(y, d.y), w = frac(z, d.z);
        double ramp = 0.0;
        for (int k = 0; k < 8; ++k) {
          const double wx = (k & 1) ? u : 1.0 - u;
          const double wy = (k & 2) ? v : 1.0 - v;
          const double wz = (k & 4) ? w : 1.0 - w;
          ramp += corner[k] * wx * wy * wz;
        }
        field[x + d.x * (y + d.y * z)] = 1.0 + amplitude * ramp;
      }
  return field;
}

void draw_streaks(std::vector<double>& data, const Dims& d, const BoneBlock& block, const PhantomSpec& spec,
                  SplitMix64 rng) {
  const double half = 0.5 * spec.streak_width;
  for (int s = 0; s < spec.streak_count; ++s) {
    const Vec3 p{rng.uniform(block.lo[0], block.hi[0] - 1), rng.uniform(block.lo[1], block.hi[1] - 1),
                 rng.uniform(block.lo[2], block.hi[2] - 1)};
    const Vec3 u = random_direction(rng);
    for (std::size_t z = 0; z < d.z; ++z)
      for (std::size_t y = 0; y < d.y; ++y)
        for (std::size_t x = 0; x < d.x; ++x) {
          const Vec3 q{x - p[0], y - p[1], z - p[2]};
          const double t = q[0] * u[0] + q[1] * u[1] + q[2] * u[2];
          const double dist2 = q[0] * q[0] + q[1] * q[1] + q[2] * q[2] - t * t;
          if (dist2 <= half * half) data[x + d.x * (y + d.y * z)] = spec.streak_level;
        }
  }
}

Volume acquire(std::vector<double> base, const Dims& d, const BoneBlock& block, const PhantomSpec& spec,
               std::string_view scan) {
  const std::string tag(scan);
  const auto bias = bias_field(d, spec.bias_amplitude, substream(spec.seed, "bias_" + tag));
  for (std::size_t i = 0; i < base.size(); ++i) base[i] *= bias[i];
  draw_streaks(base, d, block, spec, substream(spec.seed, "streaks_" + tag));
  if (spec.noise_sigma > 0.0) {
    auto rng = substream(spec.seed, "noise_" + tag);
    for (double& v : base) v += spec.noise_sigma * rng.normal();
  }
  return Volume(d, std::move(base));
}

}  // namespace

void PhantomSpec::validate() const {
  if (dims.x < 16 || dims.y < 16 || dims.z < 16) throw std::invalid_argument("phantom: dims must be >= 16 per axis");
  for (double level : {bone_level, tissue_level, air_level, cavity_fill_level, streak_level}) {
    if (!in_unit(level)) throw std::invalid_argument("phantom: intensity levels must lie in [0, 1]");
  }
  if (!in_unit(bias_amplitude)) throw std::invalid_argument("phantom: bias_amplitude must lie in [0, 1]");
  if (air_cell_count < 0 || streak_count < 0) throw std::invalid_argument("phantom: counts must be >= 0");
  if (!(air_cell_radius_min > 0) || air_cell_radius_max < air_cell_radius_min) {
    throw std::invalid_argument("phantom: bad air cell radius range");
  }
  if (cavity_steps_min < 1 || cavity_steps_max < cavity_steps_min) throw std::invalid_argument("phantom: bad cavity step range");
  if (!(cavity_radius_min > 0) || cavity_radius_max < cavity_radius_min) {
    throw std::invalid_argument("phantom: bad cavity radius range");
  }
  if (noise_sigma < 0 || !(streak_width > 0)) throw std::invalid_argument("phantom: noise_sigma >= 0 and streak_width > 0 required");
}

PhantomSpec PhantomSpec::noiseless() const {
  PhantomSpec s = *this;
  s.noise_sigma = 0.0;
  s.streak_count = 0;
  s.bias_amplitude = 0.0;
  return s;
}

BoneBlock bone_block(const Dims& d) {
  BoneBlock b{};
  for (int a = 0; a < 3; ++a) {
    const std::size_t margin = std::max<std::size_t>(2, d[a] / 8);
    b.lo[a] = margin;
    b.hi[a] = d[a] - margin;
  }
  return b;
}

PhantomPair generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  const Dims& d = spec.dims;
  const BoneBlock block = bone_block(d);

  std::vector<double> base(d.size(), spec.tissue_level);
  for (std::size_t z = 0; z < d.z; ++z)
    for (std::size_t y = 0; y < d.y; ++y)
      for (std::size_t x = 0; x < d.x; ++x)
        if (block.contains(x, y, z)) base[x + d.x * (y + d.y * z)] = spec.bone_level;

  auto cells = substream(spec.seed, "cells");
  for (int i = 0; i < spec.air_cell_count; ++i) {
    const Vec3 c{cells.uniform(block.lo[0], block.hi[0] - 1), cells.uniform(block.lo[1], block.hi[1] - 1),
                 cells.uniform(block.lo[2], block.hi[2] - 1)};
    const double r = cells.uniform(spec.air_cell_radius_min, spec.air_cell_radius_max);
    for_each_in_sphere(d, c, r, [&](std::size_t idx) {
      const std::size_t x = idx % d.x, y = (idx / d.x) % d.y, z = idx / (d.x * d.y);
      if (block.contains(x, y, z)) base[idx] = spec.air_level;
    });
  }

  std::vector<std::uint8_t> cavity(d.size(), 0);
  for (const auto& s : cavity_walk(spec, block)) {
    for_each_in_sphere(d, s.centre, s.radius, [&](std::size_t idx) { cavity[idx] = 1; });
  }

  std::vector<double> post = base;
  for (std::size_t i = 0; i < post.size(); ++i)
    if (cavity[i]) post[i] = spec.cavity_fill_level;

  PhantomPair pair{acquire(std::move(base), d, block, spec, "pre"), acquire(std::move(post), d, block, spec, "post"),
                   BinaryMask(d, std::move(cavity)), spec};
  return pair;
}

void CorruptionSpec::validate() const {
  if (!in_unit(flip_rate)) throw std::invalid_argument("corruption: flip_rate must lie in [0, 1]");
  if (blob_count < 0 || blob_radius < 0) throw std::invalid_argument("corruption: blob settings must be >= 0");
}

namespace {

BinaryMask morph_round(const BinaryMask& m, bool dilate) {
  const Dims& d = m.dims();
  std::vector<std::uint8_t> out(d.size());
  const long nx = static_cast<long>(d.x), ny = static_cast<long>(d.y), nz = static_cast<long>(d.z);
  constexpr int off[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  for (long z = 0; z < nz; ++z)
    for (long y = 0; y < ny; ++y)
      for (long x = 0; x < nx; ++x) {
        const std::size_t i = static_cast<std::size_t>(x + nx * (y + ny * z));
        bool v = m[i];
        for (const auto& o : off) {
          const long a = x + o[0], b = y + o[1], c = z + o[2];
          const bool inside = a >= 0 && a < nx && b >= 0 && b < ny && c >= 0 && c < nz;
          const bool nb = inside && m(static_cast<std::size_t>(a), static_cast<std::size_t>(b), static_cast<std::size_t>(c));
          v = dilate ? (v || nb) : (v && nb);
        }
        out[i] = v;
      }
  return BinaryMask(d, std::move(out), m.spacing());
}

}  // namespace

BinaryMask dilate6(const BinaryMask& m, int rounds) {
  BinaryMask out = m;
  for (int i = 0; i < rounds; ++i) out = morph_round(out, true);
  return out;
}

BinaryMask erode6(const BinaryMask& m, int rounds) {
  BinaryMask out = m;
  for (int i = 0; i < rounds; ++i) out = morph_round(out, false);
  return out;
}

BinaryMask corrupt_mask(const BinaryMask& mask, const CorruptionSpec& c) {
  c.validate();
  const Dims& d = mask.dims();

  int radius = 0;
  if (c.morph_radius) {
    radius = *c.morph_radius;
  } else {
    auto rng = substream(c.seed, "morph");
    radius = rng.below(2) ? 1 : -1;
  }
  BinaryMask shaped = radius >= 0 ? dilate6(mask, radius) : erode6(mask, -radius);
  std::vector<std::uint8_t> data(shaped.data().begin(), shaped.data().end());

  auto blobs = substream(c.seed, "blobs");
  for (int b = 0; b < c.blob_count; ++b) {
    const Vec3 centre{blobs.uniform(0.0, d.x - 1.0), blobs.uniform(0.0, d.y - 1.0), blobs.uniform(0.0, d.z - 1.0)};
    const std::uint8_t value = blobs.below(2) ? 1 : 0;
    for_each_in_sphere(d, centre, c.blob_radius, [&](std::size_t idx) { data[idx] = value; });
  }

  if (c.flip_rate > 0.0) {
    auto flips = substream(c.seed, "flips");
    for (auto& v : data)
      if (flips.uniform() < c.flip_rate) v = v ? 0 : 1;
  }
  return BinaryMask(d, std::move(data), mask.spacing());
}

std::vector<Volume> voxel_features(const Volume& v) {
  const Dims& d = v.dims();
  const auto kernel = gaussian_kernel(1.5, 5);
  Volume smoothed = convolve_separable(v, kernel);

  std::vector<double> grad(d.size());
  auto axis_diff = [&](std::size_t x, std::size_t y, std::size_t z, int axis) {
    const std::size_t n = d[axis];
    if (n < 2) return 0.0;
    std::size_t c[3] = {x, y, z};
    const std::size_t i = c[axis];
    const std::size_t lo = i == 0 ? 0 : i - 1;
    const std::size_t hi = i + 1 == n ? i : i + 1;
    c[axis] = hi;
    const double a = v(c[0], c[1], c[2]);
    c[axis] = lo;
    const double b = v(c[0], c[1], c[2]);
    return (a - b) / static_cast<double>(hi - lo);
  };
  for (std::size_t z = 0; z < d.z; ++z)
    for (std::size_t y = 0; y < d.y; ++y)
      for (std::size_t x = 0; x < d.x; ++x) {
        const double gx = axis_diff(x, y, z, 0), gy = axis_diff(x, y, z, 1), gz = axis_diff(x, y, z, 2);
        grad[x + d.x * (y + d.y * z)] = std::sqrt(gx * gx + gy * gy + gz * gz);
      }

  const Volume second = convolve_separable(map(v, [](double a) { return a * a; }), kernel);
  const Volume variance = zip(second, smoothed, [](double s2, double m) { return std::max(0.0, s2 - m * m); });

  std::vector<Volume> out;
  out.push_back(v);
  out.push_back(std::move(smoothed));
  out.push_back(Volume(d, std::move(grad), v.spacing()));
  out.push_back(variance);
  return out;
}

std::pair<Volume, BinaryMask> flip_augment(const Volume& v, const BinaryMask& mask, FlipAxes axes) {
  require_same_dims(v.dims(), mask.dims(), "flip_augment");
  const Dims& d = v.dims();
  std::vector<double> vd(d.size());
  std::vector<std::uint8_t> md(d.size());
  for (std::size_t z = 0; z < d.z; ++z)
    for (std::size_t y = 0; y < d.y; ++y)
      for (std::size_t x = 0; x < d.x; ++x) {
        const std::size_t sx = axes.x ? d.x - 1 - x : x;
        const std::size_t sy = axes.y ? d.y - 1 - y : y;
        const std::size_t sz = axes.z ? d.z - 1 - z : z;
        const std::size_t dst = x + d.x * (y + d.y * z);
        vd[dst] = v(sx, sy, sz);
        md[dst] = mask(sx, sy, sz) ? 1 : 0;
      }
  return {Volume(d, std::move(vd), v.spacing()), BinaryMask(d, std::move(md), mask.spacing())};
}

}  // namespace cavity
