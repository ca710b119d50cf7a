#include <algorithm>
#include <cmath>

#include "cavity/multiscale.hpp"
#include "cavity/phantom.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cavity;

namespace {

PhantomSpec spec_with_seed(std::uint64_t seed) {
  PhantomSpec s;
  s.seed = seed;
  return s;
}

CorruptionSpec no_corruption(std::uint64_t seed = 0) {
  CorruptionSpec c;
  c.morph_radius = 0;
  c.flip_rate = 0.0;
  c.blob_count = 0;
  c.seed = seed;
  return c;
}

bool same(const Volume& a, const Volume& b) {
  return a.dims() == b.dims() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

bool same(const BinaryMask& a, const BinaryMask& b) {
  return a.dims() == b.dims() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

// Dilation by brute force: set iff some voxel within Manhattan distance r is set.
BinaryMask manhattan_dilate(const BinaryMask& m, int r) {
  const Dims d = m.dims();
  std::vector<std::uint8_t> out(d.size(), 0);
  for (std::size_t z = 0; z < d.z; ++z)
    for (std::size_t y = 0; y < d.y; ++y)
      for (std::size_t x = 0; x < d.x; ++x) {
        if (!m(x, y, z)) continue;
        for (std::size_t z2 = 0; z2 < d.z; ++z2)
          for (std::size_t y2 = 0; y2 < d.y; ++y2)
            for (std::size_t x2 = 0; x2 < d.x; ++x2)
              if (std::labs(long(x2) - long(x)) + std::labs(long(y2) - long(y)) + std::labs(long(z2) - long(z)) <= r)
                out[m.index(x2, y2, z2)] = 1;
      }
  return BinaryMask(d, std::move(out));
}

// Erosion by brute force: set iff every position within Manhattan distance r
// lies inside the volume and is set.
BinaryMask manhattan_erode(const BinaryMask& m, int r) {
  const Dims d = m.dims();
  std::vector<std::uint8_t> out(d.size(), 0);
  for (long z = 0; z < long(d.z); ++z)
    for (long y = 0; y < long(d.y); ++y)
      for (long x = 0; x < long(d.x); ++x) {
        bool keep = true;
        for (long c = -r; c <= r && keep; ++c)
          for (long b = -r; b <= r && keep; ++b)
            for (long a = -r; a <= r && keep; ++a) {
              if (std::labs(a) + std::labs(b) + std::labs(c) > r) continue;
              const long px = x + a, py = y + b, pz = z + c;
              keep = px >= 0 && py >= 0 && pz >= 0 && px < long(d.x) && py < long(d.y) && pz < long(d.z) &&
                     m(std::size_t(px), std::size_t(py), std::size_t(pz));
            }
        out[m.index(std::size_t(x), std::size_t(y), std::size_t(z))] = keep;
      }
  return BinaryMask(d, std::move(out));
}

BinaryMask complement(const BinaryMask& m) {
  std::vector<std::uint8_t> out(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = m[i] ? 0 : 1;
  return BinaryMask(m.dims(), std::move(out));
}

}  // namespace

TEST_SUITE("phantom") {
  TEST_CASE("same phantom settings twice give bitwise-identical pairs") {
    for (std::uint64_t seed : {0ull, 1ull, 987654321ull}) {
      const auto a = generate_phantom(spec_with_seed(seed));
      const auto b = generate_phantom(spec_with_seed(seed));
      CHECK(same(a.preop, b.preop));
      CHECK(same(a.postop, b.postop));
      CHECK(same(a.gt_mask, b.gt_mask));
    }
    CHECK_FALSE(same(generate_phantom(spec_with_seed(1)).gt_mask, generate_phantom(spec_with_seed(2)).gt_mask));
  }

  TEST_CASE("noiseless pair is identical outside the cavity") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto p = generate_phantom(spec_with_seed(seed).noiseless());
      std::size_t differing_inside = 0;
      for (std::size_t i = 0; i < p.preop.size(); ++i) {
        if (!p.gt_mask[i]) CHECK(p.preop[i] == p.postop[i]);
        else if (p.preop[i] != p.postop[i]) ++differing_inside;
      }
      CHECK(differing_inside > 0);
    }
  }

  TEST_CASE("ground truth is non-empty, inside the bone block and of moderate size") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto p = generate_phantom(spec_with_seed(seed));
      const Dims d = p.gt_mask.dims();
      CHECK(p.preop.dims() == d);
      CHECK(p.postop.dims() == d);
      const double frac = double(p.gt_mask.count()) / double(d.size());
      CHECK(frac >= 0.01);
      CHECK(frac <= 0.20);
      const BoneBlock block = bone_block(d);
      for (std::size_t z = 0; z < d.z; ++z)
        for (std::size_t y = 0; y < d.y; ++y)
          for (std::size_t x = 0; x < d.x; ++x)
            if (p.gt_mask(x, y, z)) CHECK(block.contains(x, y, z));
    }
  }

  TEST_CASE("noise substreams leave the geometry untouched") {
    PhantomSpec a = spec_with_seed(4);
    PhantomSpec b = a;
    b.streak_count = 7;
    b.noise_sigma = 0.1;
    CHECK(same(generate_phantom(a).gt_mask, generate_phantom(b).gt_mask));
  }

  TEST_CASE("invalid specs are rejected") {
    PhantomSpec s;
    s.dims = {15, 32, 32};
    CHECK_THROWS_AS(generate_phantom(s), std::invalid_argument);
    s = PhantomSpec{};
    s.bone_level = 1.5;
    CHECK_THROWS_AS(generate_phantom(s), std::invalid_argument);
    CorruptionSpec c;
    c.flip_rate = -0.1;
    CHECK_THROWS_AS(corrupt_mask(BinaryMask({4, 4, 4}), c), std::invalid_argument);
  }

  TEST_CASE("corruption examples") {
    const BinaryMask gt = generate_phantom(spec_with_seed(3)).gt_mask;
    CHECK(same(corrupt_mask(gt, no_corruption()), gt));

    CorruptionSpec all = no_corruption(9);
    all.flip_rate = 1.0;
    CHECK(same(corrupt_mask(gt, all), complement(gt)));

    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      CorruptionSpec c = no_corruption(seed);
      c.flip_rate = 0.1;
      const BinaryMask k = corrupt_mask(gt, c);
      std::size_t flipped = 0;
      for (std::size_t i = 0; i < gt.size(); ++i) flipped += gt[i] != k[i];
      CHECK(std::abs(double(flipped) / double(gt.size()) - 0.1) <= 0.02);
    }
  }

  TEST_CASE("zero corruption is the identity for arbitrary masks") {
    for (std::uint32_t seed = 0; seed < 10; ++seed) {
      const BinaryMask m = testing::bernoulli_mask({7, 5, 6}, seed, 0.3);
      CHECK(same(corrupt_mask(m, no_corruption(seed)), m));
    }
  }

  TEST_CASE("corruption is deterministic per seed") {
    const BinaryMask gt = generate_phantom(spec_with_seed(5)).gt_mask;
    CorruptionSpec c;
    c.seed = 17;
    c.flip_rate = 0.3;
    CHECK(same(corrupt_mask(gt, c), corrupt_mask(gt, c)));
    CorruptionSpec other = c;
    other.seed = 18;
    CHECK_FALSE(same(corrupt_mask(gt, c), corrupt_mask(gt, other)));
  }

  TEST_CASE("morphology matches Manhattan-ball oracles") {
    for (std::uint32_t seed = 0; seed < 4; ++seed) {
      const BinaryMask m = testing::bernoulli_mask({6, 7, 5}, 40 + seed, 0.08);
      for (int r : {1, 2}) {
        CHECK(same(dilate6(m, r), manhattan_dilate(m, r)));
      }
      const BinaryMask dense = testing::bernoulli_mask({6, 7, 5}, 60 + seed, 0.9);
      for (int r : {1, 2}) CHECK(same(erode6(dense, r), manhattan_erode(dense, r)));
    }
    const BinaryMask cube = testing::sphere_mask({9, 9, 9}, 4, 4, 4, 2.0);
    const BinaryMask e = erode6(cube, 1);
    CHECK(e(4, 4, 4));
    CHECK_FALSE(e(4, 4, 6));
    CHECK(same(dilate6(cube, 0), cube));
    CHECK(same(erode6(cube, 0), cube));
  }

  TEST_CASE("signed morph radius dilates or erodes") {
    const BinaryMask m = testing::sphere_mask({12, 12, 12}, 6, 6, 6, 3.0);
    CorruptionSpec grow = no_corruption();
    grow.morph_radius = 1;
    CHECK(same(corrupt_mask(m, grow), dilate6(m, 1)));
    CorruptionSpec shrink = no_corruption();
    shrink.morph_radius = -2;
    CHECK(same(corrupt_mask(m, shrink), erode6(m, 2)));
  }

  TEST_CASE("voxel features") {
    const Volume c({10, 9, 8}, 0.6);
    const auto fc = voxel_features(c);
    REQUIRE(fc.size() == 4);
    for (const auto& f : fc) CHECK(f.dims() == c.dims());
    for (double g : fc[2].data()) CHECK(g == 0.0);
    for (double v : fc[3].data()) CHECK(std::abs(v) <= 1e-12);

    const Dims d{21, 21, 21};
    std::vector<double> buf(d.size(), 0.0);
    buf[10 + 21 * (10 + 21 * 10)] = 1.0;
    const Volume impulse(d, buf);
    const auto fi = voxel_features(impulse);
    const auto k = gaussian_kernel(1.5, 5);
    const auto w = [&](std::size_t i) {
      const long t = long(i) - 10;
      return std::labs(t) <= 5 ? k.weights[t + 5] : 0.0;
    };
    for (std::size_t z = 0; z < 21; ++z)
      for (std::size_t y = 0; y < 21; ++y)
        for (std::size_t x = 0; x < 21; ++x) CHECK(std::abs(fi[1](x, y, z) - w(x) * w(y) * w(z)) <= 1e-15);
    for (std::size_t i = 0; i < d.size(); ++i) CHECK(fi[0][i] == impulse[i]);
  }

  TEST_CASE("gradient magnitude of a linear ramp is its slope") {
    std::vector<double> v(8 * 6 * 5);
    const Dims d{8, 6, 5};
    for (std::size_t z = 0; z < d.z; ++z)
      for (std::size_t y = 0; y < d.y; ++y)
        for (std::size_t x = 0; x < d.x; ++x) v[x + d.x * (y + d.y * z)] = 0.3 * double(x) + 0.4 * double(y);
    const auto f = voxel_features(Volume(d, v));
    for (double g : f[2].data()) CHECK(g == doctest::Approx(0.5).epsilon(1e-12));
  }

  TEST_CASE("flip augmentation") {
    const Volume v = testing::uniform_volume({5, 4, 3}, 1);
    const BinaryMask m = testing::bernoulli_mask({5, 4, 3}, 2, 0.5);

    const auto [vi, mi] = flip_augment(v, m, {});
    CHECK(same(vi, v));
    CHECK(same(mi, m));

    const auto [v1, m1] = flip_augment(v, m, {true, false, false});
    const auto [v2, m2] = flip_augment(v1, m1, {true, false, false});
    CHECK(same(v2, v));
    CHECK(same(m2, m));

    const Volume pair({2, 1, 1}, std::vector<double>{0.1, 0.9});
    const BinaryMask pm({2, 1, 1}, std::vector<std::uint8_t>{1, 0});
    const auto [pv, pmm] = flip_augment(pair, pm, {true, false, false});
    CHECK(pv[0] == 0.9);
    CHECK(pv[1] == 0.1);
    CHECK_FALSE(pmm[0]);
    CHECK(pmm[1]);

    for (FlipAxes axes : {FlipAxes{true, true, false}, FlipAxes{false, true, true}, FlipAxes{true, true, true}}) {
      auto [fv, fm] = flip_augment(v, m, axes);
      std::vector<double> a(v.data().begin(), v.data().end()), b(fv.data().begin(), fv.data().end());
      std::sort(a.begin(), a.end());
      std::sort(b.begin(), b.end());
      CHECK(a == b);
      CHECK(fm.count() == m.count());
      for (std::size_t z = 0; z < 3; ++z)
        for (std::size_t y = 0; y < 4; ++y)
          for (std::size_t x = 0; x < 5; ++x) {
            const std::size_t sx = axes.x ? 4 - x : x, sy = axes.y ? 3 - y : y, sz = axes.z ? 2 - z : z;
            CHECK(fv(x, y, z) == v(sx, sy, sz));
            CHECK(fm(x, y, z) == m(sx, sy, sz));
          }
    }
  }
}
