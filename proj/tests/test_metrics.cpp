#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "cavity/metrics.hpp"
#include "doctest.h"
#include "oracles.hpp"
#include "support.hpp"

using namespace cavity;
using namespace testing::oracle;

namespace {

BinaryMask box(Dims d, std::size_t x0, std::size_t y0, std::size_t z0, std::size_t x1, std::size_t y1, std::size_t z1) {
  std::vector<std::uint8_t> m(d.size(), 0);
  for (std::size_t z = z0; z < z1; ++z)
    for (std::size_t y = y0; y < y1; ++y)
      for (std::size_t x = x0; x < x1; ++x) m[x + d.x * (y + d.y * z)] = 1;
  return BinaryMask(d, std::move(m));
}

BinaryMask single(Dims d, std::size_t x, std::size_t y, std::size_t z) { return box(d, x, y, z, x + 1, y + 1, z + 1); }

std::vector<double> zeros(std::size_t n) { return std::vector<double>(n, 0.0); }

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("overlap examples") {
    const Dims d{6, 6, 6};
    const BinaryMask a = box(d, 1, 1, 1, 3, 3, 3);
    auto m = overlap_metrics(a, a);
    CHECK(m.dice == 1.0);
    CHECK(m.iou == 1.0);
    CHECK(m.acc == 1.0);
    CHECK(m.precision == 1.0);
    CHECK(m.sensitivity == 1.0);
    CHECK(m.specificity == 1.0);

    const BinaryMask far = box(d, 4, 4, 4, 6, 6, 6);
    m = overlap_metrics(a, far);
    CHECK(m.dice == 0.0);
    CHECK(m.iou == 0.0);

    const BinaryMask shifted = box(d, 2, 1, 1, 4, 3, 3);
    m = overlap_metrics(a, shifted);
    CHECK(m.dice == doctest::Approx(0.5));
    CHECK(m.iou == doctest::Approx(1.0 / 3.0));
    CHECK(m.precision == doctest::Approx(0.5));
    CHECK(m.sensitivity == doctest::Approx(0.5));
    CHECK(m.specificity == doctest::Approx(204.0 / 208.0));
    CHECK(m.acc == doctest::Approx(208.0 / 216.0));
    CHECK_THROWS_AS(overlap_metrics(a, BinaryMask({5, 6, 6})), std::invalid_argument);
  }

  TEST_CASE("empty-mask conventions") {
    const Dims d{4, 4, 4};
    const BinaryMask empty(d), some = single(d, 1, 1, 1);
    auto m = overlap_metrics(empty, empty);
    CHECK(m.dice == 1.0);
    CHECK(m.iou == 1.0);
    CHECK(m.precision == 0.0);
    CHECK(m.sensitivity == 0.0);
    CHECK(m.specificity == 1.0);
    m = overlap_metrics(empty, some);
    CHECK(m.dice == 0.0);
    CHECK(m.iou == 0.0);
    CHECK(m.precision == 0.0);
    m = overlap_metrics(some, empty);
    CHECK(m.dice == 0.0);
    CHECK(m.sensitivity == 0.0);
    CHECK_THROWS_AS(hd95(empty, some, {}), MetricUndefined);
    CHECK_THROWS_AS(asd(some, empty, {}), MetricUndefined);
  }

  TEST_CASE("confusion counts and ratios on random pairs") {
    std::mt19937 gen(5);
    for (int t = 0; t < 50; ++t) {
      const Dims d{7, 6, 5};
      const BinaryMask p = random_mask(gen, d), g = random_mask(gen, d);
      const auto c = confusion(p, g);
      CHECK(c.total() == d.size());
      std::size_t tp = 0;
      for (std::size_t i = 0; i < d.size(); ++i) tp += p[i] && g[i];
      CHECK(c.tp == tp);
      const auto m = overlap_metrics(p, g);
      CHECK(m.iou == doctest::Approx(m.dice / (2 - m.dice)).epsilon(1e-14));
      for (double r : {m.sensitivity, m.specificity, m.precision, m.acc}) {
        CHECK(r >= 0.0);
        CHECK(r <= 1.0);
      }
    }
  }

  TEST_CASE("surface point examples") {
    const Dims d{5, 5, 5};
    auto s = surface_points(single(d, 2, 3, 1), {});
    REQUIRE(s.points.size() == 1);
    CHECK(s.points[0] == std::array<double, 3>{2, 3, 1});
    CHECK(surface_points(box(d, 1, 1, 1, 4, 4, 4), {}).points.size() == 26);
    CHECK(surface_points(BinaryMask(d), {}).points.empty());
    // The volume boundary counts as background.
    CHECK(surface_points(BinaryMask(Dims{3, 3, 3}, true), {}).points.size() == 26);
    s = surface_points(single(d, 2, 3, 1), {0.5, 2.0, 3.0});
    CHECK(s.points[0] == std::array<double, 3>{1.0, 6.0, 3.0});
  }

  TEST_CASE("surface points match the neighbour oracle") {
    std::mt19937 gen(8);
    for (int t = 0; t < 20; ++t) {
      const BinaryMask m = random_mask(gen, {9, 8, 7});
      const Spacing sp{1.0, 0.5, 2.0};
      auto got = surface_points(m, sp).points;
      auto want = oracle_surface(m, sp);
      std::sort(got.begin(), got.end());
      std::sort(want.begin(), want.end());
      CHECK(got == want);
    }
  }

  TEST_CASE("nearest-rank percentile") {
    CHECK(nearest_rank_percentile({5.0}, 0.95) == 5.0);
    std::vector<double> v(20);
    for (int i = 0; i < 20; ++i) v[i] = 20 - i;
    CHECK(nearest_rank_percentile(v, 0.95) == 19.0);
    v.push_back(100.0);
    CHECK(nearest_rank_percentile(v, 0.95) == 20.0);
    CHECK(nearest_rank_percentile(v, 1.0) == 100.0);
  }

  TEST_CASE("distance examples") {
    const Dims d{8, 8, 8};
    const BinaryMask a = single(d, 1, 2, 2), b = single(d, 4, 2, 2);
    CHECK(hd95(a, a, {}) == 0.0);
    CHECK(asd(a, a, {}) == 0.0);
    CHECK(hd95(a, b, {}) == 3.0);
    CHECK(asd(a, b, {}) == 3.0);
    CHECK(hd95(a, b, {2.0, 1.0, 1.0}) == 6.0);

    const BinaryMask cube = box({9, 9, 9}, 3, 3, 3, 6, 6, 6);
    std::vector<std::uint8_t> grown(cube.data().begin(), cube.data().end());
    const BinaryMask dil = [&] {
      std::vector<std::uint8_t> out(grown);
      for (std::size_t z = 0; z < 9; ++z)
        for (std::size_t y = 0; y < 9; ++y)
          for (std::size_t x = 0; x < 9; ++x) {
            if (!cube(x, y, z)) continue;
            for (auto [a2, b2, c2] : {std::array<int, 3>{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}})
              out[(x + a2) + 9 * ((y + b2) + 9 * (z + c2))] = 1;
          }
      return BinaryMask({9, 9, 9}, std::move(out));
    }();
    CHECK(hd95(cube, dil, {}) == oracle_hd95(cube, dil, {}));
    CHECK(hd95(cube, dil, {}) == 1.0);
  }

  TEST_CASE("hd95 equals the all-pairs oracle on random masks up to 12^3") {
    std::mt19937 gen(2024);
    std::uniform_int_distribution<std::size_t> dim(2, 12);
    for (int t = 0; t < 50; ++t) {
      const Dims d{dim(gen), dim(gen), dim(gen)};
      const BinaryMask a = random_mask(gen, d), b = random_mask(gen, d);
      const Spacing sp = t % 3 == 0 ? Spacing{1.0, 1.0, 1.0} : Spacing{0.7, 1.0, 1.3};
      const double want = oracle_hd95(a, b, sp);
      CHECK(hd95(a, b, sp) == want);
      CHECK(hd95(a, b, sp, DistanceMethod::DistanceTransform) == want);
      CHECK(hd95(b, a, sp) == want);
      CHECK(hd95(a, b, sp) >= 0.0);
    }
  }

  TEST_CASE("distance transform agrees with brute force") {
    std::mt19937 gen(77);
    for (int t = 0; t < 15; ++t) {
      const Dims d{14, 11, 9};
      const BinaryMask a = random_mask(gen, d), b = random_mask(gen, d);
      const Spacing sp{1.0, 0.8, 2.5};
      const auto bf = directed_surface_distances(a, b, sp, DistanceMethod::BruteForce);
      const auto dt = directed_surface_distances(a, b, sp, DistanceMethod::DistanceTransform);
      REQUIRE(bf.size() == dt.size());
      for (std::size_t i = 0; i < bf.size(); ++i) CHECK(bf[i] == dt[i]);
      CHECK(asd(a, b, sp, DistanceMethod::BruteForce) == asd(a, b, sp, DistanceMethod::DistanceTransform));
    }
  }

  TEST_CASE("large surfaces take the distance-transform path consistently") {
    const Dims d{64, 64, 64};
    const BinaryMask a = testing::sphere_mask(d, 31.5, 31.5, 31.5, 29.0);
    const BinaryMask b = testing::sphere_mask(d, 33.0, 30.0, 32.0, 26.0);
    REQUIRE(surface_points(a, {}).points.size() > kBruteForceLimit);
    CHECK(hd95(a, b, {}) == hd95(a, b, {}, DistanceMethod::BruteForce));
    CHECK(asd(a, b, {}) == doctest::Approx(asd(a, b, {}, DistanceMethod::BruteForce)).epsilon(1e-14));
  }

  TEST_CASE("asd properties") {
    std::mt19937 gen(31);
    for (int t = 0; t < 20; ++t) {
      const Dims d{8, 9, 7};
      const BinaryMask a = random_mask(gen, d), b = random_mask(gen, d);
      const double v = asd(a, b, {});
      CHECK(v >= 0.0);
      CHECK(v == doctest::Approx(asd(b, a, {})).epsilon(1e-15));
      const auto da = oracle_directed(a, b, {}), db = oracle_directed(b, a, {});
      double ma = 0, mb = 0;
      for (double x : da) ma += x;
      for (double x : db) mb += x;
      CHECK(v == doctest::Approx((ma / double(da.size()) + mb / double(db.size())) / 2).epsilon(1e-12));
      CHECK(asd(a, a, {}) == 0.0);
      CHECK(hd95(a, a, {}) == 0.0);
    }
  }

  TEST_CASE("wilcoxon examples") {
    const auto r = wilcoxon_signed_rank({1.1, 2.2, 3.3, 4.4, 5.5}, zeros(5));
    CHECK(r.exact);
    CHECK(r.n_effective == 5);
    CHECK(r.p_two_sided == doctest::Approx(2.0 / 32.0).epsilon(1e-15));
    CHECK(r.w_plus == 15.0);
    CHECK_THROWS_AS(wilcoxon_signed_rank({1, 2, 3}, {1, 2, 3}), MetricUndefined);
    CHECK_THROWS_AS(wilcoxon_signed_rank({1, 2}, {1}), std::invalid_argument);

    const std::vector<double> a{0.3, 0.9, 0.4, 0.8, 0.1, 0.75}, b{0.5, 0.2, 0.35, 0.1, 0.6, 0.7};
    const auto ab = wilcoxon_signed_rank(a, b), ba = wilcoxon_signed_rank(b, a);
    CHECK(ab.p_two_sided == ba.p_two_sided);
    CHECK(ab.signed_rank_sum == -ba.signed_rank_sum);
  }

  TEST_CASE("wilcoxon matches reference values") {
    // Reference p-values from an independent statistics package.
    const std::vector<double> d1{1.5, -0.5, 2.0, 3.25, -1.0, 0.75, 2.5, -2.25, 4.0, 1.25};
    CHECK(wilcoxon_signed_rank(d1, zeros(10)).p_two_sided == doctest::Approx(0.10546875).epsilon(1e-14));

    std::vector<double> d2;
    for (int i = 0; i < 30; ++i) d2.push_back(0.3 * i - 2.0 + ((i * 7) % 5) * 0.11);
    const auto r2 = wilcoxon_signed_rank(d2, zeros(30));
    CHECK_FALSE(r2.exact);
    CHECK(r2.p_two_sided == doctest::Approx(7.513662254944795e-05).epsilon(1e-10));

    const std::vector<double> d3{1, 1, 2, -2, 3, 3, 3, -1, 4, 5, -5, 6, 2, 2, 1, -3,
                                 4, 4, 7, -6, 8, 1, 2, 3, -4, 5, 6, 6, -7, 9, 2, 3};
    CHECK(wilcoxon_signed_rank(d3, zeros(d3.size())).p_two_sided == doctest::Approx(0.008920593805906887).epsilon(1e-10));
  }

  TEST_CASE("exact wilcoxon matches full enumeration for n <= 10") {
    std::mt19937 gen(99);
    for (int n = 1; n <= 10; ++n) {
      for (int t = 0; t < 20; ++t) {
        std::vector<double> a(n), b(n);
        // Coarse grid so ties and zero differences occur.
        std::uniform_int_distribution<int> u(-4, 4);
        for (int i = 0; i < n; ++i) {
          a[i] = u(gen) * 0.25;
          b[i] = u(gen) * 0.25;
        }
        std::vector<double> d(n);
        bool any = false;
        for (int i = 0; i < n; ++i) any |= (d[i] = a[i] - b[i]) != 0.0;
        if (!any) {
          CHECK_THROWS_AS(wilcoxon_signed_rank(a, b), MetricUndefined);
          continue;
        }
        const auto r = wilcoxon_signed_rank(a, b);
        CHECK(r.exact);
        CHECK(r.p_two_sided == doctest::Approx(enumerate_p(d)).epsilon(1e-14));
        CHECK(r.p_two_sided > 0.0);
        CHECK(r.p_two_sided <= 1.0);
      }
    }
  }

  TEST_CASE("mid-ranks") {
    const auto r = signed_rank_midranks({-1.0, 2.0, 1.0, -3.0, 2.0});
    CHECK(r == std::vector<double>{1.5, 3.5, 1.5, 5.0, 3.5});
  }
}
