#include <cmath>
#include <limits>
#include <numbers>

#include <boost/math/distributions/students_t.hpp>

#include "cavity/gradcheck.hpp"
#include "cavity/tdist_loss.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cavity;

namespace {

Residual residual_of(std::vector<double> v) {
  const Dims d{v.size(), 1, 1};
  return Residual{Volume(d, std::move(v))};
}

// Per-voxel NLL from the Boost Student-t density: -log(pdf(d / sigma) / sigma).
double boost_nll(const Volume& d, double r, const std::vector<double>& sigma2) {
  boost::math::students_t_distribution<double> t(r);
  double total = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double s = std::sqrt(sigma2.size() == 1 ? sigma2[0] : sigma2[i]);
    total += -std::log(boost::math::pdf(t, d[i] / s) / s);
  }
  return total / double(d.size());
}

TDistParams params_for(double r, double sigma2, TDistMode mode = TDistMode::PerVoxel, std::size_t voxels = 0) {
  return TDistParams::initial(mode, voxels, r, sigma2);
}

}  // namespace

TEST_SUITE("tdist") {
  TEST_CASE("softplus helpers") {
    CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)));
    CHECK(softplus(800.0) == doctest::Approx(800.0));
    CHECK(softplus(-800.0) >= 0.0);
    for (double y : {1e-6, 0.1, 1.0, 7.5, 300.0}) CHECK(softplus(softplus_inverse(y)) == doctest::Approx(y).epsilon(1e-10));
    CHECK(logistic(0.0) == 0.5);
  }

  TEST_CASE("initial parameters reproduce r and sigma^2") {
    const auto p = params_for(1.0, 1.0);
    CHECK(p.r() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p.sigma2(0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p.shared_scale());
    const auto q = params_for(3.0, 0.25, TDistMode::Joint, 8);
    CHECK(q.s.size() == 8);
    CHECK(q.r() == doctest::Approx(3.0).epsilon(1e-12));
    for (std::size_t i = 0; i < 8; ++i) CHECK(q.sigma2(i) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(q.eps == 1e-8);
  }

  TEST_CASE("nll examples") {
    const auto p = params_for(1.0, 1.0);
    CHECK(tdist_nll(residual_of(std::vector<double>(10, 0.0)), p) == doctest::Approx(std::log(std::numbers::pi)).epsilon(1e-8));
    CHECK(tdist_nll(residual_of({1.0}), p) ==
          doctest::Approx(std::log(std::numbers::pi) + std::log(2.0)).epsilon(1e-8));
    CHECK(std::abs(tdist_nll(residual_of({0.0}), params_for(1e6, 1.0)) - 0.5 * std::log(2 * std::numbers::pi)) <= 1e-3);
  }

  TEST_CASE("per-voxel nll matches the Boost Student-t density") {
    for (std::uint32_t seed = 0; seed < 10; ++seed) {
      const Volume d = testing::uniform_volume({4, 3, 2}, seed, -3.0, 3.0);
      const double r = 0.3 + seed * 0.7;
      const auto shared = params_for(r, 0.6);
      CHECK(tdist_nll(Residual{d}, shared) == doctest::Approx(boost_nll(d, shared.r(), {shared.sigma2(0)})).epsilon(1e-10));

      auto diag = params_for(r, 1.0, TDistMode::PerVoxel, d.size());
      const auto s = testing::uniform_values(d.size(), seed + 50, -2.0, 2.0);
      std::vector<double> sig(d.size());
      for (std::size_t i = 0; i < d.size(); ++i) {
        diag.s[i] = s[i];
        sig[i] = diag.sigma2(i);
      }
      CHECK(tdist_nll(Residual{d}, diag) == doctest::Approx(boost_nll(d, diag.r(), sig)).epsilon(1e-10));
    }
  }

  TEST_CASE("joint nll is the multivariate t with diagonal scale") {
    const Volume d = testing::uniform_volume({3, 2, 2}, 4, -2.0, 2.0);
    auto p = params_for(2.5, 1.0, TDistMode::Joint, d.size());
    const auto s = testing::uniform_values(d.size(), 5, -1.0, 1.0);
    for (std::size_t i = 0; i < d.size(); ++i) p.s[i] = s[i];
    const double r = p.r(), D = double(d.size());
    double logdet = 0.0, q = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      logdet += std::log(p.sigma2(i));
      q += d[i] * d[i] / p.sigma2(i);
    }
    const double expected = -(std::lgamma((r + D) / 2) - std::lgamma(r / 2) - D / 2 * std::log(r * std::numbers::pi) -
                              logdet / 2 - (r + D) / 2 * std::log(1 + q / r));
    CHECK(tdist_nll(Residual{d}, p) == doctest::Approx(expected).epsilon(1e-12));
  }

  TEST_CASE("joint and per-voxel agree on a single voxel") {
    for (double res : {-2.0, 0.0, 0.3, 5.0}) {
      for (double r : {0.5, 1.0, 8.0}) {
        const auto a = params_for(r, 0.7, TDistMode::PerVoxel);
        const auto b = params_for(r, 0.7, TDistMode::Joint);
        CHECK(tdist_nll(residual_of({res}), a) == tdist_nll(residual_of({res}), b));
      }
    }
  }

  TEST_CASE("gradient examples") {
    const auto p = params_for(1.0, 1.0);
    const auto g = tdist_grad(residual_of(std::vector<double>(6, 0.0)), p);
    for (double v : g.d_res.data()) CHECK(v == 0.0);
    const double far = std::abs(tdist_grad(residual_of({1e6}), p).d_res[0]);
    const double near = std::abs(tdist_grad(residual_of({10.0}), p).d_res[0]);
    CHECK(far < near);
  }

  TEST_CASE("gradient matches central differences for every parameter") {
    for (auto mode : {TDistMode::PerVoxel, TDistMode::Joint}) {
      for (bool diag : {false, true}) {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
          const Dims d{4, 4, 4};
          const Volume res = random_volume(d, seed + 1, -2.0, 2.0);
          auto p = TDistParams::initial(mode, diag ? d.size() : 0);
          p.rho_r = -0.5 + 0.5 * double(seed);
          const auto s = testing::uniform_values(p.s.size(), std::uint32_t(seed), -1.0, 1.0);
          std::copy(s.begin(), s.end(), p.s.begin());
          const auto g = tdist_grad(Residual{res}, p);

          const std::vector<double> x0(res.data().begin(), res.data().end());
          const auto f_res = [&](const std::vector<double>& v) { return tdist_nll(Residual{Volume(d, v)}, p); };
          for (std::size_t i = 0; i < d.size(); i += 3)
            CHECK(relative_error(g.d_res[i], central_difference(f_res, x0, i, 1e-5)) <= 1e-6);

          const auto f_rho = [&](const std::vector<double>& v) {
            auto q = p;
            q.rho_r = v[0];
            return tdist_nll(Residual{res}, q);
          };
          CHECK(relative_error(g.d_rho_r, central_difference(f_rho, {p.rho_r}, 0, 1e-5)) <= 1e-6);

          const auto f_s = [&](const std::vector<double>& v) {
            auto q = p;
            q.s = v;
            return tdist_nll(Residual{res}, q);
          };
          for (std::size_t i = 0; i < p.s.size(); i += 5)
            CHECK(relative_error(g.d_s[i], central_difference(f_s, p.s, i, 1e-5)) <= 1e-6);
        }
      }
    }
  }

  TEST_CASE("parameters stay positive under extreme unconstrained values") {
    for (double x : {-1e6, -1e3, -50.0, -1.0, 0.0, 1.0, 50.0, 1e3, 1e6}) {
      TDistParams p = TDistParams::initial();
      p.rho_r = x;
      p.s[0] = -x;
      CHECK(p.r() > 0.0);
      CHECK(p.sigma2(0) > 0.0);
      CHECK(std::isfinite(tdist_nll(residual_of({0.5, -3.0}), p)));
    }
  }

  TEST_CASE("Gaussian limit over residuals in [-3, 3]") {
    const auto p = params_for(1e6, 1.0);
    for (double d = -3.0; d <= 3.0; d += 0.25) {
      const double gauss = 0.5 * std::log(2 * std::numbers::pi) + 0.5 * d * d;
      CHECK(std::abs(tdist_nll(residual_of({d}), p) - gauss) <= 1e-3);
    }
  }

  TEST_CASE("nll is monotone in |residual| and the influence is bounded") {
    for (double r : {0.5, 1.0, 4.0, 30.0}) {
      const auto p = params_for(r, 0.8);
      double prev = -std::numeric_limits<double>::infinity();
      double sup = 0.0;
      for (double d = 0.0; d <= 1e4; d = d * 1.2 + 0.01) {
        const double v = tdist_nll(residual_of({d}), p);
        CHECK(v >= prev);
        CHECK(tdist_nll(residual_of({-d}), p) == v);
        prev = v;
        sup = std::max(sup, std::abs(tdist_grad(residual_of({d}), p).d_res[0]));
      }
      // Closed form of the peak influence: (r + 1) / (2 sqrt(r sigma^2)).
      CHECK(sup <= (r + 1) / (2 * std::sqrt(r * 0.8)) * (1 + 1e-9));
      // The MSE derivative 2d exceeds any bound on the same grid.
      CHECK(2 * 1e4 > 100 * sup);
    }
  }

  TEST_CASE("dimension mismatch and non-finite residuals are rejected") {
    auto p = TDistParams::initial(TDistMode::PerVoxel, 5);
    CHECK_THROWS_AS(tdist_nll(residual_of({0.0, 1.0}), p), std::invalid_argument);
    CHECK_THROWS_AS(tdist_grad(residual_of({0.0, 1.0}), p), std::invalid_argument);
    const BinaryMask label({2, 1, 1}, true);
    CHECK_THROWS_AS(make_residual(label, Volume({3, 1, 1}, 0.5)), std::invalid_argument);
    const auto r = make_residual(label, Volume({2, 1, 1}, std::vector<double>{0.25, 0.75}));
    CHECK(r.values[0] == 0.75);
    CHECK(r.values[1] == 0.25);
  }

  TEST_CASE("baseline loss examples") {
    const Dims d{3, 2, 2};
    const BinaryMask label = testing::bernoulli_mask(d, 3, 0.5);
    std::vector<double> lv(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) lv[i] = label[i] ? 1.0 : 0.0;
    CHECK(baseline_loss(LossKind::MSE, Volume(d, lv), label) == 0.0);
    CHECK(baseline_loss(LossKind::BCE, Volume(d, 0.5), label) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(baseline_loss(LossKind::CE, Volume(d, 0.5), label) == baseline_loss(LossKind::BCE, Volume(d, 0.5), label));

    const Volume pred = testing::uniform_volume(d, 8, 0.05, 0.95);
    CHECK(std::abs(baseline_loss(LossKind::Focal, pred, label, 0.0) - baseline_loss(LossKind::BCE, pred, label)) <= 1e-12);
    CHECK_THROWS_AS(baseline_loss(LossKind::TD, pred, label), std::invalid_argument);
  }

  TEST_CASE("baseline losses match direct formulas") {
    const Dims d{4, 4, 4};
    const BinaryMask label = testing::bernoulli_mask(d, 21, 0.4);
    const Volume pred = testing::uniform_volume(d, 22, 0.01, 0.99);
    double ce = 0, focal = 0, mse = 0, mae = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double k = label[i] ? 1.0 : 0.0, p = pred[i];
      const double pt = k == 1.0 ? p : 1 - p;
      ce -= std::log(pt);
      focal -= (1 - pt) * (1 - pt) * std::log(pt);
      mse += (p - k) * (p - k);
      mae += std::abs(p - k);
    }
    const double n = double(d.size());
    CHECK(baseline_loss(LossKind::CE, pred, label) == doctest::Approx(ce / n).epsilon(1e-12));
    CHECK(baseline_loss(LossKind::Focal, pred, label) == doctest::Approx(focal / n).epsilon(1e-12));
    CHECK(baseline_loss(LossKind::MSE, pred, label) == doctest::Approx(mse / n).epsilon(1e-12));
    CHECK(baseline_loss(LossKind::MAE, pred, label) == doctest::Approx(mae / n).epsilon(1e-12));
  }

  TEST_CASE("baseline gradients") {
    const Dims d{4, 4, 4};
    const BinaryMask label = testing::bernoulli_mask(d, 31, 0.4);
    const Volume pred = testing::uniform_volume(d, 32, 0.05, 0.95);
    const Volume g = baseline_loss_grad(LossKind::MSE, pred, label);
    for (std::size_t i = 0; i < d.size(); ++i)
      CHECK(g[i] == doctest::Approx(2 * (pred[i] - (label[i] ? 1.0 : 0.0)) / double(d.size())).epsilon(1e-14));

    for (auto kind : {LossKind::CE, LossKind::BCE, LossKind::Focal, LossKind::MSE, LossKind::MAE}) {
      const Volume gk = baseline_loss_grad(kind, pred, label);
      const std::vector<double> x0(pred.data().begin(), pred.data().end());
      const auto f = [&](const std::vector<double>& v) { return baseline_loss(kind, Volume(d, v), label); };
      for (std::size_t i = 0; i < d.size(); ++i)
        CHECK(relative_error(gk[i], central_difference(f, x0, i, 1e-5)) <= 1e-6);
    }

    // Saturated predictions stay finite thanks to the clamp.
    std::vector<double> sat(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) sat[i] = label[i] ? 0.0 : 1.0;
    for (auto kind : {LossKind::CE, LossKind::BCE, LossKind::Focal}) {
      CHECK(std::isfinite(baseline_loss(kind, Volume(d, sat), label)));
      const Volume gs = baseline_loss_grad(kind, Volume(d, sat), label);
      for (double v : gs.data()) CHECK(std::isfinite(v));
    }
  }

  TEST_CASE("names round-trip") {
    for (auto k : {LossKind::TD, LossKind::CE, LossKind::BCE, LossKind::Focal, LossKind::MSE, LossKind::MAE})
      CHECK(parse_loss_kind(to_string(k)) == k);
    for (auto m : {TDistMode::PerVoxel, TDistMode::Joint}) CHECK(parse_tdist_mode(to_string(m)) == m);
    CHECK_THROWS_AS(parse_loss_kind("Dice"), std::invalid_argument);
  }
}
