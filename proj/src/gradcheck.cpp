#include "cavity/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "cavity/optim.hpp"
#include "cavity/random.hpp"
#include "cavity/smooth_loss.hpp"
#include "cavity/ssim_loss.hpp"
#include "cavity/tdist_loss.hpp"

namespace cavity {

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

double central_difference(const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
                          std::size_t i, double h) {
  const double x0 = x[i];
  x[i] = x0 + h;
  const double fp = f(x);
  x[i] = x0 - h;
  const double fm = f(x);
  return (fp - fm) / (2.0 * h);
}

Volume random_volume(const Dims& d, std::uint64_t seed, double lo, double hi) {
  SplitMix64 rng(seed);
  std::vector<double> v(d.size());
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Volume(d, std::move(v));
}

namespace {

using Objective = std::function<double(const std::vector<double>&)>;

struct Problem {
  std::vector<double> x;
  Objective f;
  std::vector<double> grad;  // analytic, at x
};

std::vector<std::size_t> probe_coordinates(std::size_t n, int count, SplitMix64& rng) {
  std::vector<std::size_t> out;
  if (static_cast<std::size_t>(count) >= n) {
    for (std::size_t i = 0; i < n; ++i) out.push_back(i);
    return out;
  }
  while (out.size() < static_cast<std::size_t>(count)) {
    const auto i = static_cast<std::size_t>(rng.below(n));
    if (std::find(out.begin(), out.end(), i) == out.end()) out.push_back(i);
  }
  return out;
}

GradcheckRow run_suite(const std::string& name, double h, double tol, const GradcheckOptions& opts,
                       const std::function<Problem(std::uint64_t)>& make,
                       const std::vector<std::size_t>& always = {}) {
  GradcheckRow row{name, opts.seeds, opts.coords, h, 0.0, tol, false};
  for (int s = 0; s < opts.seeds; ++s) {
    const std::uint64_t seed = derive_seed(opts.seed, stream_tag(name) + static_cast<std::uint64_t>(s));
    const Problem p = make(seed);
    SplitMix64 rng(derive_seed(seed, stream_tag("probe")));
    auto coords = probe_coordinates(p.x.size(), opts.coords, rng);
    for (auto i : always)
      if (i < p.x.size() && std::find(coords.begin(), coords.end(), i) == coords.end()) coords.push_back(i);
    for (auto i : coords) {
      const double numeric = central_difference(p.f, p.x, i, h);
      row.max_rel_error = std::max(row.max_rel_error, relative_error(p.grad[i], numeric));
    }
  }
  row.pass = row.max_rel_error <= tol;
  return row;
}

std::vector<double> to_vec(const Volume& v) { return {v.data().begin(), v.data().end()}; }

BinaryMask random_mask(const Dims& d, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<std::uint8_t> m(d.size());
  for (auto& b : m) b = rng.uniform() < 0.4 ? 1 : 0;
  return BinaryMask(d, std::move(m));
}

// A pair of related fields: y = 0.6 x + 0.4 noise, so every SSIM factor sits
// well inside its range.
std::pair<Volume, Volume> related_pair(const Dims& d, std::uint64_t seed) {
  const Volume x = random_volume(d, derive_seed(seed, 1));
  const Volume n = random_volume(d, derive_seed(seed, 2));
  return {x, zip(x, n, [](double a, double b) { return 0.6 * a + 0.4 * b; })};
}

Problem msssim_problem(std::uint64_t seed, SccPlacement placement) {
  const Dims d{24, 24, 24};
  auto [x, y] = related_pair(d, seed);
  SsimParams p;
  p.scc = placement;
  auto sim = std::make_shared<MultiScaleSimilarity>(y, p);
  Problem pr;
  pr.x = to_vec(x);
  pr.f = [sim, d](const std::vector<double>& v) { return sim->evaluate(Volume(d, v), false).loss; };
  pr.grad = to_vec(sim->evaluate(x, true).grad);
  return pr;
}

Problem smooth_problem(std::uint64_t seed, SmoothReduction r) {
  const Dims d{6, 6, 6};
  const Volume x = random_volume(d, seed);
  Problem pr;
  pr.x = to_vec(x);
  pr.f = [d, r](const std::vector<double>& v) { return smooth_loss(Volume(d, v), r); };
  pr.grad = to_vec(smooth_loss_grad(x, r));
  return pr;
}

// Coordinates: residual entries, then rho_r, then s.
Problem tdist_problem(std::uint64_t seed, TDistMode mode, bool per_voxel_scale) {
  const Dims d{4, 4, 4};
  SplitMix64 rng(seed);
  const Volume res = random_volume(d, derive_seed(seed, 1), -2.0, 2.0);
  TDistParams p = TDistParams::initial(mode, per_voxel_scale ? d.size() : 0);
  p.rho_r = rng.uniform(-1.0, 2.0);
  for (auto& s : p.s) s = rng.uniform(-1.0, 1.0);

  const std::size_t n = d.size();
  Problem pr;
  pr.x = to_vec(res);
  pr.x.push_back(p.rho_r);
  pr.x.insert(pr.x.end(), p.s.begin(), p.s.end());
  pr.f = [d, n, p](const std::vector<double>& v) {
    TDistParams q = p;
    q.rho_r = v[n];
    std::copy(v.begin() + static_cast<long>(n) + 1, v.end(), q.s.begin());
    return tdist_nll(Residual{Volume(d, std::vector<double>(v.begin(), v.begin() + static_cast<long>(n)))}, q);
  };
  const auto g = tdist_grad(Residual{res}, p);
  pr.grad = to_vec(g.d_res);
  pr.grad.push_back(g.d_rho_r);
  pr.grad.insert(pr.grad.end(), g.d_s.begin(), g.d_s.end());
  return pr;
}

Problem baseline_problem(std::uint64_t seed, LossKind kind) {
  const Dims d{4, 4, 4};
  const Volume pred = random_volume(d, derive_seed(seed, 1), 0.05, 0.95);
  const BinaryMask label = random_mask(d, derive_seed(seed, 2));
  Problem pr;
  pr.x = to_vec(pred);
  pr.f = [d, kind, label](const std::vector<double>& v) { return baseline_loss(kind, Volume(d, v), label); };
  pr.grad = to_vec(baseline_loss_grad(kind, pred, label));
  return pr;
}

Problem delta_problem(std::uint64_t seed) {
  const Dims d{24, 24, 24};
  auto [pre, post] = related_pair(d, seed);
  FitConfig cfg;
  auto obj = std::make_shared<DeltaObjective>(pre, post, SsimParams{}, cfg);
  SplitMix64 rng(derive_seed(seed, 3));
  Problem pr;
  pr.x.resize(d.size());
  for (auto& z : pr.x) z = rng.uniform(-2.0, 2.0);
  pr.f = [obj](const std::vector<double>& z) { return obj->evaluate(z, false).total; };
  pr.grad = obj->evaluate(pr.x, true).grad;
  return pr;
}

// Coordinates: predictor weights, bias, rho_r, s.
Problem weak_problem(std::uint64_t seed, LossKind kind) {
  const Dims d{6, 6, 6};
  std::vector<Volume> features;
  for (int c = 0; c < 3; ++c) features.push_back(random_volume(d, derive_seed(seed, 10 + c), -1.0, 1.0));
  const BinaryMask label = random_mask(d, derive_seed(seed, 2));
  SplitMix64 rng(derive_seed(seed, 3));
  LinearPredictor lp(features.size());
  for (auto& w : lp.weights) w = rng.uniform(-1.0, 1.0);
  lp.bias = rng.uniform(-0.5, 0.5);
  TDistParams tp = TDistParams::initial();
  tp.rho_r = rng.uniform(-1.0, 1.0);
  tp.s[0] = rng.uniform(-1.0, 1.0);

  const std::size_t c = features.size();
  Problem pr;
  pr.x = lp.weights;
  pr.x.push_back(lp.bias);
  pr.x.push_back(tp.rho_r);
  pr.x.push_back(tp.s[0]);
  pr.f = [=](const std::vector<double>& v) {
    LinearPredictor q(c);
    std::copy(v.begin(), v.begin() + static_cast<long>(c), q.weights.begin());
    q.bias = v[c];
    TDistParams t = tp;
    t.rho_r = v[c + 1];
    t.s[0] = v[c + 2];
    return weak_objective(features, label, kind, q, t, 2.0, false).loss;
  };
  pr.grad = weak_objective(features, label, kind, lp, tp, 2.0, true).grad;
  return pr;
}

}  // namespace

std::vector<GradcheckRow> run_gradchecks(const GradcheckOptions& opts) {
  std::vector<GradcheckRow> rows;
  for (auto placement : {SccPlacement::Contrast, SccPlacement::Structure, SccPlacement::None}) {
    rows.push_back(run_suite("msssim/" + to_string(placement), 1e-4, 1e-5, opts,
                             [placement](std::uint64_t s) { return msssim_problem(s, placement); }));
  }
  rows.push_back(run_suite("smooth/sum", 1e-5, 1e-6, opts,
                           [](std::uint64_t s) { return smooth_problem(s, SmoothReduction::Sum); }));
  rows.push_back(run_suite("smooth/mean", 1e-5, 1e-6, opts,
                           [](std::uint64_t s) { return smooth_problem(s, SmoothReduction::MeanPerVoxel); }));

  const std::size_t n_res = 64;
  for (auto mode : {TDistMode::PerVoxel, TDistMode::Joint}) {
    for (bool diag : {false, true}) {
      const std::string name = "tdist/" + to_string(mode) + (diag ? "/diagonal" : "/shared");
      rows.push_back(run_suite(name, 1e-5, 1e-6, opts,
                               [mode, diag](std::uint64_t s) { return tdist_problem(s, mode, diag); },
                               {n_res, n_res + 1}));
    }
  }
  for (auto kind : {LossKind::CE, LossKind::BCE, LossKind::Focal, LossKind::MSE, LossKind::MAE}) {
    rows.push_back(run_suite("baseline/" + to_string(kind), 1e-5, 1e-6, opts,
                             [kind](std::uint64_t s) { return baseline_problem(s, kind); }));
  }
  rows.push_back(run_suite("fit/delta_objective", 1e-4, 1e-5, opts, delta_problem));
  for (auto kind : {LossKind::TD, LossKind::BCE, LossKind::Focal, LossKind::MSE}) {
    rows.push_back(run_suite("fit/weak_" + to_string(kind), 1e-5, 1e-6, opts,
                             [kind](std::uint64_t s) { return weak_problem(s, kind); }));
  }
  return rows;
}

}  // namespace cavity
