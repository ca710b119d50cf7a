#include "cavity/tdist_loss.hpp"

#include <boost/math/special_functions/digamma.hpp>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace cavity {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double softplus_inverse(double y) {
  if (!(y > 0)) throw std::invalid_argument("softplus_inverse: argument must be > 0");
  // log(exp(y) - 1), stable for large y
  return y > 30.0 ? y + std::log1p(-std::exp(-y)) : std::log(std::expm1(y));
}

double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::string to_string(TDistMode m) { return m == TDistMode::PerVoxel ? "per_voxel" : "joint"; }

TDistMode parse_tdist_mode(const std::string& s) {
  if (s == "per_voxel") return TDistMode::PerVoxel;
  if (s == "joint") return TDistMode::Joint;
  throw std::invalid_argument("unknown t-distribution mode '" + s + "' (expected per_voxel|joint)");
}

TDistParams TDistParams::initial(TDistMode mode, std::size_t voxels, double r, double sigma2) {
  TDistParams p;
  p.mode = mode;
  p.rho_r = softplus_inverse(r - p.eps);
  p.s.assign(voxels == 0 ? 1 : voxels, softplus_inverse(sigma2 - p.eps));
  return p;
}

Residual make_residual(const BinaryMask& label, const Volume& prediction) {
  require_same_dims(label.dims(), prediction.dims(), "make_residual");
  std::vector<double> d(label.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = (label[i] ? 1.0 : 0.0) - prediction[i];
  return {Volume(label.dims(), std::move(d), prediction.spacing())};
}

namespace {

void check_params(const Residual& res, const TDistParams& p) {
  if (p.s.empty()) throw std::invalid_argument("tdist: scale parameter is empty");
  if (p.s.size() != 1 && p.s.size() != res.values.size()) {
    throw std::invalid_argument("tdist: per-voxel scale field has " + std::to_string(p.s.size()) +
                                " entries, residual has " + std::to_string(res.values.size()));
  }
  if (!std::isfinite(p.rho_r)) throw std::invalid_argument("tdist: non-finite rho_r");
  for (double d : res.values.data()) {
    if (!std::isfinite(d)) throw std::invalid_argument("tdist: non-finite residual");
  }
}

}  // namespace

double tdist_nll(const Residual& res, const TDistParams& p) {
  check_params(res, p);
  const double r = p.r();
  const auto& d = res.values;
  const std::size_t n = d.size();

  if (p.mode == TDistMode::PerVoxel) {
    const double constant = 0.5 * std::log(std::numbers::pi * r) + std::lgamma(0.5 * r) - std::lgamma(0.5 * (r + 1.0));
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = p.sigma2(i);
      total += 0.5 * std::log(v) + 0.5 * (r + 1.0) * std::log1p(d[i] * d[i] / (r * v));
    }
    return constant + total / static_cast<double>(n);
  }

  const double D = static_cast<double>(n);
  double log_det = 0.0, q = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = p.sigma2(i);
    log_det += std::log(v);
    q += d[i] * d[i] / v;
  }
  return 0.5 * D * std::log(std::numbers::pi * r) + std::lgamma(0.5 * r) - std::lgamma(0.5 * (r + D)) +
         0.5 * log_det + 0.5 * (r + D) * std::log1p(q / r);
}

TDistGrad tdist_grad(const Residual& res, const TDistParams& p) {
  check_params(res, p);
  using boost::math::digamma;
  const double r = p.r();
  const auto& d = res.values;
  const std::size_t n = d.size();
  const double dr_drho = logistic(p.rho_r);

  TDistGrad g;
  g.d_s.assign(p.s.size(), 0.0);
  std::vector<double> d_res(n);

  if (p.mode == TDistMode::PerVoxel) {
    const double inv_n = 1.0 / static_cast<double>(n);
    double d_r = 0.5 / r + 0.5 * digamma(0.5 * r) - 0.5 * digamma(0.5 * (r + 1.0));
    double d_r_data = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = p.sigma2(i);
      const double e2 = d[i] * d[i];
      const double q = e2 / (r * v);
      d_res[i] = inv_n * (r + 1.0) * d[i] / (r * v + e2);
      d_r_data += 0.5 * std::log1p(q) - 0.5 * (r + 1.0) * q / (r * (1.0 + q));
      const double d_v = 0.5 / v - 0.5 * (r + 1.0) * (q / v) / (1.0 + q);
      const std::size_t si = p.shared_scale() ? 0 : i;
      g.d_s[si] += inv_n * d_v * logistic(p.s[si]);
    }
    d_r += d_r_data * inv_n;
    g.d_rho_r = d_r * dr_drho;
  } else {
    const double D = static_cast<double>(n);
    double q = 0.0;
    for (std::size_t i = 0; i < n; ++i) q += d[i] * d[i] / p.sigma2(i);
    const double rq = r + q;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = p.sigma2(i);
      d_res[i] = (r + D) * d[i] / (v * rq);
      const double d_v = 0.5 / v - 0.5 * (r + D) * d[i] * d[i] / (v * v * rq);
      const std::size_t si = p.shared_scale() ? 0 : i;
      g.d_s[si] += d_v * logistic(p.s[si]);
    }
    const double d_r = 0.5 * D / r + 0.5 * digamma(0.5 * r) - 0.5 * digamma(0.5 * (r + D)) +
                       0.5 * std::log1p(q / r) - 0.5 * (r + D) * q / (r * rq);
    g.d_rho_r = d_r * dr_drho;
  }
  g.d_res = Volume(d.dims(), std::move(d_res), d.spacing());
  return g;
}

std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::TD: return "TD";
    case LossKind::CE: return "CE";
    case LossKind::BCE: return "BCE";
    case LossKind::Focal: return "Focal";
    case LossKind::MSE: return "MSE";
    case LossKind::MAE: return "MAE";
  }
  return "?";
}

LossKind parse_loss_kind(const std::string& s) {
  for (auto k : {LossKind::TD, LossKind::CE, LossKind::BCE, LossKind::Focal, LossKind::MSE, LossKind::MAE}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown loss kind '" + s + "' (expected TD|CE|BCE|Focal|MSE|MAE)");
}

namespace {

void check_baseline(LossKind kind, const Volume& pred, const BinaryMask& label) {
  if (kind == LossKind::TD) throw std::invalid_argument("baseline_loss: TD is not a baseline loss kind");
  require_same_dims(pred.dims(), label.dims(), "baseline_loss");
}

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }
bool inside_clamp(double p) { return p > kProbClamp && p < 1.0 - kProbClamp; }

}  // namespace

double baseline_loss(LossKind kind, const Volume& pred, const BinaryMask& label, double focal_gamma) {
  check_baseline(kind, pred, label);
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double k = label[i] ? 1.0 : 0.0;
    switch (kind) {
      case LossKind::CE:
      case LossKind::BCE: {
        const double p = clamp_prob(pred[i]);
        total -= k * std::log(p) + (1.0 - k) * std::log(1.0 - p);
        break;
      }
      case LossKind::Focal: {
        const double p = clamp_prob(pred[i]);
        const double pt = label[i] ? p : 1.0 - p;
        total -= std::pow(1.0 - pt, focal_gamma) * std::log(pt);
        break;
      }
      case LossKind::MSE: total += (pred[i] - k) * (pred[i] - k); break;
      case LossKind::MAE: total += std::abs(pred[i] - k); break;
      case LossKind::TD: break;
    }
  }
  return total / static_cast<double>(pred.size());
}

Volume baseline_loss_grad(LossKind kind, const Volume& pred, const BinaryMask& label, double focal_gamma) {
  check_baseline(kind, pred, label);
  const double inv_n = 1.0 / static_cast<double>(pred.size());
  std::vector<double> g(pred.size(), 0.0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double k = label[i] ? 1.0 : 0.0;
    switch (kind) {
      case LossKind::CE:
      case LossKind::BCE: {
        if (!inside_clamp(pred[i])) break;
        const double p = pred[i];
        g[i] = (-k / p + (1.0 - k) / (1.0 - p)) * inv_n;
        break;
      }
      case LossKind::Focal: {
        if (!inside_clamp(pred[i])) break;
        const double p = pred[i];
        const double pt = label[i] ? p : 1.0 - p;
        const double dpt = label[i] ? 1.0 : -1.0;
        const double one_m = 1.0 - pt;
        const double d_loss_dpt = (focal_gamma == 0.0 ? 0.0 : focal_gamma * std::pow(one_m, focal_gamma - 1.0) * std::log(pt)) -
                                  std::pow(one_m, focal_gamma) / pt;
        g[i] = d_loss_dpt * dpt * inv_n;
        break;
      }
      case LossKind::MSE: g[i] = 2.0 * (pred[i] - k) * inv_n; break;
      case LossKind::MAE: {
        const double diff = pred[i] - k;
        g[i] = (diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0)) * inv_n;
        break;
      }
      case LossKind::TD: break;
    }
  }
  return Volume(pred.dims(), std::move(g), pred.spacing());
}

}  // namespace cavity
