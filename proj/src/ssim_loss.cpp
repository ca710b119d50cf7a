#include "cavity/ssim_loss.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace cavity {

std::string to_string(SccPlacement p) {
  switch (p) {
    case SccPlacement::Contrast: return "contrast";
    case SccPlacement::Structure: return "structure";
    case SccPlacement::None: return "none";
  }
  return "contrast";
}

SccPlacement parse_scc_placement(const std::string& s) {
  if (s == "contrast") return SccPlacement::Contrast;
  if (s == "structure") return SccPlacement::Structure;
  if (s == "none") return SccPlacement::None;
  throw std::invalid_argument("unknown SCC placement '" + s + "' (expected contrast|structure|none)");
}

void SsimParams::validate() const {
  if (M < 1) throw std::invalid_argument("ssim: M must be >= 1");
  if (beta.size() != static_cast<std::size_t>(M) || gamma.size() != static_cast<std::size_t>(M)) {
    throw std::invalid_argument("ssim: beta and gamma must have M entries");
  }
  for (std::size_t j = 0; j < beta.size(); ++j) {
    if (!(beta[j] > 0) || !(gamma[j] > 0)) throw std::invalid_argument("ssim: exponents must be > 0");
  }
  if (!(alpha_M > 0)) throw std::invalid_argument("ssim: alpha_M must be > 0");
  if (!(C1 > 0) || !(C2 > 0) || !(C3 > 0)) throw std::invalid_argument("ssim: stabilizers must be > 0");
  if (!(power_floor > 0) || power_floor > 1e-3) throw std::invalid_argument("ssim: power_floor must lie in (0, 1e-3]");
  if (window.weights.size() != static_cast<std::size_t>(window.extent())) {
    throw std::invalid_argument("ssim: malformed window");
  }
}

namespace {

struct Moments {
  std::vector<double> mu;
  std::vector<double> var;  // max(raw, 0) + kVarianceEps
  std::vector<double> sigma;
  std::vector<std::uint8_t> active;  // raw variance > 0
};

Moments own_moments(const Volume& v, const GaussianKernel1D& k) {
  const Volume mu = convolve_separable(v, k);
  const Volume sq = convolve_separable(map(v, [](double a) { return a * a; }), k);
  Moments m;
  const std::size_t n = v.size();
  m.mu.assign(mu.data().begin(), mu.data().end());
  m.var.resize(n);
  m.sigma.resize(n);
  m.active.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double raw = sq[i] - m.mu[i] * m.mu[i];
    m.active[i] = raw > 0.0;
    m.var[i] = std::max(raw, 0.0) + kVarianceEps;
    m.sigma[i] = std::sqrt(m.var[i]);
  }
  return m;
}

std::vector<double> cross_moment(const Volume& x, const Volume& y, const Moments& mx, const Moments& my,
                                 const GaussianKernel1D& k) {
  const Volume exy = convolve_separable(hadamard(x, y), k);
  std::vector<double> cov(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) cov[i] = exy[i] - mx.mu[i] * my.mu[i];
  return cov;
}

struct VoxelTerms {
  double l, c, s;
};

inline VoxelTerms voxel_terms(double mx, double my, double vx, double vy, double sx, double sy, double cxy,
                              const SsimParams& p) {
  return {(2.0 * mx * my + p.C1) / (mx * mx + my * my + p.C1), (2.0 * sx * sy + p.C2) / (vx + vy + p.C2),
          (cxy + p.C3) / (sx * sy + p.C3)};
}

double mean_of(const Volume& v) {
  double s = 0.0;
  for (double d : v.data()) s += d;
  return s / static_cast<double>(v.size());
}

double centered_ss(const Volume& v, double mean) {
  double s = 0.0;
  for (double d : v.data()) s += (d - mean) * (d - mean);
  return s;
}

constexpr double kSccDegenerate = 1e-12;

}  // namespace

SsimMaps ssim_components(const Volume& x, const Volume& y, const SsimParams& p) {
  require_same_dims(x.dims(), y.dims(), "ssim_components");
  const Moments mx = own_moments(x, p.window);
  const Moments my = own_moments(y, p.window);
  const auto cov = cross_moment(x, y, mx, my, p.window);
  const std::size_t n = x.size();
  std::vector<double> l(n), c(n), s(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto t = voxel_terms(mx.mu[i], my.mu[i], mx.var[i], my.var[i], mx.sigma[i], my.sigma[i], cov[i], p);
    l[i] = t.l;
    c[i] = t.c;
    s[i] = t.s;
  }
  return {Volume(x.dims(), std::move(l), x.spacing()), Volume(x.dims(), std::move(c), x.spacing()),
          Volume(x.dims(), std::move(s), x.spacing())};
}

double scc(const Volume& x, const Volume& y) {
  require_same_dims(x.dims(), y.dims(), "scc");
  const double xm = mean_of(x);
  const double ym = mean_of(y);
  double cov = 0.0, ssx = 0.0, ssy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double a = x[i] - xm;
    const double b = y[i] - ym;
    cov += a * b;
    ssx += a * a;
    ssy += b * b;
  }
  if (ssx < kSccDegenerate || ssy < kSccDegenerate) return 0.0;
  return cov * cov / (ssx * ssy);
}

MultiScaleSimilarity::MultiScaleSimilarity(Volume target, SsimParams params) : params_(std::move(params)) {
  params_.validate();
  const auto pyramid = build_pyramid(target, params_.M, params_.window.extent());
  for (const auto& y : pyramid) {
    Moments m = own_moments(y, params_.window);
    TargetLevel level{y, std::move(m.mu), std::move(m.var), std::move(m.sigma), 0.0, 0.0};
    level.mean = mean_of(y);
    level.centered_ss = centered_ss(y, level.mean);
    levels_.push_back(std::move(level));
  }

  const auto K = levels_.size();
  const double sum_beta = std::accumulate(params_.beta.begin(), params_.beta.begin() + K, 0.0);
  const double sum_gamma = std::accumulate(params_.gamma.begin(), params_.gamma.begin() + K, 0.0);
  for (std::size_t j = 0; j < K; ++j) {
    beta_.push_back(params_.beta[j] / sum_beta);
    gamma_.push_back(params_.gamma[j] / sum_gamma);
  }
  // Luminance weight scales with the coarsest contrast weight it is tied to.
  alpha_ = params_.alpha_M * beta_[K - 1] / params_.beta[params_.M - 1];
}

SsimEvaluation MultiScaleSimilarity::evaluate(const Volume& x, bool with_grad) const {
  require_same_dims(x.dims(), levels_.front().y.dims(), "msssim_cscc");
  const std::size_t K = levels_.size();
  const auto& p = params_;
  const auto xs = build_pyramid(x, static_cast<int>(K), p.window.extent());

  struct LevelState {
    Moments mx;
    std::vector<double> cov;
    double x_mean = 0.0;
    double scc_cov = 0.0;
    double scc_ssx = 0.0;
  };
  std::vector<LevelState> state(K);

  SsimEvaluation out;
  out.achieved_M = static_cast<int>(K);
  out.scales.resize(K);

  for (std::size_t j = 0; j < K; ++j) {
    const auto& tgt = levels_[j];
    auto& st = state[j];
    const Volume& xj = xs[j];
    st.mx = own_moments(xj, p.window);
    const Volume exy = convolve_separable(hadamard(xj, tgt.y), p.window);
    const std::size_t n = xj.size();
    st.cov.resize(n);
    double sl = 0.0, sc = 0.0, ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      st.cov[i] = exy[i] - st.mx.mu[i] * tgt.mu[i];
      const auto t = voxel_terms(st.mx.mu[i], tgt.mu[i], st.mx.var[i], tgt.var[i], st.mx.sigma[i], tgt.sigma[i],
                                 st.cov[i], p);
      sl += t.l;
      sc += t.c;
      ss += t.s;
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    auto& terms = out.scales[j];
    terms.l = sl * inv_n;
    terms.c = sc * inv_n;
    terms.s = ss * inv_n;

    st.x_mean = mean_of(xj);
    for (std::size_t i = 0; i < n; ++i) {
      const double a = xj[i] - st.x_mean;
      st.scc_cov += a * (tgt.y[i] - tgt.mean);
      st.scc_ssx += a * a;
    }
    const bool degenerate = st.scc_ssx < kSccDegenerate || tgt.centered_ss < kSccDegenerate;
    terms.scc = degenerate ? 0.0 : st.scc_cov * st.scc_cov / (st.scc_ssx * tgt.centered_ss);
  }

  // Assemble the product of powered factors.
  const double floor = p.power_floor;
  const double lum = out.scales[K - 1].l;
  std::vector<double> contrast(K), structure(K);
  double product = std::pow(std::max(lum, floor), alpha_);
  for (std::size_t j = 0; j < K; ++j) {
    const auto& t = out.scales[j];
    contrast[j] = t.c + (p.scc == SccPlacement::Contrast ? t.scc : 0.0);
    structure[j] = t.s + (p.scc == SccPlacement::Structure ? t.scc : 0.0);
    product *= std::pow(std::max(contrast[j], floor), beta_[j]) * std::pow(std::max(structure[j], floor), gamma_[j]);
  }
  out.loss = 1.0 - product;
  if (!with_grad) return out;

  // Reverse sweep, coarsest level first so each level can absorb the
  // upsampled adjoint of the next.
  Volume carry;
  for (std::size_t jj = K; jj-- > 0;) {
    const auto& tgt = levels_[jj];
    const auto& st = state[jj];
    const Volume& xj = xs[jj];
    const std::size_t n = xj.size();
    const double inv_n = 1.0 / static_cast<double>(n);

    const double w_l = (jj == K - 1 && lum > floor) ? -product * alpha_ / lum : 0.0;
    const double w_c = contrast[jj] > floor ? -product * beta_[jj] / contrast[jj] : 0.0;
    const double w_s = structure[jj] > floor ? -product * gamma_[jj] / structure[jj] : 0.0;
    const double w_scc = p.scc == SccPlacement::Contrast ? w_c : (p.scc == SccPlacement::Structure ? w_s : 0.0);

    std::vector<double> g_mu(n), g_sq(n), g_xy(n);
    const double gl = w_l * inv_n, gc = w_c * inv_n, gs = w_s * inv_n;
    for (std::size_t i = 0; i < n; ++i) {
      const double mx = st.mx.mu[i], my = tgt.mu[i];
      const double vx = st.mx.var[i], vy = tgt.var[i];
      const double sx = st.mx.sigma[i], sy = tgt.sigma[i];
      const double cxy = st.cov[i];

      const double dl = mx * mx + my * my + p.C1, nl = 2.0 * mx * my + p.C1;
      const double dc = vx + vy + p.C2, nc = 2.0 * sx * sy + p.C2;
      const double ds = sx * sy + p.C3, ns = cxy + p.C3;

      const double dl_dmx = 2.0 * (my * dl - mx * nl) / (dl * dl);
      const double dc_dvx = (sy / sx) / dc - nc / (dc * dc);
      const double ds_dvx = -ns * (sy / (2.0 * sx)) / (ds * ds);
      const double g_var = st.mx.active[i] ? gc * dc_dvx + gs * ds_dvx : 0.0;
      const double g_cov = gs / ds;

      g_mu[i] = gl * dl_dmx - 2.0 * mx * g_var - my * g_cov;
      g_sq[i] = g_var;
      g_xy[i] = g_cov;
    }
    const Dims& d = xj.dims();
    const Volume b_mu = convolve_separable_adjoint(Volume(d, std::move(g_mu)), p.window);
    const Volume b_sq = convolve_separable_adjoint(Volume(d, std::move(g_sq)), p.window);
    const Volume b_xy = convolve_separable_adjoint(Volume(d, std::move(g_xy)), p.window);

    std::vector<double> g(n);
    const bool scc_live = w_scc != 0.0 && st.scc_ssx >= kSccDegenerate && tgt.centered_ss >= kSccDegenerate;
    const double k1 = scc_live ? 2.0 * st.scc_cov / (st.scc_ssx * tgt.centered_ss) : 0.0;
    const double k2 =
        scc_live ? 2.0 * st.scc_cov * st.scc_cov / (st.scc_ssx * st.scc_ssx * tgt.centered_ss) : 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      g[i] = b_mu[i] + 2.0 * xj[i] * b_sq[i] + tgt.y[i] * b_xy[i];
      if (scc_live) g[i] += w_scc * (k1 * (tgt.y[i] - tgt.mean) - k2 * (xj[i] - st.x_mean));
    }
    if (carry.size() != 0) {
      const Volume up = downsample2_adjoint(carry, d, xj.spacing());
      for (std::size_t i = 0; i < n; ++i) g[i] += up[i];
    }
    carry = Volume(d, std::move(g), xj.spacing());
  }
  out.grad = std::move(carry);
  return out;
}

SsimLoss msssim_cscc_loss(const Volume& x, const Volume& y, const SsimParams& p) {
  require_same_dims(x.dims(), y.dims(), "msssim_cscc_loss");
  const MultiScaleSimilarity sim(y, p);
  const auto e = sim.evaluate(x, false);
  return {e.loss, e.achieved_M};
}

Volume msssim_cscc_grad(const Volume& x, const Volume& y, const SsimParams& p) {
  require_same_dims(x.dims(), y.dims(), "msssim_cscc_grad");
  const MultiScaleSimilarity sim(y, p);
  return sim.evaluate(x, true).grad;
}

}  // namespace cavity
