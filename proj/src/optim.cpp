#include "cavity/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace cavity {

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr) {
  if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw std::invalid_argument("adam_step: shape mismatch between parameters, gradients and state");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
  }
}

void FitConfig::validate() const {
  if (!(lr_main > 0) || !(lr_r > 0) || !(lr_sigma > 0)) throw std::invalid_argument("fit: learning rates must be > 0");
  if (patience < 1) throw std::invalid_argument("fit: patience must be >= 1");
  if (max_iters < 0) throw std::invalid_argument("fit: max_iters must be >= 0");
  if (!(threshold > 0 && threshold < 1)) throw std::invalid_argument("fit: threshold must lie in (0, 1)");
  if (lambda_smooth < 0 || min_delta < 0) throw std::invalid_argument("fit: lambda_smooth and min_delta must be >= 0");
}

bool EarlyStopping::observe(double value, int iter) {
  improved_last_ = best_iter_ < 0 || value < best_;
  const bool significant = best_iter_ < 0 || value < best_ - min_delta_;
  if (improved_last_) {
    best_ = value;
    best_iter_ = iter;
  }
  stale_ = significant ? 0 : stale_ + 1;
  return stale_ >= patience_;
}

DeltaObjective::DeltaObjective(const Volume& preop, const Volume& postop, const SsimParams& ssim, const FitConfig& cfg)
    : preop_(preop), sim_(postop, ssim), lambda_(cfg.lambda_smooth), reduction_(cfg.smooth_reduction) {
  require_same_dims(preop.dims(), postop.dims(), "fit_delta");
}

DeltaObjective::Value DeltaObjective::evaluate(std::span<const double> logits, bool with_grad) const {
  const std::size_t n = preop_.size();
  if (logits.size() != n) throw std::invalid_argument("DeltaObjective: logit count does not match volume");
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = logistic(logits[i]);
  const Volume delta(preop_.dims(), std::move(d), preop_.spacing());

  const auto sim = sim_.evaluate(hadamard(preop_, delta), with_grad);
  Value out;
  out.similarity = sim.loss;
  out.smooth = lambda_ > 0 ? smooth_loss(delta, reduction_) : 0.0;
  out.total = out.similarity + lambda_ * out.smooth;
  if (!with_grad) return out;

  out.grad.resize(n);
  const Volume gs = lambda_ > 0 ? smooth_loss_grad(delta, reduction_) : Volume(preop_.dims(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double g_delta = preop_[i] * sim.grad[i] + lambda_ * gs[i];
    out.grad[i] = g_delta * delta[i] * (1.0 - delta[i]);
  }
  return out;
}

namespace {

void require_normalized(const Volume& v, const char* name) {
  for (double d : v.data()) {
    if (d < -1e-6 || d > 1.0 + 1e-6) {
      throw std::invalid_argument(std::string("fit_delta: ") + name + " is not normalized to [0, 1]");
    }
  }
}

}  // namespace

DeltaFit fit_delta(const Volume& preop, const Volume& postop, const SsimParams& ssim, const FitConfig& cfg) {
  cfg.validate();
  require_same_dims(preop.dims(), postop.dims(), "fit_delta");
  require_normalized(preop, "preop");
  require_normalized(postop, "postop");

  const DeltaObjective objective(preop, postop, ssim, cfg);
  std::vector<double> z(preop.size(), 0.0);
  std::vector<double> best_z = z;
  AdamState adam(z.size());
  EarlyStopping stopper(cfg.patience, cfg.min_delta);

  DeltaFit fit;
  fit.achieved_M = objective.achieved_M();
  for (int it = 0; it < cfg.max_iters; ++it) {
    const auto value = objective.evaluate(z, true);
    fit.loss_trace.push_back(value.total);
    const bool stop = stopper.observe(value.total, it);
    if (stopper.improved_last()) best_z = z;
    if (stop) break;
    adam_step(z, value.grad, adam, cfg.lr_main);
  }
  fit.best_iter = stopper.best_iter();

  std::vector<double> d(best_z.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = logistic(best_z[i]);
  fit.delta = Volume(preop.dims(), std::move(d), preop.spacing());
  return fit;
}

BinaryMask predict_mask(const Volume& delta, double threshold) {
  std::vector<std::uint8_t> out(delta.size());
  for (std::size_t i = 0; i < delta.size(); ++i) {
    if (delta[i] < 0.0 || delta[i] > 1.0) throw std::invalid_argument("predict_mask: delta outside [0, 1]");
    out[i] = (1.0 - delta[i]) > threshold ? 1 : 0;
  }
  return BinaryMask(delta.dims(), std::move(out), delta.spacing());
}

Volume LinearPredictor::predict(const std::vector<Volume>& features) const {
  if (features.size() != weights.size()) throw std::invalid_argument("LinearPredictor: channel count mismatch");
  if (features.empty()) throw std::invalid_argument("LinearPredictor: no feature channels");
  const Dims& d = features.front().dims();
  std::vector<double> out(d.size(), bias);
  for (std::size_t c = 0; c < features.size(); ++c) {
    require_same_dims(features[c].dims(), d, "LinearPredictor");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += weights[c] * features[c][i];
  }
  for (auto& v : out) v = logistic(v);
  return Volume(d, std::move(out), features.front().spacing());
}

std::vector<Volume> standardize_features(const std::vector<Volume>& features) {
  std::vector<Volume> out;
  out.reserve(features.size());
  for (const auto& f : features) {
    const auto s = volume_stats(f);
    const double scale = s.variance > 1e-24 ? 1.0 / std::sqrt(s.variance) : 1.0;
    out.push_back(map(f, [&](double v) { return (v - s.mean) * scale; }));
  }
  return out;
}

WeakObjectiveValue weak_objective(const std::vector<Volume>& features, const BinaryMask& label, LossKind kind,
                                  const LinearPredictor& predictor, const TDistParams& tparams,
                                  double focal_gamma, bool with_grad) {
  const Volume y = predictor.predict(features);
  require_same_dims(y.dims(), label.dims(), "fit_weak");

  WeakObjectiveValue out;
  Volume d_pred;
  TDistGrad tg;
  if (kind == LossKind::TD) {
    const Residual res = make_residual(label, y);
    out.loss = tdist_nll(res, tparams);
    if (with_grad) {
      tg = tdist_grad(res, tparams);
      d_pred = map(tg.d_res, [](double g) { return -g; });
    }
  } else {
    out.loss = baseline_loss(kind, y, label, focal_gamma);
    if (with_grad) d_pred = baseline_loss_grad(kind, y, label, focal_gamma);
  }
  if (!with_grad) return out;

  const std::size_t channels = predictor.weights.size();
  out.grad.assign(channels + 2 + tparams.s.size(), 0.0);
  double g_bias = 0.0;
  std::vector<double> g_logit(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    g_logit[i] = d_pred[i] * y[i] * (1.0 - y[i]);
    g_bias += g_logit[i];
  }
  for (std::size_t c = 0; c < channels; ++c) {
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += g_logit[i] * features[c][i];
    out.grad[c] = acc;
  }
  out.grad[channels] = g_bias;
  if (kind == LossKind::TD) {
    out.grad[channels + 1] = tg.d_rho_r;
    for (std::size_t k = 0; k < tg.d_s.size(); ++k) out.grad[channels + 2 + k] = tg.d_s[k];
  }
  return out;
}

WeakFit fit_weak(const std::vector<Volume>& features, const BinaryMask& weak_label, LossKind kind,
                 const TDistParams& tparams, const FitConfig& cfg) {
  cfg.validate();
  if (features.empty()) throw std::invalid_argument("fit_weak: empty feature list");
  for (const auto& f : features) require_same_dims(f.dims(), weak_label.dims(), "fit_weak");

  const std::size_t channels = features.size();
  WeakFit fit{LinearPredictor(channels), {}, tparams, -1};
  LinearPredictor current(channels);
  TDistParams tcur = tparams;
  AdamState adam_main(channels + 1), adam_r(1), adam_s(tcur.s.size());
  EarlyStopping stopper(cfg.patience, cfg.min_delta);

  std::vector<double> main_params(channels + 1, 0.0);
  for (int it = 0; it < cfg.max_iters; ++it) {
    const auto value = weak_objective(features, weak_label, kind, current, tcur, cfg.focal_gamma, true);
    fit.loss_trace.push_back(value.loss);
    const bool stop = stopper.observe(value.loss, it);
    if (stopper.improved_last()) {
      fit.predictor = current;
      fit.tparams = tcur;
    }
    if (stop) break;

    std::copy(current.weights.begin(), current.weights.end(), main_params.begin());
    main_params[channels] = current.bias;
    adam_step(main_params, std::span(value.grad).first(channels + 1), adam_main, cfg.lr_main);
    std::copy(main_params.begin(), main_params.begin() + channels, current.weights.begin());
    current.bias = main_params[channels];

    if (kind == LossKind::TD) {
      adam_step(std::span(&tcur.rho_r, 1), std::span(value.grad).subspan(channels + 1, 1), adam_r, cfg.lr_r);
      adam_step(tcur.s, std::span(value.grad).subspan(channels + 2), adam_s, cfg.lr_sigma);
    }
  }
  fit.best_iter = stopper.best_iter();
  return fit;
}

}  // namespace cavity
