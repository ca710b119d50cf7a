#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cavity/smooth_loss.hpp"
#include "cavity/ssim_loss.hpp"
#include "cavity/tdist_loss.hpp"
#include "cavity/volume.hpp"

namespace cavity {

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

// Bias-corrected Adam update, in place.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr);

// Defaults are the weak-label training rates; recovery() holds the settings
// used for the direct delta fit.
struct FitConfig {
  double lr_main = 1e-3;
  double lr_r = 1e-4;
  double lr_sigma = 1e-4;
  double lambda_smooth = 1e-4;
  SmoothReduction smooth_reduction = SmoothReduction::Sum;
  int max_iters = 500;
  int patience = 25;
  double min_delta = 1e-6;
  double threshold = 0.5;
  double focal_gamma = 2.0;
  std::uint64_t seed = 0;

  void validate() const;

  // lr_main 0.1: delta starts at 0.5 and must saturate towards 1 within
  // max_iters, which 1e-3 steps on the logits cannot do.
  static FitConfig recovery() {
    FitConfig c;
    c.lr_main = 0.1;
    return c;
  }
};

// Running-best tracker shared by the fitting loops. `observe` records the
// value and returns true once `patience` consecutive iterates failed to
// improve the best by at least `min_delta`.
class EarlyStopping {
 public:
  EarlyStopping(int patience, double min_delta) : patience_(patience), min_delta_(min_delta) {}

  bool observe(double value, int iter);
  double best() const { return best_; }
  int best_iter() const { return best_iter_; }
  bool improved_last() const { return improved_last_; }

 private:
  int patience_;
  double min_delta_;
  double best_ = 0.0;
  int best_iter_ = -1;
  int stale_ = 0;
  bool improved_last_ = false;
};

struct DeltaFit {
  Volume delta;  // best iterate
  std::vector<double> loss_trace;
  int achieved_M = 0;
  int best_iter = -1;
};

// Objective of the self-supervised recovery: similarity of preop * delta to
// postop plus lambda * smoothness of delta, as a function of the delta
// logits z (delta = logistic(z)). Exposed for gradient checking.
class DeltaObjective {
 public:
  DeltaObjective(const Volume& preop, const Volume& postop, const SsimParams& ssim, const FitConfig& cfg);

  struct Value {
    double total = 0.0;
    double similarity = 0.0;
    double smooth = 0.0;
    std::vector<double> grad;  // w.r.t. logits
  };
  Value evaluate(std::span<const double> logits, bool with_grad) const;

  int achieved_M() const { return sim_.achieved_M(); }
  const Dims& dims() const { return preop_.dims(); }

 private:
  Volume preop_;
  MultiScaleSimilarity sim_;
  double lambda_;
  SmoothReduction reduction_;
};

DeltaFit fit_delta(const Volume& preop, const Volume& postop, const SsimParams& ssim, const FitConfig& cfg);

// Removed region: voxel set iff (1 - delta) > threshold.
BinaryMask predict_mask(const Volume& delta, double threshold);

struct LinearPredictor {
  std::vector<double> weights;
  double bias = 0.0;

  explicit LinearPredictor(std::size_t channels = 0) : weights(channels, 0.0) {}
  std::size_t parameter_count() const { return weights.size() + 1; }

  // logistic(w . features + b) per voxel.
  Volume predict(const std::vector<Volume>& features) const;
};

struct WeakFit {
  LinearPredictor predictor;
  std::vector<double> loss_trace;
  TDistParams tparams;  // final values; unchanged for baseline losses
  int best_iter = -1;
};

// Zero-mean, unit-variance copies of each channel (constant channels are
// only centred).
std::vector<Volume> standardize_features(const std::vector<Volume>& features);

WeakFit fit_weak(const std::vector<Volume>& features, const BinaryMask& weak_label, LossKind kind,
                 const TDistParams& tparams, const FitConfig& cfg);

// Value and gradient of the chosen loss with respect to predictor and
// t-distribution parameters, packed as [weights..., bias, rho_r, s...].
struct WeakObjectiveValue {
  double loss = 0.0;
  std::vector<double> grad;
};
WeakObjectiveValue weak_objective(const std::vector<Volume>& features, const BinaryMask& label, LossKind kind,
                                  const LinearPredictor& predictor, const TDistParams& tparams,
                                  double focal_gamma, bool with_grad);

}  // namespace cavity
