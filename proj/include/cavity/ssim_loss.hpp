#pragma once

#include <string>
#include <vector>

#include "cavity/multiscale.hpp"
#include "cavity/volume.hpp"

namespace cavity {

// Where the squared cross-correlation term is attached in the multi-scale
// product: the contrast factor (default), the structure factor, or nowhere
// (plain MS-SSIM).
enum class SccPlacement { Contrast, Structure, None };

std::string to_string(SccPlacement p);
SccPlacement parse_scc_placement(const std::string& s);

struct SsimParams {
  int M = 5;
  double alpha_M = 0.1333;
  std::vector<double> beta{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  std::vector<double> gamma{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  double C1 = 0.01 * 0.01;
  double C2 = 0.03 * 0.03;
  double C3 = 0.03 * 0.03 / 2.0;
  GaussianKernel1D window = gaussian_kernel(1.5, 5);
  double power_floor = 1e-6;
  SccPlacement scc = SccPlacement::Contrast;

  // Throws std::invalid_argument when an invariant is violated.
  void validate() const;
};

struct SsimMaps {
  Volume l;
  Volume c;
  Volume s;
};

SsimMaps ssim_components(const Volume& x, const Volume& y, const SsimParams& p);

// Squared Pearson correlation; 0 when either centered sum of squares < 1e-12.
double scc(const Volume& x, const Volume& y);

struct SsimLoss {
  double loss = 0.0;
  int achieved_M = 0;
};

// Per-scale factors of the multi-scale product, finest first.
struct ScaleTerms {
  double l = 0.0;
  double c = 0.0;
  double s = 0.0;
  double scc = 0.0;
};

struct SsimEvaluation {
  double loss = 0.0;
  int achieved_M = 0;
  std::vector<ScaleTerms> scales;
  Volume grad;  // empty unless requested
};

// Multi-scale similarity against a fixed target. The target's pyramid and
// windowed moments are computed once, so repeated evaluations (as in an
// optimization loop) only pay for the moving argument.
class MultiScaleSimilarity {
 public:
  MultiScaleSimilarity(Volume target, SsimParams params);

  SsimEvaluation evaluate(const Volume& x, bool with_grad) const;

  int achieved_M() const { return static_cast<int>(levels_.size()); }
  const SsimParams& params() const { return params_; }

  // Exponents actually applied after truncation to the achieved scales.
  const std::vector<double>& effective_beta() const { return beta_; }
  const std::vector<double>& effective_gamma() const { return gamma_; }
  double effective_alpha() const { return alpha_; }

 private:
  struct TargetLevel {
    Volume y;
    std::vector<double> mu;
    std::vector<double> var;    // floored, includes kVarianceEps
    std::vector<double> sigma;  // sqrt(var)
    double mean = 0.0;
    double centered_ss = 0.0;
  };

  SsimParams params_;
  std::vector<TargetLevel> levels_;
  std::vector<double> beta_;
  std::vector<double> gamma_;
  double alpha_ = 0.0;
};

// Variance regularizer inside the square root of the windowed deviations;
// keeps the contrast and structure terms differentiable on flat patches.
inline constexpr double kVarianceEps = 1e-13;

SsimLoss msssim_cscc_loss(const Volume& x, const Volume& y, const SsimParams& p);

// Gradient of msssim_cscc_loss with respect to x.
Volume msssim_cscc_grad(const Volume& x, const Volume& y, const SsimParams& p);

}  // namespace cavity
