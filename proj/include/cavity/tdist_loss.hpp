#pragma once

#include <string>
#include <vector>

#include "cavity/volume.hpp"

namespace cavity {

double softplus(double x);
double softplus_inverse(double y);
double logistic(double x);

enum class TDistMode {
  PerVoxel,  // one-dimensional Student-t per voxel, NLL averaged over voxels
  Joint,     // the whole volume as a single D'-dimensional sample
};

std::string to_string(TDistMode m);
TDistMode parse_tdist_mode(const std::string& s);

// Learnable Student-t parameters in unconstrained form:
//   r        = softplus(rho_r) + eps
//   sigma2_i = softplus(s_i) + eps
// `s` holds either one shared entry or one entry per voxel.
struct TDistParams {
  double rho_r = 0.0;
  std::vector<double> s;
  double eps = 1e-8;
  TDistMode mode = TDistMode::PerVoxel;

  // r = 1 and unit variance, as the loss is initialized in training.
  static TDistParams initial(TDistMode mode = TDistMode::PerVoxel, std::size_t voxels = 0,
                             double r = 1.0, double sigma2 = 1.0);

  double r() const { return softplus(rho_r) + eps; }
  double sigma2(std::size_t i) const { return softplus(s.size() == 1 ? s[0] : s[i]) + eps; }
  bool shared_scale() const { return s.size() == 1; }
};

// delta = K - prediction, voxelwise.
struct Residual {
  Volume values;
};

Residual make_residual(const BinaryMask& label, const Volume& prediction);

double tdist_nll(const Residual& res, const TDistParams& p);

struct TDistGrad {
  Volume d_res;
  double d_rho_r = 0.0;
  std::vector<double> d_s;  // same length as TDistParams::s
};

TDistGrad tdist_grad(const Residual& res, const TDistParams& p);

enum class LossKind { TD, CE, BCE, Focal, MSE, MAE };

std::string to_string(LossKind k);
LossKind parse_loss_kind(const std::string& s);

inline constexpr double kProbClamp = 1e-7;

// Voxel-mean baseline losses on probabilities; TD is rejected here. For a
// single-channel binary label CE and BCE are the same quantity.
double baseline_loss(LossKind kind, const Volume& pred, const BinaryMask& label, double focal_gamma = 2.0);
Volume baseline_loss_grad(LossKind kind, const Volume& pred, const BinaryMask& label, double focal_gamma = 2.0);

}  // namespace cavity
