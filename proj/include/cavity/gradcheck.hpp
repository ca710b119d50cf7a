#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cavity/volume.hpp"

namespace cavity {

// Relative error |a - f| / max(|a|, |f|, floor); the floor keeps coordinates
// whose true derivative is ~0 from dominating the table.
double relative_error(double analytic, double numeric, double floor = 1e-8);

// Central difference (f(x + h e_i) - f(x - h e_i)) / 2h.
double central_difference(const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
                          std::size_t i, double h);

struct GradcheckRow {
  std::string suite;
  int seeds = 0;
  int coords_per_seed = 0;
  double step = 0.0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct GradcheckOptions {
  int seeds = 5;
  int coords = 20;
  std::uint64_t seed = 0;
};

// Runs every finite-difference suite: the multi-scale similarity in each
// SCC placement, the smoothness penalty, the Student-t NLL in each mode,
// every baseline loss and the full recovery objective.
std::vector<GradcheckRow> run_gradchecks(const GradcheckOptions& opts = {});

Volume random_volume(const Dims& d, std::uint64_t seed, double lo = 0.0, double hi = 1.0);

}  // namespace cavity
