#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "cavity/volume.hpp"

namespace cavity {

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
};

ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt);

// Empty-set conventions: dice and iou are 1 when both masks are empty and 0
// when exactly one is; precision, sensitivity and specificity are 0 on an
// empty denominator.
struct OverlapMetrics {
  double dice = 0.0;
  double iou = 0.0;
  double acc = 0.0;
  double precision = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
};

OverlapMetrics overlap_metrics(const BinaryMask& pred, const BinaryMask& gt);

struct SurfacePointSet {
  std::vector<std::size_t> voxels;              // linear indices
  std::vector<std::array<double, 3>> points;    // index * spacing
};

// Mask voxels with at least one background 6-neighbour; the volume boundary
// counts as background.
SurfacePointSet surface_points(const BinaryMask& mask, const Spacing& spacing);

class MetricUndefined : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

enum class DistanceMethod {
  Auto,               // brute force up to kBruteForceLimit points, else distance transform
  BruteForce,
  DistanceTransform,
};

inline constexpr std::size_t kBruteForceLimit = 5000;

// Nearest-neighbour Euclidean distance from each surface point of `from` to
// the surface of `to`.
std::vector<double> directed_surface_distances(const BinaryMask& from, const BinaryMask& to, const Spacing& spacing,
                                               DistanceMethod method = DistanceMethod::Auto);

// Nearest-rank percentile (1-based rank ceil(q * n)) of an unsorted sample.
double nearest_rank_percentile(std::vector<double> values, double q);

// Max over both directions of the 95th nearest-rank percentile of surface
// distances. Throws MetricUndefined if either mask is empty.
double hd95(const BinaryMask& pred, const BinaryMask& gt, const Spacing& spacing,
            DistanceMethod method = DistanceMethod::Auto);

// Mean of the two directed mean surface distances.
double asd(const BinaryMask& pred, const BinaryMask& gt, const Spacing& spacing,
           DistanceMethod method = DistanceMethod::Auto);

struct WilcoxonResult {
  double signed_rank_sum = 0.0;  // sum of sign(d_i) * rank_i
  double w_plus = 0.0;
  int n_effective = 0;           // nonzero differences
  double p_two_sided = 1.0;
  bool exact = true;
};

inline constexpr int kWilcoxonExactLimit = 25;

// Paired signed-rank test on a - b. Zero differences are dropped, ties get
// mid-ranks. Exact null distribution for n_effective <= 25, otherwise the
// tie-corrected normal approximation. Throws MetricUndefined when every
// difference is zero.
WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b);

// Mid-ranks of |d| over the given nonzero differences (1-based).
std::vector<double> signed_rank_midranks(const std::vector<double>& nonzero_diffs);

}  // namespace cavity
