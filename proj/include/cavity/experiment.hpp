#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "cavity/metrics.hpp"
#include "cavity/optim.hpp"
#include "cavity/phantom.hpp"
#include "cavity/ssim_loss.hpp"
#include "cavity/tdist_loss.hpp"

namespace cavity {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

// Malformed JSON, unknown keys, type mismatches and invalid values. The
// message names the offending key path.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NormalizeConfig {
  double lo_pct = 0.5;
  double hi_pct = 99.5;
};

struct TDistConfig {
  TDistMode mode = TDistMode::PerVoxel;
  double r_init = 1.0;
  double sigma2_init = 1.0;
  bool diagonal = true;  // one learnable scale per voxel, else one shared
};

struct AblateConfig {
  std::vector<LossKind> losses{LossKind::TD, LossKind::CE, LossKind::BCE,
                               LossKind::Focal, LossKind::MSE, LossKind::MAE};
  std::vector<SccPlacement> similarity{SccPlacement::Contrast, SccPlacement::Structure, SccPlacement::None};
};

struct EvalConfig {
  std::string pred;
  std::string gt;
};

struct ReportConfig {
  std::vector<std::string> inputs;  // metrics.csv files or directories holding one
};

struct GradcheckConfig {
  int seeds = 5;
  int coords = 20;
};

// Everything a command reads. Per-case seeds are not configured directly:
// case k uses case_seed(seed, k) for its phantom and substreams of that for
// the label corruption.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  int cases = 10;
  std::string out = "cavitylab_out";

  PhantomSpec phantom;
  bool noiseless = false;
  NormalizeConfig normalize;
  CorruptionSpec corruption;
  FitConfig fit = FitConfig::recovery();
  FitConfig weak;
  SsimParams ssim;
  TDistConfig tdist;
  AblateConfig ablate;
  EvalConfig eval;
  ReportConfig report;
  GradcheckConfig gradcheck;

  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);

// Strict: unknown keys and wrong types raise ConfigError; missing keys keep
// their defaults.
ExperimentConfig config_from_json(const nlohmann::json& j);

// "a.b.c=value"; value is parsed as JSON when possible, else taken as a
// string.
void apply_override(nlohmann::json& j, const std::string& assignment);

ExperimentConfig resolve_config(const std::optional<std::filesystem::path>& config_path,
                                const std::vector<std::string>& overrides,
                                const std::optional<std::uint64_t>& seed,
                                const std::optional<std::string>& out);

// One case of a batch, regenerated from the global seed.
struct CaseData {
  int index = 0;
  std::uint64_t seed = 0;
  PhantomPair pair;
  Volume preop;   // normalized
  Volume postop;  // normalized
};

CaseData make_case(const ExperimentConfig& cfg, int index);

struct MetricsRow {
  int case_index = 0;
  OverlapMetrics overlap;
  double hd95 = 0.0;  // NaN when undefined
  double asd = 0.0;
  std::optional<int> achieved_M;
  std::string status = "ok";
};

MetricsRow evaluate_masks(const BinaryMask& pred, const BinaryMask& gt, int case_index,
                          std::optional<int> achieved_M = std::nullopt);

struct RecoveryResult {
  DeltaFit fit;
  BinaryMask mask;
  MetricsRow row;
};

RecoveryResult run_recovery(const CaseData& c, const FitConfig& fit, const SsimParams& ssim);

// Standardized voxel features of the preop scan followed by the postop scan.
std::vector<Volume> weak_features(const Volume& preop, const Volume& postop);

BinaryMask weak_label(const ExperimentConfig& cfg, const CaseData& c);

struct WeakResult {
  WeakFit fit;
  BinaryMask mask;
  MetricsRow row;
};

WeakResult run_weak(const ExperimentConfig& cfg, const CaseData& c, const std::vector<Volume>& features,
                    const BinaryMask& label, LossKind kind);

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single value
  std::size_t n = 0; // finite values only
};

MetricSummary summarize(const std::vector<double>& values);

inline const std::vector<std::string>& metric_columns() {
  static const std::vector<std::string> cols{"dice", "iou", "acc", "precision", "sensitivity",
                                             "specificity", "hd95", "asd"};
  return cols;
}

double metric_value(const MetricsRow& row, const std::string& name);

void write_metrics_csv(const std::filesystem::path& path, std::vector<MetricsRow> rows);
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

// Runs one of phantom, fit, ablate, gradcheck, eval, report. Progress goes
// to `log`. Returns an exit code; never throws.
int run_command(const std::string& command, const ExperimentConfig& cfg, std::ostream& log);

const std::vector<std::string>& command_names();

}  // namespace cavity
