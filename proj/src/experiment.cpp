#include "cavity/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "cavity/gradcheck.hpp"
#include "cavity/random.hpp"

namespace cavity {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// ---- strict JSON reading -------------------------------------------------

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError((path_.empty() ? "config" : path_) + ": expected an object");
  }

  std::string key_path(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }

  const json* find(const std::string& k) {
    auto it = j_.find(k);
    if (it == j_.end()) return nullptr;
    used_.insert(k);
    return &*it;
  }

  void number(const std::string& k, double& out) {
    if (const json* v = find(k)) {
      if (!v->is_number()) mismatch(k, "number", *v);
      out = v->get<double>();
    }
  }

  void integer(const std::string& k, int& out) {
    if (const json* v = find(k)) {
      if (!v->is_number_integer()) mismatch(k, "integer", *v);
      const auto x = v->get<long long>();
      if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
        throw ConfigError(key_path(k) + ": integer out of range");
      }
      out = static_cast<int>(x);
    }
  }

  void unsigned64(const std::string& k, std::uint64_t& out) {
    if (const json* v = find(k)) {
      if (!v->is_number_unsigned()) mismatch(k, "non-negative integer", *v);
      out = v->get<std::uint64_t>();
    }
  }

  void boolean(const std::string& k, bool& out) {
    if (const json* v = find(k)) {
      if (!v->is_boolean()) mismatch(k, "boolean", *v);
      out = v->get<bool>();
    }
  }

  void string(const std::string& k, std::string& out) {
    if (const json* v = find(k)) {
      if (!v->is_string()) mismatch(k, "string", *v);
      out = v->get<std::string>();
    }
  }

  // String parsed by `parse`; its std::invalid_argument becomes a ConfigError.
  template <typename T, typename Parse>
  void choice(const std::string& k, T& out, Parse parse) {
    std::string s;
    if (!j_.contains(k)) return;
    string(k, s);
    try {
      out = parse(s);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(key_path(k) + ": " + e.what());
    }
  }

  template <typename T, typename Parse>
  void choice_list(const std::string& k, std::vector<T>& out, Parse parse) {
    if (const json* v = find(k)) {
      if (!v->is_array()) mismatch(k, "array of strings", *v);
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        const json& e = (*v)[i];
        const std::string where = key_path(k) + "[" + std::to_string(i) + "]";
        if (!e.is_string()) throw ConfigError(where + ": expected string, got " + e.type_name());
        try {
          out.push_back(parse(e.get<std::string>()));
        } catch (const std::invalid_argument& ex) {
          throw ConfigError(where + ": " + ex.what());
        }
      }
    }
  }

  void number_list(const std::string& k, std::vector<double>& out) {
    if (const json* v = find(k)) {
      if (!v->is_array()) mismatch(k, "array of numbers", *v);
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        if (!(*v)[i].is_number()) {
          throw ConfigError(key_path(k) + "[" + std::to_string(i) + "]: expected number, got " + (*v)[i].type_name());
        }
        out.push_back((*v)[i].get<double>());
      }
    }
  }

  Reader section(const std::string& k) {
    const json* v = find(k);
    static const json empty = json::object();
    return Reader(v ? *v : empty, key_path(k));
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!used_.count(item.key())) throw ConfigError("unknown key '" + key_path(item.key()) + "'");
    }
  }

 private:
  [[noreturn]] void mismatch(const std::string& k, const char* expected, const json& v) const {
    throw ConfigError(key_path(k) + ": expected " + expected + ", got " + v.type_name());
  }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

std::string to_string(SmoothReduction r) { return r == SmoothReduction::Sum ? "sum" : "mean_per_voxel"; }

SmoothReduction parse_smooth_reduction(const std::string& s) {
  if (s == "sum") return SmoothReduction::Sum;
  if (s == "mean_per_voxel") return SmoothReduction::MeanPerVoxel;
  throw std::invalid_argument("unknown smooth reduction '" + s + "' (expected sum|mean_per_voxel)");
}

json phantom_json(const PhantomSpec& p) {
  return json{{"dims", {p.dims.x, p.dims.y, p.dims.z}},
              {"bone_level", p.bone_level},
              {"tissue_level", p.tissue_level},
              {"air_cell_count", p.air_cell_count},
              {"air_cell_radius_min", p.air_cell_radius_min},
              {"air_cell_radius_max", p.air_cell_radius_max},
              {"air_level", p.air_level},
              {"cavity_steps_min", p.cavity_steps_min},
              {"cavity_steps_max", p.cavity_steps_max},
              {"cavity_radius_min", p.cavity_radius_min},
              {"cavity_radius_max", p.cavity_radius_max},
              {"cavity_fill_level", p.cavity_fill_level},
              {"noise_sigma", p.noise_sigma},
              {"streak_count", p.streak_count},
              {"streak_level", p.streak_level},
              {"streak_width", p.streak_width},
              {"bias_amplitude", p.bias_amplitude}};
}

void read_phantom(Reader r, PhantomSpec& p) {
  if (const json* v = r.find("dims")) {
    if (!v->is_array() || v->size() != 3) throw ConfigError(r.key_path("dims") + ": expected [x, y, z]");
    std::size_t d[3];
    for (int i = 0; i < 3; ++i) {
      if (!(*v)[i].is_number_unsigned()) {
        throw ConfigError(r.key_path("dims") + "[" + std::to_string(i) + "]: expected non-negative integer, got " +
                          (*v)[i].type_name());
      }
      d[i] = (*v)[i].get<std::size_t>();
    }
    p.dims = {d[0], d[1], d[2]};
  }
  r.number("bone_level", p.bone_level);
  r.number("tissue_level", p.tissue_level);
  r.integer("air_cell_count", p.air_cell_count);
  r.number("air_cell_radius_min", p.air_cell_radius_min);
  r.number("air_cell_radius_max", p.air_cell_radius_max);
  r.number("air_level", p.air_level);
  r.integer("cavity_steps_min", p.cavity_steps_min);
  r.integer("cavity_steps_max", p.cavity_steps_max);
  r.number("cavity_radius_min", p.cavity_radius_min);
  r.number("cavity_radius_max", p.cavity_radius_max);
  r.number("cavity_fill_level", p.cavity_fill_level);
  r.number("noise_sigma", p.noise_sigma);
  r.integer("streak_count", p.streak_count);
  r.number("streak_level", p.streak_level);
  r.number("streak_width", p.streak_width);
  r.number("bias_amplitude", p.bias_amplitude);
  r.finish();
}

json fit_json(const FitConfig& f) {
  return json{{"lr_main", f.lr_main},
              {"lr_r", f.lr_r},
              {"lr_sigma", f.lr_sigma},
              {"lambda_smooth", f.lambda_smooth},
              {"smooth_reduction", to_string(f.smooth_reduction)},
              {"max_iters", f.max_iters},
              {"patience", f.patience},
              {"min_delta", f.min_delta},
              {"threshold", f.threshold},
              {"focal_gamma", f.focal_gamma}};
}

void read_fit(Reader r, FitConfig& f) {
  r.number("lr_main", f.lr_main);
  r.number("lr_r", f.lr_r);
  r.number("lr_sigma", f.lr_sigma);
  r.number("lambda_smooth", f.lambda_smooth);
  r.choice("smooth_reduction", f.smooth_reduction, parse_smooth_reduction);
  r.integer("max_iters", f.max_iters);
  r.integer("patience", f.patience);
  r.number("min_delta", f.min_delta);
  r.number("threshold", f.threshold);
  r.number("focal_gamma", f.focal_gamma);
  r.finish();
}

json ssim_json(const SsimParams& s) {
  return json{{"M", s.M},
              {"alpha_M", s.alpha_M},
              {"beta", s.beta},
              {"gamma", s.gamma},
              {"C1", s.C1},
              {"C2", s.C2},
              {"C3", s.C3},
              {"window_sigma", s.window.sigma},
              {"window_radius", s.window.radius},
              {"power_floor", s.power_floor},
              {"scc", to_string(s.scc)}};
}

void read_ssim(Reader r, SsimParams& s) {
  r.integer("M", s.M);
  r.number("alpha_M", s.alpha_M);
  r.number_list("beta", s.beta);
  r.number_list("gamma", s.gamma);
  r.number("C1", s.C1);
  r.number("C2", s.C2);
  r.number("C3", s.C3);
  double sigma = s.window.sigma;
  int radius = s.window.radius;
  r.number("window_sigma", sigma);
  r.integer("window_radius", radius);
  try {
    s.window = gaussian_kernel(sigma, radius);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(r.key_path("window_sigma") + ": " + e.what());
  }
  r.number("power_floor", s.power_floor);
  r.choice("scc", s.scc, parse_scc_placement);
  r.finish();
}

}  // namespace

json to_json(const ExperimentConfig& c) {
  json losses = json::array(), similarity = json::array();
  for (auto k : c.ablate.losses) losses.push_back(to_string(k));
  for (auto s : c.ablate.similarity) similarity.push_back(to_string(s));
  return json{
      {"seed", c.seed},
      {"cases", c.cases},
      {"out", c.out},
      {"noiseless", c.noiseless},
      {"phantom", phantom_json(c.phantom)},
      {"normalize", {{"lo_pct", c.normalize.lo_pct}, {"hi_pct", c.normalize.hi_pct}}},
      {"corruption",
       {{"morph_radius", c.corruption.morph_radius ? json(*c.corruption.morph_radius) : json(nullptr)},
        {"flip_rate", c.corruption.flip_rate},
        {"blob_count", c.corruption.blob_count},
        {"blob_radius", c.corruption.blob_radius}}},
      {"fit", fit_json(c.fit)},
      {"weak", fit_json(c.weak)},
      {"ssim", ssim_json(c.ssim)},
      {"tdist",
       {{"mode", to_string(c.tdist.mode)},
        {"r_init", c.tdist.r_init},
        {"sigma2_init", c.tdist.sigma2_init},
        {"scale", c.tdist.diagonal ? "diagonal" : "shared"}}},
      {"ablate", {{"losses", losses}, {"similarity", similarity}}},
      {"eval", {{"pred", c.eval.pred}, {"gt", c.eval.gt}}},
      {"report", {{"inputs", c.report.inputs}}},
      {"gradcheck", {{"seeds", c.gradcheck.seeds}, {"coords", c.gradcheck.coords}}},
  };
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  Reader r(j, "");
  r.unsigned64("seed", c.seed);
  r.integer("cases", c.cases);
  r.string("out", c.out);
  r.boolean("noiseless", c.noiseless);
  read_phantom(r.section("phantom"), c.phantom);
  {
    Reader n = r.section("normalize");
    n.number("lo_pct", c.normalize.lo_pct);
    n.number("hi_pct", c.normalize.hi_pct);
    n.finish();
  }
  {
    Reader k = r.section("corruption");
    if (const json* v = k.find("morph_radius")) {
      if (v->is_null()) {
        c.corruption.morph_radius.reset();
      } else if (v->is_number_integer()) {
        c.corruption.morph_radius = v->get<int>();
      } else {
        throw ConfigError(k.key_path("morph_radius") + ": expected integer or null, got " + v->type_name());
      }
    }
    k.number("flip_rate", c.corruption.flip_rate);
    k.integer("blob_count", c.corruption.blob_count);
    k.number("blob_radius", c.corruption.blob_radius);
    k.finish();
  }
  read_fit(r.section("fit"), c.fit);
  read_fit(r.section("weak"), c.weak);
  read_ssim(r.section("ssim"), c.ssim);
  {
    Reader t = r.section("tdist");
    t.choice("mode", c.tdist.mode, parse_tdist_mode);
    t.number("r_init", c.tdist.r_init);
    t.number("sigma2_init", c.tdist.sigma2_init);
    t.choice("scale", c.tdist.diagonal, [](const std::string& s) {
      if (s == "diagonal") return true;
      if (s == "shared") return false;
      throw std::invalid_argument("unknown scale '" + s + "' (expected diagonal|shared)");
    });
    t.finish();
  }
  {
    Reader a = r.section("ablate");
    a.choice_list("losses", c.ablate.losses, parse_loss_kind);
    a.choice_list("similarity", c.ablate.similarity, parse_scc_placement);
    a.finish();
  }
  {
    Reader e = r.section("eval");
    e.string("pred", c.eval.pred);
    e.string("gt", c.eval.gt);
    e.finish();
  }
  {
    Reader p = r.section("report");
    if (const json* v = p.find("inputs")) {
      if (!v->is_array()) throw ConfigError(p.key_path("inputs") + ": expected array of strings, got " + v->type_name());
      c.report.inputs.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        if (!(*v)[i].is_string()) {
          throw ConfigError(p.key_path("inputs") + "[" + std::to_string(i) + "]: expected string, got " +
                            (*v)[i].type_name());
        }
        c.report.inputs.push_back((*v)[i].get<std::string>());
      }
    }
    p.finish();
  }
  {
    Reader g = r.section("gradcheck");
    g.integer("seeds", c.gradcheck.seeds);
    g.integer("coords", c.gradcheck.coords);
    g.finish();
  }
  r.finish();
  return c;
}

void ExperimentConfig::validate() const {
  auto check = [](auto&& f, const char* section) {
    try {
      f();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string(section) + ": " + e.what());
    }
  };
  if (cases < 1) throw ConfigError("cases: must be >= 1");
  check([&] { phantom.validate(); }, "phantom");
  check([&] { corruption.validate(); }, "corruption");
  check([&] { fit.validate(); }, "fit");
  check([&] { weak.validate(); }, "weak");
  check([&] { ssim.validate(); }, "ssim");
  if (!(normalize.lo_pct >= 0 && normalize.lo_pct < normalize.hi_pct && normalize.hi_pct <= 100)) {
    throw ConfigError("normalize: need 0 <= lo_pct < hi_pct <= 100");
  }
  if (!(tdist.r_init > 0) || !(tdist.sigma2_init > 0)) throw ConfigError("tdist: r_init and sigma2_init must be > 0");
  if (gradcheck.seeds < 1 || gradcheck.coords < 1) throw ConfigError("gradcheck: seeds and coords must be >= 1");
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }

  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override '" + assignment + "' has an empty key segment");
    if (!node->is_object()) throw ConfigError("override '" + key + "': '" + part + "' is below a non-object value");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

ExperimentConfig resolve_config(const std::optional<fs::path>& config_path, const std::vector<std::string>& overrides,
                                const std::optional<std::uint64_t>& seed, const std::optional<std::string>& out) {
  json j = json::object();
  if (config_path) {
    std::ifstream in(*config_path);
    if (!in) throw ConfigError("cannot read config file " + config_path->string());
    std::stringstream ss;
    ss << in.rdbuf();
    try {
      j = json::parse(ss.str());
    } catch (const json::parse_error& e) {
      throw ConfigError("malformed JSON in " + config_path->string() + ": " + e.what());
    }
  }
  for (const auto& o : overrides) apply_override(j, o);
  if (seed) j["seed"] = *seed;
  if (out) j["out"] = *out;
  ExperimentConfig cfg = config_from_json(j);
  cfg.validate();
  return cfg;
}

// ---- cases and metrics ----------------------------------------------------

CaseData make_case(const ExperimentConfig& cfg, int index) {
  CaseData c;
  c.index = index;
  c.seed = case_seed(cfg.seed, static_cast<std::uint64_t>(index));
  PhantomSpec spec = cfg.noiseless ? cfg.phantom.noiseless() : cfg.phantom;
  spec.seed = c.seed;
  c.pair = generate_phantom(spec);
  c.preop = normalize_intensity(c.pair.preop, cfg.normalize.lo_pct, cfg.normalize.hi_pct).volume;
  c.postop = normalize_intensity(c.pair.postop, cfg.normalize.lo_pct, cfg.normalize.hi_pct).volume;
  return c;
}

MetricsRow evaluate_masks(const BinaryMask& pred, const BinaryMask& gt, int case_index, std::optional<int> achieved_M) {
  MetricsRow row;
  row.case_index = case_index;
  row.achieved_M = achieved_M;
  row.overlap = overlap_metrics(pred, gt);
  const bool pe = pred.count() == 0, ge = gt.count() == 0;
  if (pe || ge) {
    row.hd95 = row.asd = std::numeric_limits<double>::quiet_NaN();
    row.status = pe && ge ? "empty_masks" : (pe ? "empty_prediction" : "empty_ground_truth");
    return row;
  }
  row.hd95 = hd95(pred, gt, gt.spacing());
  row.asd = asd(pred, gt, gt.spacing());
  return row;
}

RecoveryResult run_recovery(const CaseData& c, const FitConfig& fit, const SsimParams& ssim) {
  FitConfig f = fit;
  f.seed = c.seed;
  RecoveryResult r;
  r.fit = fit_delta(c.preop, c.postop, ssim, f);
  r.mask = predict_mask(r.fit.delta, f.threshold);
  r.row = evaluate_masks(r.mask, c.pair.gt_mask, c.index, r.fit.achieved_M);
  return r;
}

std::vector<Volume> weak_features(const Volume& preop, const Volume& postop) {
  auto f = voxel_features(preop);
  auto g = voxel_features(postop);
  f.insert(f.end(), std::make_move_iterator(g.begin()), std::make_move_iterator(g.end()));
  return standardize_features(f);
}

BinaryMask weak_label(const ExperimentConfig& cfg, const CaseData& c) {
  CorruptionSpec spec = cfg.corruption;
  spec.seed = derive_seed(c.seed, stream_tag("corruption"));
  return corrupt_mask(c.pair.gt_mask, spec);
}

WeakResult run_weak(const ExperimentConfig& cfg, const CaseData& c, const std::vector<Volume>& features,
                    const BinaryMask& label, LossKind kind) {
  const TDistParams init = TDistParams::initial(cfg.tdist.mode, cfg.tdist.diagonal ? label.size() : 0,
                                                cfg.tdist.r_init, cfg.tdist.sigma2_init);
  FitConfig w = cfg.weak;
  w.seed = c.seed;
  WeakResult r;
  r.fit = fit_weak(features, label, kind, init, w);
  r.mask = binarize(r.fit.predictor.predict(features), w.threshold);
  r.row = evaluate_masks(r.mask, c.pair.gt_mask, c.index);
  return r;
}

MetricSummary summarize(const std::vector<double>& values) {
  MetricSummary s;
  double sum = 0.0;
  for (double v : values) {
    if (std::isfinite(v)) {
      sum += v;
      ++s.n;
    }
  }
  if (s.n == 0) {
    s.mean = s.std = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  s.mean = sum / static_cast<double>(s.n);
  if (s.n > 1) {
    double ss = 0.0;
    for (double v : values)
      if (std::isfinite(v)) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(s.n - 1));
  }
  return s;
}

double metric_value(const MetricsRow& row, const std::string& name) {
  const auto& o = row.overlap;
  if (name == "dice") return o.dice;
  if (name == "iou") return o.iou;
  if (name == "acc") return o.acc;
  if (name == "precision") return o.precision;
  if (name == "sensitivity") return o.sensitivity;
  if (name == "specificity") return o.specificity;
  if (name == "hd95") return row.hd95;
  if (name == "asd") return row.asd;
  throw std::invalid_argument("unknown metric '" + name + "'");
}

namespace {

constexpr const char* kMetricsHeader =
    "case,dice,iou,acc,precision,sensitivity,specificity,hd95,asd,achieved_M,status";

// Round-trip precision, so re-runs can be compared exactly.
std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_pm(const MetricSummary& s) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f ± %.3f", s.mean, s.std);
  return buf;
}

json summary_json(const std::vector<MetricsRow>& rows) {
  json metrics = json::object();
  for (const auto& name : metric_columns()) {
    std::vector<double> v;
    for (const auto& r : rows) v.push_back(metric_value(r, name));
    const auto s = summarize(v);
    if (s.n == 0) {
      metrics[name] = {{"mean", nullptr}, {"std", nullptr}, {"n", 0}, {"text", "n/a"}};
    } else {
      metrics[name] = {{"mean", s.mean}, {"std", s.std}, {"n", s.n}, {"text", fmt_pm(s)}};
    }
  }
  std::size_t ok = 0;
  for (const auto& r : rows) ok += r.status == "ok" ? 1 : 0;
  return json{{"rows", rows.size()}, {"rows_ok", ok}, {"metrics", metrics}};
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, const fs::path& path) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw std::runtime_error(path.string() + ": bad number '" + s + "'");
  return v;
}

}  // namespace

void write_metrics_csv(const fs::path& path, std::vector<MetricsRow> rows) {
  std::stable_sort(rows.begin(), rows.end(),
                   [](const MetricsRow& a, const MetricsRow& b) { return a.case_index < b.case_index; });
  std::string text = std::string(kMetricsHeader) + "\n";
  for (const auto& r : rows) {
    const auto& o = r.overlap;
    text += std::to_string(r.case_index) + "," + fmt(o.dice) + "," + fmt(o.iou) + "," + fmt(o.acc) + "," +
            fmt(o.precision) + "," + fmt(o.sensitivity) + "," + fmt(o.specificity) + "," + fmt(r.hd95) + "," +
            fmt(r.asd) + "," + (r.achieved_M ? std::to_string(*r.achieved_M) : std::string()) + "," + r.status +
            "\n";
  }
  write_text(path, text);
}

std::vector<MetricsRow> read_metrics_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || split_csv_line(line) != split_csv_line(kMetricsHeader)) {
    throw std::runtime_error(path.string() + ": unexpected header (expected " + kMetricsHeader + ")");
  }
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (f.size() != 11) throw std::runtime_error(path.string() + ": expected 11 columns in '" + line + "'");
    MetricsRow r;
    r.case_index = static_cast<int>(parse_double(f[0], path));
    r.overlap = {parse_double(f[1], path), parse_double(f[2], path), parse_double(f[3], path),
                 parse_double(f[4], path), parse_double(f[5], path), parse_double(f[6], path)};
    r.hd95 = parse_double(f[7], path);
    r.asd = parse_double(f[8], path);
    if (!f[9].empty()) r.achieved_M = static_cast<int>(parse_double(f[9], path));
    r.status = f[10];
    rows.push_back(r);
  }
  return rows;
}

// ---- commands --------------------------------------------------------------

namespace {

std::string case_dir(int k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "case_%03d", k);
  return buf;
}

void log_row(std::ostream& log, const std::string& label, const MetricsRow& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-12s case %3d  dice %.4f  hd95 %8.3f  asd %7.3f  %s\n", label.c_str(), r.case_index,
                r.overlap.dice, r.hd95, r.asd, r.status.c_str());
  log << buf;
}

int cmd_phantom(const ExperimentConfig& cfg, std::ostream& log) {
  const fs::path out(cfg.out);
  for (int k = 0; k < cfg.cases; ++k) {
    const CaseData c = make_case(cfg, k);
    const fs::path dir = out / case_dir(k);
    fs::create_directories(dir);
    save_volume(c.pair.preop, dir / "preop.vol");
    save_volume(c.pair.postop, dir / "postop.vol");
    save_volume(c.pair.gt_mask, dir / "gt_mask.vol");
    json side = phantom_json(c.pair.spec);
    side["seed"] = c.pair.spec.seed;
    side["case"] = k;
    side["noiseless"] = cfg.noiseless;
    side["gt_voxels"] = c.pair.gt_mask.count();
    side["gt_fraction"] = static_cast<double>(c.pair.gt_mask.count()) / static_cast<double>(c.pair.gt_mask.size());
    write_json(dir / "phantom.json", side);
    log << "phantom case " << k << ": " << c.pair.gt_mask.count() << " cavity voxels\n";
  }
  return kExitOk;
}

int cmd_fit(const ExperimentConfig& cfg, std::ostream& log) {
  const fs::path out(cfg.out);
  std::vector<MetricsRow> rows;
  for (int k = 0; k < cfg.cases; ++k) {
    const CaseData c = make_case(cfg, k);
    const RecoveryResult r = run_recovery(c, cfg.fit, cfg.ssim);
    const fs::path dir = out / case_dir(k);
    fs::create_directories(dir);
    save_volume(r.fit.delta, dir / "delta.vol");
    save_volume(r.mask, dir / "mask.vol");
    save_volume(c.pair.gt_mask, dir / "gt_mask.vol");
    std::string trace = "iter,loss\n";
    for (std::size_t i = 0; i < r.fit.loss_trace.size(); ++i) trace += std::to_string(i) + "," + fmt(r.fit.loss_trace[i]) + "\n";
    write_text(dir / "loss_trace.csv", trace);
    log_row(log, "fit", r.row);
    rows.push_back(r.row);
  }
  write_metrics_csv(out / "metrics.csv", rows);
  write_json(out / "summary.json", summary_json(rows));
  return kExitOk;
}

struct PairedTest {
  std::string group, reference, other, metric;
  std::optional<WilcoxonResult> result;
  std::string status;
};

PairedTest paired_test(const std::string& group, const std::string& ref, const std::string& other,
                       const std::string& metric, const std::vector<MetricsRow>& a, const std::vector<MetricsRow>& b) {
  PairedTest t{group, ref, other, metric, std::nullopt, "ok"};
  std::vector<double> x, y;
  for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) {
    const double u = metric_value(a[i], metric), v = metric_value(b[i], metric);
    if (std::isfinite(u) && std::isfinite(v)) {
      x.push_back(u);
      y.push_back(v);
    }
  }
  if (x.empty()) {
    t.status = "no_pairs";
    return t;
  }
  try {
    t.result = wilcoxon_signed_rank(x, y);
  } catch (const MetricUndefined&) {
    t.status = "all_differences_zero";
  }
  return t;
}

int cmd_ablate(const ExperimentConfig& cfg, std::ostream& log) {
  const fs::path out(cfg.out);
  std::map<std::string, std::vector<MetricsRow>> weak_rows, sim_rows;
  for (int k = 0; k < cfg.cases; ++k) {
    const CaseData c = make_case(cfg, k);
    if (!cfg.ablate.losses.empty()) {
      const auto features = weak_features(c.preop, c.postop);
      const BinaryMask label = weak_label(cfg, c);
      for (auto kind : cfg.ablate.losses) {
        const auto r = run_weak(cfg, c, features, label, kind);
        log_row(log, "weak/" + to_string(kind), r.row);
        weak_rows[to_string(kind)].push_back(r.row);
      }
    }
    for (auto placement : cfg.ablate.similarity) {
      SsimParams p = cfg.ssim;
      p.scc = placement;
      const auto r = run_recovery(c, cfg.fit, p);
      log_row(log, "sim/" + to_string(placement), r.row);
      sim_rows[to_string(placement)].push_back(r.row);
    }
  }

  json summary = {{"weak", json::object()}, {"similarity", json::object()}, {"wilcoxon", json::array()}};
  std::string table = "group,variant,n,dice_mean,dice_std,hd95_mean,hd95_std\n";
  auto emit = [&](const std::string& group, const std::vector<std::string>& order,
                  std::map<std::string, std::vector<MetricsRow>>& rows) {
    for (const auto& name : order) {
      auto& rs = rows[name];
      write_metrics_csv(out / group / name / "metrics.csv", rs);
      std::vector<double> dice, hd;
      for (const auto& r : rs) {
        dice.push_back(r.overlap.dice);
        hd.push_back(r.hd95);
      }
      const auto sd = summarize(dice), sh = summarize(hd);
      table += group + "," + name + "," + std::to_string(rs.size()) + "," + fmt(sd.mean) + "," + fmt(sd.std) + "," +
               fmt(sh.mean) + "," + fmt(sh.std) + "\n";
      summary[group][name] = summary_json(rs);
      char buf[160];
      std::snprintf(buf, sizeof buf, "%-10s %-10s dice %s  hd95 %s\n", group.c_str(), name.c_str(), fmt_pm(sd).c_str(),
                    fmt_pm(sh).c_str());
      log << buf;
    }
  };
  std::vector<std::string> loss_names, sim_names;
  for (auto k : cfg.ablate.losses) loss_names.push_back(to_string(k));
  for (auto s : cfg.ablate.similarity) sim_names.push_back(to_string(s));
  emit("weak", loss_names, weak_rows);
  emit("similarity", sim_names, sim_rows);
  write_text(out / "ablation.csv", table);

  std::vector<PairedTest> tests;
  auto compare_all = [&](const std::string& group, const std::string& ref, const std::vector<std::string>& names,
                         std::map<std::string, std::vector<MetricsRow>>& rows) {
    if (std::find(names.begin(), names.end(), ref) == names.end()) return;
    for (const auto& other : names) {
      if (other == ref) continue;
      for (const char* metric : {"dice", "hd95"}) {
        tests.push_back(paired_test(group, ref, other, metric, rows[ref], rows[other]));
      }
    }
  };
  compare_all("weak", "TD", loss_names, weak_rows);
  compare_all("similarity", "contrast", sim_names, sim_rows);

  std::string wtext = "group,reference,other,metric,n_effective,signed_rank_sum,p_two_sided,exact,status\n";
  for (const auto& t : tests) {
    json e = {{"group", t.group}, {"reference", t.reference}, {"other", t.other}, {"metric", t.metric},
              {"status", t.status}};
    if (t.result) {
      e["n_effective"] = t.result->n_effective;
      e["signed_rank_sum"] = t.result->signed_rank_sum;
      e["p_two_sided"] = t.result->p_two_sided;
      e["exact"] = t.result->exact;
      wtext += t.group + "," + t.reference + "," + t.other + "," + t.metric + "," +
               std::to_string(t.result->n_effective) + "," + fmt(t.result->signed_rank_sum) + "," +
               fmt(t.result->p_two_sided) + "," + (t.result->exact ? "true" : "false") + "," + t.status + "\n";
    } else {
      wtext += t.group + "," + t.reference + "," + t.other + "," + t.metric + ",0,nan,nan,," + t.status + "\n";
    }
    summary["wilcoxon"].push_back(e);
  }
  write_text(out / "wilcoxon.csv", wtext);
  write_json(out / "summary.json", summary);
  return kExitOk;
}

int cmd_gradcheck(const ExperimentConfig& cfg, std::ostream& log) {
  const auto rows = run_gradchecks({cfg.gradcheck.seeds, cfg.gradcheck.coords, cfg.seed});
  std::string csv = "suite,seeds,coords_per_seed,step,max_rel_error,tolerance,pass\n";
  bool ok = true;
  for (const auto& r : rows) {
    csv += r.suite + "," + std::to_string(r.seeds) + "," + std::to_string(r.coords_per_seed) + "," + fmt(r.step) + "," +
           fmt(r.max_rel_error) + "," + fmt(r.tolerance) + "," + (r.pass ? "true" : "false") + "\n";
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-26s max rel err %.3e  tol %.0e  %s\n", r.suite.c_str(), r.max_rel_error,
                  r.tolerance, r.pass ? "ok" : "FAIL");
    log << buf;
    ok = ok && r.pass;
  }
  write_text(fs::path(cfg.out) / "gradcheck.csv", csv);
  return ok ? kExitOk : kExitValidation;
}

int cmd_eval(const ExperimentConfig& cfg, std::ostream& log) {
  if (cfg.eval.pred.empty() || cfg.eval.gt.empty()) throw ConfigError("eval: eval.pred and eval.gt are required");
  const BinaryMask pred = load_mask(cfg.eval.pred);
  const BinaryMask gt = load_mask(cfg.eval.gt);
  if (pred.dims() != gt.dims()) {
    throw ConfigError("eval: mask dims differ: " + to_string(pred.dims()) + " vs " + to_string(gt.dims()));
  }
  const MetricsRow row = evaluate_masks(pred, gt, 0);
  log_row(log, "eval", row);
  const fs::path out(cfg.out);
  write_metrics_csv(out / "metrics.csv", {row});
  write_json(out / "summary.json", summary_json({row}));
  return kExitOk;
}

int cmd_report(const ExperimentConfig& cfg, std::ostream& log) {
  if (cfg.report.inputs.empty()) throw ConfigError("report: report.inputs is empty");
  json entries = json::array();
  std::vector<MetricsRow> pooled;
  for (const auto& input : cfg.report.inputs) {
    fs::path p(input);
    if (fs::is_directory(p)) p /= "metrics.csv";
    const auto rows = read_metrics_csv(p);
    pooled.insert(pooled.end(), rows.begin(), rows.end());
    json s = summary_json(rows);
    log << input << ": dice " << s["metrics"]["dice"]["text"].get<std::string>() << ", hd95 "
        << s["metrics"]["hd95"]["text"].get<std::string>() << "\n";
    entries.push_back({{"input", input}, {"summary", s}});
  }
  write_json(fs::path(cfg.out) / "summary.json", {{"inputs", entries}, {"pooled", summary_json(pooled)}});
  return kExitOk;
}

}  // namespace

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"phantom", "fit", "ablate", "gradcheck", "eval", "report"};
  return names;
}

int run_command(const std::string& command, const ExperimentConfig& cfg, std::ostream& log) {
  try {
    const auto& names = command_names();
    if (std::find(names.begin(), names.end(), command) == names.end()) {
      log << "error: unknown command '" << command << "'\n";
      return kExitValidation;
    }
    cfg.validate();
    fs::create_directories(cfg.out);
    write_json(fs::path(cfg.out) / "config.resolved.json", to_json(cfg));
    if (command == "phantom") return cmd_phantom(cfg, log);
    if (command == "fit") return cmd_fit(cfg, log);
    if (command == "ablate") return cmd_ablate(cfg, log);
    if (command == "gradcheck") return cmd_gradcheck(cfg, log);
    if (command == "eval") return cmd_eval(cfg, log);
    return cmd_report(cfg, log);
  } catch (const ConfigError& e) {
    log << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::invalid_argument& e) {
    log << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace cavity
