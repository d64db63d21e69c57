#pragma once

// End-to-end experiment pipeline: load or generate data, split, fit a model,
// conformally adjust the test-set curves, evaluate baseline and adjusted
// predictions with the full metric suite, and aggregate across seeds with
// paired two-sided t-tests. All outputs are deterministic for a fixed config:
// reports carry no timestamps, so reruns are byte-identical.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cipot/conformal.hpp"
#include "cipot/curves.hpp"
#include "cipot/dataset.hpp"
#include "cipot/mathutil.hpp"
#include "cipot/metrics.hpp"
#include "cipot/models.hpp"
#include "cipot/synthetic.hpp"

namespace cipot {

/// The product-limit estimate exposed as a survival curve: exact step
/// evaluation, no interpolation. Every subject gets the same curve.
class KmStepCurve {
 public:
  explicit KmStepCurve(std::shared_ptr<const KaplanMeier> km) : km_(std::move(km)) {
    if (!km_) throw std::invalid_argument("KmStepCurve: null estimate");
  }

  double eval(double t) const {
    if (t < 0.0) throw std::domain_error("KmStepCurve::eval: negative time");
    return km_->eval(t);
  }

  InverseResult inverse(double rho) const {
    if (!(rho > 0.0 && rho <= 1.0)) throw std::domain_error("KmStepCurve::inverse: level outside (0,1]");
    for (std::size_t k = 0; k < km_->event_times.size(); ++k)
      if (km_->survival[k] <= rho) return {km_->event_times[k], false};
    return {horizon(), true};  // curve never reaches this level in-sample
  }

  double horizon() const { return km_->max_observed_time; }

 private:
  std::shared_ptr<const KaplanMeier> km_;
};

static_assert(SurvivalCurve<KmStepCurve>);

enum class ModelChoice { km, weibull_aft, external };

struct MetricOptions {
  bool cal_ws = false;
  CalWsOptions cal_ws_opts;
  double auroc_time = 0.0;  // 0: median test event time
  double ibs_t_max = 0.0;   // 0: max observed test time
};

struct RunConfig {
  // Data source: a CSV path, or a synthetic oracle spec when the path is empty.
  std::string dataset_path;
  ColumnSchema schema;
  OracleSpec oracle;
  double target_censor_fraction = 0.0;  // synthetic only; >0 calibrates the rate

  SplitSpec split;
  std::vector<std::uint64_t> seeds{1};

  ModelChoice model = ModelChoice::weibull_aft;
  std::string external_isd_path;
  double aft_scale_bias = 0.0;  // multiply fitted time scale by (1 + bias)
  AftFitOptions aft;

  ConformalConfig conformal;
  int percentile_preset = 19;
  std::vector<double> percentile_levels;  // nonempty overrides the preset

  MetricOptions metrics;
  std::size_t max_grid_points = 512;
  CurveOptions curve;
  std::string output_dir;

  PercentileGrid grid() const {
    if (!percentile_levels.empty()) return PercentileGrid::custom(percentile_levels);
    return PercentileGrid::preset(percentile_preset);
  }

  void validate() const {
    if (seeds.empty()) throw std::invalid_argument("RunConfig: seeds list is empty");
    if (dataset_path.empty() && oracle.n == 0)
      throw std::invalid_argument("RunConfig: need a dataset path or an oracle spec");
    if (!dataset_path.empty() && !std::filesystem::exists(dataset_path))
      throw std::invalid_argument("RunConfig: dataset path does not exist: " + dataset_path);
    if (model == ModelChoice::external) {
      if (external_isd_path.empty()) throw std::invalid_argument("RunConfig: external model needs an ISD path");
      if (!std::filesystem::exists(external_isd_path))
        throw std::invalid_argument("RunConfig: external ISD path does not exist: " + external_isd_path);
    }
    grid().validate();
  }
};

struct EvaluationReport {
  std::size_t n_test = 0;
  double cal_margin = 0.0;
  std::vector<PPPoint> pp;
  std::size_t zero_score_censored = 0;
  std::optional<double> cal_ws;
  bool cal_ws_slab_empty = false;
  Slab cal_ws_slab;
  double harrell_c = 0.0;
  double auroc_time = 0.0;
  std::optional<double> auroc;
  double ctd = 0.0;
  double ibs = 0.0;
  bool ibs_truncated = false;
  double mae_po = 0.0;
};

struct SeedResult {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  EvaluationReport baseline;
  EvaluationReport cipot;
  CalibrationDiagnostics diagnostics;
};

struct MetricAggregate {
  std::size_t n = 0;
  double mean = 0.0;
  double sd = 0.0;
};

struct RunOutcome {
  std::vector<SeedResult> seeds;
  // method -> metric -> aggregate, plus baseline-vs-adjusted paired p-values.
  std::map<std::string, std::map<std::string, MetricAggregate>> aggregate;
  std::map<std::string, double> p_values;
  std::size_t n_ok = 0;
  std::size_t n_failed = 0;
};

namespace detail {

inline std::vector<double> prediction_grid(std::span<const double> times, std::span<const std::uint8_t> events,
                                           std::size_t cap) {
  std::vector<double> g;
  for (std::size_t i = 0; i < times.size(); ++i)
    if (events[i]) g.push_back(times[i]);
  std::sort(g.begin(), g.end());
  g.erase(std::unique(g.begin(), g.end()), g.end());
  if (g.empty()) throw std::invalid_argument("prediction_grid: no event times");
  if (g.size() > cap) {
    std::vector<double> sub;
    sub.reserve(cap);
    for (std::size_t i = 0; i < cap; ++i) {
      const double q = static_cast<double>(i) / static_cast<double>(cap - 1);
      sub.push_back(g[static_cast<std::size_t>(std::llround(q * static_cast<double>(g.size() - 1)))]);
    }
    sub.erase(std::unique(sub.begin(), sub.end()), sub.end());
    g = std::move(sub);
  }
  return g;
}

inline double median_event_time(std::span<const double> times, std::span<const std::uint8_t> events) {
  std::vector<double> et;
  for (std::size_t i = 0; i < times.size(); ++i)
    if (events[i]) et.push_back(times[i]);
  if (et.empty()) throw std::invalid_argument("no event times in test split");
  std::sort(et.begin(), et.end());
  return et[et.size() / 2];
}

}  // namespace detail

/// Evaluate one set of per-subject curves against the test records.
template <SurvivalCurve C>
EvaluationReport evaluate_curves(const std::vector<C>& curves, const SurvivalDataset& test,
                                 const PercentileGrid& grid, const MetricOptions& opts) {
  EvaluationReport rep;
  rep.n_test = test.size();
  const auto cm = cal_margin(curves, test.times, test.events, grid);
  rep.cal_margin = cm.score;
  rep.pp = cm.pp;
  rep.zero_score_censored = cm.zero_score_censored;

  if (opts.cal_ws) {
    const auto ws =
        cal_ws(curves, test.times, test.events, test.features.data, test.features.d, grid, opts.cal_ws_opts);
    rep.cal_ws_slab_empty = ws.slab_empty;
    rep.cal_ws_slab = ws.slab;
    if (!ws.slab_empty) rep.cal_ws = ws.score;
  }

  const auto med = median_times(curves);
  rep.harrell_c = harrell_cindex(med, test.times, test.events);
  rep.auroc_time = opts.auroc_time > 0.0 ? opts.auroc_time : detail::median_event_time(test.times, test.events);
  rep.auroc = auroc_at(curves, test.times, test.events, rep.auroc_time);
  rep.ctd = antolini_ctd(curves, test.times, test.events);

  const double t_max =
      opts.ibs_t_max > 0.0 ? opts.ibs_t_max : *std::max_element(test.times.begin(), test.times.end());
  const auto brier = ibs(curves, test.times, test.events, t_max);
  rep.ibs = brier.value;
  rep.ibs_truncated = brier.truncated;

  rep.mae_po = mae_po(med, test.times, test.events).value;
  return rep;
}

namespace detail {

template <SurvivalCurve C>
SeedResult run_with_curves(const RunConfig& cfg, std::uint64_t seed, const SurvivalDataset& conformal_set,
                           const SurvivalDataset& test, const std::vector<C>& conf_curves,
                           const std::vector<C>& test_curves) {
  SeedResult res;
  res.seed = seed;
  const PercentileGrid grid = cfg.grid();
  res.baseline = evaluate_curves(test_curves, test, grid, cfg.metrics);

  AdjustOptions adj;
  adj.interp = cfg.curve.interp;
  adj.extrap = cfg.curve.extrap;
  adj.floor_eps = cfg.curve.floor_eps;
  adj.inverse_tol_rel = cfg.curve.inverse_tol_rel;
  auto cal = calibrate_batch(conf_curves, conformal_set.times, conformal_set.events, test_curves, grid,
                             cfg.conformal, adj);
  res.diagnostics = cal.diagnostics;
  res.cipot = evaluate_curves(cal.adjusted, test, grid, cfg.metrics);
  res.ok = true;
  return res;
}

}  // namespace detail

/// One seed of the experiment: split, fit, adjust, evaluate both methods.
inline SeedResult run_seed(const RunConfig& cfg, const SurvivalDataset& ds, std::uint64_t seed,
                           SplitResult* split_out = nullptr) {
  const SplitResult sp = stratified_split(ds, cfg.split, seed);
  if (split_out) *split_out = sp;
  const SurvivalDataset train = ds.slice(sp.train);
  const SurvivalDataset conformal_set = ds.slice(sp.conformal);
  const SurvivalDataset test = ds.slice(sp.test);

  if (cfg.model == ModelChoice::km) {
    auto km = std::make_shared<const KaplanMeier>(km_fit(train.times, train.events));
    std::vector<KmStepCurve> conf_curves(conformal_set.size(), KmStepCurve(km));
    std::vector<KmStepCurve> test_curves(test.size(), KmStepCurve(km));
    return detail::run_with_curves(cfg, seed, conformal_set, test, conf_curves, test_curves);
  }

  if (cfg.model == ModelChoice::external) {
    const ISDMatrix m = ISDMatrix::load(cfg.external_isd_path);
    if (m.rows() != ds.size())
      throw std::invalid_argument("external ISD matrix row count does not match the dataset");
    auto curves_for = [&](std::span<const std::size_t> idx) {
      std::vector<ContinuousISD> out;
      out.reserve(idx.size());
      for (const std::size_t i : idx) out.push_back(make_continuous(m.to_discrete(i), cfg.curve));
      return out;
    };
    const auto conf_curves = curves_for(sp.conformal);
    const auto test_curves = curves_for(sp.test);
    return detail::run_with_curves(cfg, seed, conformal_set, test, conf_curves, test_curves);
  }

  AftFitResult fit = aft_fit(train.features.data, train.features.d, train.times, train.events, cfg.aft);
  if (cfg.aft_scale_bias != 0.0) fit.model.beta[0] += std::log1p(cfg.aft_scale_bias);
  const std::vector<double> grid_times = detail::prediction_grid(train.times, train.events, cfg.max_grid_points);
  auto curves_for = [&](const SurvivalDataset& part) {
    std::vector<ContinuousISD> out;
    out.reserve(part.size());
    for (std::size_t i = 0; i < part.size(); ++i) {
      const DiscreteISD isd = fit.model.predict_isd(part.features.row(i), grid_times);
      out.push_back(make_continuous(isd, cfg.curve));
    }
    return out;
  };
  const auto conf_curves = curves_for(conformal_set);
  const auto test_curves = curves_for(test);
  return detail::run_with_curves(cfg, seed, conformal_set, test, conf_curves, test_curves);
}

// ---------------------------------------------------------------------------
// JSON serialization (config round-trip and report output).
// ---------------------------------------------------------------------------

NLOHMANN_JSON_SERIALIZE_ENUM(ModelChoice, {{ModelChoice::km, "km"},
                                           {ModelChoice::weibull_aft, "weibull_aft"},
                                           {ModelChoice::external, "external"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Family, {{Family::weibull, "weibull"}, {Family::lognormal, "lognormal"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Interp, {{Interp::linear, "linear"}, {Interp::pchip, "pchip"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Extrap, {{Extrap::linear, "linear"},
                                      {Extrap::flat, "flat"},
                                      {Extrap::global_line, "global_line"}})
NLOHMANN_JSON_SERIALIZE_ENUM(ConformalSet, {{ConformalSet::validation_only, "val"},
                                            {ConformalSet::train_plus_validation, "train+val"}})

inline void to_json(nlohmann::json& j, const OracleSpec& s) {
  j = {{"family", s.family},           {"base_scale", s.base_scale},   {"base_shape", s.base_shape},
       {"scale_link", s.scale_link},   {"shape_link", s.shape_link},   {"censor_rate", s.censor_rate},
       {"censor_link", s.censor_link}, {"n", s.n},                     {"d", s.d},
       {"seed", s.seed}};
}
inline void from_json(const nlohmann::json& j, OracleSpec& s) {
  s = OracleSpec{};
  j.at("family").get_to(s.family);
  if (j.contains("base_scale")) j.at("base_scale").get_to(s.base_scale);
  if (j.contains("base_shape")) j.at("base_shape").get_to(s.base_shape);
  if (j.contains("scale_link")) j.at("scale_link").get_to(s.scale_link);
  if (j.contains("shape_link")) j.at("shape_link").get_to(s.shape_link);
  if (j.contains("censor_rate")) j.at("censor_rate").get_to(s.censor_rate);
  if (j.contains("censor_link")) j.at("censor_link").get_to(s.censor_link);
  j.at("n").get_to(s.n);
  if (j.contains("d")) j.at("d").get_to(s.d);
  if (j.contains("seed")) j.at("seed").get_to(s.seed);
}

inline void to_json(nlohmann::json& j, const ColumnSchema& s) {
  j = {{"time_col", s.time_col},
       {"event_col", s.event_col},
       {"feature_cols", s.feature_cols},
       {"categorical_cols", s.categorical_cols}};
}
inline void from_json(const nlohmann::json& j, ColumnSchema& s) {
  s = ColumnSchema{};
  if (j.contains("time_col")) j.at("time_col").get_to(s.time_col);
  if (j.contains("event_col")) j.at("event_col").get_to(s.event_col);
  if (j.contains("feature_cols")) j.at("feature_cols").get_to(s.feature_cols);
  if (j.contains("categorical_cols")) j.at("categorical_cols").get_to(s.categorical_cols);
}

inline void to_json(nlohmann::json& j, const SplitSpec& s) {
  j = {{"test_fraction", s.test_fraction},
       {"validation_fraction", s.validation_fraction},
       {"time_bins", s.time_bins},
       {"conformal_set", s.conformal_set}};
}
inline void from_json(const nlohmann::json& j, SplitSpec& s) {
  s = SplitSpec{};
  if (j.contains("test_fraction")) j.at("test_fraction").get_to(s.test_fraction);
  if (j.contains("validation_fraction")) j.at("validation_fraction").get_to(s.validation_fraction);
  if (j.contains("time_bins")) j.at("time_bins").get_to(s.time_bins);
  if (j.contains("conformal_set")) j.at("conformal_set").get_to(s.conformal_set);
}

inline void to_json(nlohmann::json& j, const ConformalConfig& c) {
  j = {{"R", c.R}, {"balanced_counts", c.balanced_counts}, {"tie_jitter", c.tie_jitter}};
}
inline void from_json(const nlohmann::json& j, ConformalConfig& c) {
  c = ConformalConfig{};
  if (j.contains("R")) j.at("R").get_to(c.R);
  if (j.contains("balanced_counts")) j.at("balanced_counts").get_to(c.balanced_counts);
  if (j.contains("tie_jitter")) j.at("tie_jitter").get_to(c.tie_jitter);
}

inline void to_json(nlohmann::json& j, const CalWsOptions& o) {
  j = {{"kappa", o.kappa},
       {"M", o.M},
       {"explore_fraction", o.explore_fraction},
       {"seed", o.seed},
       {"quantile_step", o.quantile_step}};
}
inline void from_json(const nlohmann::json& j, CalWsOptions& o) {
  o = CalWsOptions{};
  if (j.contains("kappa")) j.at("kappa").get_to(o.kappa);
  if (j.contains("M")) j.at("M").get_to(o.M);
  if (j.contains("explore_fraction")) j.at("explore_fraction").get_to(o.explore_fraction);
  if (j.contains("seed")) j.at("seed").get_to(o.seed);
  if (j.contains("quantile_step")) j.at("quantile_step").get_to(o.quantile_step);
}

inline void to_json(nlohmann::json& j, const MetricOptions& m) {
  j = {{"cal_ws", m.cal_ws}, {"cal_ws_opts", m.cal_ws_opts}, {"auroc_time", m.auroc_time}, {"ibs_t_max", m.ibs_t_max}};
}
inline void from_json(const nlohmann::json& j, MetricOptions& m) {
  m = MetricOptions{};
  if (j.contains("cal_ws")) j.at("cal_ws").get_to(m.cal_ws);
  if (j.contains("cal_ws_opts")) j.at("cal_ws_opts").get_to(m.cal_ws_opts);
  if (j.contains("auroc_time")) j.at("auroc_time").get_to(m.auroc_time);
  if (j.contains("ibs_t_max")) j.at("ibs_t_max").get_to(m.ibs_t_max);
}

inline void to_json(nlohmann::json& j, const CurveOptions& c) {
  j = {{"interp", c.interp},
       {"extrap", c.extrap},
       {"floor_eps", c.floor_eps},
       {"horizon", c.horizon},
       {"inverse_tol_rel", c.inverse_tol_rel}};
}
inline void from_json(const nlohmann::json& j, CurveOptions& c) {
  c = CurveOptions{};
  if (j.contains("interp")) j.at("interp").get_to(c.interp);
  if (j.contains("extrap")) j.at("extrap").get_to(c.extrap);
  if (j.contains("floor_eps")) j.at("floor_eps").get_to(c.floor_eps);
  if (j.contains("horizon")) j.at("horizon").get_to(c.horizon);
  if (j.contains("inverse_tol_rel")) j.at("inverse_tol_rel").get_to(c.inverse_tol_rel);
}

inline void to_json(nlohmann::json& j, const AftFitOptions& a) {
  j = {{"l2", a.l2}, {"grad_tol", a.grad_tol}, {"max_iter", a.max_iter}};
}
inline void from_json(const nlohmann::json& j, AftFitOptions& a) {
  a = AftFitOptions{};
  if (j.contains("l2")) j.at("l2").get_to(a.l2);
  if (j.contains("grad_tol")) j.at("grad_tol").get_to(a.grad_tol);
  if (j.contains("max_iter")) j.at("max_iter").get_to(a.max_iter);
}

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"dataset_path", c.dataset_path},
       {"schema", c.schema},
       {"oracle", c.oracle},
       {"target_censor_fraction", c.target_censor_fraction},
       {"split", c.split},
       {"seeds", c.seeds},
       {"model", c.model},
       {"external_isd_path", c.external_isd_path},
       {"aft_scale_bias", c.aft_scale_bias},
       {"aft", c.aft},
       {"conformal", c.conformal},
       {"percentile_preset", c.percentile_preset},
       {"percentile_levels", c.percentile_levels},
       {"metrics", c.metrics},
       {"max_grid_points", c.max_grid_points},
       {"curve", c.curve},
       {"output_dir", c.output_dir}};
}
inline void from_json(const nlohmann::json& j, RunConfig& c) {
  c = RunConfig{};
  if (j.contains("dataset_path")) j.at("dataset_path").get_to(c.dataset_path);
  if (j.contains("schema")) j.at("schema").get_to(c.schema);
  if (j.contains("oracle") && !j.at("oracle").is_null()) j.at("oracle").get_to(c.oracle);
  if (j.contains("target_censor_fraction")) j.at("target_censor_fraction").get_to(c.target_censor_fraction);
  if (j.contains("split")) j.at("split").get_to(c.split);
  if (j.contains("seeds")) j.at("seeds").get_to(c.seeds);
  if (j.contains("model")) j.at("model").get_to(c.model);
  if (j.contains("external_isd_path")) j.at("external_isd_path").get_to(c.external_isd_path);
  if (j.contains("aft_scale_bias")) j.at("aft_scale_bias").get_to(c.aft_scale_bias);
  if (j.contains("aft")) j.at("aft").get_to(c.aft);
  if (j.contains("conformal")) j.at("conformal").get_to(c.conformal);
  if (j.contains("percentile_preset")) j.at("percentile_preset").get_to(c.percentile_preset);
  if (j.contains("percentile_levels")) j.at("percentile_levels").get_to(c.percentile_levels);
  if (j.contains("metrics")) j.at("metrics").get_to(c.metrics);
  if (j.contains("max_grid_points")) j.at("max_grid_points").get_to(c.max_grid_points);
  if (j.contains("curve")) j.at("curve").get_to(c.curve);
  if (j.contains("output_dir")) j.at("output_dir").get_to(c.output_dir);
}

inline void to_json(nlohmann::json& j, const Slab& s) {
  j = {{"v", s.v}, {"a", s.a}, {"b", s.b}, {"mass", s.mass}};
}

inline void to_json(nlohmann::json& j, const EvaluationReport& r) {
  j = {{"n_test", r.n_test},
       {"cal_margin", r.cal_margin},
       {"zero_score_censored", r.zero_score_censored},
       {"harrell_c", r.harrell_c},
       {"auroc_time", r.auroc_time},
       {"ctd", r.ctd},
       {"ibs", r.ibs},
       {"ibs_truncated", r.ibs_truncated},
       {"mae_po", r.mae_po}};
  j["auroc"] = r.auroc ? nlohmann::json(*r.auroc) : nlohmann::json();
  if (r.cal_ws)
    j["cal_ws"] = *r.cal_ws;
  else if (r.cal_ws_slab_empty)
    j["cal_ws"] = "slab-empty";
  if (r.cal_ws || r.cal_ws_slab_empty) j["cal_ws_slab"] = r.cal_ws_slab;
  nlohmann::json pp = nlohmann::json::array();
  for (const auto& p : r.pp) pp.push_back({{"expected", p.expected}, {"observed", p.observed}});
  j["pp"] = pp;
}

// ---------------------------------------------------------------------------
// Multi-seed driver with on-disk reports.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_text(const std::filesystem::path& p, const std::string& body) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << body;
}

inline std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_pp_csv(const std::filesystem::path& p, const std::vector<PPPoint>& pp) {
  std::string body = "expected,observed\n";
  for (const auto& q : pp) body += fmt_g17(q.expected) + "," + fmt_g17(q.observed) + "\n";
  write_text(p, body);
}

inline std::map<std::string, std::optional<double>> metric_map(const EvaluationReport& r) {
  std::map<std::string, std::optional<double>> m;
  m["cal_margin"] = r.cal_margin;
  m["cal_ws"] = r.cal_ws;
  m["harrell_c"] = r.harrell_c;
  m["auroc"] = r.auroc;
  m["ctd"] = r.ctd;
  m["ibs"] = r.ibs;
  m["mae_po"] = r.mae_po;
  return m;
}

}  // namespace detail

/// Aggregate per-metric means/sds per method and paired baseline-vs-adjusted
/// t-test p-values over the seeds that produced both values.
inline void aggregate_outcome(RunOutcome& out) {
  const char* metrics[] = {"cal_margin", "cal_ws", "harrell_c", "auroc", "ctd", "ibs", "mae_po"};
  for (const char* name : metrics) {
    std::vector<double> base, adj;
    std::vector<double> base_paired, adj_paired;
    for (const auto& s : out.seeds) {
      if (!s.ok) continue;
      const auto bm = detail::metric_map(s.baseline);
      const auto am = detail::metric_map(s.cipot);
      if (bm.at(name)) base.push_back(*bm.at(name));
      if (am.at(name)) adj.push_back(*am.at(name));
      if (bm.at(name) && am.at(name)) {
        base_paired.push_back(*bm.at(name));
        adj_paired.push_back(*am.at(name));
      }
    }
    if (!base.empty()) {
      const auto ms = mean_sd(base);
      out.aggregate["baseline"][name] = {base.size(), ms.mean, ms.sd};
    }
    if (!adj.empty()) {
      const auto ms = mean_sd(adj);
      out.aggregate["cipot"][name] = {adj.size(), ms.mean, ms.sd};
    }
    if (base_paired.size() >= 2) out.p_values[name] = paired_t_test_p(adj_paired, base_paired);
  }
}

inline RunOutcome run(const RunConfig& cfg) {
  cfg.validate();
  RunConfig resolved = cfg;

  SurvivalDataset ds;
  if (!cfg.dataset_path.empty()) {
    ds = load_csv(cfg.dataset_path, cfg.schema).dataset;
  } else {
    OracleSpec spec = cfg.oracle;
    if (cfg.target_censor_fraction > 0.0)
      spec.censor_rate = calibrate_censor_rate(spec, cfg.target_censor_fraction);
    resolved.oracle = spec;
    ds = generate(spec).dataset;
  }

  const bool emit = !cfg.output_dir.empty();
  std::filesystem::path root(cfg.output_dir);
  if (emit) {
    std::filesystem::create_directories(root);
    // the persisted config describes the experiment, not its location: keep
    // reruns into different directories byte-identical
    resolved.output_dir.clear();
    detail::write_text(root / "config.json", nlohmann::json(resolved).dump(2) + "\n");
  }

  RunOutcome out;
  std::string rows = "seed,method,metric,value\n";
  for (const std::uint64_t seed : cfg.seeds) {
    SeedResult res;
    SplitResult sp;
    try {
      res = run_seed(cfg, ds, seed, &sp);
    } catch (const std::exception& e) {
      res = SeedResult{};
      res.seed = seed;
      res.error = e.what();
    }
    if (emit) {
      const std::filesystem::path dir = root / ("seed_" + std::to_string(seed));
      std::filesystem::create_directories(dir);
      if (res.ok) {
        nlohmann::json manifest = {{"seed", seed},
                                   {"test_fraction", cfg.split.test_fraction},
                                   {"validation_fraction", cfg.split.validation_fraction},
                                   {"train", sp.train},
                                   {"validation", sp.validation},
                                   {"test", sp.test},
                                   {"warnings", sp.warnings}};
        detail::write_text(dir / "split.json", manifest.dump(2) + "\n");
        detail::write_text(dir / "baseline.json", nlohmann::json(res.baseline).dump(2) + "\n");
        detail::write_text(dir / "cipot.json", nlohmann::json(res.cipot).dump(2) + "\n");
        detail::write_pp_csv(dir / "baseline_pp.csv", res.baseline.pp);
        detail::write_pp_csv(dir / "cipot_pp.csv", res.cipot.pp);
      } else {
        detail::write_text(dir / "error.txt", res.error + "\n");
      }
    }
    if (res.ok) {
      ++out.n_ok;
      auto emit_rows = [&](const char* method, const EvaluationReport& rep) {
        for (const auto& [metric, value] : detail::metric_map(rep))
          if (value)
            rows += std::to_string(seed) + "," + method + "," + metric + "," + detail::fmt_g17(*value) + "\n";
      };
      emit_rows("baseline", res.baseline);
      emit_rows("cipot", res.cipot);
    } else {
      ++out.n_failed;
    }
    out.seeds.push_back(std::move(res));
  }
  aggregate_outcome(out);

  if (emit) {
    detail::write_text(root / "rows.csv", rows);
    nlohmann::json summary;
    summary["n_seeds_ok"] = out.n_ok;
    summary["n_seeds_failed"] = out.n_failed;
    for (const auto& [method, metrics] : out.aggregate)
      for (const auto& [metric, agg] : metrics)
        summary["aggregate"][method][metric] = {{"n", agg.n}, {"mean", agg.mean}, {"sd", agg.sd}};
    for (const auto& [metric, p] : out.p_values) summary["p_values"][metric] = p;
    nlohmann::json failures = nlohmann::json::array();
    for (const auto& s : out.seeds)
      if (!s.ok) failures.push_back({{"seed", s.seed}, {"error", s.error}});
    summary["failures"] = failures;
    detail::write_text(root / "summary.json", summary.dump(2) + "\n");

    std::string sc = "method,metric,n,mean,sd,p_value\n";
    for (const auto& [method, metrics] : out.aggregate)
      for (const auto& [metric, agg] : metrics) {
        sc += method;
        sc += "," + metric + "," + std::to_string(agg.n) + "," + detail::fmt_g17(agg.mean) + "," +
              detail::fmt_g17(agg.sd) + ",";
        const auto it = out.p_values.find(metric);
        if (it != out.p_values.end()) sc += detail::fmt_g17(it->second);
        sc += "\n";
      }
    detail::write_text(root / "summary.csv", sc);
  }
  return out;
}

}  // namespace cipot
