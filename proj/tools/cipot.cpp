// Command-line driver: ingest -> split -> fit -> calibrate -> evaluate, a
// simulation mode for synthetic data with known ground truth, and a multi-seed
// `run` orchestrator with aggregated reports.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cipot/cipot.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// --out paths resolve against this root when relative (unset: cwd).
fs::path resolve_out(const std::string& p) {
  if (p.empty()) return p;
  fs::path path(p);
  if (path.is_absolute()) return path;
  if (const char* root = std::getenv("CIPOT_OUTPUT_ROOT")) return fs::path(root) / path;
  return path;
}

cipot::ColumnSchema schema_from(const std::string& time_col, const std::string& event_col,
                                const std::vector<std::string>& features,
                                const std::vector<std::string>& categorical) {
  cipot::ColumnSchema s;
  s.time_col = time_col;
  s.event_col = event_col;
  s.feature_cols = features;
  s.categorical_cols = categorical;
  return s;
}

cipot::PercentileGrid grid_from(const std::vector<double>& spec) {
  if (spec.empty()) return cipot::PercentileGrid::preset(19);
  if (spec.size() == 1 && spec[0] == std::floor(spec[0])) {
    const int k = static_cast<int>(spec[0]);
    if (k == 9 || k == 19 || k == 39 || k == 49) return cipot::PercentileGrid::preset(k);
  }
  return cipot::PercentileGrid::custom(spec);
}

std::vector<cipot::ContinuousISD> curves_from_matrix(const cipot::ISDMatrix& m,
                                                     const std::vector<std::size_t>& idx,
                                                     const cipot::CurveOptions& opts) {
  std::vector<cipot::ContinuousISD> out;
  out.reserve(idx.size());
  for (const std::size_t i : idx) out.push_back(cipot::make_continuous(m.to_discrete(i), opts));
  return out;
}

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

template <cipot::SurvivalCurve C>
cipot::ISDMatrix matrix_from_curves(const std::vector<C>& curves, const std::vector<double>& grid) {
  cipot::ISDMatrix m;
  m.grid = grid;
  m.probs.reserve(curves.size() * grid.size());
  for (std::size_t i = 0; i < curves.size(); ++i) {
    m.ids.push_back(std::to_string(i));
    double prev = 1.0;
    for (const double t : grid) {
      double p = std::min(curves[i].eval(t), prev);  // guard interpolation round-off
      m.probs.push_back(p);
      prev = p;
    }
  }
  return m;
}

int cmd_ingest(const std::string& path, const cipot::ColumnSchema& schema, const std::string& out) {
  const auto res = cipot::load_csv(path, schema);
  const auto s = cipot::summarize(res.dataset);
  json j = {{"n", s.n},
            {"d", s.d},
            {"censor_rate", s.censor_rate},
            {"t_max", s.t_max},
            {"km_end_probability", s.km_end_probability},
            {"rows_read", res.report.rows_read},
            {"rows_dropped_nonpositive_time", res.report.rows_dropped_nonpositive_time},
            {"imputed_cells", res.report.imputed_cells},
            {"feature_names", res.dataset.feature_names}};
  std::cout << j.dump(2) << "\n";
  if (!out.empty()) cipot::save_csv(res.dataset, resolve_out(out).string(), schema.time_col, schema.event_col);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conformal post-processing and evaluation for individual survival distributions"};
  app.require_subcommand(1);

  // Shared flag storage.
  std::string data_path, out_path, time_col = "time", event_col = "event";
  std::vector<std::string> feature_cols, categorical_cols;
  std::uint64_t seed = 1;
  double test_fraction = 0.1, validation_fraction = 0.1;
  std::string conformal_set = "train+val";
  std::string model = "weibull_aft";
  int R = 100;
  bool balanced = false;
  std::vector<double> percentiles;
  double kappa = 0.33;
  int M = 1000;
  bool with_cal_ws = false;

  auto add_schema_flags = [&](CLI::App* c) {
    c->add_option("--time-col", time_col, "time column name");
    c->add_option("--event-col", event_col, "event indicator column name");
    c->add_option("--feature-cols", feature_cols, "feature columns (default: all others)");
    c->add_option("--categorical-cols", categorical_cols, "columns to one-hot encode");
  };

  // --- ingest ---------------------------------------------------------------
  auto* ingest = app.add_subcommand("ingest", "load a CSV, report summary statistics, optionally re-emit");
  ingest->add_option("csv", data_path, "input CSV")->required();
  add_schema_flags(ingest);
  ingest->add_option("--out", out_path, "write the normalized dataset CSV here");

  // --- split ----------------------------------------------------------------
  auto* split = app.add_subcommand("split", "stratified train/validation/test split manifest");
  split->add_option("csv", data_path, "input CSV")->required();
  add_schema_flags(split);
  split->add_option("--seed", seed, "split seed");
  split->add_option("--test-fraction", test_fraction, "test fraction");
  split->add_option("--validation-fraction", validation_fraction, "validation fraction of the remainder");
  split->add_option("--conformal-set", conformal_set, "val | train+val")
      ->check(CLI::IsMember({"val", "train+val"}));
  split->add_option("--out", out_path, "manifest JSON path");

  // --- fit ------------------------------------------------------------------
  auto* fit = app.add_subcommand("fit", "fit a survival model and export its ISD matrix");
  fit->add_option("csv", data_path, "training CSV")->required();
  add_schema_flags(fit);
  fit->add_option("--model", model, "km | weibull_aft")->check(CLI::IsMember({"km", "weibull_aft"}));
  std::size_t grid_cap = 512;
  fit->add_option("--grid-cap", grid_cap, "max prediction grid points");
  fit->add_option("--out", out_path, "ISD matrix CSV path")->required();

  // --- calibrate ------------------------------------------------------------
  auto* calibrate = app.add_subcommand("calibrate", "conformally adjust test curves from ISD matrices");
  std::string conf_isd_path, test_isd_path;
  calibrate->add_option("--data", data_path, "conformal-set records CSV")->required();
  add_schema_flags(calibrate);
  calibrate->add_option("--conformal-isd", conf_isd_path, "ISD matrix for the conformal records")->required();
  calibrate->add_option("--test-isd", test_isd_path, "ISD matrix to adjust")->required();
  calibrate->add_option("--R", R, "censored repetition count");
  calibrate->add_flag("--balanced", balanced, "repeat uncensored subjects R+1 times");
  calibrate->add_option("--percentiles", percentiles, "9|19|39|49 or an explicit level list");
  calibrate->add_option("--out", out_path, "adjusted ISD matrix CSV path")->required();

  // --- evaluate ---------------------------------------------------------------
  auto* evaluate = app.add_subcommand("evaluate", "score an ISD matrix against test records");
  evaluate->add_option("--data", data_path, "test records CSV")->required();
  add_schema_flags(evaluate);
  evaluate->add_option("--isd", test_isd_path, "ISD matrix for the records")->required();
  evaluate->add_option("--percentiles", percentiles, "9|19|39|49 or an explicit level list");
  evaluate->add_flag("--cal-ws", with_cal_ws, "run the worst-slab calibration search");
  evaluate->add_option("--kappa", kappa, "minimum slab mass");
  evaluate->add_option("--M", M, "random slab directions");
  evaluate->add_option("--seed", seed, "slab search seed");
  evaluate->add_option("--out", out_path, "report JSON path");

  // --- simulate ---------------------------------------------------------------
  auto* simulate = app.add_subcommand("simulate", "generate synthetic data with a known oracle");
  std::string family = "weibull";
  std::size_t sim_n = 1000, sim_d = 1;
  double base_scale = 1.0, base_shape = 1.0, censor_target = 0.0, censor_rate = 0.0;
  std::vector<double> scale_link, shape_link, censor_link;
  std::string oracle_out;
  simulate->add_option("--family", family, "weibull | lognormal")
      ->check(CLI::IsMember({"weibull", "lognormal"}));
  simulate->add_option("--n", sim_n, "subjects");
  simulate->add_option("--d", sim_d, "feature dimension");
  simulate->add_option("--base-scale", base_scale, "baseline scale");
  simulate->add_option("--base-shape", base_shape, "baseline shape");
  simulate->add_option("--scale-link", scale_link, "log-scale coefficients");
  simulate->add_option("--shape-link", shape_link, "log-shape coefficients");
  simulate->add_option("--censor-rate", censor_rate, "exponential censoring rate (0: none)");
  simulate->add_option("--censor-link", censor_link, "log-rate coefficients");
  simulate->add_option("--censor-target", censor_target, "calibrate the rate to this censored fraction");
  simulate->add_option("--seed", seed, "generation seed");
  simulate->add_option("--out", out_path, "dataset CSV path")->required();
  simulate->add_option("--oracle-out", oracle_out, "oracle ISD matrix CSV path");

  // --- run --------------------------------------------------------------------
  auto* run_cmd = app.add_subcommand("run", "multi-seed experiment from a JSON config");
  std::string config_path;
  run_cmd->add_option("--config", config_path, "RunConfig JSON")->required();
  run_cmd->add_option("--out", out_path, "override the config's output directory");

  // --- report -------------------------------------------------------------------
  auto* report_cmd = app.add_subcommand("report", "re-aggregate a run directory's per-seed reports");
  std::string run_dir;
  report_cmd->add_option("dir", run_dir, "run output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    const auto schema = schema_from(time_col, event_col, feature_cols, categorical_cols);

    if (*ingest) return cmd_ingest(data_path, schema, out_path);

    if (*split) {
      const auto res = cipot::load_csv(data_path, schema);
      cipot::SplitSpec spec;
      spec.test_fraction = test_fraction;
      spec.validation_fraction = validation_fraction;
      spec.conformal_set =
          conformal_set == "val" ? cipot::ConformalSet::validation_only : cipot::ConformalSet::train_plus_validation;
      const auto sp = cipot::stratified_split(res.dataset, spec, seed);
      json j = {{"seed", seed},
                {"test_fraction", test_fraction},
                {"validation_fraction", validation_fraction},
                {"n", res.dataset.size()},
                {"train", sp.train},
                {"validation", sp.validation},
                {"test", sp.test},
                {"conformal", sp.conformal},
                {"warnings", sp.warnings}};
      std::cout << "train=" << sp.train.size() << " validation=" << sp.validation.size()
                << " test=" << sp.test.size() << " conformal=" << sp.conformal.size() << "\n";
      if (!out_path.empty()) {
        std::ofstream f(resolve_out(out_path));
        f << j.dump(2) << "\n";
      }
      return 0;
    }

    if (*fit) {
      const auto res = cipot::load_csv(data_path, schema);
      const auto& ds = res.dataset;
      cipot::ISDMatrix m;
      if (model == "km") {
        const auto km = cipot::km_fit(ds.times, ds.events);
        const auto isd = km.to_isd();
        m.grid = isd.times;
        for (std::size_t i = 0; i < ds.size(); ++i) {
          m.ids.push_back(std::to_string(i));
          m.probs.insert(m.probs.end(), isd.probs.begin(), isd.probs.end());
        }
        std::cout << "km: steps=" << isd.times.size() << " end=" << km.end_probability() << "\n";
      } else {
        const auto fit_res = cipot::aft_fit(ds.features.data, ds.features.d, ds.times, ds.events);
        std::cout << "weibull_aft: converged=" << fit_res.report.converged
                  << " iter=" << fit_res.report.iterations << " loglik=" << fit_res.report.log_likelihood
                  << " shape=" << fit_res.model.shape() << "\n";
        std::vector<double> grid;
        for (std::size_t i = 0; i < ds.size(); ++i)
          if (ds.events[i]) grid.push_back(ds.times[i]);
        std::sort(grid.begin(), grid.end());
        grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
        if (grid.size() > grid_cap) {
          std::vector<double> sub;
          for (std::size_t i = 0; i < grid_cap; ++i) {
            const double q = static_cast<double>(i) / static_cast<double>(grid_cap - 1);
            sub.push_back(grid[static_cast<std::size_t>(std::llround(q * static_cast<double>(grid.size() - 1)))]);
          }
          sub.erase(std::unique(sub.begin(), sub.end()), sub.end());
          grid = std::move(sub);
        }
        m.grid = grid;
        for (std::size_t i = 0; i < ds.size(); ++i) {
          m.ids.push_back(std::to_string(i));
          const auto isd = fit_res.model.predict_isd(ds.features.row(i), grid);
          m.probs.insert(m.probs.end(), isd.probs.begin(), isd.probs.end());
        }
      }
      m.save(resolve_out(out_path).string());
      return 0;
    }

    if (*calibrate) {
      const auto res = cipot::load_csv(data_path, schema);
      const auto conf_m = cipot::ISDMatrix::load(conf_isd_path);
      const auto test_m = cipot::ISDMatrix::load(test_isd_path);
      if (conf_m.rows() != res.dataset.size())
        throw std::invalid_argument("conformal ISD matrix row count does not match the records");
      cipot::CurveOptions copts;
      const auto conf_curves = curves_from_matrix(conf_m, all_rows(conf_m.rows()), copts);
      const auto test_curves = curves_from_matrix(test_m, all_rows(test_m.rows()), copts);
      cipot::ConformalConfig ccfg;
      ccfg.R = R;
      ccfg.balanced_counts = balanced;
      const auto grid = grid_from(percentiles);
      const auto cal = cipot::calibrate_batch(conf_curves, res.dataset.times, res.dataset.events, test_curves,
                                              grid, ccfg, cipot::AdjustOptions{});
      const auto out_m = matrix_from_curves(cal.adjusted, test_m.grid);
      out_m.save(resolve_out(out_path).string());
      std::cout << "adjusted " << out_m.rows() << " curves; score set N=" << cal.diagnostics.score_count << "\n";
      return 0;
    }

    if (*evaluate) {
      const auto res = cipot::load_csv(data_path, schema);
      const auto m = cipot::ISDMatrix::load(test_isd_path);
      if (m.rows() != res.dataset.size())
        throw std::invalid_argument("ISD matrix row count does not match the records");
      const auto curves = curves_from_matrix(m, all_rows(m.rows()), cipot::CurveOptions{});
      cipot::MetricOptions mo;
      mo.cal_ws = with_cal_ws;
      mo.cal_ws_opts.kappa = kappa;
      mo.cal_ws_opts.M = M;
      mo.cal_ws_opts.seed = seed;
      const auto rep = cipot::evaluate_curves(curves, res.dataset, grid_from(percentiles), mo);
      const json j = rep;
      std::cout << j.dump(2) << "\n";
      if (!out_path.empty()) {
        std::ofstream f(resolve_out(out_path));
        f << j.dump(2) << "\n";
      }
      return 0;
    }

    if (*simulate) {
      cipot::OracleSpec spec;
      spec.family = family == "weibull" ? cipot::Family::weibull : cipot::Family::lognormal;
      spec.n = sim_n;
      spec.d = sim_d;
      spec.base_scale = base_scale;
      spec.base_shape = base_shape;
      spec.scale_link = scale_link;
      spec.shape_link = shape_link;
      spec.censor_link = censor_link;
      spec.censor_rate = censor_rate;
      spec.seed = seed;
      if (censor_target > 0.0) spec.censor_rate = cipot::calibrate_censor_rate(spec, censor_target);
      const auto data = cipot::generate(spec);
      cipot::save_csv(data.dataset, resolve_out(out_path).string(), time_col, event_col);
      const auto s = cipot::summarize(data.dataset);
      std::cout << "n=" << s.n << " d=" << s.d << " censor_rate=" << s.censor_rate
                << " rate=" << spec.censor_rate << "\n";
      if (!oracle_out.empty()) {
        std::vector<double> grid;
        auto sorted = data.dataset.times;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t i = 0; i < 101; ++i)
          grid.push_back(sorted[static_cast<std::size_t>(std::llround(
              static_cast<double>(i) / 100.0 * static_cast<double>(sorted.size() - 1)))]);
        grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
        matrix_from_curves(data.oracle, grid).save(resolve_out(oracle_out).string());
      }
      return 0;
    }

    if (*run_cmd) {
      std::ifstream f(config_path);
      if (!f) throw std::invalid_argument("cannot open config: " + config_path);
      json j;
      f >> j;
      cipot::RunConfig cfg = j.get<cipot::RunConfig>();
      if (!out_path.empty()) cfg.output_dir = resolve_out(out_path).string();
      else if (!cfg.output_dir.empty())
        cfg.output_dir = resolve_out(cfg.output_dir).string();
      const auto outcome = cipot::run(cfg);
      for (const auto& s : outcome.seeds) {
        if (s.ok)
          std::cout << "seed " << s.seed << ": cal_margin " << s.baseline.cal_margin << " -> "
                    << s.cipot.cal_margin << "\n";
        else
          std::cout << "seed " << s.seed << ": FAILED (" << s.error << ")\n";
      }
      std::cout << "ok=" << outcome.n_ok << " failed=" << outcome.n_failed << "\n";
      if (outcome.n_ok == 0) return 3;
      return outcome.n_failed == 0 ? 0 : 3;
    }

    if (*report_cmd) {
      const fs::path root(run_dir);
      if (!fs::exists(root)) throw std::invalid_argument("run directory does not exist: " + run_dir);
      std::string rows = "seed,method,metric,value\n";
      std::map<std::string, std::map<std::string, std::vector<double>>> values;
      std::vector<std::string> gaps;
      std::size_t n_seeds = 0;
      std::vector<fs::path> seed_dirs;
      for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory() && e.path().filename().string().rfind("seed_", 0) == 0) seed_dirs.push_back(e.path());
      std::sort(seed_dirs.begin(), seed_dirs.end());
      for (const auto& dir : seed_dirs) {
        const std::string seed_name = dir.filename().string().substr(5);
        if (fs::exists(dir / "error.txt") || !fs::exists(dir / "baseline.json")) {
          gaps.push_back(seed_name);
          continue;
        }
        ++n_seeds;
        for (const char* method : {"baseline", "cipot"}) {
          std::ifstream f(dir / (std::string(method) + ".json"));
          json j;
          f >> j;
          for (const char* metric : {"cal_margin", "cal_ws", "harrell_c", "auroc", "ctd", "ibs", "mae_po"}) {
            if (!j.contains(metric) || !j[metric].is_number()) continue;
            const double v = j[metric].get<double>();
            values[method][metric].push_back(v);
            char buf[40];
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            rows += seed_name + "," + method + "," + metric + "," + buf + "\n";
          }
        }
      }
      if (n_seeds == 0) throw std::invalid_argument("no completed seeds in " + run_dir);
      json summary;
      summary["n_seeds_ok"] = n_seeds;
      summary["gaps"] = gaps;
      for (const auto& [method, metrics] : values)
        for (const auto& [metric, vals] : metrics) {
          const auto ms = cipot::mean_sd(vals);
          summary["aggregate"][method][metric] = {{"n", vals.size()}, {"mean", ms.mean}, {"sd", ms.sd}};
        }
      std::ofstream(root / "rows.csv") << rows;
      std::ofstream(root / "summary.json") << summary.dump(2) << "\n";
      std::cout << summary.dump(2) << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
