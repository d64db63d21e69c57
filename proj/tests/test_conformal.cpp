#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "cipot/conformal.hpp"
#include "cipot/curves.hpp"
#include "cipot/mathutil.hpp"
#include "cipot/synthetic.hpp"

using namespace cipot;

namespace {

ConformityScoreSet raw_scores(std::vector<double> scores, std::size_t subjects = 0, std::size_t censored = 0) {
  ConformityScoreSet s;
  std::sort(scores.begin(), scores.end());
  s.scores = std::move(scores);
  s.subject_count = subjects ? subjects : s.scores.size();
  s.censored_count = censored;
  return s;
}

}  // namespace

TEST_CASE("percentile grid presets") {
  const auto g9 = PercentileGrid::preset(9);
  REQUIRE(g9.size() == 9);
  REQUIRE(g9.levels.front() == Catch::Approx(0.1).margin(1e-15));
  REQUIRE(g9.levels.back() == Catch::Approx(0.9).margin(1e-15));
  const auto g19 = PercentileGrid::preset(19);
  REQUIRE(g19.levels[9] == Catch::Approx(0.5).margin(1e-15));
  REQUIRE_THROWS_AS(PercentileGrid::preset(10), std::invalid_argument);
  REQUIRE_THROWS_AS(PercentileGrid::custom({0.5, 0.4}), std::invalid_argument);
  REQUIRE_THROWS_AS(PercentileGrid::custom({0.0, 0.5}), std::invalid_argument);
}

TEST_CASE("score set expands censored subjects into the uniform ladder") {
  // one uncensored subject with score 0.3, one censored with score 0.6, R=2
  const auto curve_u = OracleCurve(Family::weibull, 1.0, 1.0);  // S(t)=exp(-t)
  const std::vector<OracleCurve> curves{curve_u, curve_u};
  const std::vector<double> times{-std::log(0.3), -std::log(0.6)};
  const std::vector<std::uint8_t> events{1, 0};
  ConformalConfig cfg;
  cfg.R = 2;

  const auto s = build_score_set(curves, times, events, cfg);
  REQUIRE(s.subject_count == 2);
  REQUIRE(s.censored_count == 1);
  REQUIRE(s.scores.size() == 5);  // 2 copies + ladder of 3
  REQUIRE(s.scores[0] == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(s.scores[1] == Catch::Approx(0.3).margin(1e-12));
  REQUIRE(s.scores[2] == Catch::Approx(0.3).margin(1e-12));
  REQUIRE(s.scores[3] == Catch::Approx(0.3).margin(1e-12));
  REQUIRE(s.scores[4] == Catch::Approx(0.6).margin(1e-12));

  cfg.balanced_counts = true;
  const auto sb = build_score_set(curves, times, events, cfg);
  REQUIRE(sb.scores.size() == 6);  // uncensored padded to R+1 copies
}

TEST_CASE("score set validates config") {
  const std::vector<OracleCurve> curves{OracleCurve(Family::weibull, 1.0, 1.0)};
  const std::vector<double> times{1.0};
  const std::vector<std::uint8_t> events{1};
  ConformalConfig cfg;
  cfg.R = 0;
  REQUIRE_THROWS_AS(build_score_set(curves, times, events, cfg), std::invalid_argument);
  cfg.R = 1;
  cfg.tie_jitter = 1e-3;  // far too large
  REQUIRE_THROWS_AS(build_score_set(curves, times, events, cfg), std::invalid_argument);
}

TEST_CASE("empirical percentile uses the ceil(rho(N+1)) order statistic") {
  const auto s = raw_scores({0.1, 0.2, 0.3, 0.4});
  REQUIRE(empirical_percentile(s, 0.5) == Catch::Approx(0.3).margin(1e-15));
  REQUIRE(empirical_percentile(s, 0.99) == Catch::Approx(0.4).margin(1e-15));  // clamped to N
  REQUIRE(empirical_percentile(s, 0.25) == Catch::Approx(0.2).margin(1e-15));
  REQUIRE(empirical_percentile(s, 0.2) == Catch::Approx(0.1).margin(1e-15));
  REQUIRE(empirical_percentile(s, 1e-9) == Catch::Approx(0.1).margin(1e-15));
}

TEST_CASE("uniform scores reproduce the identity adjustment") {
  // conformity scores exactly {0.1, ..., 0.9}: every percentile equals its level
  const OracleCurve curve(Family::weibull, 1.0, 1.0);
  std::vector<OracleCurve> conf_curves(9, curve);
  std::vector<double> times;
  std::vector<std::uint8_t> events(9, 1);
  for (int j = 1; j <= 9; ++j) times.push_back(-std::log(j / 10.0));
  ConformalConfig cfg;
  cfg.R = 1;

  const auto gamma = build_score_set(conf_curves, times, events, cfg);
  const auto grid = PercentileGrid::preset(9);
  for (double rho : grid.levels)
    REQUIRE(empirical_percentile(gamma, rho) == Catch::Approx(rho).margin(1e-12));

  const auto adj = cipot_adjust(curve, gamma, grid, AdjustOptions{});
  for (int j = 1; j <= 9; ++j) {
    const double rho = j / 10.0;
    REQUIRE(adj.eval(-std::log(rho)) == Catch::Approx(rho).margin(1e-9));
  }
}

TEST_CASE("quadratically distorted scores re-level the curve") {
  // scores (j/100)^2: Percentile(rho) = rho^2, so the adjusted inverse at rho
  // is the original inverse at rho^2 = -2 ln(rho) for S(t)=exp(-t).
  std::vector<double> scores;
  for (int j = 1; j <= 99; ++j) scores.push_back(std::pow(j / 100.0, 2));
  const auto gamma = raw_scores(scores);
  const auto grid = PercentileGrid::preset(9);
  for (double rho : grid.levels)
    REQUIRE(empirical_percentile(gamma, rho) == Catch::Approx(rho * rho).margin(1e-12));

  const OracleCurve curve(Family::weibull, 1.0, 1.0);
  const auto adj = cipot_adjust(curve, gamma, grid, AdjustOptions{});
  for (double rho : grid.levels)
    REQUIRE(adj.eval(-2.0 * std::log(rho)) == Catch::Approx(rho).margin(1e-9));
  REQUIRE(adj.median_time() == Catch::Approx(-2.0 * std::log(0.5)).margin(1e-6));
}

TEST_CASE("percentile map diagnostics are recorded") {
  const OracleCurve curve(Family::weibull, 1.0, 1.0);
  std::vector<OracleCurve> curves(20, curve);
  std::vector<double> times;
  std::vector<std::uint8_t> events;
  Rng rng(4);
  for (int i = 0; i < 20; ++i) {
    times.push_back(curve.sample_time(rng.uniform01_open_low() * 0.999 + 1e-12));
    events.push_back(i % 3 == 0 ? 0 : 1);
  }
  ConformalConfig cfg;
  cfg.R = 10;
  const auto cal = calibrate_batch(curves, times, events, curves, PercentileGrid::preset(9), cfg);
  REQUIRE(cal.adjusted.size() == 20);
  REQUIRE(cal.diagnostics.R == 10);
  REQUIRE(cal.diagnostics.subject_count == 20);
  REQUIRE(cal.diagnostics.censored_count == 7);
  const std::size_t unc = 13, cen = 7;
  REQUIRE(cal.diagnostics.score_count == unc * 10 + cen * 11);
  REQUIRE(cal.diagnostics.percentile_map.size() == 9);
  for (const auto& [rho, c] : cal.diagnostics.percentile_map) {
    REQUIRE(c >= 0.0);
    REQUIRE(c <= 1.0);
  }
}

TEST_CASE("adjusted curves stay monotone on randomized inputs") {
  Rng rng(5150);
  for (int rep = 0; rep < 200; ++rep) {
    // random interpolated curve
    std::vector<double> kt, kp;
    double t = 0.0, p = 1.0;
    const std::size_t knots = 2 + rng.below(8);
    for (std::size_t i = 0; i < knots; ++i) {
      t += 0.05 + rng.uniform01();
      p *= 0.3 + 0.65 * rng.uniform01();
      kt.push_back(t);
      kp.push_back(p);
    }
    CurveOptions copts;
    copts.interp = rep % 2 ? Interp::pchip : Interp::linear;
    const auto curve = make_continuous({kt, kp}, copts);

    // random raw score multiset with ties and extremes
    std::vector<double> scores;
    const std::size_t m = 5 + rng.below(300);
    for (std::size_t i = 0; i < m; ++i) {
      double s = rng.uniform01();
      if (rng.below(10) == 0) s = 0.0;
      if (rng.below(10) == 0) s = 1.0;
      if (rng.below(4) == 0 && !scores.empty()) s = scores.back();  // exact tie
      scores.push_back(s);
    }
    const auto gamma = raw_scores(scores);
    const auto grid = PercentileGrid::preset(rep % 3 == 0 ? 9 : (rep % 3 == 1 ? 19 : 49));

    const auto adj = cipot_adjust(curve, gamma, grid, AdjustOptions{});
    const auto& gt = adj.grid_times();
    const auto& gp = adj.grid_probs();
    for (std::size_t i = 1; i < gt.size(); ++i) {
      REQUIRE(gt[i] > gt[i - 1]);
      REQUIRE(gp[i] <= gp[i - 1]);
    }
  }
}

TEST_CASE("degenerate all-high scores collapse without violating monotonicity") {
  const OracleCurve curve(Family::weibull, 2.0, 1.5);
  const auto gamma = raw_scores(std::vector<double>(50, 1.0));
  const auto adj = cipot_adjust(curve, gamma, PercentileGrid::preset(9), AdjustOptions{});
  const auto& gp = adj.grid_probs();
  for (std::size_t i = 1; i < gp.size(); ++i) REQUIRE(gp[i] <= gp[i - 1]);
}

TEST_CASE("marginal coverage lands in the finite-sample band") {
  // miscalibrated model (scale inflated 30%) still yields valid coverage
  const int n_conf = 199;
  const int n_test = 400;
  const int trials = 60;
  const std::vector<double> levels{0.25, 0.5, 0.75};
  std::vector<double> hits(levels.size(), 0.0);
  double total = 0.0;

  for (int trial = 0; trial < trials; ++trial) {
    Rng rng(9000 + trial);
    std::vector<OracleCurve> model_conf;
    std::vector<double> times;
    std::vector<std::uint8_t> events(n_conf, 1);
    for (int i = 0; i < n_conf; ++i) {
      const OracleCurve truth(Family::weibull, 1.0, 1.2);
      model_conf.emplace_back(Family::weibull, 1.3, 1.2);
      times.push_back(truth.sample_time(std::min(rng.uniform01_open_low(), 1.0 - 1e-12)));
    }
    ConformalConfig cfg;
    cfg.R = 1;
    const auto gamma = build_score_set(model_conf, times, events, cfg);
    const auto grid = PercentileGrid::custom(levels);
    const OracleCurve model_test(Family::weibull, 1.3, 1.2);
    const auto adj = cipot_adjust(model_test, gamma, grid, AdjustOptions{});
    const OracleCurve truth(Family::weibull, 1.0, 1.2);
    for (int k = 0; k < n_test; ++k) {
      const double t = truth.sample_time(std::min(rng.uniform01_open_low(), 1.0 - 1e-12));
      for (std::size_t l = 0; l < levels.size(); ++l)
        if (adj.eval(t) <= levels[l]) hits[l] += 1.0;
      total += 1.0;
    }
  }
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const double p = hits[l] / total;
    // loose 5-sigma screen; the tight band is enforced in the acceptance suite
    const double se = std::sqrt(levels[l] * (1.0 - levels[l]) / total);
    REQUIRE(p >= levels[l] - 0.02 - 5.0 * se);
    REQUIRE(p <= levels[l] + 1.0 / (n_conf + 1.0) + 0.02 + 5.0 * se);
  }
}
