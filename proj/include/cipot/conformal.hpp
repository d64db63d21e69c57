#pragma once

// Conformal calibration of individual survival distributions. Conformity
// score of a subject = the predicted survival probability at the observed
// time. Censored subjects only bound their score from above, so each one
// contributes its score spread over the pseudo-uniform ladder {0, 1/R, ..., 1}
// while uncensored subjects contribute R identical copies. The empirical
// percentile map over the pooled multiset then re-levels each test curve:
// the adjusted curve passes through (S^-1(Percentile(rho)), rho) per grid
// level, which calibrates the marginal probability-of-time distribution
// without reordering subjects at any fixed time.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cipot/curves.hpp"

namespace cipot {

/// Ascending calibration levels, all inside (0,1). Presets follow the usual
/// centered layouts: 9 -> {0.1..0.9}, 19 -> {0.05..0.95}, 39 -> {0.025..0.975},
/// 49 -> {0.02..0.98}.
struct PercentileGrid {
  std::vector<double> levels;

  static PercentileGrid preset(int count) {
    if (count != 9 && count != 19 && count != 39 && count != 49)
      throw std::invalid_argument("PercentileGrid::preset: supported sizes are 9, 19, 39, 49");
    PercentileGrid g;
    g.levels.reserve(static_cast<std::size_t>(count));
    for (int i = 1; i <= count; ++i)
      g.levels.push_back(static_cast<double>(i) / static_cast<double>(count + 1));
    return g;
  }

  static PercentileGrid custom(std::vector<double> levels) {
    PercentileGrid g;
    g.levels = std::move(levels);
    g.validate();
    return g;
  }

  void validate() const {
    if (levels.empty()) throw std::invalid_argument("PercentileGrid: empty");
    double prev = 0.0;
    for (double rho : levels) {
      if (!(rho > 0.0 && rho < 1.0)) throw std::invalid_argument("PercentileGrid: level outside (0,1)");
      if (!(rho > prev)) throw std::invalid_argument("PercentileGrid: levels must be strictly increasing");
      prev = rho;
    }
  }

  std::size_t size() const { return levels.size(); }
};

struct ConformalConfig {
  int R = 100;                  // censored-score ladder resolution
  bool balanced_counts = false; // pad uncensored subjects to R+1 copies
  double tie_jitter = 0.0;      // optional deterministic rank-proportional tie breaker
};

/// Pooled conformity-score multiset, sorted ascending.
struct ConformityScoreSet {
  std::vector<double> scores;
  std::size_t subject_count = 0;
  std::size_t censored_count = 0;
};

/// Probability-of-time conformity score: the curve evaluated at the observed
/// time. For a censored subject this is an upper bound of the event-time score.
template <SurvivalCurve C>
double ipot_score(const C& curve, double observed_time) {
  return curve.eval(observed_time);
}

template <SurvivalCurve C>
ConformityScoreSet build_score_set(const std::vector<C>& curves, std::span<const double> times,
                                   std::span<const std::uint8_t> events, const ConformalConfig& cfg = {}) {
  const std::size_t n = curves.size();
  if (times.size() != n || events.size() != n)
    throw std::invalid_argument("build_score_set: curves/times/events length mismatch");
  if (n == 0) throw std::invalid_argument("build_score_set: empty conformal set");
  if (cfg.R < 1) throw std::invalid_argument("build_score_set: R must be >= 1");
  if (!(cfg.tie_jitter >= 0.0 && cfg.tie_jitter < 1e-9))
    throw std::invalid_argument("build_score_set: tie_jitter must be in [0, 1e-9)");

  const std::size_t r = static_cast<std::size_t>(cfg.R);
  ConformityScoreSet out;
  out.subject_count = n;
  std::size_t censored = 0;
  for (std::size_t i = 0; i < n; ++i) censored += events[i] ? 0 : 1;
  out.censored_count = censored;
  const std::size_t per_uncensored = cfg.balanced_counts ? r + 1 : r;
  out.scores.reserve(censored * (r + 1) + (n - censored) * per_uncensored);

  for (std::size_t i = 0; i < n; ++i) {
    const double gamma = ipot_score(curves[i], times[i]);
    if (!(gamma >= 0.0 && gamma <= 1.0))
      throw std::invalid_argument("build_score_set: score outside [0,1] at subject " + std::to_string(i));
    if (events[i]) {
      for (std::size_t c = 0; c < per_uncensored; ++c) out.scores.push_back(gamma);
    } else {
      // gamma * {0/R, 1/R, ..., R/R}: the score is only known to lie below
      // gamma, so spread it uniformly over that range.
      for (std::size_t c = 0; c <= r; ++c)
        out.scores.push_back(gamma * static_cast<double>(c) / static_cast<double>(r));
    }
  }
  std::sort(out.scores.begin(), out.scores.end());
  if (cfg.tie_jitter > 0.0) {
    for (std::size_t i = 0; i < out.scores.size(); ++i)
      out.scores[i] = std::min(1.0, out.scores[i] + cfg.tie_jitter * static_cast<double>(i));
  }
  return out;
}

/// Order statistic at 1-based index min(ceil(rho * (N+1)), N) of the sorted
/// multiset, N counted after repetition. The ceil argument is nudged down by
/// 1e-9 so grid levels that are exact rationals are not bumped by float error.
inline double empirical_percentile(const ConformityScoreSet& gamma, double rho) {
  if (gamma.scores.empty()) throw std::invalid_argument("empirical_percentile: empty score set");
  if (!(rho > 0.0 && rho < 1.0)) throw std::invalid_argument("empirical_percentile: level outside (0,1)");
  const auto n = static_cast<long long>(gamma.scores.size());
  long long idx = static_cast<long long>(std::ceil(rho * static_cast<double>(n + 1) - 1e-9));
  idx = std::max(1LL, std::min(idx, n));
  return gamma.scores[static_cast<std::size_t>(idx - 1)];
}

/// Construction options for adjusted curves. horizon = 0 inherits the input
/// curve's horizon so flagged inversions stay consistent before/after.
struct AdjustOptions {
  Interp interp = Interp::pchip;
  Extrap extrap = Extrap::linear;
  double floor_eps = 1e-6;
  double horizon = 0.0;
  double inverse_tol_rel = 1e-8;
};

/// Re-level one curve through the percentile map: for each grid level rho the
/// adjusted curve satisfies S~(t) <= rho exactly where S(t) <= Percentile(rho).
template <SurvivalCurve C>
ContinuousISD cipot_adjust(const C& curve, const ConformityScoreSet& gamma, const PercentileGrid& grid,
                           const AdjustOptions& opts = {}) {
  grid.validate();
  const double horizon = opts.horizon > 0.0 ? opts.horizon : curve.horizon();

  // Grid levels ascending -> percentiles ascending -> times non-increasing.
  struct Knot {
    double t;
    double rho;
  };
  std::vector<Knot> knots;
  knots.reserve(grid.size());
  double min_positive = horizon;
  for (double rho : grid.levels) {
    const double c = empirical_percentile(gamma, rho);
    const InverseResult inv = curve.inverse(std::max(c, std::numeric_limits<double>::min()));
    knots.push_back({inv.hit_horizon ? horizon : inv.time, rho});
    if (knots.back().t > 0.0) min_positive = std::min(min_positive, knots.back().t);
  }
  std::reverse(knots.begin(), knots.end());  // time ascending, rho descending

  // Degenerate score sets can invert two levels to the same time (or to t=0
  // when a percentile reaches 1). Keep the smallest level at each time, the
  // infimum reading, and nudge a leading zero to the inversion resolution.
  const double t_floor = std::max(1e-12, 1e-8 * min_positive);
  DiscreteISD out;
  for (auto& [t, rho] : knots) {
    if (t <= 0.0) t = t_floor;
    if (!out.times.empty() && t <= out.times.back()) {
      out.probs.back() = rho;  // later knot in this order has the smaller rho
      continue;
    }
    out.times.push_back(t);
    out.probs.push_back(rho);
  }
  for (std::size_t i = 1; i < out.probs.size(); ++i)
    if (out.probs[i] > out.probs[i - 1])
      throw std::logic_error("cipot_adjust: non-monotone adjusted knots");

  CurveOptions copts;
  copts.interp = opts.interp;
  copts.extrap = opts.extrap;
  copts.floor_eps = opts.floor_eps;
  copts.horizon = horizon;
  copts.inverse_tol_rel = opts.inverse_tol_rel;
  return make_continuous(out, copts);
}

struct CalibrationDiagnostics {
  int R = 0;
  std::vector<double> grid_levels;
  std::size_t score_count = 0;
  std::size_t subject_count = 0;
  std::size_t censored_count = 0;
  std::vector<std::pair<double, double>> percentile_map;  // (rho, Percentile(rho))
};

template <SurvivalCurve C>
struct CalibrationResult {
  std::vector<ContinuousISD> adjusted;
  CalibrationDiagnostics diagnostics;
};

/// Batch entry point: one score set from the conformal split, every test
/// curve re-leveled through it.
template <SurvivalCurve CConf, SurvivalCurve CTest>
CalibrationResult<CTest> calibrate_batch(const std::vector<CConf>& conformal_curves,
                                         std::span<const double> conformal_times,
                                         std::span<const std::uint8_t> conformal_events,
                                         const std::vector<CTest>& test_curves, const PercentileGrid& grid,
                                         const ConformalConfig& cfg = {}, const AdjustOptions& opts = {}) {
  const ConformityScoreSet gamma = build_score_set(conformal_curves, conformal_times, conformal_events, cfg);
  CalibrationResult<CTest> out;
  out.diagnostics.R = cfg.R;
  out.diagnostics.grid_levels = grid.levels;
  out.diagnostics.score_count = gamma.scores.size();
  out.diagnostics.subject_count = gamma.subject_count;
  out.diagnostics.censored_count = gamma.censored_count;
  for (double rho : grid.levels) out.diagnostics.percentile_map.emplace_back(rho, empirical_percentile(gamma, rho));
  out.adjusted.reserve(test_curves.size());
  for (const auto& c : test_curves) out.adjusted.push_back(cipot_adjust(c, gamma, grid, opts));
  return out;
}

}  // namespace cipot
