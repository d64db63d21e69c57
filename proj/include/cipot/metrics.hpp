#pragma once

// Evaluation metrics for individual survival distributions on right-censored
// data. Calibration scores blur each censored subject uniformly over the
// levels below its curve value at the censoring time (the conditional law of
// the event-time score under a calibrated model). Discrimination covers
// Harrell's C, fixed-time AUROC, and the time-dependent concordance; accuracy
// covers the IPCW-weighted integrated Brier score and the pseudo-observation
// mean absolute error.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cipot/conformal.hpp"
#include "cipot/curves.hpp"
#include "cipot/mathutil.hpp"
#include "cipot/models.hpp"

namespace cipot {

/// Mass a censored subject with curve value gamma at its censoring time puts
/// into the level bin [rho1, rho2]: the event-time score is uniform on
/// [0, gamma] given the data, so the bin takes the overlapping share. A score
/// of exactly zero (floor pathologies) concentrates at level 1 by convention.
inline double censored_bin_probability(double gamma, double rho1, double rho2) {
  if (!(rho1 >= 0.0 && rho1 < rho2 && rho2 <= 1.0))
    throw std::invalid_argument("censored_bin_probability: need 0 <= rho1 < rho2 <= 1");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("censored_bin_probability: score outside [0,1]");
  if (gamma == 0.0) return rho2 >= 1.0 ? 1.0 : 0.0;
  double mass = 0.0;
  if (gamma >= rho1 && gamma <= rho2) mass = gamma - rho1;
  if (gamma > rho2) mass = rho2 - rho1;
  return mass / gamma;
}

namespace detail {

/// Cumulative-bin contribution of one subject at one level.
inline double level_mass(double gamma, bool event, double rho) {
  if (event) return gamma <= rho ? 1.0 : 0.0;
  if (gamma == 0.0) return rho >= 1.0 ? 1.0 : 0.0;
  if (gamma <= rho) return 1.0;
  return rho / gamma;
}

template <SurvivalCurve C>
std::vector<double> observed_scores(const std::vector<C>& curves, std::span<const double> times) {
  if (curves.size() != times.size()) throw std::invalid_argument("metrics: curves/records length mismatch");
  std::vector<double> g(curves.size());
  for (std::size_t i = 0; i < curves.size(); ++i) g[i] = curves[i].eval(times[i]);
  return g;
}

}  // namespace detail

struct PPPoint {
  double expected = 0.0;
  double observed = 0.0;
};

struct CalMarginResult {
  double score = 0.0;
  std::vector<PPPoint> pp;              // one pair per grid level
  std::size_t zero_score_censored = 0;  // subjects hitting the gamma = 0 convention
};

inline CalMarginResult cal_margin_from_scores(std::span<const double> gammas, std::span<const std::uint8_t> events,
                                              const PercentileGrid& grid) {
  grid.validate();
  const std::size_t n = gammas.size();
  if (n == 0) throw std::invalid_argument("cal_margin: empty test set");
  if (events.size() != n) throw std::invalid_argument("cal_margin: scores/events length mismatch");
  CalMarginResult out;
  out.pp.reserve(grid.size());
  for (std::size_t i = 0; i < n; ++i)
    if (!events[i] && gammas[i] == 0.0) ++out.zero_score_censored;
  double acc = 0.0;
  for (double rho : grid.levels) {
    double mass = 0.0;
    for (std::size_t i = 0; i < n; ++i) mass += detail::level_mass(gammas[i], events[i] != 0, rho);
    mass /= static_cast<double>(n);
    out.pp.push_back({rho, mass});
    acc += (mass - rho) * (mass - rho);
  }
  out.score = acc / static_cast<double>(grid.size());
  return out;
}

/// Marginal distribution calibration: mean squared gap between the observed
/// cumulative score mass and the diagonal, over the level grid.
template <SurvivalCurve C>
CalMarginResult cal_margin(const std::vector<C>& curves, std::span<const double> times,
                           std::span<const std::uint8_t> events, const PercentileGrid& grid) {
  const auto gammas = detail::observed_scores(curves, times);
  return cal_margin_from_scores(gammas, events, grid);
}

// ---------------------------------------------------------------------------
// Worst-slab distribution calibration. Adversarial region search over slabs
// S_{v,a,b} = {x : a <= v.x <= b} with at least kappa of the explore subjects,
// scored on the held-out exploit subjects.
// ---------------------------------------------------------------------------

struct Slab {
  std::vector<double> v;  // unit direction
  double a = 0.0;
  double b = 0.0;
  double mass = 0.0;  // explore-set fraction inside
};

struct CalWsOptions {
  double kappa = 0.33;
  int M = 1000;
  double explore_fraction = 0.25;
  std::uint64_t seed = 0;
  double quantile_step = 0.02;
};

struct CalWsResult {
  bool slab_empty = false;  // exploit set had no subjects inside the chosen slab
  double score = 0.0;
  Slab slab;
  double explore_score = 0.0;  // the maximized objective, diagnostics only
};

inline double slab_projection(std::span<const double> v, std::span<const double> x) {
  double z = 0.0;
  for (std::size_t j = 0; j < v.size(); ++j) z += v[j] * x[j];
  return z;
}

/// Evaluate the marginal calibration score restricted to the subjects inside
/// one fixed slab (exact whole-space slabs reproduce cal_margin).
template <SurvivalCurve C>
std::optional<CalMarginResult> cal_margin_in_slab(const std::vector<C>& curves, std::span<const double> times,
                                                  std::span<const std::uint8_t> events,
                                                  std::span<const double> X, std::size_t d,
                                                  const PercentileGrid& grid, const Slab& slab) {
  std::vector<double> g, e_raw;
  std::vector<std::uint8_t> e;
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const double z = slab_projection(slab.v, X.subspan(i * d, d));
    if (z >= slab.a && z <= slab.b) {
      g.push_back(curves[i].eval(times[i]));
      e.push_back(events[i]);
    }
  }
  if (g.empty()) return std::nullopt;
  return cal_margin_from_scores(g, e, grid);
}

template <SurvivalCurve C>
CalWsResult cal_ws(const std::vector<C>& curves, std::span<const double> times,
                   std::span<const std::uint8_t> events, std::span<const double> X, std::size_t d,
                   const PercentileGrid& grid, const CalWsOptions& opts = {}) {
  grid.validate();
  const std::size_t n = curves.size();
  if (times.size() != n || events.size() != n) throw std::invalid_argument("cal_ws: curves/records length mismatch");
  if (X.size() != n * d || d == 0) throw std::invalid_argument("cal_ws: feature matrix shape mismatch");
  if (!(opts.kappa > 0.0 && opts.kappa <= 1.0)) throw std::invalid_argument("cal_ws: kappa outside (0,1]");
  if (opts.M < 1) throw std::invalid_argument("cal_ws: M must be >= 1");
  if (!(opts.explore_fraction > 0.0 && opts.explore_fraction < 1.0))
    throw std::invalid_argument("cal_ws: explore fraction outside (0,1)");

  Rng rng(opts.seed);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  const std::size_t ne =
      static_cast<std::size_t>(std::llround(static_cast<double>(n) * opts.explore_fraction));
  if (ne < 2 || ne < static_cast<std::size_t>(std::ceil(1.0 / opts.kappa)))
    throw std::invalid_argument("cal_ws: explore split too small for the slab mass floor");
  if (ne >= n) throw std::invalid_argument("cal_ws: empty exploit split");
  const std::span<const std::size_t> explore(perm.data(), ne);
  const std::span<const std::size_t> exploit(perm.data() + ne, n - ne);

  const auto gammas = detail::observed_scores(curves, times);
  const std::size_t nl = grid.size();

  // Per-level masses of each explore subject; slabs become contiguous ranges
  // after sorting by projected value, so range masses come from prefix sums.
  std::vector<double> contrib(ne * nl);
  for (std::size_t r = 0; r < ne; ++r) {
    const std::size_t i = explore[r];
    for (std::size_t l = 0; l < nl; ++l)
      contrib[r * nl + l] = detail::level_mass(gammas[i], events[i] != 0, grid.levels[l]);
  }

  // Candidate boundaries: quantile indices of the projected explore values.
  std::vector<std::size_t> bounds;
  for (double q = 0.0; q < 1.0 + 1e-12; q += opts.quantile_step)
    bounds.push_back(static_cast<std::size_t>(std::llround(std::min(1.0, q) * static_cast<double>(ne))));
  bounds.erase(std::unique(bounds.begin(), bounds.end()), bounds.end());
  const double min_count = opts.kappa * static_cast<double>(ne) - 1e-9;

  double best = -1.0;
  Slab best_slab;
  std::vector<double> z(ne);
  std::vector<std::size_t> order(ne);
  std::vector<double> prefix((ne + 1) * nl);
  for (int m = 0; m < opts.M; ++m) {
    const std::vector<double> v = rng.unit_vector(d);
    for (std::size_t r = 0; r < ne; ++r) z[r] = slab_projection(v, X.subspan(explore[r] * d, d));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return z[a] != z[b] ? z[a] < z[b] : a < b;
    });
    std::fill(prefix.begin(), prefix.begin() + nl, 0.0);
    for (std::size_t r = 0; r < ne; ++r)
      for (std::size_t l = 0; l < nl; ++l)
        prefix[(r + 1) * nl + l] = prefix[r * nl + l] + contrib[order[r] * nl + l];

    for (std::size_t bi = 0; bi + 1 < bounds.size(); ++bi) {
      for (std::size_t bj = bi + 1; bj < bounds.size(); ++bj) {
        const std::size_t lo = bounds[bi], hi = bounds[bj];
        const double count = static_cast<double>(hi - lo);
        if (count < min_count) continue;
        double acc = 0.0;
        for (std::size_t l = 0; l < nl; ++l) {
          const double mass = (prefix[hi * nl + l] - prefix[lo * nl + l]) / count;
          acc += (mass - grid.levels[l]) * (mass - grid.levels[l]);
        }
        const double score = acc / static_cast<double>(nl);
        if (score > best) {
          best = score;
          best_slab.v = v;
          best_slab.a = z[order[lo]];
          best_slab.b = z[order[hi - 1]];
          best_slab.mass = count / static_cast<double>(ne);
        }
      }
    }
  }
  if (best < 0.0) throw std::runtime_error("cal_ws: no slab satisfied the mass floor");

  CalWsResult out;
  out.slab = best_slab;
  out.explore_score = best;
  std::vector<double> g;
  std::vector<std::uint8_t> e;
  for (const std::size_t i : exploit) {
    const double zi = slab_projection(best_slab.v, X.subspan(i * d, d));
    if (zi >= best_slab.a && zi <= best_slab.b) {
      g.push_back(gammas[i]);
      e.push_back(events[i]);
    }
  }
  if (g.empty()) {
    out.slab_empty = true;
    return out;
  }
  out.score = cal_margin_from_scores(g, e, grid).score;
  return out;
}

// ---------------------------------------------------------------------------
// Discrimination.
// ---------------------------------------------------------------------------

template <SurvivalCurve C>
std::vector<double> median_times(const std::vector<C>& curves) {
  std::vector<double> out(curves.size());
  for (std::size_t i = 0; i < curves.size(); ++i) out[i] = curves[i].inverse(0.5).time;
  return out;
}

/// Harrell's concordance with risk = negative predicted median survival time.
/// Comparable: i uncensored with t_i < t_j. Risk ties count one half.
inline double harrell_cindex(std::span<const double> median_time, std::span<const double> times,
                             std::span<const std::uint8_t> events) {
  const std::size_t n = times.size();
  if (median_time.size() != n || events.size() != n)
    throw std::invalid_argument("harrell_cindex: length mismatch");
  double num = 0.0;
  std::size_t comparable = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!events[i]) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (times[i] >= times[j]) continue;
      ++comparable;
      const double ri = -median_time[i], rj = -median_time[j];
      if (ri > rj)
        num += 1.0;
      else if (ri == rj)
        num += 0.5;
    }
  }
  if (comparable == 0) throw std::invalid_argument("harrell_cindex: no comparable pairs");
  return num / static_cast<double>(comparable);
}

/// Fixed-time AUROC: cases experienced an event by t_star, controls are still
/// at risk past it; concordance compares the curves at t_star.
template <SurvivalCurve C>
std::optional<double> auroc_at(const std::vector<C>& curves, std::span<const double> times,
                               std::span<const std::uint8_t> events, double t_star) {
  const std::size_t n = curves.size();
  if (times.size() != n || events.size() != n) throw std::invalid_argument("auroc_at: length mismatch");
  std::vector<double> case_p, ctrl_p;
  for (std::size_t i = 0; i < n; ++i) {
    if (events[i] && times[i] <= t_star)
      case_p.push_back(curves[i].eval(t_star));
    else if (times[i] > t_star)
      ctrl_p.push_back(curves[i].eval(t_star));
  }
  if (case_p.empty() || ctrl_p.empty()) return std::nullopt;
  double num = 0.0;
  for (const double a : case_p)
    for (const double b : ctrl_p) {
      if (a < b)
        num += 1.0;
      else if (a == b)
        num += 0.5;
    }
  return num / (static_cast<double>(case_p.size()) * static_cast<double>(ctrl_p.size()));
}

/// Time-dependent concordance, pairwise form: over comparable pairs
/// (i uncensored, t_i < t_j), concordant when S(t_i|x_i) < S(t_i|x_j).
template <SurvivalCurve C>
double antolini_ctd(const std::vector<C>& curves, std::span<const double> times,
                    std::span<const std::uint8_t> events) {
  const std::size_t n = curves.size();
  if (times.size() != n || events.size() != n) throw std::invalid_argument("antolini_ctd: length mismatch");
  double num = 0.0;
  std::size_t comparable = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!events[i]) continue;
    const double si = curves[i].eval(times[i]);
    for (std::size_t j = 0; j < n; ++j) {
      if (times[i] >= times[j]) continue;
      ++comparable;
      const double sj = curves[j].eval(times[i]);
      if (si < sj)
        num += 1.0;
      else if (si == sj)
        num += 0.5;
    }
  }
  if (comparable == 0) throw std::invalid_argument("antolini_ctd: no comparable pairs");
  return num / static_cast<double>(comparable);
}

/// Same quantity as a weight-averaged AUROC over the distinct event times:
/// at each event time the cases are the subjects whose event happens exactly
/// there, weights proportional to cases x controls. Kept as an independent
/// formulation for cross-checking the pairwise form.
template <SurvivalCurve C>
double antolini_ctd_weighted(const std::vector<C>& curves, std::span<const double> times,
                             std::span<const std::uint8_t> events) {
  const std::size_t n = curves.size();
  if (times.size() != n || events.size() != n) throw std::invalid_argument("antolini_ctd: length mismatch");
  std::vector<double> distinct;
  for (std::size_t i = 0; i < n; ++i)
    if (events[i]) distinct.push_back(times[i]);
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  double weighted = 0.0, total_weight = 0.0;
  for (const double tk : distinct) {
    std::vector<std::size_t> cases, ctrls;
    for (std::size_t i = 0; i < n; ++i) {
      if (events[i] && times[i] == tk)
        cases.push_back(i);
      else if (times[i] > tk)
        ctrls.push_back(i);
    }
    if (cases.empty() || ctrls.empty()) continue;
    double num = 0.0;
    for (const std::size_t i : cases) {
      const double si = curves[i].eval(tk);
      for (const std::size_t j : ctrls) {
        const double sj = curves[j].eval(tk);
        if (si < sj)
          num += 1.0;
        else if (si == sj)
          num += 0.5;
      }
    }
    const double w = static_cast<double>(cases.size()) * static_cast<double>(ctrls.size());
    weighted += (num / w) * w;
    total_weight += w;
  }
  if (total_weight == 0.0) throw std::invalid_argument("antolini_ctd: no comparable pairs");
  return weighted / total_weight;
}

// ---------------------------------------------------------------------------
// Accuracy.
// ---------------------------------------------------------------------------

struct IbsResult {
  double value = 0.0;
  double integration_end = 0.0;  // < t_max when the censoring KM hit zero early
  bool truncated = false;
};

/// Integrated Brier score with inverse-probability-of-censoring weights.
/// G is the product-limit estimate of the censoring distribution on the same
/// records (event indicator flipped); the integral runs over {0} + distinct
/// event times + {t_max}, trapezoidal.
template <SurvivalCurve C>
IbsResult ibs(const std::vector<C>& curves, std::span<const double> times, std::span<const std::uint8_t> events,
              double t_max) {
  const std::size_t n = curves.size();
  if (times.size() != n || events.size() != n) throw std::invalid_argument("ibs: length mismatch");
  if (!(t_max > 0.0)) throw std::invalid_argument("ibs: t_max must be positive");
  if (n == 0) throw std::invalid_argument("ibs: empty test set");

  std::vector<std::uint8_t> flipped(n);
  for (std::size_t i = 0; i < n; ++i) flipped[i] = events[i] ? 0 : 1;
  const KaplanMeier G = km_fit(times, flipped);

  IbsResult out;
  out.integration_end = t_max;
  // Truncate where the censoring weight collapses.
  if (G.eval(t_max) <= 0.0) {
    double last_pos = 0.0;
    for (std::size_t k = 0; k < G.event_times.size(); ++k) {
      if (G.survival[k] <= 0.0) break;
      last_pos = G.event_times[k];
    }
    out.integration_end = last_pos;
    out.truncated = true;
    if (!(out.integration_end > 0.0)) throw std::runtime_error("ibs: censoring weight vanishes immediately");
  }

  std::vector<double> grid;
  grid.push_back(0.0);
  for (std::size_t i = 0; i < n; ++i)
    if (events[i] && times[i] <= out.integration_end) grid.push_back(times[i]);
  grid.push_back(out.integration_end);
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  auto brier = [&](double t) {
    double acc = 0.0;
    std::size_t used = 0;
    const double gt = G.eval(t);
    for (std::size_t i = 0; i < n; ++i) {
      const double s = curves[i].eval(std::max(t, 0.0));
      if (events[i] && times[i] <= t) {
        const double gi = G.eval(times[i]);
        if (gi > 0.0) {
          acc += s * s / gi;
          ++used;
        }
      } else if (times[i] > t) {
        if (gt > 0.0) {
          acc += (1.0 - s) * (1.0 - s) / gt;
          ++used;
        }
      } else {
        ++used;  // censored before t contributes zero with full weight
      }
    }
    return acc / static_cast<double>(n);
  };

  double integral = 0.0;
  double prev_t = grid[0], prev_b = brier(grid[0]);
  for (std::size_t k = 1; k < grid.size(); ++k) {
    const double b = brier(grid[k]);
    integral += 0.5 * (prev_b + b) * (grid[k] - prev_t);
    prev_t = grid[k];
    prev_b = b;
  }
  out.value = integral / t_max;
  return out;
}

namespace detail {

/// Restricted mean survival time of the product-limit curve over the sample
/// with one optional slot skipped (leave-one-out), inputs pre-sorted by time.
inline double pl_restricted_mean_sorted(std::span<const double> t, std::span<const std::uint8_t> e,
                                        std::size_t skip = static_cast<std::size_t>(-1)) {
  const std::size_t n_all = t.size();
  const std::size_t n = skip < n_all ? n_all - 1 : n_all;
  if (n == 0) throw std::invalid_argument("restricted mean of an empty sample");
  double area = 0.0, prev_t = 0.0, s = 1.0;
  std::size_t seen = 0;
  std::size_t i = 0;
  while (i < n_all) {
    if (i == skip) {
      ++i;
      continue;
    }
    const double ti = t[i];
    std::size_t deaths = 0, group = 0;
    while (i < n_all && t[i] == ti) {
      if (i != skip) {
        deaths += e[i] ? 1 : 0;
        ++group;
      }
      ++i;
    }
    if (deaths > 0) {
      area += s * (ti - prev_t);
      prev_t = ti;
      s *= 1.0 - static_cast<double>(deaths) / static_cast<double>(n - seen);
    }
    seen += group;
  }
  // Tail of the step function out to the sample's own maximum observation.
  double t_end = 0.0;
  for (std::size_t k = n_all; k-- > 0;) {
    if (k == skip) continue;
    t_end = t[k];
    break;
  }
  area += s * (t_end - prev_t);
  return area;
}

}  // namespace detail

struct MaePoResult {
  double value = 0.0;
  std::vector<double> pseudo_times;  // surrogate target per subject (t_i when uncensored)
  std::vector<double> weights;
};

/// Mean absolute error against pseudo-observation surrogates: uncensored
/// subjects keep their time with weight 1; censored subjects get the jackknife
/// pseudo-observation of the KM restricted mean, weighted by 1 - S_KM(t_i).
inline MaePoResult mae_po(std::span<const double> median_time, std::span<const double> times,
                          std::span<const std::uint8_t> events) {
  const std::size_t n = times.size();
  if (median_time.size() != n || events.size() != n) throw std::invalid_argument("mae_po: length mismatch");
  if (n < 2) throw std::invalid_argument("mae_po: need at least 2 records");
  std::size_t n_events = 0;
  for (auto e : events) n_events += e ? 1 : 0;
  if (n_events == 0) throw std::invalid_argument("mae_po: KM mean undefined without events");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });
  std::vector<double> st(n);
  std::vector<std::uint8_t> se(n);
  std::vector<std::size_t> slot_of(n);
  for (std::size_t k = 0; k < n; ++k) {
    st[k] = times[order[k]];
    se[k] = events[order[k]];
    slot_of[order[k]] = k;
  }

  const KaplanMeier full = km_fit(times, events);
  const double mean_full = detail::pl_restricted_mean_sorted(st, se);

  MaePoResult out;
  out.pseudo_times.resize(n);
  out.weights.resize(n);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double target, w;
    if (events[i]) {
      target = times[i];
      w = 1.0;
    } else {
      const double mean_loo = detail::pl_restricted_mean_sorted(st, se, slot_of[i]);
      target = static_cast<double>(n) * mean_full - static_cast<double>(n - 1) * mean_loo;
      w = 1.0 - full.eval(times[i]);
    }
    out.pseudo_times[i] = target;
    out.weights[i] = w;
    num += w * std::fabs(target - median_time[i]);
    den += w;
  }
  if (den <= 0.0) throw std::runtime_error("mae_po: all weights vanished");
  out.value = num / den;
  return out;
}

}  // namespace cipot
