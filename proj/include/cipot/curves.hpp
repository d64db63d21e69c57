#pragma once

// Individual survival distributions (ISDs). A model emits a discrete curve:
// survival probabilities on an increasing time grid. make_continuous() turns
// that into an evaluable curve with an implicit (0, 1) anchor, a monotone
// interpolant between knots, and an explicit tail policy beyond the last knot.
// inverse() realizes the generalized inverse inf{t : S(t) <= rho}, which is
// what both the calibration adjustment and time-quantile metrics consume.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace cipot {

/// Knot-based survival curve as produced by a model: S(times[k]) = probs[k].
/// Times are strictly increasing and positive; probs non-increasing in [0,1].
struct DiscreteISD {
  std::vector<double> times;
  std::vector<double> probs;
};

enum class Interp {
  linear,
  pchip,  // monotone cubic (Fritsch-Carlson tangents); default
};

enum class Extrap {
  linear,       // decay past the last knot at the last segment's slope, then flat at the floor
  flat,         // hold the last knot value forever
  global_line,  // decay at the chord slope from the (0,1) anchor to the last knot
};

struct CurveOptions {
  Interp interp = Interp::pchip;
  Extrap extrap = Extrap::linear;
  double floor_eps = 1e-6;       // eval() never returns below this
  double horizon = 0.0;          // 0 = auto: 1.5x the last knot time
  double inverse_tol_rel = 1e-8; // bisection tolerance as a fraction of the last knot time
};

/// Result of a generalized inverse. hit_horizon is set when the curve never
/// reaches the requested level (level below the floor, or a flat tail), in
/// which case time is the configured horizon.
struct InverseResult {
  double time = 0.0;
  bool hit_horizon = false;
};

/// Evaluable survival curve. eval(0) = 1, non-increasing, floored at floor_eps.
class ContinuousISD {
 public:
  ContinuousISD() = default;

  double eval(double t) const {
    if (!(t >= 0.0)) throw std::domain_error("ContinuousISD::eval: negative time");
    const double last_t = times_.back();
    if (t >= last_t) return clamp_prob(tail_value(t));
    // times_[0] = 0 anchor, so t < last_t lands in a real segment.
    const std::size_t k = static_cast<std::size_t>(
        std::upper_bound(times_.begin(), times_.end(), t) - times_.begin());
    return clamp_prob(segment_value(k - 1, t));
  }

  /// inf{t : eval(t) <= rho} for rho in (0, 1]. Flat stretches resolve to
  /// their left edge; levels below the floor report the horizon.
  InverseResult inverse(double rho) const {
    if (!(rho > 0.0 && rho <= 1.0)) throw std::domain_error("ContinuousISD::inverse: level outside (0,1]");
    if (rho < floor_eps_) return {horizon_, true};
    if (rho >= 1.0) return {0.0, false};
    // First knot at or below the level; probs_ are non-increasing.
    const auto it = std::lower_bound(probs_.begin(), probs_.end(), rho,
                                     [](double p, double level) { return p > level; });
    if (it == probs_.end()) {
      // All knots above rho: the crossing, if any, is in the tail.
      return tail_inverse(rho);
    }
    const std::size_t k = static_cast<std::size_t>(it - probs_.begin());
    if (k == 0) return {0.0, false};
    return {bisect_segment(k - 1, rho), false};
  }

  /// Convenience time quantile; the 0.5 level is the median survival time.
  InverseResult quantile(double rho) const { return inverse(rho); }
  double median_time() const { return inverse(0.5).time; }

  std::size_t knot_count() const { return times_.size() - 1; }
  const std::vector<double>& grid_times() const { return times_; }
  const std::vector<double>& grid_probs() const { return probs_; }
  double floor_eps() const { return floor_eps_; }
  double horizon() const { return horizon_; }
  double inverse_tol() const { return inv_tol_; }

  friend ContinuousISD make_continuous(const DiscreteISD&, const CurveOptions&);

 private:
  double clamp_prob(double p) const { return std::min(1.0, std::max(floor_eps_, p)); }

  double segment_value(std::size_t k, double t) const {
    const double h = times_[k + 1] - times_[k];
    const double s = (t - times_[k]) / h;
    if (interp_ == Interp::linear) return probs_[k] + (probs_[k + 1] - probs_[k]) * s;
    const double s2 = s * s, s3 = s2 * s;
    return (2 * s3 - 3 * s2 + 1) * probs_[k] + (s3 - 2 * s2 + s) * h * tangents_[k] +
           (-2 * s3 + 3 * s2) * probs_[k + 1] + (s3 - s2) * h * tangents_[k + 1];
  }

  double tail_value(double t) const {
    const double p_end = probs_.back();
    if (tail_slope_ == 0.0) return p_end;
    return p_end + tail_slope_ * (t - times_.back());
  }

  InverseResult tail_inverse(double rho) const {
    const double p_end = probs_.back();
    if (rho >= p_end) return {times_.back(), false};  // clamped flats at the end
    if (tail_slope_ == 0.0) return {horizon_, true};
    return {times_.back() + (p_end - rho) / (-tail_slope_), false};
  }

  // Leftmost point of {eval <= rho} inside segment [times_[k], times_[k+1]].
  double bisect_segment(std::size_t k, double rho) const {
    double lo = times_[k], hi = times_[k + 1];
    if (clamp_prob(segment_value(k, lo)) <= rho) return lo;
    while (hi - lo > inv_tol_) {
      const double mid = 0.5 * (lo + hi);
      if (clamp_prob(segment_value(k, mid)) <= rho)
        hi = mid;
      else
        lo = mid;
    }
    return hi;
  }

  std::vector<double> times_;     // prefixed with the t=0 anchor
  std::vector<double> probs_;     // prefixed with 1
  std::vector<double> tangents_;  // pchip only
  Interp interp_ = Interp::pchip;
  double floor_eps_ = 1e-6;
  double horizon_ = 0.0;
  double inv_tol_ = 0.0;
  double tail_slope_ = 0.0;
};

namespace detail {

/// Fritsch-Carlson tangents for monotone cubic interpolation. Data here is
/// non-increasing, so every secant slope is <= 0 and the interpolant cannot
/// overshoot between knots.
inline std::vector<double> pchip_tangents(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  std::vector<double> m(n, 0.0);
  if (n == 2) {
    m[0] = m[1] = (y[1] - y[0]) / (x[1] - x[0]);
    return m;
  }
  std::vector<double> h(n - 1), delta(n - 1);
  for (std::size_t k = 0; k + 1 < n; ++k) {
    h[k] = x[k + 1] - x[k];
    delta[k] = (y[k + 1] - y[k]) / h[k];
  }
  for (std::size_t k = 1; k + 1 < n; ++k) {
    if (delta[k - 1] == 0.0 || delta[k] == 0.0 || (delta[k - 1] < 0.0) != (delta[k] < 0.0)) {
      m[k] = 0.0;
    } else {
      const double w1 = 2.0 * h[k] + h[k - 1];
      const double w2 = h[k] + 2.0 * h[k - 1];
      m[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
    }
  }
  auto endpoint = [](double h0, double h1, double d0, double d1) {
    double t = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if (t * d0 <= 0.0)
      t = 0.0;
    else if (d0 * d1 < 0.0 && std::fabs(t) > 3.0 * std::fabs(d0))
      t = 3.0 * d0;
    return t;
  };
  m[0] = endpoint(h[0], h[1], delta[0], delta[1]);
  m[n - 1] = endpoint(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
  return m;
}

}  // namespace detail

inline ContinuousISD make_continuous(const DiscreteISD& isd, const CurveOptions& opts = {}) {
  const std::size_t k = isd.times.size();
  if (k == 0) throw std::invalid_argument("make_continuous: empty curve");
  if (isd.probs.size() != k) throw std::invalid_argument("make_continuous: times/probs length mismatch");
  if (!(opts.floor_eps > 0.0 && opts.floor_eps < 1.0))
    throw std::invalid_argument("make_continuous: floor must be in (0,1)");
  double prev_t = 0.0, prev_p = 1.0;
  for (std::size_t i = 0; i < k; ++i) {
    if (!(isd.times[i] > prev_t))
      throw std::invalid_argument("make_continuous: times must be strictly increasing and positive (knot " +
                                  std::to_string(i) + ")");
    if (!(isd.probs[i] >= 0.0 && isd.probs[i] <= 1.0))
      throw std::invalid_argument("make_continuous: probability outside [0,1] (knot " + std::to_string(i) + ")");
    if (isd.probs[i] > prev_p)
      throw std::invalid_argument("make_continuous: probabilities increase at knot " + std::to_string(i));
    prev_t = isd.times[i];
    prev_p = isd.probs[i];
  }

  ContinuousISD c;
  c.interp_ = opts.interp;
  c.floor_eps_ = opts.floor_eps;
  c.times_.reserve(k + 1);
  c.probs_.reserve(k + 1);
  c.times_.push_back(0.0);
  c.probs_.push_back(1.0);
  c.times_.insert(c.times_.end(), isd.times.begin(), isd.times.end());
  c.probs_.insert(c.probs_.end(), isd.probs.begin(), isd.probs.end());

  const double t_end = c.times_.back();
  c.horizon_ = opts.horizon > 0.0 ? opts.horizon : 1.5 * t_end;
  c.inv_tol_ = opts.inverse_tol_rel * t_end;

  if (opts.interp == Interp::pchip) c.tangents_ = detail::pchip_tangents(c.times_, c.probs_);

  const std::size_t m = c.times_.size();
  switch (opts.extrap) {
    case Extrap::flat:
      c.tail_slope_ = 0.0;
      break;
    case Extrap::global_line:
      c.tail_slope_ = (c.probs_.back() - 1.0) / t_end;
      break;
    case Extrap::linear:
      c.tail_slope_ = (c.probs_[m - 1] - c.probs_[m - 2]) / (c.times_[m - 1] - c.times_[m - 2]);
      break;
  }
  if (c.tail_slope_ > 0.0) c.tail_slope_ = 0.0;
  return c;
}

/// Anything the calibration and metric layers can consume: a survival curve
/// with S(0) = 1, a generalized inverse, and a finite reporting horizon.
template <class C>
concept SurvivalCurve = requires(const C& c, double t, double rho) {
  { c.eval(t) } -> std::convertible_to<double>;
  { c.inverse(rho) } -> std::convertible_to<InverseResult>;
  { c.horizon() } -> std::convertible_to<double>;
};

static_assert(SurvivalCurve<ContinuousISD>);

}  // namespace cipot
