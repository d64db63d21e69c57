#pragma once

// Synthetic survival data with known ground truth. Each subject gets a
// closed-form survival curve (Weibull or log-normal) whose parameters depend
// on iid standard normal features through log-linear links, an event time
// drawn by inverting that curve at a uniform, and an (optionally conditional)
// exponential censoring time. Everything is seeded and per-subject streamed,
// so generation is deterministic and order-independent.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "cipot/curves.hpp"
#include "cipot/dataset.hpp"
#include "cipot/mathutil.hpp"

namespace cipot {

enum class Family { weibull, lognormal };

/// Closed-form survival curve; satisfies the same interface as interpolated
/// curves so calibration and metrics code can run against ground truth.
class OracleCurve {
 public:
  OracleCurve(Family family, double scale, double shape) : family_(family), scale_(scale), shape_(shape) {
    if (!(scale > 0.0) || !std::isfinite(scale) || !(shape > 0.0) || !std::isfinite(shape))
      throw std::invalid_argument("OracleCurve: scale and shape must be positive finite");
  }

  double eval(double t) const {
    if (t < 0.0) throw std::domain_error("OracleCurve::eval: negative time");
    if (t == 0.0) return 1.0;
    if (family_ == Family::weibull) return std::exp(-std::pow(t / scale_, shape_));
    return 0.5 * std::erfc((std::log(t) - std::log(scale_)) / (shape_ * std::numbers::sqrt2));
  }

  InverseResult inverse(double rho) const {
    if (!(rho > 0.0 && rho <= 1.0)) throw std::domain_error("OracleCurve::inverse: level outside (0,1]");
    if (rho >= 1.0) return {0.0, false};
    if (rho < kFloor) return {horizon(), true};
    return {inverse_exact(rho), false};
  }

  double horizon() const { return inverse_exact(kFloor); }

  /// Exact inversion without the horizon clamp; turns a uniform draw into an
  /// event time from this curve's distribution.
  double sample_time(double u) const {
    if (!(u > 0.0 && u < 1.0)) throw std::domain_error("OracleCurve::sample_time: draw outside (0,1)");
    return inverse_exact(u);
  }

  Family family() const { return family_; }
  double scale() const { return scale_; }
  double shape() const { return shape_; }

 private:
  static constexpr double kFloor = 1e-12;

  double inverse_exact(double rho) const {
    if (family_ == Family::weibull) return scale_ * std::pow(-std::log(rho), 1.0 / shape_);
    return std::exp(std::log(scale_) + shape_ * normal_quantile(1.0 - rho));
  }

  Family family_;
  double scale_;  // Weibull scale, or the log-normal median exp(mu)
  double shape_;  // Weibull shape, or the log-normal sigma
};

static_assert(SurvivalCurve<OracleCurve>);

struct OracleSpec {
  Family family = Family::weibull;
  double base_scale = 1.0;
  double base_shape = 1.0;
  std::vector<double> scale_link;  // per-feature log-scale coefficients (empty = zeros)
  std::vector<double> shape_link;  // per-feature log-shape coefficients
  double censor_rate = 0.0;        // 0 disables censoring
  std::vector<double> censor_link;  // conditional log-rate coefficients
  std::size_t n = 0;
  std::size_t d = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (n == 0) throw std::invalid_argument("OracleSpec: n must be positive");
    if (!(base_scale > 0.0) || !(base_shape > 0.0))
      throw std::invalid_argument("OracleSpec: base scale/shape must be positive");
    if (censor_rate < 0.0) throw std::invalid_argument("OracleSpec: censor rate must be nonnegative");
    auto check = [this](const std::vector<double>& link, const char* what) {
      if (!link.empty() && link.size() != d)
        throw std::invalid_argument(std::string("OracleSpec: ") + what + " link length mismatch");
      for (double c : link)
        if (!std::isfinite(c)) throw std::invalid_argument(std::string("OracleSpec: ") + what + " link not finite");
    };
    check(scale_link, "scale");
    check(shape_link, "shape");
    check(censor_link, "censor");
  }
};

struct SyntheticData {
  SurvivalDataset dataset;
  std::vector<OracleCurve> oracle;
  std::vector<double> event_times;   // latent e_i (pre-censoring)
  std::vector<double> censor_times;  // latent c_i (+inf when censoring disabled)
};

namespace detail {

inline double link_dot(const std::vector<double>& link, std::span<const double> x) {
  double s = 0.0;
  for (std::size_t j = 0; j < link.size(); ++j) s += link[j] * x[j];
  return s;
}

}  // namespace detail

inline SyntheticData generate(const OracleSpec& spec) {
  spec.validate();
  SyntheticData out;
  out.dataset.features.n = spec.n;
  out.dataset.features.d = spec.d;
  out.dataset.features.data.resize(spec.n * spec.d);
  for (std::size_t j = 0; j < spec.d; ++j) out.dataset.feature_names.push_back("x" + std::to_string(j));
  out.dataset.times.resize(spec.n);
  out.dataset.events.resize(spec.n);
  out.oracle.reserve(spec.n);
  out.event_times.resize(spec.n);
  out.censor_times.resize(spec.n);

  for (std::size_t i = 0; i < spec.n; ++i) {
    Rng rng = Rng::derive(spec.seed, i);
    const std::span<double> x(out.dataset.features.data.data() + i * spec.d, spec.d);
    for (std::size_t j = 0; j < spec.d; ++j) x[j] = rng.normal();

    const double scale = spec.base_scale * std::exp(detail::link_dot(spec.scale_link, x));
    const double shape = spec.base_shape * std::exp(detail::link_dot(spec.shape_link, x));
    if (!std::isfinite(scale) || !(scale > 0.0) || !std::isfinite(shape) || !(shape > 0.0))
      throw std::invalid_argument("generate: links produced a non-positive or non-finite parameter");
    out.oracle.emplace_back(spec.family, scale, shape);

    // Clamp into the open interval: an exact 1.0 would give a zero time.
    constexpr double kBelowOne = 0x1.fffffffffffffp-1;
    const double u = std::min(rng.uniform01_open_low(), kBelowOne);
    const double e = out.oracle.back().sample_time(u);
    double c = std::numeric_limits<double>::infinity();
    const double uc = std::min(rng.uniform01_open_low(), kBelowOne);  // drawn unconditionally to keep streams stable
    if (spec.censor_rate > 0.0) {
      const double rate = spec.censor_rate * std::exp(detail::link_dot(spec.censor_link, x));
      if (!std::isfinite(rate) || !(rate > 0.0))
        throw std::invalid_argument("generate: censor link produced a non-positive or non-finite rate");
      c = -std::log(uc) / rate;
    }
    out.event_times[i] = e;
    out.censor_times[i] = c;
    out.dataset.times[i] = std::min(e, c);
    out.dataset.events[i] = e <= c ? 1 : 0;
  }
  out.dataset.validate();
  return out;
}

/// Base censoring rate whose generated data hits the target censored fraction
/// as closely as the fixed per-subject draws allow (bisection; deterministic).
inline double calibrate_censor_rate(OracleSpec spec, double target_fraction, int iterations = 60) {
  if (!(target_fraction > 0.0 && target_fraction < 1.0))
    throw std::invalid_argument("calibrate_censor_rate: target outside (0,1)");
  auto censored_fraction = [&spec](double rate) {
    spec.censor_rate = rate;
    const SyntheticData data = generate(spec);
    std::size_t c = 0;
    for (auto e : data.dataset.events) c += e ? 0 : 1;
    return static_cast<double>(c) / static_cast<double>(spec.n);
  };
  double lo = 1e-12, hi = 1.0;
  spec.censor_rate = 1.0;  // make validate() see censoring enabled
  spec.validate();
  while (censored_fraction(hi) < target_fraction && hi < 1e12) hi *= 4.0;
  for (int it = 0; it < iterations; ++it) {
    const double mid = std::sqrt(lo * hi);  // rates live on a log scale
    if (censored_fraction(mid) < target_fraction)
      lo = mid;
    else
      hi = mid;
  }
  return std::sqrt(lo * hi);
}

/// Sup-norm distance between the empirical CDF of the oracle's own survival
/// values at uncensored times and the uniform CDF. Calibrated oracles pass the
/// classical Kolmogorov bound; wrong oracles exceed it by an order.
template <SurvivalCurve C>
double oracle_ipot_check(const std::vector<C>& curves, std::span<const double> times,
                         std::span<const std::uint8_t> events) {
  if (curves.size() != times.size() || events.size() != times.size())
    throw std::invalid_argument("oracle_ipot_check: length mismatch");
  std::vector<double> v;
  for (std::size_t i = 0; i < curves.size(); ++i)
    if (events[i]) v.push_back(curves[i].eval(times[i]));
  if (v.empty()) throw std::invalid_argument("oracle_ipot_check: no uncensored records");
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  double d = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    d = std::max(d, std::fabs(v[i] - static_cast<double>(i + 1) / n));
    d = std::max(d, std::fabs(v[i] - static_cast<double>(i) / n));
  }
  return d;
}

}  // namespace cipot
