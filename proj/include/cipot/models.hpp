#pragma once

// Reference predictors and the ISD interchange format. Kaplan-Meier gives the
// population curve (also used flipped for censoring weights); the Weibull AFT
// regression is the parametric per-subject baseline. Both emit DiscreteISD
// rows; externally produced predictions enter through ISDMatrix CSV files.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cipot/curves.hpp"

namespace cipot {

/// Product-limit estimate. Steps only at times with at least one event; at
/// tied times events are counted before censorings leave the risk set.
struct KaplanMeier {
  std::vector<double> event_times;  // distinct, increasing
  std::vector<double> survival;     // value from event_times[k] onward
  std::size_t n_subjects = 0;
  double max_observed_time = 0.0;

  double eval(double t) const {
    if (!(t >= 0.0)) throw std::domain_error("KaplanMeier::eval: negative time");
    const auto it = std::upper_bound(event_times.begin(), event_times.end(), t);
    if (it == event_times.begin()) return 1.0;
    return survival[static_cast<std::size_t>(it - event_times.begin()) - 1];
  }

  /// Survival at the largest observed time (event or censoring).
  double end_probability() const { return eval(max_observed_time); }

  /// Restricted mean survival time: the step function integrated over the
  /// sample's own observation range [0, max_observed_time].
  double restricted_mean() const {
    double area = 0.0, prev_t = 0.0, s = 1.0;
    for (std::size_t k = 0; k < event_times.size(); ++k) {
      if (event_times[k] > max_observed_time) break;
      area += s * (event_times[k] - prev_t);
      prev_t = event_times[k];
      s = survival[k];
    }
    area += s * (max_observed_time - prev_t);
    return area;
  }

  /// Knots at event times; feed to make_continuous for an evaluable curve.
  DiscreteISD to_isd() const { return {event_times, survival}; }
};

/// Fit on raw columns. Zero events is allowed (flat curve): the censoring
/// distribution of a fully uncensored sample is exactly that.
inline KaplanMeier km_fit(std::span<const double> times, std::span<const std::uint8_t> events) {
  const std::size_t n = times.size();
  if (n == 0) throw std::invalid_argument("km_fit: empty sample");
  if (events.size() != n) throw std::invalid_argument("km_fit: times/events length mismatch");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });

  KaplanMeier km;
  km.n_subjects = n;
  km.max_observed_time = times[order[n - 1]];
  double s = 1.0;
  std::size_t i = 0;
  while (i < n) {
    const double t = times[order[i]];
    if (!(t > 0.0)) throw std::invalid_argument("km_fit: nonpositive time");
    std::size_t deaths = 0, j = i;
    while (j < n && times[order[j]] == t) {
      deaths += events[order[j]] ? 1 : 0;
      ++j;
    }
    if (deaths > 0) {
      const double at_risk = static_cast<double>(n - i);
      s *= 1.0 - static_cast<double>(deaths) / at_risk;
      km.event_times.push_back(t);
      km.survival.push_back(s);
    }
    i = j;
  }
  return km;
}

// ---------------------------------------------------------------------------
// Weibull accelerated failure time regression.
// S(t|x) = exp(-(t/lambda)^k), lambda = exp(beta0 + beta.x), k = exp(log_shape).
// Censored maximum likelihood with an l2 penalty on beta (intercept included):
//   l = sum_i [ delta_i log f(t_i|x_i) + (1-delta_i) log S(t_i|x_i) ] - l2 |beta|^2
// ---------------------------------------------------------------------------

struct WeibullAFTModel {
  std::vector<double> beta;  // length d+1, beta[0] is the intercept
  double log_shape = 0.0;
  double l2 = 1e-4;

  double shape() const { return std::exp(log_shape); }

  double linear_predictor(std::span<const double> x) const {
    if (x.size() + 1 != beta.size()) throw std::invalid_argument("WeibullAFTModel: feature width mismatch");
    double eta = beta[0];
    for (std::size_t j = 0; j < x.size(); ++j) eta += beta[j + 1] * x[j];
    return eta;
  }

  double scale(std::span<const double> x) const { return std::exp(linear_predictor(x)); }

  double survival(double t, std::span<const double> x) const {
    if (!(t >= 0.0)) throw std::domain_error("WeibullAFTModel::survival: negative time");
    if (t == 0.0) return 1.0;
    const double z = shape() * (std::log(t) - linear_predictor(x));
    return std::exp(-std::exp(z));
  }

  DiscreteISD predict_isd(std::span<const double> x, std::span<const double> grid) const {
    DiscreteISD isd;
    isd.times.assign(grid.begin(), grid.end());
    isd.probs.resize(grid.size());
    const double eta = linear_predictor(x);
    const double k = shape();
    double prev = 2.0;
    for (std::size_t g = 0; g < grid.size(); ++g) {
      if (!(grid[g] > 0.0)) throw std::invalid_argument("predict_isd: grid times must be positive");
      if (g > 0 && grid[g] <= grid[g - 1]) throw std::invalid_argument("predict_isd: grid must be increasing");
      double p = std::exp(-std::exp(k * (std::log(grid[g]) - eta)));
      if (p > prev) p = prev;  // guard against rounding at extreme tails
      isd.probs[g] = p;
      prev = p;
    }
    return isd;
  }
};

struct AftFitReport {
  bool converged = false;
  int iterations = 0;
  double grad_norm = std::numeric_limits<double>::infinity();
  double log_likelihood = -std::numeric_limits<double>::infinity();
};

struct AftFitResult {
  WeibullAFTModel model;
  AftFitReport report;
};

namespace detail {

struct AftObjective {
  // X is n x d row-major; theta = (beta[0..d], log_shape).
  std::span<const double> X;
  std::span<const double> times;
  std::span<const std::uint8_t> events;
  std::size_t d = 0;
  double l2 = 0.0;

  std::size_t n() const { return times.size(); }
  std::size_t dim() const { return d + 2; }

  double eta(const Eigen::VectorXd& theta, std::size_t i) const {
    double e = theta[0];
    const double* row = X.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) e += theta[j + 1] * row[j];
    return e;
  }

  double value(const Eigen::VectorXd& theta) const {
    const double s = theta[d + 1];
    const double k = std::exp(s);
    double ll = 0.0;
    for (std::size_t i = 0; i < n(); ++i) {
      const double u = std::log(times[i]) - eta(theta, i);
      const double z = k * u;
      if (z > 690.0) return -std::numeric_limits<double>::infinity();
      const double w = std::exp(z);
      ll += events[i] ? (s + z - std::log(times[i]) - w) : -w;
    }
    double pen = 0.0;
    for (std::size_t j = 0; j <= d; ++j) pen += theta[j] * theta[j];
    return ll - l2 * pen;
  }

  // Gradient and Hessian of the penalized log-likelihood.
  void derivatives(const Eigen::VectorXd& theta, Eigen::VectorXd& g, Eigen::MatrixXd& H) const {
    const std::size_t p = dim();
    g.setZero(p);
    H.setZero(p, p);
    const double k = std::exp(theta[d + 1]);
    Eigen::VectorXd xt(d + 1);
    for (std::size_t i = 0; i < n(); ++i) {
      const double* row = X.data() + i * d;
      xt[0] = 1.0;
      for (std::size_t j = 0; j < d; ++j) xt[j + 1] = row[j];
      const double u = std::log(times[i]) - eta(theta, i);
      const double z = k * u;
      const double w = std::exp(std::min(z, 690.0));
      const double di = events[i] ? 1.0 : 0.0;
      const double g_eta = k * (w - di);
      const double g_s = di + z * (di - w);
      const double h_ee = -k * k * w;
      const double h_es = k * (w - di) + k * z * w;
      const double h_ss = z * (di - w) - z * z * w;
      g.head(d + 1) += g_eta * xt;
      g[d + 1] += g_s;
      H.topLeftCorner(d + 1, d + 1) += h_ee * (xt * xt.transpose());
      H.col(d + 1).head(d + 1) += h_es * xt;
      H(d + 1, d + 1) += h_ss;
    }
    H.row(d + 1).head(d + 1) = H.col(d + 1).head(d + 1).transpose();
    for (std::size_t j = 0; j <= d; ++j) {
      g[j] -= 2.0 * l2 * theta[j];
      H(j, j) -= 2.0 * l2;
    }
  }
};

}  // namespace detail

struct AftFitOptions {
  double l2 = 1e-4;
  double grad_tol = 1e-6;  // infinity norm of the penalized score
  int max_iter = 200;
};

/// Newton ascent with backtracking line search; the log-likelihood is
/// non-decreasing across iterations by construction.
inline AftFitResult aft_fit(std::span<const double> X, std::size_t d, std::span<const double> times,
                            std::span<const std::uint8_t> events, const AftFitOptions& opts = {}) {
  const std::size_t n = times.size();
  if (events.size() != n) throw std::invalid_argument("aft_fit: times/events length mismatch");
  if (X.size() != n * d) throw std::invalid_argument("aft_fit: feature matrix shape mismatch");
  std::size_t n_events = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(times[i] > 0.0)) throw std::invalid_argument("aft_fit: nonpositive time");
    n_events += events[i] ? 1 : 0;
  }
  if (n_events == 0) throw std::invalid_argument("aft_fit: no uncensored records");
  if (n_events < d + 2)
    throw std::invalid_argument("aft_fit: need at least d+2 uncensored records, got " + std::to_string(n_events));

  detail::AftObjective obj{X, times, events, d, opts.l2};
  const std::size_t p = obj.dim();

  // Exponential-model start: rate matching with unit shape.
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(p);
  double tsum = 0.0;
  for (double t : times) tsum += t;
  theta[0] = std::log(tsum / static_cast<double>(n_events));
  double f = obj.value(theta);
  if (!std::isfinite(f)) {
    // Fall back to an intercept-only location guess.
    std::vector<double> ts(times.begin(), times.end());
    std::nth_element(ts.begin(), ts.begin() + ts.size() / 2, ts.end());
    theta.setZero();
    theta[0] = std::log(ts[ts.size() / 2]);
    f = obj.value(theta);
    if (!std::isfinite(f)) throw std::runtime_error("aft_fit: likelihood not finite at the starting point");
  }

  AftFitResult out;
  Eigen::VectorXd g(p);
  Eigen::MatrixXd H(p, p);
  for (int iter = 0; iter < opts.max_iter; ++iter) {
    obj.derivatives(theta, g, H);
    out.report.grad_norm = g.lpNorm<Eigen::Infinity>();
    out.report.iterations = iter;
    if (out.report.grad_norm <= opts.grad_tol) {
      out.report.converged = true;
      break;
    }
    // Newton direction on the concavified system; escalate damping until the
    // direction is an ascent direction.
    Eigen::VectorXd step;
    double mu = 0.0;
    for (int attempt = 0; attempt < 60; ++attempt) {
      Eigen::MatrixXd A = -H;
      if (mu > 0.0) A.diagonal().array() += mu;
      Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
      if (ldlt.info() == Eigen::Success) {
        step = ldlt.solve(g);
        if (step.allFinite() && g.dot(step) > 0.0) break;
      }
      mu = mu == 0.0 ? 1e-8 * std::max(1.0, A.diagonal().cwiseAbs().maxCoeff()) : mu * 10.0;
      step.resize(0);
    }
    if (step.size() == 0) break;

    const double slope = g.dot(step);
    double alpha = 1.0;
    bool moved = false;
    while (alpha >= 1e-12) {
      const Eigen::VectorXd cand = theta + alpha * step;
      const double fc = obj.value(cand);
      if (std::isfinite(fc) && fc >= f + 1e-4 * alpha * slope) {
        theta = cand;
        f = fc;
        moved = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!moved) break;
  }
  out.report.log_likelihood = f;
  if (!out.report.converged) {
    obj.derivatives(theta, g, H);
    out.report.grad_norm = g.lpNorm<Eigen::Infinity>();
    out.report.converged = out.report.grad_norm <= opts.grad_tol;
  }

  out.model.l2 = opts.l2;
  out.model.log_shape = theta[p - 1];
  out.model.beta.assign(theta.data(), theta.data() + d + 1);
  return out;
}

// ---------------------------------------------------------------------------
// ISD matrix: n subject rows of survival probabilities on one shared grid.
// CSV layout: header "time,<g1>,...,<gK>", then "<id>,<p1>,...,<pK>" rows.
// Values are written with 17 significant digits so doubles round-trip exactly.
// ---------------------------------------------------------------------------

struct ISDMatrix {
  std::vector<double> grid;
  std::vector<std::string> ids;
  std::vector<double> probs;  // rows() x grid.size(), row-major

  std::size_t rows() const { return ids.size(); }
  std::size_t cols() const { return grid.size(); }

  std::span<const double> row(std::size_t i) const {
    return {probs.data() + i * cols(), cols()};
  }

  void validate() const {
    if (grid.empty()) throw std::invalid_argument("ISDMatrix: empty grid");
    for (std::size_t g = 0; g < grid.size(); ++g) {
      if (!(grid[g] > 0.0)) throw std::invalid_argument("ISDMatrix: grid times must be positive");
      if (g > 0 && grid[g] <= grid[g - 1]) throw std::invalid_argument("ISDMatrix: grid must be strictly increasing");
    }
    if (probs.size() != rows() * cols()) throw std::invalid_argument("ISDMatrix: probability block shape mismatch");
    for (std::size_t i = 0; i < rows(); ++i) {
      const auto r = row(i);
      double prev = 1.0;
      for (std::size_t g = 0; g < r.size(); ++g) {
        if (!(r[g] >= 0.0 && r[g] <= 1.0))
          throw std::invalid_argument("ISDMatrix: probability outside [0,1] in row " + ids[i]);
        if (r[g] > prev)
          throw std::invalid_argument("ISDMatrix: probabilities increase in row " + ids[i]);
        prev = r[g];
      }
    }
  }

  DiscreteISD to_discrete(std::size_t i) const {
    const auto r = row(i);
    return {grid, {r.begin(), r.end()}};
  }

  std::vector<ContinuousISD> to_curves(const CurveOptions& opts = {}) const {
    std::vector<ContinuousISD> out;
    out.reserve(rows());
    for (std::size_t i = 0; i < rows(); ++i) out.push_back(make_continuous(to_discrete(i), opts));
    return out;
  }

  void save(const std::string& path) const {
    validate();
    std::ofstream f(path);
    if (!f) throw std::runtime_error("ISDMatrix::save: cannot open " + path);
    char buf[32];
    f << "time";
    for (double g : grid) {
      std::snprintf(buf, sizeof buf, "%.17g", g);
      f << ',' << buf;
    }
    f << '\n';
    for (std::size_t i = 0; i < rows(); ++i) {
      f << ids[i];
      for (double p : row(i)) {
        std::snprintf(buf, sizeof buf, "%.17g", p);
        f << ',' << buf;
      }
      f << '\n';
    }
    if (!f) throw std::runtime_error("ISDMatrix::save: write failed for " + path);
  }

  static ISDMatrix load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("ISDMatrix::load: cannot open " + path);
    std::string line;
    if (!std::getline(f, line)) throw std::runtime_error("ISDMatrix::load: empty file " + path);
    ISDMatrix m;
    {
      std::stringstream ss(line);
      std::string cell;
      if (!std::getline(ss, cell, ',') || cell != "time")
        throw std::runtime_error("ISDMatrix::load: header must start with 'time'");
      while (std::getline(ss, cell, ',')) m.grid.push_back(std::stod(cell));
    }
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::string cell;
      std::getline(ss, cell, ',');
      m.ids.push_back(cell);
      std::size_t got = 0;
      while (std::getline(ss, cell, ',')) {
        m.probs.push_back(std::stod(cell));
        ++got;
      }
      if (got != m.grid.size())
        throw std::runtime_error("ISDMatrix::load: row '" + m.ids.back() + "' has " + std::to_string(got) +
                                 " values, expected " + std::to_string(m.grid.size()));
    }
    m.validate();
    return m;
  }
};

}  // namespace cipot
