#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "cipot/mathutil.hpp"
#include "cipot/metrics.hpp"
#include "cipot/pipeline.hpp"
#include "cipot/synthetic.hpp"

using namespace cipot;

namespace {

/// Constant-probability curve for closed-form metric oracles.
struct ConstCurve {
  double p = 0.5;
  double eval(double) const { return p; }
  InverseResult inverse(double rho) const { return rho <= p ? InverseResult{1e9, true} : InverseResult{0.0, false}; }
  double horizon() const { return 1e9; }
};
static_assert(SurvivalCurve<ConstCurve>);

std::vector<OracleCurve> exp_curves(std::size_t n, double scale = 1.0) {
  return std::vector<OracleCurve>(n, OracleCurve(Family::weibull, scale, 1.0));
}

}  // namespace

TEST_CASE("censored bin probability hand values") {
  REQUIRE(censored_bin_probability(0.6, 0.2, 0.5) == Catch::Approx(0.5).margin(1e-15));
  REQUIRE(censored_bin_probability(0.6, 0.2, 0.6) == Catch::Approx(2.0 / 3.0).margin(1e-15));
  REQUIRE(censored_bin_probability(1.0, 0.0, 1.0) == Catch::Approx(1.0).margin(1e-15));
  REQUIRE(censored_bin_probability(0.6, 0.7, 0.9) == 0.0);          // bin entirely above the score
  REQUIRE(censored_bin_probability(0.6, 0.5, 1.0) == Catch::Approx(1.0 / 6.0).margin(1e-15));
  REQUIRE(censored_bin_probability(0.0, 0.0, 0.5) == 0.0);          // zero score: all mass at level 1
  REQUIRE(censored_bin_probability(0.0, 0.5, 1.0) == 1.0);
  REQUIRE_THROWS_AS(censored_bin_probability(0.5, 0.5, 0.5), std::invalid_argument);
  REQUIRE_THROWS_AS(censored_bin_probability(1.5, 0.0, 1.0), std::invalid_argument);
}

TEST_CASE("censored bin probabilities sum to one over any partition") {
  Rng rng(12);
  for (int rep = 0; rep < 50; ++rep) {
    const double gamma = rep == 0 ? 0.0 : rng.uniform01();
    std::vector<double> edges{0.0};
    const int k = 2 + static_cast<int>(rng.below(6));
    for (int i = 1; i < k; ++i) edges.push_back(rng.uniform01());
    edges.push_back(1.0);
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    double sum = 0.0;
    for (std::size_t i = 1; i < edges.size(); ++i) sum += censored_bin_probability(gamma, edges[i - 1], edges[i]);
    REQUIRE(sum == Catch::Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("marginal calibration is exactly zero on a perfect score ladder") {
  // 20 uncensored subjects with scores {0.05, 0.15, ..., 0.95} twice each
  std::vector<double> gammas;
  std::vector<std::uint8_t> events(20, 1);
  for (int rep = 0; rep < 2; ++rep)
    for (int k = 0; k < 10; ++k) gammas.push_back(0.05 + 0.1 * k);
  const auto res = cal_margin_from_scores(gammas, events, PercentileGrid::preset(9));
  REQUIRE(res.score <= 2.5e-3);
  REQUIRE(res.score == Catch::Approx(0.0).margin(1e-18));
  for (const auto& p : res.pp) REQUIRE(p.observed == Catch::Approx(p.expected).margin(1e-15));
}

TEST_CASE("all-zero scores pin the observed mass at one") {
  const std::vector<double> gammas(10, 0.0);
  const std::vector<std::uint8_t> events(10, 1);
  const auto res = cal_margin_from_scores(gammas, events, PercentileGrid::preset(9));
  // observed mass 1 at every level: score = mean (1-rho)^2 = 2.85/9
  REQUIRE(res.score == Catch::Approx(2.85 / 9.0).margin(1e-12));
}

TEST_CASE("censored subjects spread their mass below the score") {
  // single censored subject, gamma = 0.6: observed mass at rho is min(1, rho/0.6)
  const std::vector<double> gammas{0.6};
  const std::vector<std::uint8_t> events{0};
  const auto res = cal_margin_from_scores(gammas, events, PercentileGrid::preset(9));
  for (const auto& p : res.pp)
    REQUIRE(p.observed == Catch::Approx(std::min(1.0, p.expected / 0.6)).margin(1e-12));
}

TEST_CASE("zero-score censored subjects are counted and contribute nothing below one") {
  const std::vector<double> gammas{0.0, 0.5};
  const std::vector<std::uint8_t> events{0, 1};
  const auto res = cal_margin_from_scores(gammas, events, PercentileGrid::preset(9));
  REQUIRE(res.zero_score_censored == 1);
  // at rho = 0.9: only the uncensored subject contributes
  REQUIRE(res.pp.back().observed == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("km curve on its own large sample is marginally calibrated") {
  OracleSpec spec;
  spec.n = 10000;
  spec.d = 1;
  spec.seed = 404;
  spec.censor_rate = 0.3;
  const auto data = generate(spec).dataset;
  auto km = std::make_shared<const KaplanMeier>(km_fit(data.times, data.events));
  const std::vector<KmStepCurve> curves(data.size(), KmStepCurve(km));
  const auto res = cal_margin(curves, data.times, data.events, PercentileGrid::preset(9));
  REQUIRE(res.score <= 1e-3);
}

TEST_CASE("pp observed mass is non-decreasing") {
  OracleSpec spec;
  spec.n = 500;
  spec.d = 1;
  spec.seed = 7;
  spec.censor_rate = 0.8;
  const auto data = generate(spec);
  const auto res = cal_margin(data.oracle, data.dataset.times, data.dataset.events, PercentileGrid::preset(19));
  for (std::size_t i = 1; i < res.pp.size(); ++i) REQUIRE(res.pp[i].observed >= res.pp[i - 1].observed);
}

TEST_CASE("whole-space slab reproduces the marginal score") {
  OracleSpec spec;
  spec.n = 400;
  spec.d = 3;
  spec.seed = 11;
  spec.censor_rate = 0.5;
  const auto data = generate(spec);
  const auto grid = PercentileGrid::preset(9);

  Slab everything;
  everything.v = {1.0, 0.0, 0.0};
  everything.a = -1e300;
  everything.b = 1e300;
  const auto inside = cal_margin_in_slab(data.oracle, data.dataset.times, data.dataset.events,
                                         data.dataset.features.data, 3, grid, everything);
  REQUIRE(inside.has_value());
  const auto whole = cal_margin(data.oracle, data.dataset.times, data.dataset.events, grid);
  REQUIRE(inside->score == Catch::Approx(whole.score).margin(1e-15));

  Slab nothing = everything;
  nothing.a = 1e300;
  REQUIRE_FALSE(cal_margin_in_slab(data.oracle, data.dataset.times, data.dataset.events,
                                   data.dataset.features.data, 3, grid, nothing)
                    .has_value());
}

TEST_CASE("kappa one forces the full explore range and matches the exploit slab score") {
  OracleSpec spec;
  spec.n = 200;
  spec.d = 2;
  spec.seed = 21;
  spec.censor_rate = 0.4;
  const auto data = generate(spec);
  const auto grid = PercentileGrid::preset(9);
  CalWsOptions opts;
  opts.kappa = 1.0;
  opts.M = 1;
  opts.seed = 5;
  const auto res = cal_ws(data.oracle, data.dataset.times, data.dataset.events, data.dataset.features.data, 2,
                          grid, opts);
  REQUIRE_FALSE(res.slab_empty);
  REQUIRE(res.slab.mass == Catch::Approx(1.0).margin(1e-12));
  const auto check = cal_margin_in_slab(data.oracle, data.dataset.times, data.dataset.events,
                                        data.dataset.features.data, 2, grid, res.slab);
  // exploit membership is by slab bounds, so the decomposed computation agrees exactly
  std::vector<double> g;
  std::vector<std::uint8_t> e;
  // recompute exploit membership the way the search does
  Rng rng(opts.seed);
  std::vector<std::size_t> perm(data.dataset.size());
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  const std::size_t ne = static_cast<std::size_t>(std::llround(200 * opts.explore_fraction));
  for (std::size_t k = ne; k < perm.size(); ++k) {
    const std::size_t i = perm[k];
    const double z =
        slab_projection(res.slab.v, std::span<const double>(data.dataset.features.data).subspan(i * 2, 2));
    if (z >= res.slab.a && z <= res.slab.b) {
      g.push_back(data.oracle[i].eval(data.dataset.times[i]));
      e.push_back(data.dataset.events[i]);
    }
  }
  REQUIRE_FALSE(g.empty());
  const auto direct = cal_margin_from_scores(g, e, grid);
  REQUIRE(res.score == Catch::Approx(direct.score).margin(1e-15));
  REQUIRE(check.has_value());
}

TEST_CASE("worst-slab search finds a planted one-dimensional defect") {
  // Subjects with x > 0 get a model with doubled scale; x <= 0 are calibrated.
  const std::size_t n = 4000;
  Rng rng(88);
  std::vector<double> X(n), times(n);
  std::vector<std::uint8_t> events(n, 1);
  std::vector<OracleCurve> model;
  model.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    X[i] = rng.normal();
    const OracleCurve truth(Family::weibull, 1.0, 1.0);
    times[i] = truth.sample_time(std::min(rng.uniform01_open_low(), 1.0 - 1e-12));
    model.emplace_back(Family::weibull, X[i] > 0.0 ? 2.0 : 1.0, 1.0);
  }
  const auto grid = PercentileGrid::preset(9);
  CalWsOptions opts;
  opts.kappa = 0.33;
  opts.M = 200;
  opts.seed = 3;
  const auto ws = cal_ws(model, times, events, X, 1, grid, opts);
  REQUIRE_FALSE(ws.slab_empty);

  const auto marginal = cal_margin(model, times, events, grid);
  REQUIRE(ws.score > marginal.score);  // worst slab concentrates the defect

  // the chosen slab must sit on the positive side of the planted split
  std::size_t in_slab = 0, in_both = 0, in_union = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = ws.slab.v[0] * X[i];
    const bool inside = z >= ws.slab.a && z <= ws.slab.b;
    const bool planted = X[i] > 0.0;
    in_slab += inside ? 1 : 0;
    in_both += (inside && planted) ? 1 : 0;
    in_union += (inside || planted) ? 1 : 0;
  }
  REQUIRE(in_slab > 0);
  const double iou = static_cast<double>(in_both) / static_cast<double>(in_union);
  REQUIRE(iou >= 0.5);
}

TEST_CASE("worst-slab search is deterministic and validates inputs") {
  OracleSpec spec;
  spec.n = 300;
  spec.d = 2;
  spec.seed = 31;
  spec.censor_rate = 0.5;
  const auto data = generate(spec);
  const auto grid = PercentileGrid::preset(9);
  CalWsOptions opts;
  opts.M = 20;
  opts.seed = 9;
  const auto a = cal_ws(data.oracle, data.dataset.times, data.dataset.events, data.dataset.features.data, 2, grid,
                        opts);
  const auto b = cal_ws(data.oracle, data.dataset.times, data.dataset.events, data.dataset.features.data, 2, grid,
                        opts);
  REQUIRE(a.score == b.score);
  REQUIRE(a.slab.a == b.slab.a);
  REQUIRE(a.slab.v == b.slab.v);

  CalWsOptions bad = opts;
  bad.kappa = 0.0;
  REQUIRE_THROWS_AS(cal_ws(data.oracle, data.dataset.times, data.dataset.events, data.dataset.features.data, 2,
                           grid, bad),
                    std::invalid_argument);
  bad = opts;
  bad.explore_fraction = 0.001;  // explore split too small for the mass floor
  REQUIRE_THROWS_AS(cal_ws(data.oracle, data.dataset.times, data.dataset.events, data.dataset.features.data, 2,
                           grid, bad),
                    std::invalid_argument);
}

TEST_CASE("harrell c-index on an enumerated example") {
  const std::vector<double> med{3.0, 1.0, 2.0};
  const std::vector<double> t{1.0, 2.0, 3.0};
  const std::vector<std::uint8_t> e{1, 1, 1};
  REQUIRE(harrell_cindex(med, t, e) == Catch::Approx(1.0 / 3.0).margin(1e-15));

  // risk ties count one half
  const std::vector<double> med_tie{1.0, 1.0};
  const std::vector<double> t2{1.0, 2.0};
  const std::vector<std::uint8_t> e2{1, 1};
  REQUIRE(harrell_cindex(med_tie, t2, e2) == Catch::Approx(0.5).margin(1e-15));

  // censored subjects only anchor pairs as the longer-lived member
  const std::vector<double> med3{1.0, 2.0, 3.0};
  const std::vector<double> t3{1.0, 2.0, 3.0};
  const std::vector<std::uint8_t> e3{1, 0, 1};
  // comparable: (1,2), (1,3) concordant both; (2,3) skipped (censored i)
  REQUIRE(harrell_cindex(med3, t3, e3) == Catch::Approx(1.0).margin(1e-15));

  const std::vector<std::uint8_t> none{0, 0, 0};
  REQUIRE_THROWS_AS(harrell_cindex(med3, t3, none), std::invalid_argument);
}

TEST_CASE("c-index is invariant under increasing risk transforms") {
  Rng rng(77);
  std::vector<double> med(50), t(50);
  std::vector<std::uint8_t> e(50);
  for (int i = 0; i < 50; ++i) {
    med[i] = 0.1 + rng.uniform01() * 5.0;
    t[i] = 0.1 + rng.uniform01() * 5.0;
    e[i] = rng.uniform01() < 0.6 ? 1 : 0;
  }
  e[0] = 1;
  std::vector<double> warped(50);
  for (int i = 0; i < 50; ++i) warped[i] = std::exp(2.0 * med[i]) + 3.0;  // increasing map
  REQUIRE(harrell_cindex(med, t, e) == Catch::Approx(harrell_cindex(warped, t, e)).margin(1e-15));
}

TEST_CASE("fixed-time auroc on an enumerated example") {
  // cases {t=1, t=2}, controls {t=3, t=4} at t*=2.5
  std::vector<ConstCurve> curves{{0.2}, {0.6}, {0.6}, {0.8}};
  const std::vector<double> t{1.0, 2.0, 3.0, 4.0};
  const std::vector<std::uint8_t> e{1, 1, 1, 1};
  const auto auc = auroc_at(curves, t, e, 2.5);
  REQUIRE(auc.has_value());
  // pairs: (0.2,0.6)=1, (0.2,0.8)=1, (0.6,0.6)=0.5, (0.6,0.8)=1 -> 3.5/4
  REQUIRE(*auc == Catch::Approx(0.875).margin(1e-15));

  // censored-before-t* subjects are neither cases nor controls
  const std::vector<std::uint8_t> e2{1, 0, 1, 1};
  const auto auc2 = auroc_at(curves, t, e2, 2.5);
  REQUIRE(*auc2 == Catch::Approx(1.0).margin(1e-15));  // only case t=1 remains vs {3,4}

  REQUIRE_FALSE(auroc_at(curves, t, e, 0.5).has_value());  // no cases yet
  REQUIRE_FALSE(auroc_at(curves, t, e, 9.0).has_value());  // no controls left
}

TEST_CASE("time-dependent concordance equals its weighted form") {
  OracleSpec spec;
  spec.n = 50;
  spec.d = 2;
  spec.seed = 1234;
  spec.scale_link = {0.6, -0.4};
  spec.shape_link = {0.2, 0.0};
  spec.censor_rate = 1.0;
  const auto data = generate(spec);
  const double a = antolini_ctd(data.oracle, data.dataset.times, data.dataset.events);
  const double b = antolini_ctd_weighted(data.oracle, data.dataset.times, data.dataset.events);
  REQUIRE(std::fabs(a - b) <= 1e-12);
  REQUIRE(a > 0.0);
  REQUIRE(a < 1.0);
}

TEST_CASE("time-dependent concordance on a tiny enumerated case") {
  // S_i(t_i) vs S_j(t_i): with constant curves this reduces to value comparisons
  std::vector<ConstCurve> curves{{0.3}, {0.5}, {0.4}};
  const std::vector<double> t{1.0, 2.0, 3.0};
  const std::vector<std::uint8_t> e{1, 1, 1};
  // pairs: (1,2): 0.3<0.5 ok; (1,3): 0.3<0.4 ok; (2,3): 0.5<0.4 no -> 2/3
  REQUIRE(antolini_ctd(curves, t, e) == Catch::Approx(2.0 / 3.0).margin(1e-15));
}

TEST_CASE("integrated brier score of the coin-flip predictor is one quarter") {
  std::vector<ConstCurve> curves(5, ConstCurve{0.5});
  const std::vector<double> t{1.0, 2.0, 3.0, 4.0, 5.0};
  const std::vector<std::uint8_t> e{1, 1, 1, 1, 1};
  const auto res = ibs(curves, t, e, 5.0);
  REQUIRE_FALSE(res.truncated);
  REQUIRE(res.value == Catch::Approx(0.25).margin(1e-12));
}

TEST_CASE("perfect survivors score zero") {
  std::vector<ConstCurve> curves(3, ConstCurve{1.0});
  const std::vector<double> t{6.0, 7.0, 8.0};
  const std::vector<std::uint8_t> e{0, 0, 0};
  const auto res = ibs(curves, t, e, 5.0);
  REQUIRE(res.value == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("ipcw weights on a hand-worked censored case") {
  std::vector<ConstCurve> curves(3, ConstCurve{0.3});
  const std::vector<double> t{1.0, 2.0, 3.0};
  const std::vector<std::uint8_t> e{1, 0, 1};
  // G steps to 0.5 at the censoring time 2; full derivation in comments:
  // BS(0)=0.49, BS(1)=(0.09+2*0.49)/3, BS(3)=(0.09+0+0.18)/3; trapezoid -> 0.29
  const auto res = ibs(curves, t, e, 3.0);
  REQUIRE(res.value == Catch::Approx(0.29).margin(1e-9));
}

TEST_CASE("ibs truncates when the censoring estimate hits zero") {
  std::vector<ConstCurve> curves(3, ConstCurve{0.5});
  const std::vector<double> t{1.0, 2.0, 3.0};
  const std::vector<std::uint8_t> e{1, 0, 0};  // flipped: censor events at 2 and 3
  const auto res = ibs(curves, t, e, 3.0);
  REQUIRE(res.truncated);
  REQUIRE(res.integration_end == Catch::Approx(2.0).margin(1e-12));
}

TEST_CASE("pseudo-observation mae on the four-subject hand case") {
  const std::vector<double> t{1.0, 2.0, 3.0, 4.0};
  const std::vector<std::uint8_t> e{1, 1, 0, 1};
  const std::vector<double> med{1.5, 2.5, 3.5, 3.0};
  const auto res = mae_po(med, t, e);
  // censored subject: pseudo time 4*2.75 - 3*(7/3) = 4, weight 1 - 0.5
  REQUIRE(res.pseudo_times[2] == Catch::Approx(4.0).margin(1e-12));
  REQUIRE(res.weights[2] == Catch::Approx(0.5).margin(1e-12));
  REQUIRE(res.pseudo_times[0] == 1.0);
  REQUIRE(res.weights[0] == 1.0);
  // value = (0.5 + 0.5 + 0.5*0.5 + 1) / 3.5 = 2.25/3.5
  REQUIRE(res.value == Catch::Approx(2.25 / 3.5).margin(1e-12));
}

TEST_CASE("mae-po reduces to the plain mae without censoring") {
  const std::vector<double> t{1.0, 2.0, 3.0};
  const std::vector<std::uint8_t> e{1, 1, 1};
  const std::vector<double> med{2.0, 2.0, 2.0};
  REQUIRE(mae_po(med, t, e).value == Catch::Approx((1.0 + 0.0 + 1.0) / 3.0).margin(1e-12));
}

TEST_CASE("mae-po requires events") {
  const std::vector<double> t{1.0, 2.0};
  const std::vector<std::uint8_t> e{0, 0};
  const std::vector<double> med{1.0, 1.0};
  REQUIRE_THROWS_AS(mae_po(med, t, e), std::invalid_argument);
}

TEST_CASE("median times come from the curve inverse") {
  const auto curves = exp_curves(1, 2.0);  // S(t) = exp(-t/2): median = 2 ln 2
  const auto med = median_times(curves);
  REQUIRE(med[0] == Catch::Approx(2.0 * std::log(2.0)).margin(1e-9));
}
