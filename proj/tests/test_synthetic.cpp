#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "cipot/synthetic.hpp"

using namespace cipot;

TEST_CASE("zero links make all oracle curves identical") {
  OracleSpec spec;
  spec.n = 100;
  spec.d = 3;
  spec.seed = 1;
  const auto data = generate(spec);
  for (const auto& c : data.oracle) {
    REQUIRE(c.scale() == data.oracle.front().scale());
    REQUIRE(c.shape() == data.oracle.front().shape());
  }
  // no censoring configured: everything is an event
  for (auto e : data.dataset.events) REQUIRE(e == 1);
}

TEST_CASE("weibull monte carlo matches the closed form") {
  OracleSpec spec;
  spec.family = Family::weibull;
  spec.base_scale = 1.0;
  spec.base_shape = 2.0;
  spec.n = 100000;
  spec.d = 1;
  spec.seed = 2;
  const auto data = generate(spec);
  double frac = 0.0;
  for (double t : data.dataset.times) frac += t > 1.0 ? 1.0 : 0.0;
  frac /= static_cast<double>(spec.n);
  const double expected = std::exp(-1.0);
  const double se = std::sqrt(expected * (1.0 - expected) / static_cast<double>(spec.n));
  REQUIRE(std::fabs(frac - expected) < 3.0 * se);
}

TEST_CASE("lognormal curves invert exactly") {
  const OracleCurve c(Family::lognormal, 2.0, 0.7);
  REQUIRE(c.eval(0.0) == 1.0);
  REQUIRE(c.eval(2.0) == Catch::Approx(0.5).margin(1e-12));  // median at the scale
  REQUIRE(c.inverse(0.5).time == Catch::Approx(2.0).margin(1e-9));
  for (double rho : {0.9, 0.6, 0.3, 0.1, 0.01}) {
    const auto inv = c.inverse(rho);
    REQUIRE_FALSE(inv.hit_horizon);
    REQUIRE(c.eval(inv.time) == Catch::Approx(rho).margin(1e-10));
  }
  REQUIRE(c.inverse(1e-13).hit_horizon);
  REQUIRE_THROWS_AS(c.inverse(0.0), std::domain_error);
  REQUIRE_THROWS_AS(OracleCurve(Family::weibull, -1.0, 1.0), std::invalid_argument);
}

TEST_CASE("weibull curves invert exactly") {
  const OracleCurve c(Family::weibull, 1.5, 2.5);
  for (double rho : {0.95, 0.5, 0.2, 0.05}) {
    const auto inv = c.inverse(rho);
    REQUIRE(c.eval(inv.time) == Catch::Approx(rho).margin(1e-12));
  }
  REQUIRE(c.inverse(1.0).time == 0.0);
}

TEST_CASE("probability integral transform holds for the true oracle") {
  OracleSpec spec;
  spec.n = 10000;
  spec.d = 2;
  spec.seed = 3;
  spec.scale_link = {0.5, -0.3};
  spec.shape_link = {0.2, 0.1};
  const auto data = generate(spec);
  const double d = oracle_ipot_check(data.oracle, data.dataset.times, data.dataset.events);
  REQUIRE(d <= 1.63 / std::sqrt(static_cast<double>(spec.n)));
}

TEST_CASE("a wrong oracle fails the uniformity check loudly") {
  OracleSpec spec;
  spec.n = 10000;
  spec.d = 1;
  spec.seed = 4;
  const auto data = generate(spec);
  std::vector<OracleCurve> wrong;
  for (const auto& c : data.oracle) wrong.emplace_back(c.family(), c.scale() * 0.5, c.shape());
  const double d = oracle_ipot_check(wrong, data.dataset.times, data.dataset.events);
  REQUIRE(d > 3.0 * 1.63 / std::sqrt(static_cast<double>(spec.n)));
}

TEST_CASE("single subject statistic is trivially bounded") {
  OracleSpec spec;
  spec.n = 1;
  spec.d = 1;
  spec.seed = 5;
  const auto data = generate(spec);
  REQUIRE(oracle_ipot_check(data.oracle, data.dataset.times, data.dataset.events) <= 1.0);
}

TEST_CASE("censor rate calibration hits the target fraction") {
  OracleSpec spec;
  spec.n = 5000;
  spec.d = 1;
  spec.seed = 6;
  spec.scale_link = {0.4};
  const double rate = calibrate_censor_rate(spec, 0.6);
  REQUIRE(rate == calibrate_censor_rate(spec, 0.6));  // deterministic
  spec.censor_rate = rate;
  const auto data = generate(spec);
  double frac = 0.0;
  for (auto e : data.dataset.events) frac += e ? 0.0 : 1.0;
  frac /= static_cast<double>(spec.n);
  REQUIRE(frac == Catch::Approx(0.6).margin(0.02));
}

TEST_CASE("latent censoring times are independent of event times") {
  OracleSpec spec;
  spec.n = 20000;
  spec.d = 1;
  spec.seed = 7;
  spec.censor_rate = 1.0;
  const auto data = generate(spec);
  // zero links: e and c are unconditionally independent; check the correlation
  double me = 0.0, mc = 0.0;
  for (std::size_t i = 0; i < spec.n; ++i) {
    me += data.event_times[i];
    mc += data.censor_times[i];
  }
  me /= static_cast<double>(spec.n);
  mc /= static_cast<double>(spec.n);
  double cov = 0.0, ve = 0.0, vc = 0.0;
  for (std::size_t i = 0; i < spec.n; ++i) {
    const double de = data.event_times[i] - me;
    const double dc = data.censor_times[i] - mc;
    cov += de * dc;
    ve += de * de;
    vc += dc * dc;
  }
  const double corr = cov / std::sqrt(ve * vc);
  REQUIRE(std::fabs(corr) < 3.0 / std::sqrt(static_cast<double>(spec.n)));
}

TEST_CASE("generation is deterministic and per-subject streamed") {
  OracleSpec spec;
  spec.n = 100;
  spec.d = 2;
  spec.seed = 8;
  spec.censor_rate = 0.5;
  spec.scale_link = {0.3, -0.2};
  const auto a = generate(spec);
  const auto b = generate(spec);
  REQUIRE(a.dataset.times == b.dataset.times);
  REQUIRE(a.dataset.events == b.dataset.events);
  REQUIRE(a.dataset.features.data == b.dataset.features.data);

  // shrinking n keeps the common prefix identical (per-subject streams)
  OracleSpec half = spec;
  half.n = 50;
  const auto h = generate(half);
  for (std::size_t i = 0; i < 50; ++i) {
    REQUIRE(h.dataset.times[i] == a.dataset.times[i]);
    REQUIRE(h.dataset.events[i] == a.dataset.events[i]);
  }
}

TEST_CASE("spec validation rejects bad parameters") {
  OracleSpec spec;
  spec.n = 0;
  REQUIRE_THROWS_AS(spec.validate(), std::invalid_argument);
  spec.n = 10;
  spec.base_scale = -1.0;
  REQUIRE_THROWS_AS(spec.validate(), std::invalid_argument);
  spec.base_scale = 1.0;
  spec.scale_link = {1.0, 2.0};  // mismatched with d=1
  REQUIRE_THROWS_AS(spec.validate(), std::invalid_argument);
  spec.scale_link = {std::nan("")};
  spec.d = 1;
  REQUIRE_THROWS_AS(spec.validate(), std::invalid_argument);
}

TEST_CASE("sample_time validates its domain") {
  const OracleCurve c(Family::weibull, 1.0, 1.0);
  REQUIRE_THROWS_AS(c.sample_time(0.0), std::domain_error);
  REQUIRE_THROWS_AS(c.sample_time(1.0), std::domain_error);
  REQUIRE(c.sample_time(0.5) == Catch::Approx(std::log(2.0)).margin(1e-12));
}
