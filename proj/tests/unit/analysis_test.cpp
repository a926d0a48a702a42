#include <gtest/gtest.h>

#include <cmath>

#include "dosp/analysis.hpp"

using namespace dosp;

namespace {

/// Objective that is identically zero.
struct ZeroObjective : QuadraticToy {
  double local_utility(std::size_t, std::span<const double>, const EnvState&) const { return 0.0; }
  double global_utility(std::span<const double>, const EnvState&) const { return 0.0; }
};

AlgoConfig toy_config(double beta0 = 0.5) {
  const QuadraticToy toy;
  return AlgoConfig{PowerLawSchedule{beta0, 0.75, 1.0, 0.25, 1}, PerturbationModel::bernoulli(1.0),
                    toy.default_bounds(), std::nullopt, Variant::dosp, std::nullopt};
}

} // namespace

TEST(Divergence, SquaredDistance) {
  EXPECT_DOUBLE_EQ(squared_distance(std::vector<double>{0, 0}, std::vector<double>{1, 1}), 2.0);
  RunTrace t;
  t.records.resize(2);
  t.records[0].nominal_action = {0, 0};
  t.records[1].nominal_action = {1, 3};
  const std::vector<double> a_star{1, 1};
  EXPECT_EQ(divergence(t, a_star), (std::vector<double>{2.0, 4.0}));
}

TEST(MonteCarlo, IdenticalSamplesHaveZeroError) {
  detail::MomentSums m;
  m.resize(1);
  for (int r = 0; r < 10; ++r) m.add(0, 3.25);
  const auto s = m.finish(10);
  EXPECT_DOUBLE_EQ(s.mean[0], 3.25);
  EXPECT_EQ(s.std_error[0], 0.0);
}

TEST(MonteCarlo, IndependentOfJobCount) {
  const QuadraticToy toy;
  const auto cfg = toy_config();
  MonteCarloOptions one{1, RecordPolicy{97}};
  MonteCarloOptions three{3, RecordPolicy{97}};
  const auto a = monte_carlo(cfg, toy, 3000, 37, 5, toy.optimum(), one);
  const auto b = monte_carlo(cfg, toy, 3000, 37, 5, toy.optimum(), three);
  EXPECT_EQ(a.ks, b.ks);
  EXPECT_EQ(a.divergence->mean, b.divergence->mean);
  EXPECT_EQ(a.divergence->std_error, b.divergence->std_error);
  EXPECT_EQ(a.utility.mean, b.utility.mean);
  EXPECT_EQ(a.grad_sq.mean, b.grad_sq.mean);
  EXPECT_EQ(a.mean_final_action, b.mean_final_action);
}

TEST(MonteCarlo, StandardErrorShrinksAsInverseRootR) {
  const QuadraticToy toy;
  const auto cfg = toy_config();
  MonteCarloOptions opt{0, RecordPolicy{500}};
  const auto small = monte_carlo(cfg, toy, 2000, 400, 8, toy.optimum(), opt);
  const auto big = monte_carlo(cfg, toy, 2000, 1600, 8, toy.optimum(), opt);
  const double ratio = small.divergence->std_error.back() / big.divergence->std_error.back();
  EXPECT_NEAR(ratio, 2.0, 0.4);
}

TEST(MonteCarlo, ConvergesOnToy) {
  const QuadraticToy toy;
  const auto d = monte_carlo_divergence(toy_config(), toy, 20000, 64, 2, *toy.optimum());
  EXPECT_LT(d.values.back(), 0.1 * d.values.front());
  EXPECT_THROW(monte_carlo_divergence(toy_config(), toy, 10, 1, 2, *toy.optimum()), std::invalid_argument);
}

TEST(Bias, BoundValues) {
  EXPECT_NEAR(bias_bound(1.0, 2, 2.0, 1.0, 1.0), 4.0 * std::sqrt(2.0), 1e-12);
  EXPECT_EQ(bias_bound(0.0, 2, 2.0, 1.0, 1.0), 0.0);
  const PowerLawSchedule s{0.5, 0.75, 1.0, 0.25, 1};
  for (Iteration k = 0; k < 100; ++k)
    EXPECT_GE(bias_bound(s, k, 2, 2.0, 1.0, 1.0), bias_bound(s, k + 1, 2, 2.0, 1.0, 1.0));
  EXPECT_THROW(bias_bound(1.0, 2, 2.0, 0.0, 1.0), std::domain_error);
}

TEST(Bias, VanishesOnQuadraticWithSymmetricPerturbation) {
  const QuadraticToy toy;
  for (double g : {1.0, 0.5, 0.1}) {
    const auto b = empirical_bias(toy, std::vector<double>{0.4, 2.1}, g, PerturbationModel::bernoulli(1.0), 200'000, 3);
    const double bound = bias_bound(g, 2, 2.0, 1.0, 1.0);
    for (std::size_t i = 0; i < 2; ++i) {
      EXPECT_LE(std::abs(b.value[i]), 4 * b.std_error[i]) << "gamma " << g;
      EXPECT_LE(std::abs(b.value[i]), bound + 4 * b.std_error[i]);
    }
  }
}

TEST(Bias, IncompleteNormalisationByQ) {
  const QuadraticToy toy;
  const auto b = empirical_bias(toy, std::vector<double>{0.7, 1.6}, 0.5, PerturbationModel::bernoulli(1.0), 400'000, 4,
                                ExchangeModel(0.5));
  for (std::size_t i = 0; i < 2; ++i) EXPECT_LE(std::abs(b.value[i]), 4 * b.std_error[i]);
}

TEST(SecondMoment, MatchesHandComputedToyValue) {
  // a = 0, gamma = 1: |g|^2 = 2 f^2 with f = -(s1 + s2) + phi1 phi2 + phi1 + phi2,
  // E f^2 = 4 + 1/6 + 3
  const QuadraticToy toy;
  const auto e = mean_grad_sq_at(toy, std::vector<double>{0, 0}, 1.0, PerturbationModel::bernoulli(1.0), 400'000, 9);
  EXPECT_LE(std::abs(e.value - 2.0 * (7.0 + 1.0 / 6.0)), 4 * e.std_error);
}

TEST(SecondMoment, ZeroObjectiveGivesZeroM) {
  const ZeroObjective zero;
  AlgoConfig cfg = toy_config();
  const auto mc = monte_carlo(cfg, zero, 200, 8, 1, std::nullopt, MonteCarloOptions{1, RecordPolicy{1}});
  EXPECT_EQ(estimate_M(mc).value, 0.0);
  const auto tiny = monte_carlo(cfg, zero, 10, 2, 1, std::nullopt, MonteCarloOptions{1, RecordPolicy{1}});
  EXPECT_THROW(estimate_M(tiny), std::invalid_argument);
}

TEST(RateConstants, ToyValues) {
  const auto c = make_rate_constants(2, 2.0, 1.0, 1.0, 1.0, MEstimate{10.0});
  EXPECT_DOUBLE_EQ(c.A, 2.0);
  EXPECT_NEAR(c.B, 11.3137084989848, 1e-12);
  EXPECT_EQ(c.C, 10.0);
  const auto ci = make_rate_constants(2, 2.0, 1.0, 1.0, 1.0, MEstimate{10.0}, 0.5);
  EXPECT_DOUBLE_EQ(ci.A, 1.0);
  EXPECT_EQ(ci.variant, InformationVariant::incomplete);
  EXPECT_THROW(make_rate_constants(2, 0.0, 1.0, 1.0, 1.0, MEstimate{}), std::domain_error);
}

TEST(Theorem4, EnvelopeApplicabilityAndFloor) {
  const auto c = make_rate_constants(2, 2.0, 1.0, 1.0, 1.0, MEstimate{10.0});
  const PowerLawSchedule s{0.5, 0.75, 1.0, 0.25, 1};
  const auto diag = rate_diagnostics(s, c.A, 0, 100'000);
  const auto e = theorem4_envelopes(diag, c, 0.0, s);
  ASSERT_TRUE(e.theta_applicable);
  ASSERT_TRUE(e.rho_applicable);
  const double gap = c.A - diag.chi_sup;
  EXPECT_DOUBLE_EQ(e.theta, (c.B + std::sqrt(c.B * c.B + 4 * c.C * diag.beta_over_gamma3_sup * gap)) / (2 * gap));
  for (Iteration k = e.K0; k < 100'000; k += 37) {
    EXPECT_GE(e.theta_envelope(s, k), lemma5_floor(c, s, k) * (1 - 1e-12));
    EXPECT_GE(e.rho_envelope(s, k), lemma5_floor(c, s, k) * (1 - 1e-12));
  }
  EXPECT_TRUE(std::isnan(e.theta_envelope(s, e.K0 - 1)) || e.K0 == 0);

  const PowerLawSchedule fast{0.4, 0.7, 1.0, 0.15, 1}; // nu1 > 3 nu2
  const auto e2 = theorem4_envelopes(rate_diagnostics(fast, c.A, 0, 100'000), c, 1.0, fast);
  EXPECT_FALSE(e2.rho_applicable);
  EXPECT_TRUE(std::isnan(e2.rho_envelope(fast, 100)));
  EXPECT_THROW(theorem4_envelopes(diag, c, -1.0, s), std::domain_error);
}

TEST(Theorem4, LargeInitialDivergenceDominates) {
  const auto c = make_rate_constants(2, 2.0, 1.0, 1.0, 1.0, MEstimate{1.0});
  const PowerLawSchedule s{0.5, 0.75, 1.0, 0.25, 1};
  const auto diag = rate_diagnostics(s, c.A, 0, 10'000);
  const auto e = theorem4_envelopes(diag, c, 1e6, s);
  EXPECT_DOUBLE_EQ(e.theta, std::sqrt(1e6) / gamma(s, diag.K0));
  EXPECT_DOUBLE_EQ(e.theta_envelope(s, diag.K0), 1e6);
}

TEST(Theorem5, EnvelopeValue) {
  EXPECT_DOUBLE_EQ(theorem5_envelope({2.0, 0.75, 12.0, 0.25, 1}, 2.0, 3), 1.0);
}

TEST(Lemma4, RecursionArithmetic) {
  const auto c = make_rate_constants(2, 2.0, 1.0, 1.0, 1.0, MEstimate{10.0});
  const PowerLawSchedule s{0.5, 0.75, 1.0, 0.25, 1};
  const auto r = lemma4_recursion(c, s, 3, 4.0, 0.0, 3.0, 0.0);
  const double b = beta(s, 3), g = gamma(s, 3);
  EXPECT_DOUBLE_EQ(r.rhs, (1 - 2 * b * g) * 4.0 + c.B * b * g * g * 2.0 + 10.0 * b * b);
  EXPECT_EQ(r.holds(), r.lhs <= r.rhs);
  const auto violated = lemma4_recursion(c, s, 3, 0.0, 0.0, 100.0, 1.0);
  EXPECT_FALSE(violated.holds());
  EXPECT_TRUE(lemma4_recursion(c, s, 3, 0.0, 0.0, 100.0, 50.0).holds());
}

TEST(Lemma7, ValuesAndDomain) {
  const auto r = lemma7_check(1.0, 0.5, 1.0);
  EXPECT_NEAR(r.g, 1 - 1 / std::sqrt(2.0), 1e-15);
  EXPECT_TRUE(r.holds);
  // small x: g ~ b x^(1-a) stays below b
  EXPECT_TRUE(lemma7_check(1.0, 0.3, 1e-12).holds);
  EXPECT_NEAR(lemma7_check(1.0, 0.3, 1e-12).g, 0.3, 1e-9);
  EXPECT_THROW(lemma7_check(0.0, 0.5, 0.5), std::domain_error);
  EXPECT_THROW(lemma7_check(0.5, 1.5, 0.5), std::domain_error);
  EXPECT_THROW(lemma7_check(0.5, 0.5, 0.0), std::domain_error);
}

TEST(WindowAverage, PlainAndWeighted) {
  const std::vector<Iteration> ks{1, 2, 3, 4};
  const std::vector<double> v{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(window_average(ks, v, 2, 3), 2.5);
  EXPECT_DOUBLE_EQ(window_average(ks, v, 1, 4, [](Iteration k) { return double(k); }), 7.5);
  EXPECT_THROW(window_average(ks, v, 10, 20), std::invalid_argument);
}
