#include <catch2/catch_amalgamated.hpp>

#include "gansde/analysis.hpp"
#include "test_helpers.hpp"

using namespace gansde;
using namespace gansde::testing;

namespace {
const Dataset kDs = Dataset::scalar({1.0, 3.0}, {2.0, 0.0});
const JointParams kOnes{Vector::Constant(1, 1.0), Vector::Constant(1, 1.0)};
}  // namespace

TEST_CASE("one-step moments on lin-wgan enumerate exactly") {
  const auto lin = build_model({.kind = "lin-wgan"});
  const auto rep = one_step_moment_compare(*lin, kDs, kOnes, 0.1, 1, Scheme::Alt);
  REQUIRE(rep.exact);
  CHECK(rep.evaluations == 16);
  CHECK(rep.measured_first[0] == Catch::Approx(0.18).margin(1e-14));
  CHECK(rep.measured_first[1] == Catch::Approx(-0.1).margin(1e-14));
  CHECK(rep.predicted_first[0] == Catch::Approx(0.18).margin(1e-14));
  CHECK(rep.first_residual_inf < 1e-14);  // model linear in omega: expansion is exact
}

TEST_CASE("zero learning rate kills every moment") {
  const auto lin = build_model({.kind = "lin-wgan"});
  const auto rep = one_step_moment_compare(*lin, kDs, kOnes, 0.0, 1, Scheme::Alt);
  CHECK(rep.measured_first.cwiseAbs().maxCoeff() == 0.0);
  CHECK(rep.measured_second.cwiseAbs().maxCoeff() == 0.0);
  CHECK(rep.first_residual_inf == 0.0);
}

TEST_CASE("alternating vs simultaneous first-moment gap equals the interaction term") {
  const auto lin = build_model({.kind = "lin-wgan"});
  const double eta = 0.1;
  const auto alt = one_step_moment_compare(*lin, kDs, kOnes, eta, 1, Scheme::Alt);
  const auto sml = one_step_moment_compare(*lin, kDs, kOnes, eta, 1, Scheme::Sml);
  CHECK(sml.measured_first[0] == Catch::Approx(0.2).margin(1e-14));
  // gap = -eta^2 (d_omega g_theta) g_omega = -0.01 * (-2) * (-1) = -0.02
  CHECK(alt.measured_first[0] - sml.measured_first[0] == Catch::Approx(-0.02).margin(1e-14));
}

TEST_CASE("shared-batch cross moment shows up only in the simultaneous scheme") {
  const auto lin = build_model({.kind = "lin-wgan"});
  const double eta = 0.1;
  const auto sml = one_step_moment_compare(*lin, kDs, kOnes, eta, 1, Scheme::Sml);
  // E[dtheta domega] - prediction = -eta^2 Cov(g_theta^ij, g_omega^ij) = -eta^2 theta omega Var(z)
  const double cross_residual = sml.measured_second(0, 1) - sml.predicted_second(0, 1);
  CHECK(cross_residual == Catch::Approx(-eta * eta).margin(1e-14));

  const auto alt = one_step_moment_compare(*lin, kDs, kOnes, eta, 1, Scheme::Alt);
  // independent batches: the cross block matches at order eta^2, residual is O(eta^3)
  CHECK(std::abs(alt.measured_second(0, 1) - alt.predicted_second(0, 1)) < eta * eta * eta * 10.0);
}

TEST_CASE("tanh one-step residual decays at third order (exact enumeration)") {
  const auto model = build_model({.kind = "tanh-wgan"});
  const Dataset ds = Dataset::scalar({0.5, -1.0}, {1.0, -0.5});
  const JointParams p{Vector::Constant(1, 0.3), Vector::Constant(1, 0.2)};
  const auto study = one_step_residual_slope(*model, ds, p, {0.1, 0.05, 0.025}, 1, Scheme::Alt);
  INFO("first residuals " << study.first_residuals[0] << " " << study.first_residuals[1] << " "
                          << study.first_residuals[2]);
  CHECK(study.first_slope.slope >= 2.9);
}

TEST_CASE("Monte Carlo control variates reproduce the enumerated residual") {
  const auto model = build_model({.kind = "tanh-wgan"});
  const Dataset ds = Dataset::scalar({0.5, -1.0}, {1.0, -0.5});
  const JointParams p{Vector::Constant(1, 0.3), Vector::Constant(1, 0.2)};
  const auto exact = one_step_moment_compare(*model, ds, p, 0.1, 1, Scheme::Alt);
  OneStepOptions opt;
  opt.force_mc = true;
  opt.mc_draws = 400000;
  opt.seed = 3;
  const auto mc = one_step_moment_compare(*model, ds, p, 0.1, 1, Scheme::Alt, opt);
  REQUIRE_FALSE(mc.exact);
  CHECK(mc.first_residual_inf ==
        Catch::Approx(exact.first_residual_inf).margin(5.0 * std::max(mc.first_mc_se, 1e-12)));
}

TEST_CASE("enumeration bound errors without the Monte Carlo fallback") {
  const auto lin = build_model({.kind = "lin-wgan"});
  OneStepOptions opt;
  opt.enumeration_bound = 4;  // 16 combinations exceed it
  opt.allow_mc = false;
  CHECK_THROWS_WITH(one_step_moment_compare(*lin, kDs, kOnes, 0.1, 1, Scheme::Alt, opt),
                    Catch::Matchers::ContainsSubstring("fallback disabled"));
}

TEST_CASE("oracle order study separates the approximation orders") {
  const auto lin = build_model({.kind = "lin-wgan"});
  const Dataset uncorrelated = Dataset::scalar({2.0, 2.0}, {2.0, 0.0});
  const std::vector<double> grid{0.2, 0.1, 0.05, 0.025};
  std::vector<TestFunction> fns;
  for (const auto& name : MomentState::function_names()) fns.push_back({name, {}, {}, {}, 0.0, 0});

  const auto alt = weak_error_curve(*lin, uncorrelated, Scheme::Alt, SdeKind::AltSde, fns, 1.0, grid, kOnes);
  const auto sml = weak_error_curve(*lin, uncorrelated, Scheme::Sml, SdeKind::SmlSde, fns, 1.0, grid, kOnes);
  const auto sml2 =
      weak_error_curve(*lin, uncorrelated, Scheme::Sml, SdeKind::SmlSde2, fns, 1.0, grid, kOnes);
  INFO("slopes: alt " << alt.slope.slope << " sml " << sml.slope.slope << " sml2 " << sml2.slope.slope);
  CHECK(alt.slope.slope > 1.7);
  CHECK(alt.slope.slope < 2.3);
  CHECK(sml.slope.slope > 0.7);
  CHECK(sml.slope.slope < 1.3);
  CHECK(alt.slope.slope - sml.slope.slope >= 0.5);
  CHECK(sml2.slope.slope > 1.7);
  CHECK(sml2.slope.slope < 2.3);

  for (std::size_t i = 1; i < grid.size(); ++i) {
    CHECK(alt.max_errors[i] < alt.max_errors[i - 1]);
    CHECK(sml.max_errors[i] < sml.max_errors[i - 1]);
    for (std::size_t f = 0; f < alt.function_names.size(); ++f) {
      INFO(alt.function_names[f]);
      CHECK(alt.errors[i][f] <= alt.errors[i - 1][f]);
      CHECK(sml.errors[i][f] <= sml.errors[i - 1][f]);
    }
  }
}

TEST_CASE("correlated minibatch noise degrades the tighter SML approximation") {
  // With Var(z) > 0 the shared batch correlates the theta and omega noise;
  // the block-diagonal diffusion cannot express the cross moment and the
  // theta*omega observable falls back to first order.
  const auto lin = build_model({.kind = "lin-wgan"});
  const std::vector<double> grid{0.2, 0.1, 0.05, 0.025};
  std::vector<TestFunction> fns;
  for (const auto& name : MomentState::function_names()) fns.push_back({name, {}, {}, {}, 0.0, 0});
  const auto sml2 = weak_error_curve(*lin, kDs, Scheme::Sml, SdeKind::SmlSde2, fns, 1.0, grid, kOnes);
  CHECK(sml2.slope.slope < 1.7);
  CHECK(sml2.per_function_slopes.at("theta*omega").slope < 1.4);
}

TEST_CASE("oracle mode rejects unsupported test functions and models") {
  const auto lin = build_model({.kind = "lin-wgan"});
  std::vector<TestFunction> bad{{"exp(theta)", {}, {}, {}, 0.0, 0}};
  CHECK_THROWS_WITH(weak_error_curve(*lin, kDs, Scheme::Alt, SdeKind::AltSde, bad, 1.0, {0.2, 0.1}, kOnes),
                    Catch::Matchers::ContainsSubstring("moment test functions"));
  const auto quad = build_model({.kind = "quad-sim", .s = 1.0});
  std::vector<TestFunction> fns{{"theta", {}, {}, {}, 0.0, 0}};
  CHECK_THROWS_WITH(weak_error_curve(*quad, kDs, Scheme::Alt, SdeKind::AltSde, fns, 1.0, {0.2, 0.1}, kOnes),
                    Catch::Matchers::ContainsSubstring("lin-wgan"));
}

TEST_CASE("monte carlo order study measures the simultaneous-scheme gap") {
  const auto lin = build_model({.kind = "lin-wgan"});
  WeakErrorOptions opt;
  opt.oracle = false;
  opt.replicas = 4000;
  opt.seed = 11;
  opt.workers = default_worker_count();
  opt.em_divisor = 20.0;
  std::vector<TestFunction> fns;
  fns.push_back(coordinate_function(2, 0, "theta"));
  const auto res =
      weak_error_curve(*lin, kDs, Scheme::Sml, SdeKind::SmlSde, fns, 0.5, {0.25, 0.125}, kOnes, opt);
  CHECK(res.errors[0][0] > res.errors[1][0]);
  CHECK(res.ses[0][0] < 0.2 * res.errors[0][0]);
}

TEST_CASE("stationary sampling recovers the OU law and flags misuse") {
  const auto quad = build_model({.kind = "quad-sim", .a = 1.0, .c = 1.0, .b = 0.0, .s = 1.0});
  const Dataset ds = Dataset::scalar({0.0}, {0.0});
  StationaryOptions so;
  so.engine = EngineKind::Sde;
  so.kind = SdeKind::SmlSde;
  so.eta = 0.1;
  so.batch_size = 4;  // beta = 80
  so.horizon = 120.0;
  so.replicas = 8;
  so.workers = default_worker_count();
  so.seed = 21;
  const JointParams init{Vector::Constant(1, 0.2), Vector::Constant(1, -0.1)};
  const EmpiricalMeasure m = stationary_sample(*quad, ds, so, init);
  REQUIRE(m.samples.size() > 100);

  double mean_th = 0.0, var_th = 0.0;
  for (const auto& s : m.samples) mean_th += s.theta[0];
  mean_th /= static_cast<double>(m.samples.size());
  for (const auto& s : m.samples) var_th += (s.theta[0] - mean_th) * (s.theta[0] - mean_th);
  var_th /= static_cast<double>(m.samples.size() - 1);
  const double se = std::sqrt(0.0125 / static_cast<double>(m.samples.size()));
  CHECK(std::abs(mean_th) < 4.0 * se);
  CHECK(var_th == Catch::Approx(0.0125).epsilon(0.15));

  SECTION("burn-in of one rejects") {
    StationaryOptions bad = so;
    bad.burn_in_fraction = 1.0;
    CHECK_THROWS_WITH(stationary_sample(*quad, ds, bad, init),
                      Catch::Matchers::ContainsSubstring("empty sample"));
  }
  SECTION("non-dissipative models need the override") {
    const auto lin = build_model({.kind = "lin-wgan"});
    StationaryOptions s2 = so;
    CHECK_THROWS_WITH(stationary_sample(*lin, kDs, s2, kOnes),
                      Catch::Matchers::ContainsSubstring("dissipative"));
  }
}

TEST_CASE("noiseless dynamics collapse the measure to a point mass") {
  const auto quad = build_model({.kind = "quad-sim", .s = 0.0});
  const Dataset ds = Dataset::scalar({0.0}, {0.0});
  StationaryOptions so;
  so.engine = EngineKind::Sde;
  so.eta = 0.1;
  so.batch_size = 4;
  so.horizon = 60.0;
  so.seed = 4;
  const JointParams origin{Vector::Zero(1), Vector::Zero(1)};
  const EmpiricalMeasure m = stationary_sample(*quad, ds, so, origin);
  for (const auto& s : m.samples) {
    CHECK(std::abs(s.theta[0]) < 1e-12);
    CHECK(std::abs(s.omega[0]) < 1e-12);
  }
}

TEST_CASE("fdr residuals vanish on a point-mass measure at the saddle") {
  const auto quad = build_model({.kind = "quad-sim", .s = 0.0});
  const Dataset ds = Dataset::scalar({0.0}, {0.0});
  EmpiricalMeasure m;
  m.samples.assign(32, JointParams{Vector::Zero(1), Vector::Zero(1)});
  m.from_sde = true;
  m.kind = SdeKind::SmlSde;
  m.eta = 0.1;
  m.batch_size = 4;
  const FdrReport rep = fdr_residuals(m, *quad, ds, 0.1, 4, FdrKind::Fdr2);
  CHECK(rep.lhs == Catch::Approx(0.0).margin(1e-15));
  CHECK(rep.rhs == Catch::Approx(0.0).margin(1e-15));
  CHECK(rep.residual == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("empirical fdr residuals stay within noise on the OU measure") {
  const auto quad = build_model({.kind = "quad-sim", .a = 1.0, .c = 1.0, .b = 0.0, .s = 1.0});
  const Dataset ds = Dataset::scalar({0.0}, {0.0});
  StationaryOptions so;
  so.engine = EngineKind::Sde;
  so.kind = SdeKind::SmlSde;
  so.eta = 0.1;
  so.batch_size = 4;
  so.horizon = 150.0;
  so.replicas = 8;
  so.workers = default_worker_count();
  so.seed = 31;
  const JointParams init{Vector::Constant(1, 0.2), Vector::Constant(1, -0.1)};
  const EmpiricalMeasure m = stationary_sample(*quad, ds, so, init);
  for (const FdrKind which : {FdrKind::Fdr1, FdrKind::Fdr2}) {
    const FdrReport rep = fdr_residuals(m, *quad, ds, so.eta, so.batch_size, which);
    INFO(rep.which << " residual " << rep.residual << " se " << rep.se << " scale " << rep.scale);
    CHECK(rep.within(4.0, 0.05));
    CHECK(std::abs(rep.generator_mean) <= 4.0 * rep.generator_se);
    CHECK_FALSE(rep.eta_term_included);
  }
}

TEST_CASE("fdr1 balances nonzero sides on an asymmetric saddle") {
  const double a = 2.0, c = 0.5;
  const auto quad = build_model({.kind = "quad-sim", .a = a, .c = c, .b = 0.0, .s = 1.0});
  const Dataset ds = Dataset::scalar({0.0}, {0.0});
  StationaryOptions so;
  so.engine = EngineKind::Sde;
  so.kind = SdeKind::SmlSde;
  so.eta = 0.1;
  so.batch_size = 4;
  so.horizon = 150.0;
  so.replicas = 8;
  so.workers = default_worker_count();
  so.seed = 37;
  const JointParams init{Vector::Constant(1, 0.3), Vector::Constant(1, -0.3)};
  const EmpiricalMeasure m = stationary_sample(*quad, ds, so, init);
  const FdrReport rep = fdr_residuals(m, *quad, ds, so.eta, so.batch_size, FdrKind::Fdr1);
  const double beta = 2.0 * so.batch_size / so.eta;
  INFO("lhs " << rep.lhs << " rhs " << rep.rhs << " residual " << rep.residual << " se " << rep.se);
  CHECK(rep.scale > 1e-3);  // both sides genuinely nonzero here
  CHECK(rep.rhs == Catch::Approx((a - c) / beta).epsilon(0.15));
  CHECK(rep.within(4.0, 0.05));
}

TEST_CASE("alt-sde measures carry the eta correction term in FDR1") {
  EmpiricalMeasure m;
  m.samples.assign(4, JointParams{Vector::Constant(1, 0.1), Vector::Constant(1, 0.1)});
  m.from_sde = true;
  m.kind = SdeKind::AltSde;
  const auto quad = build_model({.kind = "quad-sim", .s = 1.0});
  const Dataset ds = Dataset::scalar({0.0}, {0.0});
  CHECK(fdr_residuals(m, *quad, ds, 0.1, 4, FdrKind::Fdr1).eta_term_included);
  CHECK_FALSE(fdr_residuals(m, *quad, ds, 0.1, 4, FdrKind::Fdr2).eta_term_included);
  m.kind = SdeKind::SmlSde;
  CHECK_FALSE(fdr_residuals(m, *quad, ds, 0.1, 4, FdrKind::Fdr1).eta_term_included);
}

TEST_CASE("condition checks verify quad-sim and reject lin-wgan") {
  const Dataset ds = Dataset::scalar({0.0}, {0.0});
  const auto quad = build_model({.kind = "quad-sim", .a = 1.0, .c = 1.0, .b = 0.0, .s = 1.0});
  ProbeConfig pc;
  pc.m0 = 1.0;
  pc.r_max = 10.0;
  pc.shells = 10;
  pc.directions_per_shell = 100;
  pc.seed = 8;
  const ConditionReport rep = convergence_condition_check(*quad, ds, 0.1, 4, SdeKind::SmlSde, pc);
  CHECK(rep.dissipative);
  CHECK(rep.r_found >= 1.0 - 1e-9);
  CHECK(rep.k2 == Catch::Approx(0.05).margin(1e-12));
  CHECK(rep.min_ellipticity == Catch::Approx(0.025).margin(1e-12));
  CHECK(rep.lyap_feasible);
  CHECK(rep.lyap_m == Catch::Approx(1.1).margin(1e-12));
  CHECK(rep.lyap_eps == Catch::Approx(1.0).margin(1e-12));
  CHECK(rep.lyap_delta == Catch::Approx(0.476136).margin(1e-6));
  CHECK(rep.lyap_ok);

  // direct spot check of the dissipativity inequality at u = (3, 4)
  const JointParams u{Vector::Constant(1, 3.0), Vector::Constant(1, 4.0)};
  const SdeCoefficients co = sde_coefficients(SdeKind::SmlSde, *quad, ds, u, 0.1, 4);
  CHECK(u.flat().dot(co.b) == Catch::Approx(-25.0).margin(1e-12));

  const auto lin = build_model({.kind = "lin-wgan"});
  const ConditionReport bad = convergence_condition_check(*lin, kDs, 0.1, 4, SdeKind::SmlSde, pc);
  CHECK_FALSE(bad.dissipative);
  CHECK(bad.has_witness);
}

TEST_CASE("replica-averaged moment bound is insensitive to the learning rate") {
  const auto quad = build_model({.kind = "quad-sim", .a = 1.0, .c = 1.0, .b = 0.0, .s = 1.0});
  const Dataset ds = Dataset::scalar({0.0}, {0.0});
  const JointParams init{Vector::Constant(1, 1.0), Vector::Constant(1, 1.0)};
  std::map<double, std::map<int, double>> by_eta;
  for (const double eta : {0.1, 0.05, 0.025}) {
    const long steps = static_cast<long>(std::llround(20.0 / eta));
    by_eta[eta] = moment_bound_study(*quad, ds, Scheme::Sml, eta, 1, steps, 256, {2, 4}, init, 88,
                                     default_worker_count());
  }
  for (const int m : {2, 4}) {
    const double cap = 1.5 * by_eta[0.1][m];
    CHECK(by_eta[0.05][m] < cap);
    CHECK(by_eta[0.025][m] < cap);
  }
}

TEST_CASE("ensemble mean decays at the OU rate") {
  const auto quad = build_model({.kind = "quad-sim", .a = 1.0, .c = 1.0, .b = 0.0, .s = 1.0});
  const Dataset ds = Dataset::scalar({0.0}, {0.0});
  const JointParams init{Vector::Constant(1, 2.0), Vector::Constant(1, 3.0)};
  const DecayRateStudy study = decay_rate_study(SdeKind::SmlSde, *quad, ds, init, 0.1, 4, 4.0, 512, 19,
                                                default_worker_count(), 0.0, 3.0);
  INFO("fitted rate " << study.rate);
  CHECK(study.rate == Catch::Approx(1.0).epsilon(0.25));
}

TEST_CASE("the eta-order drift correction shifts the ALT-SDE decay rate") {
  const auto quad = build_model({.kind = "quad-sim", .a = 1.0, .c = 1.0, .b = 0.0, .s = 1.0});
  const QuadSim& q = dynamic_cast<const QuadSim&>(*quad);
  const Dataset ds = Dataset::scalar({0.0}, {0.0});
  const double eta = 0.4;  // large eta makes the (1 + eta/2) shift visible
  const OuOracle oracle = ou_oracle(q, SdeKind::AltSde, eta, 4);
  REQUIRE(oracle.mean_decay_rate == Catch::Approx(1.2));
  const JointParams init{Vector::Constant(1, 2.0), Vector::Constant(1, 3.0)};
  const DecayRateStudy study = decay_rate_study(SdeKind::AltSde, *quad, ds, init, eta, 4, 4.0, 512, 29,
                                                default_worker_count(), 0.0, 3.2);
  INFO("fitted rate " << study.rate << " vs oracle " << oracle.mean_decay_rate);
  CHECK(study.rate == Catch::Approx(oracle.mean_decay_rate).epsilon(0.25));
}

TEST_CASE("time-averaged generator matches the loss drift along one path") {
  const auto quad = build_model({.kind = "quad-sim", .a = 1.0, .c = 1.0, .b = 0.0, .s = 1.0});
  const Dataset ds = Dataset::scalar({0.0}, {0.0});
  const double eta = 0.1;
  const int B = 4;
  IntegratorConfig cfg;
  cfg.horizon = 150.0;
  cfg.seed = 47;
  cfg.record_stats = true;
  const JointParams init{Vector::Constant(1, 0.1), Vector::Constant(1, -0.1)};
  const Trajectory tr = em_integrate(SdeKind::SmlSde, *quad, ds, init, eta, B, cfg);
  const TestFunction phi = loss_function(*quad, ds);
  std::vector<double> gen_vals;
  for (std::size_t k = 0; k + 1 < tr.points.size(); ++k) {
    const JointParams p{tr.points[k].theta, tr.points[k].omega};
    gen_vals.push_back(generator_apply(phi, *quad, ds, p, eta, B, SdeKind::SmlSde));
  }
  const MeanSe gen = batch_means_se(gen_vals);
  const double phi_drift = (tr.points.back().phi - tr.points.front().phi) / tr.points.back().time;
  INFO("time-avg generator " << gen.mean << " +- " << gen.se << " vs loss drift " << phi_drift);
  CHECK(std::abs(gen.mean - phi_drift) <= 3.0 * gen.se + 1e-3);
}
