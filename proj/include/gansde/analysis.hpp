#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gansde/common.hpp"
#include "gansde/gradient_stats.hpp"
#include "gansde/models.hpp"
#include "gansde/oracles.hpp"
#include "gansde/rng.hpp"
#include "gansde/sde.hpp"
#include "gansde/sga.hpp"
#include "gansde/stats.hpp"
#include "gansde/test_functions.hpp"

namespace gansde {

// ---------------------------------------------------------------------------
// One-step moment expansions
// ---------------------------------------------------------------------------

struct OneStepOptions {
  double enumeration_bound = kEnumerationBound;
  long mc_draws = 1000000;
  std::uint64_t seed = 0;
  bool allow_mc = true;
  bool force_mc = false;
};

struct OneStepMomentReport {
  Vector measured_first;
  Vector predicted_first;
  Matrix measured_second;
  Matrix predicted_second;
  double first_residual_inf = 0.0;
  double second_residual_inf = 0.0;
  bool exact = false;       // enumeration (true) vs Monte Carlo (false)
  long evaluations = 0;     // batch combinations or MC draws
  double first_mc_se = 0.0; // max componentwise SE of the first-moment residual
};

namespace detail {

struct SampleTables {
  std::vector<Vector> g_theta, g_omega;   // per (i,j) pair, at the base state
  std::vector<Matrix> domega_gtheta;      // per-pair interaction block
};

inline SampleTables sample_tables(const MinimaxModel& model, const Dataset& ds, const JointParams& p) {
  SampleTables t;
  Vector gt(model.dim_theta()), go(model.dim_omega());
  for (const auto& z : ds.latents)
    for (const auto& x : ds.reals) {
      model.sample_grads(p, z, x, gt, go);
      t.g_theta.push_back(gt);
      t.g_omega.push_back(go);
      t.domega_gtheta.push_back(model.sample_hessian(p, z, x).domega_gtheta);
    }
  return t;
}

inline const Vector& pair_entry(const std::vector<Vector>& table, const Dataset& ds,
                                const std::pair<int, int>& ij) {
  return table[static_cast<std::size_t>(ij.first) * ds.num_reals() + ij.second];
}

}  // namespace detail

// Compares the exact (or Monte Carlo) one-step difference moments of the
// discrete recursion against the second-order expansion
//   E[Delta]        ~ eta (-g_theta; g_omega) + eta^2 (-(d_omega g_theta) g_omega; 0)
//   E[Delta Delta^T] ~ eta^2 [ (1/B) diag(Sigma_theta, Sigma_omega) + b~ b~^T ].
// The eta^2 first-moment term belongs to the alternating scheme; the
// simultaneous scheme has none.
inline OneStepMomentReport one_step_moment_compare(const MinimaxModel& model, const Dataset& ds,
                                                   const JointParams& p, double eta, int batch_size,
                                                   Scheme scheme, const OneStepOptions& opt = {}) {
  model.require_params(p);
  model.require_dataset(ds);
  require(eta >= 0.0, "one_step_moment_compare: eta must be >= 0");
  const Index dt = model.dim_theta(), dw = model.dim_omega();
  const Index dim = dt + dw;

  const GradientStats st = population_covariances(model, ds, p);
  const HessianBlocks hess = full_hessian_blocks(model, ds, p);
  Vector b_tilde(dim);
  b_tilde << -st.g_theta, st.g_omega;

  OneStepMomentReport rep;
  rep.predicted_first = eta * b_tilde;
  if (scheme == Scheme::Alt)
    rep.predicted_first.head(dt) -= eta * eta * hess.domega_gtheta * st.g_omega;
  rep.predicted_second = Matrix::Zero(dim, dim);
  rep.predicted_second.topLeftCorner(dt, dt) = st.sigma_theta / batch_size;
  rep.predicted_second.bottomRightCorner(dw, dw) = st.sigma_omega / batch_size;
  rep.predicted_second += b_tilde * b_tilde.transpose();
  rep.predicted_second *= eta * eta;

  const double combos_one = std::pow(static_cast<double>(ds.num_pairs()), batch_size);
  const double combos = scheme == Scheme::Alt ? combos_one * combos_one : combos_one;
  const bool can_enumerate = model.noise_scale() == 0.0 && combos <= opt.enumeration_bound;

  Vector mean_delta = Vector::Zero(dim);
  Matrix mean_outer = Matrix::Zero(dim, dim);

  if (can_enumerate && !opt.force_mc) {
    const auto tables = detail::sample_tables(model, ds, p);
    const double w_one = 1.0 / combos_one;
    auto batch_mean = [&](const std::vector<Vector>& table, const Minibatch& b, Vector& out) {
      out.setZero();
      for (const auto& ij : b.pairs) out += detail::pair_entry(table, ds, ij);
      out /= static_cast<double>(b.size());
    };
    Vector g_o(dw), g_t(dt), delta(dim);
    Vector gt_new(dt), go_new(dw);
    if (scheme == Scheme::Sml) {
      for_each_ordered_batch(ds.num_latents(), ds.num_reals(), batch_size, [&](const Minibatch& b) {
        batch_mean(tables.g_theta, b, g_t);
        batch_mean(tables.g_omega, b, g_o);
        delta.head(dt) = -eta * g_t;
        delta.tail(dw) = eta * g_o;
        mean_delta += w_one * delta;
        mean_outer += w_one * delta * delta.transpose();
      }, opt.enumeration_bound);
    } else {
      JointParams shifted = p;
      for_each_ordered_batch(ds.num_latents(), ds.num_reals(), batch_size, [&](const Minibatch& b) {
        batch_mean(tables.g_omega, b, g_o);
        shifted.omega = p.omega + eta * g_o;
        for_each_ordered_batch(ds.num_latents(), ds.num_reals(), batch_size, [&](const Minibatch& b_bar) {
          g_t.setZero();
          for (const auto& ij : b_bar.pairs) {
            model.sample_grads(shifted, ds.latents[ij.first], ds.reals[ij.second], gt_new, go_new);
            g_t += gt_new;
          }
          g_t /= static_cast<double>(b_bar.size());
          delta.head(dt) = -eta * g_t;
          delta.tail(dw) = eta * g_o;
          const double w = w_one * w_one;
          mean_delta += w * delta;
          mean_outer += w * delta * delta.transpose();
        }, opt.enumeration_bound);
      }, opt.enumeration_bound);
    }
    rep.exact = true;
    rep.evaluations = static_cast<long>(combos);
    rep.measured_first = mean_delta;
    rep.measured_second = mean_outer;
    rep.first_residual_inf = (rep.measured_first - rep.predicted_first).cwiseAbs().maxCoeff();
    rep.second_residual_inf = (rep.measured_second - rep.predicted_second).cwiseAbs().maxCoeff();
    return rep;
  }

  if (!opt.allow_mc)
    throw Error("one_step_moment_compare: enumeration bound exceeded (" + format_double(combos) + " > " +
                format_double(opt.enumeration_bound) + ") and Monte Carlo fallback disabled");

  // Monte Carlo with per-draw control variates: the linearized one-step
  // difference C~ has exactly the predicted moments, so only the residual
  // Delta - C~ (of size O(eta^3)) is sampled.
  const double s = model.noise_scale();
  Rng rng = derive_stream(opt.seed, 0);
  Vector resid_mean = Vector::Zero(dim);
  Vector resid_m2 = Vector::Zero(dim);
  Matrix second_resid = Matrix::Zero(dim, dim);
  Vector g_o(dw), g_t_new(dt), g_t_old(dt), delta(dim), cv(dim);
  Vector gt(dt), go(dw);
  Matrix h_block(dt, dw);
  JointParams shifted = p;
  const long draws = opt.mc_draws;
  for (long it = 0; it < draws; ++it) {
    const Minibatch b = sample_minibatch(ds.num_latents(), ds.num_reals(), batch_size, rng);
    g_o.setZero();
    for (const auto& ij : b.pairs) {
      model.sample_grads(p, ds.latents[ij.first], ds.reals[ij.second], gt, go);
      g_o += go;
    }
    g_o /= static_cast<double>(batch_size);
    if (s > 0.0) g_o += (s / std::sqrt(static_cast<double>(batch_size))) * rng.normal_vector(dw);

    if (scheme == Scheme::Sml) {
      // Delta coincides with its linearization; only the second-moment cross
      // term can differ, captured below through the shared-batch outer product.
      g_t_old.setZero();
      for (const auto& ij : b.pairs) {
        model.sample_grads(p, ds.latents[ij.first], ds.reals[ij.second], gt, go);
        g_t_old += gt;
      }
      g_t_old /= static_cast<double>(batch_size);
      if (s > 0.0) g_t_old += (s / std::sqrt(static_cast<double>(batch_size))) * rng.normal_vector(dt);
      delta.head(dt) = -eta * g_t_old;
      delta.tail(dw) = eta * g_o;
      second_resid += delta * delta.transpose();
      continue;
    }

    const Minibatch b_bar = sample_minibatch(ds.num_latents(), ds.num_reals(), batch_size, rng);
    shifted.omega = p.omega + eta * g_o;
    g_t_new.setZero();
    g_t_old.setZero();
    h_block.setZero();
    for (const auto& ij : b_bar.pairs) {
      model.sample_grads(shifted, ds.latents[ij.first], ds.reals[ij.second], gt, go);
      g_t_new += gt;
      model.sample_grads(p, ds.latents[ij.first], ds.reals[ij.second], gt, go);
      g_t_old += gt;
      h_block += model.sample_hessian(p, ds.latents[ij.first], ds.reals[ij.second]).domega_gtheta;
    }
    g_t_new /= static_cast<double>(batch_size);
    g_t_old /= static_cast<double>(batch_size);
    h_block /= static_cast<double>(batch_size);
    if (s > 0.0) {
      const Vector noise = (s / std::sqrt(static_cast<double>(batch_size))) * rng.normal_vector(dt);
      g_t_new += noise;  // same noise realization at both states: it cancels in the residual
      g_t_old += noise;
    }

    delta.head(dt) = -eta * g_t_new;
    delta.tail(dw) = eta * g_o;
    cv.head(dt) = -eta * g_t_old - eta * eta * h_block * g_o;
    cv.tail(dw) = eta * g_o;
    const Vector resid = delta - cv;
    resid_mean += resid;
    resid_m2 += resid.cwiseAbs2();
    Vector cv_lin(dim);
    cv_lin.head(dt) = -eta * g_t_old;
    cv_lin.tail(dw) = eta * g_o;
    second_resid += delta * delta.transpose() - cv_lin * cv_lin.transpose();
  }

  rep.exact = false;
  rep.evaluations = draws;
  if (scheme == Scheme::Sml) {
    rep.measured_first = rep.predicted_first;  // exact: Delta is linear in the batch average
    rep.first_residual_inf = 0.0;
    rep.first_mc_se = 0.0;
    rep.measured_second = second_resid / static_cast<double>(draws);
    rep.second_residual_inf = (rep.measured_second - rep.predicted_second).cwiseAbs().maxCoeff();
  } else {
    const Vector mean = resid_mean / static_cast<double>(draws);
    rep.measured_first = rep.predicted_first + mean;
    rep.first_residual_inf = mean.cwiseAbs().maxCoeff();
    Vector var = resid_m2 / static_cast<double>(draws) - mean.cwiseAbs2();
    rep.first_mc_se = std::sqrt(var.maxCoeff() / static_cast<double>(draws));
    rep.measured_second = rep.predicted_second + second_resid / static_cast<double>(draws);
    rep.second_residual_inf = (second_resid / static_cast<double>(draws)).cwiseAbs().maxCoeff();
  }
  return rep;
}

struct ResidualSlopeStudy {
  std::vector<double> eta_grid;
  std::vector<double> first_residuals;
  std::vector<double> second_residuals;
  SlopeFit first_slope;
  SlopeFit second_slope;
};

// Log-log slope of the one-step expansion residual over an eta grid; the
// expansion is third-order accurate, so the first-moment slope should be >= ~3.
inline ResidualSlopeStudy one_step_residual_slope(const MinimaxModel& model, const Dataset& ds,
                                                  const JointParams& p, const std::vector<double>& eta_grid,
                                                  int batch_size, Scheme scheme,
                                                  const OneStepOptions& opt = {}) {
  require(eta_grid.size() >= 2, "one_step_residual_slope: need at least two eta values");
  ResidualSlopeStudy study;
  study.eta_grid = eta_grid;
  for (std::size_t i = 0; i < eta_grid.size(); ++i) {
    OneStepOptions o = opt;
    o.seed = derive_seed(opt.seed, 0xA11, i);
    const auto rep = one_step_moment_compare(model, ds, p, eta_grid[i], batch_size, scheme, o);
    study.first_residuals.push_back(rep.first_residual_inf);
    study.second_residuals.push_back(rep.second_residual_inf);
  }
  study.first_slope = loglog_fit(study.eta_grid, study.first_residuals);
  study.second_slope = loglog_fit(study.eta_grid, study.second_residuals);
  return study;
}

// ---------------------------------------------------------------------------
// Weak-error order studies
// ---------------------------------------------------------------------------

struct WeakErrorOptions {
  bool oracle = true;          // exact moment recursions vs moment ODEs (lin-wgan, scalar)
  long replicas = 0;           // Monte Carlo mode
  int batch_size = 1;
  std::uint64_t seed = 0;
  int workers = 1;
  double rk_step = 1e-5;       // oracle-mode ODE step
  double em_divisor = 100.0;   // Monte Carlo mode: h = eta / em_divisor
  double se_gap_ratio = 0.2;   // SE must stay below this fraction of the gap
  bool skip_refinement_check = false;
};

struct OrderStudyResult {
  std::vector<double> eta_grid;
  std::vector<std::string> function_names;
  std::vector<std::vector<double>> errors;  // [eta][function]
  std::vector<std::vector<double>> ses;     // [eta][function]
  std::vector<double> max_errors;           // per eta, max over functions
  SlopeFit slope;                           // fitted on max_errors
  std::map<std::string, SlopeFit> per_function_slopes;
};

namespace detail {

inline void finish_order_study(OrderStudyResult& res) {
  res.max_errors.clear();
  for (const auto& row : res.errors) {
    double mx = 0.0;
    for (double e : row) mx = std::max(mx, e);
    res.max_errors.push_back(mx);
  }
  res.slope = loglog_fit(res.eta_grid, res.max_errors);
  for (std::size_t f = 0; f < res.function_names.size(); ++f) {
    std::vector<double> col;
    for (const auto& row : res.errors) col.push_back(row[f]);
    bool positive = true;
    for (double e : col) positive = positive && e > 0.0;
    if (positive)
      res.per_function_slopes[res.function_names[f]] = loglog_fit(res.eta_grid, col);
  }
}

}  // namespace detail

// Weak-error order study: for each eta, the discrete recursion and its SDE
// approximation are compared on E f at aligned times t = 1..floor(T/eta) and
// the worst gap per test function is recorded; the order is the log-log slope.
//
// Oracle mode (scalar lin-wgan) replaces sampling on both sides with exact
// moment recursions / moment ODEs, so there is no Monte Carlo noise at all.
inline OrderStudyResult weak_error_curve(const MinimaxModel& model, const Dataset& ds, Scheme scheme,
                                         SdeKind kind, const std::vector<TestFunction>& functions,
                                         double horizon, const std::vector<double>& eta_grid,
                                         const JointParams& initial, const WeakErrorOptions& opt = {}) {
  require(eta_grid.size() >= 2, "weak_error_curve: need at least two eta values");
  for (std::size_t i = 1; i < eta_grid.size(); ++i)
    require(eta_grid[i] < eta_grid[i - 1], "weak_error_curve: eta grid must be strictly decreasing");

  OrderStudyResult res;
  res.eta_grid = eta_grid;

  if (opt.oracle) {
    require(model.kind() == "lin-wgan" && model.dim_theta() == 1 && model.dim_omega() == 1,
            "oracle mode requires the scalar lin-wgan model");
    const LinWganMoments mom = lin_wgan_moments(ds);
    for (const auto& f : functions) res.function_names.push_back(f.name);
    if (res.function_names.empty()) res.function_names = MomentState::function_names();
    for (const auto& name : res.function_names)
      require(std::find(MomentState::function_names().begin(), MomentState::function_names().end(), name) !=
                  MomentState::function_names().end(),
              "oracle mode supports the moment test functions only (got `" + name + "`)");
    const MomentState init{initial.theta[0], initial.omega[0], initial.theta[0] * initial.theta[0],
                           initial.theta[0] * initial.omega[0], initial.omega[0] * initial.omega[0]};
    if (!opt.skip_refinement_check) {
      // ODE-step refinement stand-in for the integrator bias check.
      const double eta0 = eta_grid.front();
      const long n0 = static_cast<long>(std::floor(horizon / eta0 + 1e-9));
      const auto coarse = sde_moment_ode(kind, mom, opt.batch_size, eta0, n0, init, opt.rk_step * 2.0);
      const auto fine = sde_moment_ode(kind, mom, opt.batch_size, eta0, n0, init, opt.rk_step);
      double diff = 0.0;
      for (long t = 0; t < n0; ++t)
        for (const auto& name : MomentState::function_names())
          diff = std::max(diff, std::abs(coarse[t].get(name) - fine[t].get(name)));
      require(diff < 1e-9, "weak_error_curve: moment-ODE step refinement moved results by " +
                               format_double(diff) + "; decrease rk_step");
    }
    for (double eta : eta_grid) {
      const long n = static_cast<long>(std::floor(horizon / eta + 1e-9));
      require(n >= 1, "weak_error_curve: horizon shorter than one step");
      const auto sga = sga_moment_recursion(scheme, mom, opt.batch_size, eta, n, init);
      const auto sde = sde_moment_ode(kind, mom, opt.batch_size, eta, n, init, opt.rk_step);
      std::vector<double> err(res.function_names.size(), 0.0);
      for (long t = 0; t < n; ++t)
        for (std::size_t f = 0; f < res.function_names.size(); ++f)
          err[f] = std::max(err[f], std::abs(sga[t].get(res.function_names[f]) -
                                             sde[t].get(res.function_names[f])));
      res.errors.push_back(err);
      res.ses.push_back(std::vector<double>(res.function_names.size(), 0.0));
    }
    detail::finish_order_study(res);
    return res;
  }

  // Monte Carlo mode.
  require(opt.replicas >= 2, "weak_error_curve: Monte Carlo mode needs replicas >= 2");
  require(!functions.empty(), "weak_error_curve: no test functions given");
  for (const auto& f : functions) res.function_names.push_back(f.name);

  if (!opt.skip_refinement_check) {
    const double eta0 = eta_grid.front();
    const auto refine = em_self_convergence_check(kind, model, ds, initial, eta0, opt.batch_size, horizon,
                                                  eta0 / opt.em_divisor, std::min<long>(opt.replicas, 4000),
                                                  derive_seed(opt.seed, 0xEE, 0), opt.workers);
    if (!refine.passed)
      throw InconclusiveError("weak_error_curve: integrator refinement check failed (diff " +
                              format_double(refine.diff_norm) + " vs MC SE " + format_double(refine.mc_se) +
                              "); decrease the inner step or add replicas");
  }

  const Index dim = model.dim_theta() + model.dim_omega();
  for (std::size_t gi = 0; gi < eta_grid.size(); ++gi) {
    const double eta = eta_grid[gi];
    const long n = static_cast<long>(std::floor(horizon / eta + 1e-9));
    require(n >= 1, "weak_error_curve: horizon shorter than one step");
    const std::size_t nf = functions.size();
    // accumulated E f and E f^2 per (time, function), both processes
    Matrix sga_sum = Matrix::Zero(n, nf), sga_sq = Matrix::Zero(n, nf);
    Matrix sde_sum = Matrix::Zero(n, nf), sde_sq = Matrix::Zero(n, nf);
    std::vector<Matrix> sga_rows(opt.replicas), sde_rows(opt.replicas);
    parallel_for(opt.replicas, opt.workers, [&](long r) {
      SgaConfig cfg;
      cfg.scheme = scheme;
      cfg.eta = eta;
      cfg.batch_size = opt.batch_size;
      cfg.steps = n;
      cfg.seed = derive_seed(opt.seed, 2 * gi, static_cast<std::uint64_t>(r));
      cfg.record_stats = false;
      const Trajectory tr = run_sga(model, ds, cfg, initial);
      Matrix vals(n, nf);
      for (long t = 1; t <= n; ++t) {
        Vector u(dim);
        u << tr.points[t].theta, tr.points[t].omega;
        for (std::size_t f = 0; f < nf; ++f) vals(t - 1, f) = functions[f].value(u);
      }
      sga_rows[r] = std::move(vals);

      IntegratorConfig icfg;
      icfg.horizon = static_cast<double>(n) * eta;
      icfg.inner_step = eta / opt.em_divisor;
      icfg.seed = derive_seed(opt.seed, 2 * gi + 1, static_cast<std::uint64_t>(r));
      icfg.record_stats = false;
      const Trajectory sd = em_integrate(kind, model, ds, initial, eta, opt.batch_size, icfg);
      Matrix svals(n, nf);
      for (long t = 1; t <= n; ++t) {
        Vector u(dim);
        u << sd.points[t].theta, sd.points[t].omega;
        for (std::size_t f = 0; f < nf; ++f) svals(t - 1, f) = functions[f].value(u);
      }
      sde_rows[r] = std::move(svals);
    });
    for (long r = 0; r < opt.replicas; ++r) {
      sga_sum += sga_rows[r];
      sga_sq += sga_rows[r].cwiseAbs2();
      sde_sum += sde_rows[r];
      sde_sq += sde_rows[r].cwiseAbs2();
    }
    const double R = static_cast<double>(opt.replicas);
    std::vector<double> err(nf, 0.0), se(nf, 0.0);
    for (std::size_t f = 0; f < nf; ++f) {
      for (long t = 0; t < n; ++t) {
        const double ma = sga_sum(t, f) / R, mb = sde_sum(t, f) / R;
        const double va = std::max(0.0, sga_sq(t, f) / R - ma * ma);
        const double vb = std::max(0.0, sde_sq(t, f) / R - mb * mb);
        const double gap = std::abs(ma - mb);
        if (gap > err[f]) {
          err[f] = gap;
          se[f] = std::sqrt((va + vb) / R);
        }
      }
      if (se[f] > opt.se_gap_ratio * std::max(err[f], 1e-300))
        throw InconclusiveError("weak_error_curve: Monte Carlo SE " + format_double(se[f]) + " exceeds " +
                                format_double(opt.se_gap_ratio) + " of the measured gap " +
                                format_double(err[f]) + " for `" + res.function_names[f] +
                                "` at eta=" + format_double(eta) + "; increase replicas");
    }
    res.errors.push_back(err);
    res.ses.push_back(se);
  }
  detail::finish_order_study(res);
  return res;
}

// ---------------------------------------------------------------------------
// Stationary sampling
// ---------------------------------------------------------------------------

enum class EngineKind { Sga, Sde };

struct StationaryOptions {
  EngineKind engine = EngineKind::Sde;
  Scheme scheme = Scheme::Sml;     // SGA engine
  SdeKind kind = SdeKind::SmlSde;  // SDE engine
  double eta = 0.1;
  int batch_size = 4;
  double horizon = 200.0;          // SGA runs floor(horizon/eta) steps
  double inner_step = 0.0;         // SDE: defaults to eta/100
  std::uint64_t seed = 0;
  long replicas = 1;               // > 1 pools thinned records across an ensemble
  int workers = 1;
  double burn_in_fraction = 0.5;
  long thin = 0;                   // 0 = ceil(integrated autocorrelation time of Phi)
  bool allow_nondissipative = false;
  double divergence_norm = 1e8;
};

// Thinned post-burn-in sample approximating the invariant measure.
struct EmpiricalMeasure {
  std::vector<JointParams> samples;
  std::string provenance;
  bool from_sde = true;
  Scheme scheme = Scheme::Sml;
  SdeKind kind = SdeKind::SmlSde;
  double eta = 0.0;
  int batch_size = 0;
  long burn_in_records = 0;
  long thin = 1;
  long total_records = 0;
  SplitHalfReport diagnostic;

  Index dim_theta() const { return samples.empty() ? 0 : samples.front().dim_theta(); }
};

inline EmpiricalMeasure stationary_sample(const MinimaxModel& model, const Dataset& ds,
                                          const StationaryOptions& opt, const JointParams& initial) {
  require(model.dissipative() || opt.allow_nondissipative,
          "stationary_sample: model drift is not dissipative by construction; pass "
          "allow_nondissipative to sample anyway");
  require(opt.burn_in_fraction >= 0.0 && opt.burn_in_fraction < 1.0,
          "stationary_sample: burn-in fraction must lie in [0, 1) (1 leaves an empty sample)");
  require(opt.replicas >= 1, "stationary_sample: replicas must be >= 1");

  const long records = static_cast<long>(std::floor(opt.horizon / opt.eta + 1e-9));
  require(records >= 8, "stationary_sample: horizon leaves too few records");

  std::vector<Trajectory> runs(opt.replicas);
  parallel_for(opt.replicas, opt.workers, [&](long r) {
    const std::uint64_t seed = derive_seed(opt.seed, 0x57A7, static_cast<std::uint64_t>(r));
    if (opt.engine == EngineKind::Sga) {
      SgaConfig cfg;
      cfg.scheme = opt.scheme;
      cfg.eta = opt.eta;
      cfg.batch_size = opt.batch_size;
      cfg.steps = records;
      cfg.seed = seed;
      cfg.record_stats = true;
      cfg.divergence_norm = opt.divergence_norm;
      runs[r] = run_sga(model, ds, cfg, initial);
    } else {
      IntegratorConfig cfg;
      cfg.horizon = opt.horizon;
      cfg.inner_step = opt.inner_step;
      cfg.seed = seed;
      cfg.record_stats = true;
      cfg.divergence_norm = opt.divergence_norm;
      runs[r] = em_integrate(opt.kind, model, ds, initial, opt.eta, opt.batch_size, cfg);
    }
  });

  const long burn = static_cast<long>(std::llround(opt.burn_in_fraction * static_cast<double>(records)));
  require(burn < records, "stationary_sample: burn-in leaves an empty sample");

  // Post-burn-in Phi series drive the thinning estimate and the diagnostic.
  std::vector<std::vector<double>> phi(opt.replicas);
  for (long r = 0; r < opt.replicas; ++r)
    for (std::size_t k = static_cast<std::size_t>(burn) + 1; k < runs[r].points.size(); ++k)
      phi[r].push_back(runs[r].points[k].phi);

  EmpiricalMeasure m;
  m.from_sde = opt.engine == EngineKind::Sde;
  m.scheme = opt.scheme;
  m.kind = opt.kind;
  m.eta = opt.eta;
  m.batch_size = opt.batch_size;
  m.burn_in_records = burn;
  m.total_records = records;
  m.provenance = (m.from_sde ? to_string(opt.kind) : to_string(opt.scheme));
  m.provenance += opt.replicas > 1 ? "/ensemble" : "/time-average";

  if (opt.replicas == 1) {
    m.diagnostic = split_half_diagnostic(phi[0]);
  } else {
    std::vector<double> gaps, firsts, seconds;
    for (const auto& series : phi) {
      const std::size_t half = series.size() / 2;
      const MeanSe a = mean_se(std::span<const double>(series.data(), half));
      const MeanSe b = mean_se(std::span<const double>(series.data() + half, series.size() - half));
      firsts.push_back(a.mean);
      seconds.push_back(b.mean);
      gaps.push_back(a.mean - b.mean);
    }
    const MeanSe gap = mean_se(gaps);
    m.diagnostic.mean_first = mean_se(firsts).mean;
    m.diagnostic.mean_second = mean_se(seconds).mean;
    m.diagnostic.se_first = m.diagnostic.se_second = gap.se / std::sqrt(2.0);
    m.diagnostic.z_score = gap.se > 0.0 ? std::abs(gap.mean) / gap.se : 0.0;
    m.diagnostic.stationary = m.diagnostic.z_score <= 3.0;
  }
  if (!m.diagnostic.stationary)
    throw InconclusiveError("stationary_sample: split-half means of Phi differ by " +
                            format_double(m.diagnostic.z_score) +
                            " combined SEs (> 3); the run has not reached stationarity");

  long thin = opt.thin;
  if (thin <= 0) {
    double tau = 0.0;
    for (const auto& series : phi) tau = std::max(tau, integrated_autocorr_time(series));
    thin = static_cast<long>(std::ceil(tau));
  }
  m.thin = std::max<long>(1, thin);

  for (long r = 0; r < opt.replicas; ++r)
    for (long k = burn + 1; k < static_cast<long>(runs[r].points.size()); k += m.thin)
      m.samples.push_back(JointParams{runs[r].points[k].theta, runs[r].points[k].omega});
  require(!m.samples.empty(), "stationary_sample: empty sample after burn-in and thinning");
  return m;
}

// ---------------------------------------------------------------------------
// Fluctuation-dissipation residuals
// ---------------------------------------------------------------------------

enum class FdrKind { Fdr1, Fdr2 };

struct FdrReport {
  std::string which;
  double lhs = 0.0;
  double rhs = 0.0;
  double residual = 0.0;    // E[lhs_i - rhs_i]
  double scale = 0.0;       // max(|lhs|, |rhs|)
  double se = 0.0;          // SE of the residual over thinned samples
  double generator_mean = 0.0;  // E[A Phi], zero under the invariant measure
  double generator_se = 0.0;
  bool eta_term_included = false;
  long n = 0;

  bool within(double se_mult, double scale_frac) const {
    return std::abs(residual) <= std::max(se_mult * se, scale_frac * scale);
  }
};

// Evaluates the stationarity identities on an empirical measure:
//   FDR1: E[|g_theta|^2 - |g_omega|^2]
//           = beta^{-1} E[Tr(Sigma_theta H_tt + Sigma_omega H_ww)]
//             - (eta/2) E[g_theta^T H_tt g_theta + g_omega^T H_ww g_omega]
//         (the eta-correction applies to alternating-update measures only)
//   FDR2: E[theta.g_theta - omega.g_omega] = beta^{-1} E[Tr(Sigma_theta + Sigma_omega)]
inline FdrReport fdr_residuals(const EmpiricalMeasure& measure, const MinimaxModel& model, const Dataset& ds,
                               double eta, int batch_size, FdrKind which) {
  require(!measure.samples.empty(), "fdr_residuals: empty measure");
  const double beta = 2.0 * batch_size / eta;
  const bool eta_term = which == FdrKind::Fdr1 &&
                        ((measure.from_sde && measure.kind == SdeKind::AltSde) ||
                         (!measure.from_sde && measure.scheme == Scheme::Alt));
  const SdeKind gen_kind = measure.from_sde
                               ? measure.kind
                               : (measure.scheme == Scheme::Alt ? SdeKind::AltSde : SdeKind::SmlSde);

  const TestFunction phi = loss_function(model, ds);
  std::vector<double> lhs_vals, rhs_vals, resid_vals, gen_vals;
  lhs_vals.reserve(measure.samples.size());
  for (const auto& p : measure.samples) {
    const GradientStats st = population_covariances(model, ds, p);
    double lhs, rhs;
    if (which == FdrKind::Fdr2) {
      lhs = p.theta.dot(st.g_theta) - p.omega.dot(st.g_omega);
      rhs = (st.sigma_theta.trace() + st.sigma_omega.trace()) / beta;
    } else {
      const HessianBlocks h = full_hessian_blocks(model, ds, p);
      lhs = st.g_theta.squaredNorm() - st.g_omega.squaredNorm();
      rhs = ((st.sigma_theta * h.dtheta_gtheta).trace() + (st.sigma_omega * h.domega_gomega).trace()) / beta;
      if (eta_term)
        rhs -= 0.5 * eta *
               (st.g_theta.dot(h.dtheta_gtheta * st.g_theta) + st.g_omega.dot(h.domega_gomega * st.g_omega));
    }
    lhs_vals.push_back(lhs);
    rhs_vals.push_back(rhs);
    resid_vals.push_back(lhs - rhs);
    gen_vals.push_back(generator_apply(phi, model, ds, p, eta, batch_size, gen_kind));
  }

  FdrReport rep;
  rep.which = which == FdrKind::Fdr1 ? "FDR1" : "FDR2";
  rep.eta_term_included = eta_term;
  const MeanSe l = mean_se(lhs_vals), r = mean_se(rhs_vals), d = mean_se(resid_vals), g = mean_se(gen_vals);
  rep.lhs = l.mean;
  rep.rhs = r.mean;
  rep.residual = d.mean;
  rep.se = d.se;
  rep.scale = std::max(std::abs(l.mean), std::abs(r.mean));
  rep.generator_mean = g.mean;
  rep.generator_se = g.se;
  rep.n = d.n;
  return rep;
}

// ---------------------------------------------------------------------------
// Convergence conditions (dissipativity, ellipticity, Lyapunov margin)
// ---------------------------------------------------------------------------

struct ProbeConfig {
  double m0 = 1.0;
  double r_max = 10.0;
  int shells = 20;
  int directions_per_shell = 50;
  std::uint64_t seed = 0;
  // Lyapunov overrides; auto-chosen from the probed constants when unset.
  std::optional<double> lyap_m, lyap_eps, lyap_delta;
};

struct ConditionReport {
  bool dissipative = false;
  double r_found = 0.0;          // largest feasible r for |u| >= m0 (min over probes of -u.b/|u|)
  Vector violation_witness;      // probe with u.b(u) > 0, when found
  bool has_witness = false;
  double min_ellipticity = 0.0;  // min eigenvalue of sigma sigma^T over probes
  double k2 = 0.0;               // max |sigma|_F^2 over probes
  double lyap_m = 0.0, lyap_eps = 0.0, lyap_delta = 0.0;
  bool lyap_feasible = false;
  bool lyap_ok = false;
  double lyap_worst_margin = 0.0;  // max over probes of (LV/V + delta); <= 0 passes
  long probes = 0;
};

// Numerical check of the invariant-measure conditions on shell probes:
// dissipativity u.b(u) <= -r|u| outside |u| >= M0, uniform ellipticity of
// sigma sigma^T, and the exponential-Lyapunov decay margin with constants
//   M > max(K^2/(2 l), M0),  0 < eps < 2l/K^2 - 1/M,
//   delta = -(1/2) [K^2 eps^2 / 2 + (K^2/(2M) - l) eps].
inline ConditionReport convergence_condition_check(const MinimaxModel& model, const Dataset& ds, double eta,
                                                   int batch_size, SdeKind kind, const ProbeConfig& pc = {}) {
  require(pc.r_max > pc.m0 && pc.m0 > 0.0, "condition check: need 0 < M0 < R_max");
  require(pc.shells >= 2 && pc.directions_per_shell >= 1, "condition check: too few probes");
  const Index dim = model.dim_theta() + model.dim_omega();
  Rng rng = derive_stream(pc.seed, 0);

  struct Probe {
    Vector u;
    double ub_over_norm;  // u.b(u)/|u|
    double sig_min;       // min eigenvalue of sigma sigma^T
    double sig_frob2;     // |sigma|_F^2
  };
  std::vector<Probe> probes;
  probes.reserve(static_cast<std::size_t>(pc.shells) * pc.directions_per_shell);
  for (int s = 0; s < pc.shells; ++s) {
    const double radius =
        pc.m0 * std::pow(pc.r_max / pc.m0, static_cast<double>(s) / static_cast<double>(pc.shells - 1));
    for (int k = 0; k < pc.directions_per_shell; ++k) {
      Vector dir = rng.normal_vector(dim);
      dir /= std::max(dir.norm(), 1e-300);
      const Vector u = radius * dir;
      const JointParams p = JointParams::from_flat(u, model.dim_theta(), model.dim_omega());
      const SdeCoefficients co = sde_coefficients(kind, model, ds, p, eta, batch_size);
      const Matrix a = co.sigma * co.sigma.transpose();
      Eigen::SelfAdjointEigenSolver<Matrix> es(a);
      probes.push_back({u, u.dot(co.b) / radius, es.eigenvalues().minCoeff(), a.trace()});
    }
  }

  ConditionReport rep;
  rep.probes = static_cast<long>(probes.size());
  rep.r_found = HUGE_VAL;
  rep.min_ellipticity = HUGE_VAL;
  for (const auto& pr : probes) {
    rep.r_found = std::min(rep.r_found, -pr.ub_over_norm);
    rep.min_ellipticity = std::min(rep.min_ellipticity, pr.sig_min);
    rep.k2 = std::max(rep.k2, pr.sig_frob2);
    if (pr.ub_over_norm >= 0.0 && !rep.has_witness) {
      rep.violation_witness = pr.u;
      rep.has_witness = true;
    }
  }
  rep.dissipative = rep.r_found > 0.0;

  if (rep.dissipative && rep.k2 > 0.0) {
    const double l = rep.r_found;
    const double m = pc.lyap_m.value_or(1.1 * std::max(rep.k2 / (2.0 * l), pc.m0));
    const double eps_cap = 2.0 * l / rep.k2 - 1.0 / m;
    const double eps = pc.lyap_eps.value_or(std::min(1.0, 0.5 * eps_cap));
    rep.lyap_feasible = eps_cap > 0.0 && eps > 0.0 && eps < eps_cap && m > std::max(rep.k2 / (2.0 * l), pc.m0);
    const double delta =
        pc.lyap_delta.value_or(-0.5 * (rep.k2 * eps * eps / 2.0 + (rep.k2 / (2.0 * m) - l) * eps));
    rep.lyap_m = m;
    rep.lyap_eps = eps;
    rep.lyap_delta = delta;
    if (rep.lyap_feasible && delta > 0.0) {
      double worst = -HUGE_VAL;
      for (const auto& pr : probes) {
        const double norm = pr.u.norm();
        if (norm <= m) continue;
        const JointParams p = JointParams::from_flat(pr.u, model.dim_theta(), model.dim_omega());
        const SdeCoefficients co = sde_coefficients(kind, model, ds, p, eta, batch_size);
        const Matrix a = co.sigma * co.sigma.transpose();
        const Matrix weight = (eps * norm * norm * Matrix::Identity(dim, dim) +
                               (eps * eps * norm - eps) * pr.u * pr.u.transpose()) /
                              (norm * norm * norm);
        const double lv_over_v = eps * pr.u.dot(co.b) / norm + delta + 0.5 * (a * weight).trace();
        worst = std::max(worst, lv_over_v + delta);
      }
      rep.lyap_worst_margin = worst;
      rep.lyap_ok = worst <= 1e-12;
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Replica-averaged diagnostics
// ---------------------------------------------------------------------------

// Running replica-averaged moment E |(theta_t, omega_t)|^m, maximized over
// steps; the uniform-boundedness monitor for the discrete recursion.
inline std::map<int, double> moment_bound_study(const MinimaxModel& model, const Dataset& ds, Scheme scheme,
                                                double eta, int batch_size, long steps, long replicas,
                                                const std::vector<int>& orders, const JointParams& initial,
                                                std::uint64_t seed, int workers) {
  std::vector<Matrix> powers(replicas);
  parallel_for(replicas, workers, [&](long r) {
    SgaConfig cfg;
    cfg.scheme = scheme;
    cfg.eta = eta;
    cfg.batch_size = batch_size;
    cfg.steps = steps;
    cfg.seed = derive_seed(seed, 0xB0D, static_cast<std::uint64_t>(r));
    cfg.record_stats = false;
    const Trajectory tr = run_sga(model, ds, cfg, initial);
    Matrix pw(static_cast<Index>(tr.points.size()), static_cast<Index>(orders.size()));
    for (std::size_t t = 0; t < tr.points.size(); ++t) {
      const double norm = std::sqrt(tr.points[t].theta.squaredNorm() + tr.points[t].omega.squaredNorm());
      for (std::size_t m = 0; m < orders.size(); ++m)
        pw(static_cast<Index>(t), static_cast<Index>(m)) = std::pow(norm, orders[m]);
    }
    powers[r] = std::move(pw);
  });
  Matrix acc = powers[0];
  for (long r = 1; r < replicas; ++r) acc += powers[r];
  acc /= static_cast<double>(replicas);
  std::map<int, double> out;
  for (std::size_t m = 0; m < orders.size(); ++m) out[orders[m]] = acc.col(static_cast<Index>(m)).maxCoeff();
  return out;
}

struct DecayRateStudy {
  std::vector<double> times;
  std::vector<double> mean_norms;  // |ensemble mean state| per record
  SlopeFit fit;                    // log |E u_t| ~ intercept - rate * t
  double rate = 0.0;
};

// Exponential decay rate of the ensemble-mean state under the SDE flow,
// fitted on log |E[u_t]| over [fit_start, fit_end].
inline DecayRateStudy decay_rate_study(SdeKind kind, const MinimaxModel& model, const Dataset& ds,
                                       const JointParams& initial, double eta, int batch_size,
                                       double horizon, long replicas, std::uint64_t seed, int workers,
                                       double fit_start, double fit_end) {
  const Index dim = model.dim_theta() + model.dim_omega();
  const long records = static_cast<long>(std::floor(horizon / eta + 1e-9));
  std::vector<Matrix> states(replicas);
  parallel_for(replicas, workers, [&](long r) {
    IntegratorConfig cfg;
    cfg.horizon = horizon;
    cfg.seed = derive_seed(seed, 0xDECA, static_cast<std::uint64_t>(r));
    cfg.record_stats = false;
    const Trajectory tr = em_integrate(kind, model, ds, initial, eta, batch_size, cfg);
    Matrix st(records + 1, dim);
    for (long t = 0; t <= records; ++t) {
      Vector u(dim);
      u << tr.points[t].theta, tr.points[t].omega;
      st.row(t) = u.transpose();
    }
    states[r] = std::move(st);
  });
  Matrix mean = states[0];
  for (long r = 1; r < replicas; ++r) mean += states[r];
  mean /= static_cast<double>(replicas);

  DecayRateStudy study;
  std::vector<double> ts, logs;
  for (long t = 0; t <= records; ++t) {
    const double time = static_cast<double>(t) * eta;
    const double norm = mean.row(t).norm();
    study.times.push_back(time);
    study.mean_norms.push_back(norm);
    if (time >= fit_start && time <= fit_end && norm > 0.0) {
      ts.push_back(time);
      logs.push_back(std::log(norm));
    }
  }
  require(ts.size() >= 3, "decay_rate_study: fit window holds too few points");
  study.fit = linear_fit(ts, logs);
  study.rate = -study.fit.slope;
  return study;
}

}  // namespace gansde
