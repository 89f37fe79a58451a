#pragma once

#include <string>

#include "gansde/common.hpp"
#include "gansde/gradient_stats.hpp"
#include "gansde/models.hpp"
#include "gansde/rng.hpp"
#include "gansde/sga.hpp"
#include "gansde/test_functions.hpp"

namespace gansde {

enum class SdeKind { AltSde, SmlSde, SmlSde2 };

inline std::string to_string(SdeKind k) {
  switch (k) {
    case SdeKind::AltSde: return "ALT-SDE";
    case SdeKind::SmlSde: return "SML-SDE";
    case SdeKind::SmlSde2: return "SML-SDE2";
  }
  throw Error("unreachable");
}

inline SdeKind sde_kind_from_string(const std::string& s) {
  if (s == "ALT-SDE" || s == "alt-sde") return SdeKind::AltSde;
  if (s == "SML-SDE" || s == "sml-sde") return SdeKind::SmlSde;
  if (s == "SML-SDE2" || s == "sml-sde2") return SdeKind::SmlSde2;
  throw Error("unknown SDE kind `" + s + "`");
}

// Drift and diffusion of the continuous-time approximation at one state:
//   b0 = (-g_theta; g_omega)
//   ALT-SDE:  b = b0 + eta * b1 with the generator/discriminator interaction
//   SML-SDE:  b = b0
//   SML-SDE2: b = b0 - (eta/2) grad(b0) b0
//   sigma = sqrt(2/beta) diag(Sigma_theta^{1/2}, Sigma_omega^{1/2}), beta = 2B/eta.
struct SdeCoefficients {
  SdeKind kind;
  double eta = 0.0;
  double beta = 0.0;
  Vector b0;
  Vector b1;  // the order-eta drift correction actually applied (zero for SML-SDE)
  Vector b;   // b0 + eta * b1
  Matrix sigma;          // block-diagonal volatility
  Matrix sigma_theta;    // Sigma_theta (covariance, not its root)
  Matrix sigma_omega;    // Sigma_omega
};

inline constexpr double kB1AgreementTol = 1e-9;

inline SdeCoefficients sde_coefficients(SdeKind kind, const MinimaxModel& model, const Dataset& ds,
                                        const JointParams& p, double eta, int batch_size) {
  require(eta > 0.0, "sde_coefficients: eta must be > 0");
  require(batch_size >= 1, "sde_coefficients: B must be >= 1");
  const Index dt = model.dim_theta(), dw = model.dim_omega();
  const GradientStats st = population_covariances(model, ds, p);

  SdeCoefficients co;
  co.kind = kind;
  co.eta = eta;
  co.beta = 2.0 * batch_size / eta;
  co.b0 = Vector(dt + dw);
  co.b0 << -st.g_theta, st.g_omega;
  co.sigma_theta = st.sigma_theta;
  co.sigma_omega = st.sigma_omega;

  const HessianBlocks h = full_hessian_blocks(model, ds, p);
  Matrix grad_b0(dt + dw, dt + dw);  // Jacobian of b0 wrt (theta, omega)
  grad_b0.topLeftCorner(dt, dt) = -h.dtheta_gtheta;
  grad_b0.topRightCorner(dt, dw) = -h.domega_gtheta;
  grad_b0.bottomLeftCorner(dw, dt) = h.dtheta_gomega;
  grad_b0.bottomRightCorner(dw, dw) = h.domega_gomega;

  // First form: (1/2) [H_tt, -H_wt; -H_tw, -H_ww] b0.
  Matrix block(dt + dw, dt + dw);
  block.topLeftCorner(dt, dt) = h.dtheta_gtheta;
  block.topRightCorner(dt, dw) = -h.domega_gtheta;
  block.bottomLeftCorner(dw, dt) = -h.dtheta_gomega;
  block.bottomRightCorner(dw, dw) = -h.domega_gomega;
  const Vector b1_first = 0.5 * block * co.b0;

  // Second form: -(1/2) grad(b0) b0 - (H_wt g_omega; 0). Disagreement signals
  // a wrong Hessian.
  Vector b1_second = -0.5 * grad_b0 * co.b0;
  b1_second.head(dt) -= h.domega_gtheta * st.g_omega;
  const double gap = (b1_first - b1_second).cwiseAbs().maxCoeff();
  if (gap > kB1AgreementTol * std::max(1.0, b1_first.cwiseAbs().maxCoeff()))
    throw Error("sde_coefficients: drift-correction forms disagree by " + format_double(gap) +
                " (inconsistent Hessian blocks)");

  switch (kind) {
    case SdeKind::AltSde: co.b1 = b1_first; break;
    case SdeKind::SmlSde: co.b1 = Vector::Zero(dt + dw); break;
    case SdeKind::SmlSde2: co.b1 = Vector(-0.5 * grad_b0 * co.b0); break;
  }
  co.b = co.b0 + eta * co.b1;

  const double noise = 2.0 / co.beta;
  co.sigma = Matrix::Zero(dt + dw, dt + dw);
  co.sigma.topLeftCorner(dt, dt) = std::sqrt(noise) * psd_sqrt(st.sigma_theta);
  co.sigma.bottomRightCorner(dw, dw) = std::sqrt(noise) * psd_sqrt(st.sigma_omega);
  return co;
}

// Infinitesimal generator applied to a test function:
//   A f = b . grad f + (1/2) Tr(sigma sigma^T hess f).
// sigma sigma^T is assembled from the covariance blocks directly, avoiding
// the square-root round trip.
inline double generator_apply(const TestFunction& f, const MinimaxModel& model, const Dataset& ds,
                              const JointParams& p, double eta, int batch_size, SdeKind kind) {
  const SdeCoefficients co = sde_coefficients(kind, model, ds, p, eta, batch_size);
  const Index dt = model.dim_theta(), dw = model.dim_omega();
  const Vector u = p.flat();
  const Vector grad = f.gradient(u);
  const Matrix hess = f.hessian(u);
  const double trace_term = (co.sigma_theta * hess.topLeftCorner(dt, dt)).trace() +
                            (co.sigma_omega * hess.bottomRightCorner(dw, dw)).trace();
  return co.b.dot(grad) + (1.0 / co.beta) * trace_term;
}

struct IntegratorConfig {
  double horizon = 1.0;
  double inner_step = 0.0;  // defaults to eta / 100 when <= 0
  std::uint64_t seed = 0;
  long record_every = 1;    // in eta-interval units
  bool record_stats = true;
  double divergence_norm = 1e8;
};

// Euler-Maruyama with coefficients re-evaluated every inner step. Records at
// multiples of eta so SDE time t*eta aligns with SGA step t. The horizon is
// truncated to the last full eta-interval.
inline Trajectory em_integrate(SdeKind kind, const MinimaxModel& model, const Dataset& ds,
                               const JointParams& initial, double eta, int batch_size,
                               const IntegratorConfig& cfg) {
  model.require_params(initial);
  model.require_dataset(ds);
  require(cfg.horizon >= 0.0, "em_integrate: horizon must be >= 0");
  require(cfg.record_every >= 1, "em_integrate: record_every must be >= 1");
  const double h = cfg.inner_step > 0.0 ? cfg.inner_step : eta / 100.0;
  require(h <= eta / 10.0 + 1e-15, "em_integrate: inner step h must satisfy h <= eta/10");
  const double ratio = eta / h;
  const long per_interval = static_cast<long>(std::llround(ratio));
  require(std::abs(ratio - static_cast<double>(per_interval)) < 1e-9 * ratio,
          "em_integrate: inner step h must divide the recording interval eta");

  const Index dt = model.dim_theta(), dw = model.dim_omega();
  Rng rng = derive_stream(cfg.seed, 0);
  Trajectory traj;
  traj.has_time = true;
  traj.has_stats = cfg.record_stats;
  JointParams p = initial;
  detail::record_point(traj, model, ds, p, 0, 0.0, cfg.record_stats);

  const long intervals = static_cast<long>(std::floor(cfg.horizon / eta + 1e-9));
  const double sqrt_h = std::sqrt(h);
  for (long t = 1; t <= intervals; ++t) {
    for (long s = 0; s < per_interval; ++s) {
      const SdeCoefficients co = sde_coefficients(kind, model, ds, p, eta, batch_size);
      const Vector noise = rng.normal_vector(dt + dw);
      const Vector u = p.flat() + co.b * h + co.sigma * (sqrt_h * noise);
      p = JointParams::from_flat(u, dt, dw);
      if (p.norm() > cfg.divergence_norm)
        throw Error("em_integrate: divergence guard tripped at time " +
                    format_double(static_cast<double>(t - 1) * eta + static_cast<double>(s + 1) * h));
    }
    if (t % cfg.record_every == 0)
      detail::record_point(traj, model, ds, p, t, static_cast<double>(t) * eta, cfg.record_stats);
  }
  return traj;
}

struct SelfConvergenceReport {
  double coarse_mean_norm = 0.0;
  double diff_norm = 0.0;   // |E[u_T](h) - E[u_T](h/2)|
  double mc_se = 0.0;       // combined Monte Carlo SE of that difference
  bool passed = false;
};

// Mandatory integrator-bias check before order studies: halving h must move
// the endpoint mean by less than the Monte Carlo standard error.
inline SelfConvergenceReport em_self_convergence_check(SdeKind kind, const MinimaxModel& model,
                                                       const Dataset& ds, const JointParams& initial,
                                                       double eta, int batch_size, double horizon, double h,
                                                       long replicas, std::uint64_t seed, int workers) {
  const Index dim = model.dim_theta() + model.dim_omega();
  auto run = [&](double step, std::uint64_t salt, Matrix& endpoints) {
    endpoints.resize(replicas, dim);
    parallel_for(replicas, workers, [&](long r) {
      IntegratorConfig cfg;
      cfg.horizon = horizon;
      cfg.inner_step = step;
      cfg.seed = derive_seed(seed, salt, static_cast<std::uint64_t>(r));
      cfg.record_every = std::max<long>(1, static_cast<long>(std::floor(horizon / eta + 1e-9)));
      cfg.record_stats = false;
      const Trajectory tr = em_integrate(kind, model, ds, initial, eta, batch_size, cfg);
      const auto& last = tr.points.back();
      Vector u(dim);
      u << last.theta, last.omega;
      endpoints.row(r) = u.transpose();
    });
  };
  Matrix coarse, fine;
  run(h, 1, coarse);
  run(h / 2.0, 2, fine);
  SelfConvergenceReport rep;
  const Vector mean_coarse = coarse.colwise().mean();
  const Vector mean_fine = fine.colwise().mean();
  rep.coarse_mean_norm = mean_coarse.norm();
  rep.diff_norm = (mean_coarse - mean_fine).norm();
  double se2 = 0.0;
  for (Index c = 0; c < dim; ++c) {
    const double vc = (coarse.col(c).array() - mean_coarse[c]).square().sum() / (replicas - 1.0);
    const double vf = (fine.col(c).array() - mean_fine[c]).square().sum() / (replicas - 1.0);
    se2 += (vc + vf) / static_cast<double>(replicas);
  }
  rep.mc_se = std::sqrt(se2);
  rep.passed = rep.diff_norm < rep.mc_se;
  return rep;
}

}  // namespace gansde
