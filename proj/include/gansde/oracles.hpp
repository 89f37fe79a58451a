#pragma once

#include <vector>

#include "gansde/common.hpp"
#include "gansde/models.hpp"
#include "gansde/sde.hpp"
#include "gansde/sga.hpp"
#include "gansde/stats.hpp"

namespace gansde {

// First and second moments of the scalar joint state (theta, omega).
struct MomentState {
  double m_theta = 0.0, m_omega = 0.0;
  double s_tt = 0.0, s_to = 0.0, s_oo = 0.0;

  double get(const std::string& f) const {
    if (f == "theta") return m_theta;
    if (f == "omega") return m_omega;
    if (f == "theta^2") return s_tt;
    if (f == "omega^2") return s_oo;
    if (f == "theta*omega") return s_to;
    throw Error("MomentState: unknown moment test function `" + f + "`");
  }
  static const std::vector<std::string>& function_names() {
    static const std::vector<std::string> names{"theta", "omega", "theta^2", "omega^2", "theta*omega"};
    return names;
  }
};

// Empirical moments of the scalar lin-wgan data; everything the linear
// recursions and moment ODEs need.
struct LinWganMoments {
  double z_mean = 0.0, z_var = 0.0;  // empirical, over the latent list
  double x_mean = 0.0, x_var = 0.0;
};

inline LinWganMoments lin_wgan_moments(const Dataset& ds) {
  LinWganMoments m;
  require(!ds.latents.empty() && !ds.reals.empty(), "lin_wgan_moments: empty dataset");
  require(ds.latents.front().size() == 1 && ds.reals.front().size() == 1,
          "moment oracle requires scalar data");
  double z2 = 0.0, x2 = 0.0;
  for (const auto& z : ds.latents) {
    m.z_mean += z[0];
    z2 += z[0] * z[0];
  }
  for (const auto& x : ds.reals) {
    m.x_mean += x[0];
    x2 += x[0] * x[0];
  }
  m.z_mean /= ds.num_latents();
  m.x_mean /= ds.num_reals();
  m.z_var = z2 / ds.num_latents() - m.z_mean * m.z_mean;
  m.x_var = x2 / ds.num_reals() - m.x_mean * m.x_mean;
  return m;
}

// Exact moment recursion for scalar lin-wgan under (ALT)/(SML): the updates
// are linear in the state with batch-sampled coefficients independent of the
// state, so first and second moments close. Entry t (0-based) holds the
// moments after t+1 steps.
inline std::vector<MomentState> sga_moment_recursion(Scheme scheme, const LinWganMoments& d, int batch_size,
                                                     double eta, long steps, const MomentState& init) {
  const double p = d.z_mean, q = d.x_mean;
  const double Ez2 = p * p + d.z_var / batch_size;   // E[Zbar^2]
  const double Ex2 = q * q + d.x_var / batch_size;   // E[Xbar^2]
  const double Exz = p * q;                          // Zbar and Xbar are independent
  std::vector<MomentState> out;
  out.reserve(steps);
  MomentState s = init;
  for (long t = 0; t < steps; ++t) {
    MomentState n;
    if (scheme == Scheme::Sml) {
      // theta' = theta + eta omega Zbar; omega' = omega + eta (Xbar - theta Zbar)
      n.m_theta = s.m_theta + eta * p * s.m_omega;
      n.m_omega = s.m_omega + eta * (q - p * s.m_theta);
      n.s_tt = s.s_tt + 2.0 * eta * p * s.s_to + eta * eta * Ez2 * s.s_oo;
      n.s_oo = s.s_oo + 2.0 * eta * (q * s.m_omega - p * s.s_to) +
               eta * eta * (Ex2 - 2.0 * Exz * s.m_theta + Ez2 * s.s_tt);
      n.s_to = s.s_to + eta * (q * s.m_theta - p * s.s_tt) + eta * p * s.s_oo +
               eta * eta * (Exz * s.m_omega - Ez2 * s.s_to);
    } else {
      // omega' from batch 1, theta' = theta + eta omega' Zbar' from batch 2
      const double e_om1 = s.m_omega + eta * (q - p * s.m_theta);
      const double e_om1sq = s.s_oo + 2.0 * eta * (q * s.m_omega - p * s.s_to) +
                             eta * eta * (Ex2 - 2.0 * Exz * s.m_theta + Ez2 * s.s_tt);
      const double e_th_om1 = s.s_to + eta * (q * s.m_theta - p * s.s_tt);
      n.m_theta = s.m_theta + eta * p * e_om1;
      n.m_omega = e_om1;
      n.s_tt = s.s_tt + 2.0 * eta * p * e_th_om1 + eta * eta * Ez2 * e_om1sq;
      n.s_oo = e_om1sq;
      n.s_to = e_th_om1 + eta * p * e_om1sq;
    }
    s = n;
    out.push_back(s);
  }
  return out;
}

// Moment ODEs for the scalar lin-wgan SDEs. Drift is linear, b(u) = A u + c,
// and E[Sigma] is linear in the second moments, so the system
//   dm/dt = A m + c
//   dS/dt = A S + S A^T + c m^T + m c^T + (2/beta) diag(E Sigma_theta, E Sigma_omega)
// is closed and exact; integrated with RK4. Entry t holds moments at (t+1)*eta.
inline std::vector<MomentState> sde_moment_ode(SdeKind kind, const LinWganMoments& d, int batch_size,
                                               double eta, long steps, const MomentState& init,
                                               double rk_step = 1e-5) {
  const double p = d.z_mean, q = d.x_mean;
  const double beta = 2.0 * batch_size / eta;
  Eigen::Matrix2d A;
  Eigen::Vector2d c;
  switch (kind) {
    case SdeKind::SmlSde:
      A << 0.0, p, -p, 0.0;
      c << 0.0, q;
      break;
    case SdeKind::AltSde:
      A << -eta * p * p / 2.0, p, -p, eta * p * p / 2.0;
      c << eta * p * q / 2.0, q;
      break;
    case SdeKind::SmlSde2:
      A << eta * p * p / 2.0, p, -p, eta * p * p / 2.0;
      c << -eta * p * q / 2.0, q;
      break;
  }
  Eigen::Vector2d m(init.m_theta, init.m_omega);
  Eigen::Matrix2d S;
  S << init.s_tt, init.s_to, init.s_to, init.s_oo;

  auto rhs = [&](const Eigen::Vector2d& mm, const Eigen::Matrix2d& SS, Eigen::Vector2d& dm,
                 Eigen::Matrix2d& dS) {
    dm = A * mm + c;
    Eigen::Matrix2d D = Eigen::Matrix2d::Zero();
    D(0, 0) = (2.0 / beta) * d.z_var * SS(1, 1);
    D(1, 1) = (2.0 / beta) * (d.x_var + d.z_var * SS(0, 0));
    dS = A * SS + SS * A.transpose() + c * mm.transpose() + mm * c.transpose() + D;
  };

  const long inner = std::max<long>(1, static_cast<long>(std::llround(eta / rk_step)));
  const double h = eta / static_cast<double>(inner);
  std::vector<MomentState> out;
  out.reserve(steps);
  Eigen::Vector2d k1m, k2m, k3m, k4m;
  Eigen::Matrix2d k1S, k2S, k3S, k4S;
  for (long t = 0; t < steps; ++t) {
    for (long s = 0; s < inner; ++s) {
      rhs(m, S, k1m, k1S);
      rhs(m + 0.5 * h * k1m, S + 0.5 * h * k1S, k2m, k2S);
      rhs(m + 0.5 * h * k2m, S + 0.5 * h * k2S, k3m, k3S);
      rhs(m + h * k3m, S + h * k3S, k4m, k4S);
      m += h / 6.0 * (k1m + 2.0 * k2m + 2.0 * k3m + k4m);
      S += h / 6.0 * (k1S + 2.0 * k2S + 2.0 * k3S + k4S);
    }
    out.push_back({m[0], m[1], S(0, 0), S(0, 1), S(1, 1)});
  }
  return out;
}

// Closed forms for the linear (quad-sim) SDEs: drift b(u) = A u with constant
// diffusion, the Ornstein-Uhlenbeck oracle.
struct OuOracle {
  Matrix drift;            // A
  Matrix diffusion_cov;    // sigma sigma^T = (2/beta) s^2 I
  Vector stationary_mean;  // zero
  Matrix stationary_cov;   // solves A S + S A^T + sigma sigma^T = 0
  double mean_decay_rate;  // slowest |Re lambda(A)|
};

inline OuOracle ou_oracle(const QuadSim& model, SdeKind kind, double eta, int batch_size) {
  const Index d = model.dim_theta();
  const double a = model.a(), c = model.c(), b = model.coupling(), s = model.noise_scale();
  const double beta = 2.0 * batch_size / eta;
  Matrix A(2 * d, 2 * d);
  const Matrix I = Matrix::Identity(d, d);
  // b0 = (-a theta - b omega; b theta - c omega)
  A.topLeftCorner(d, d) = -a * I;
  A.topRightCorner(d, d) = -b * I;
  A.bottomLeftCorner(d, d) = b * I;
  A.bottomRightCorner(d, d) = -c * I;
  if (kind != SdeKind::SmlSde) {
    Matrix correction;
    if (kind == SdeKind::AltSde) {
      // eta/2 [H_tt, -H_wt; -H_tw, -H_ww] applied to the linear drift
      Matrix block(2 * d, 2 * d);
      block.topLeftCorner(d, d) = a * I;
      block.topRightCorner(d, d) = -b * I;
      block.bottomLeftCorner(d, d) = -b * I;
      block.bottomRightCorner(d, d) = c * I;
      correction = 0.5 * block * A;
    } else {
      correction = -0.5 * A * A;  // SML-SDE2
    }
    A += eta * correction;
  }
  OuOracle o;
  o.drift = A;
  o.diffusion_cov = (2.0 / beta) * s * s * Matrix::Identity(2 * d, 2 * d);
  o.stationary_mean = Vector::Zero(2 * d);
  o.stationary_cov = s > 0.0 ? lyapunov_solve(A, o.diffusion_cov) : Matrix::Zero(2 * d, 2 * d);
  const Eigen::EigenSolver<Matrix> es(A);
  o.mean_decay_rate = es.eigenvalues().real().cwiseAbs().minCoeff();
  return o;
}

}  // namespace gansde
