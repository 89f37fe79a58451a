#pragma once

// Shared oracles for the unit tests: finite differences of per-sample and
// averaged losses, and random probe generation. Kept independent of the
// analytic derivative code they check.

#include "gansde/models.hpp"
#include "gansde/rng.hpp"

namespace gansde::testing {

inline Vector fd_sample_grad_theta(const MinimaxModel& model, const JointParams& p, const Vector& z,
                                   const Vector& x, double h = 1e-6) {
  Vector g(model.dim_theta());
  JointParams q = p;
  for (Index i = 0; i < model.dim_theta(); ++i) {
    const double saved = q.theta[i];
    q.theta[i] = saved + h;
    const double fp = model.sample_loss(q, z, x);
    q.theta[i] = saved - h;
    const double fm = model.sample_loss(q, z, x);
    q.theta[i] = saved;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline Vector fd_sample_grad_omega(const MinimaxModel& model, const JointParams& p, const Vector& z,
                                   const Vector& x, double h = 1e-6) {
  Vector g(model.dim_omega());
  JointParams q = p;
  for (Index i = 0; i < model.dim_omega(); ++i) {
    const double saved = q.omega[i];
    q.omega[i] = saved + h;
    const double fp = model.sample_loss(q, z, x);
    q.omega[i] = saved - h;
    const double fm = model.sample_loss(q, z, x);
    q.omega[i] = saved;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline double rel_err(double got, double want) {
  return std::abs(got - want) / std::max(1.0, std::abs(want));
}

inline double rel_err(const Vector& got, const Vector& want) {
  return (got - want).cwiseAbs().maxCoeff() / std::max(1.0, want.cwiseAbs().maxCoeff());
}

inline double rel_err(const Matrix& got, const Matrix& want) {
  return (got - want).cwiseAbs().maxCoeff() / std::max(1.0, want.cwiseAbs().maxCoeff());
}

inline JointParams random_params(const MinimaxModel& model, Rng& rng, double scale = 1.0) {
  JointParams p{Vector(model.dim_theta()), Vector(model.dim_omega())};
  for (Index i = 0; i < p.theta.size(); ++i) p.theta[i] = scale * rng.normal();
  for (Index i = 0; i < p.omega.size(); ++i) p.omega[i] = scale * rng.normal();
  return p;
}

inline Vector random_vector(Index n, Rng& rng, double scale = 1.0) {
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = scale * rng.normal();
  return v;
}

}  // namespace gansde::testing
