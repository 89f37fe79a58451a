#pragma once

#include <algorithm>
#include <memory>
#include <string>

#include "gansde/common.hpp"
#include "gansde/params.hpp"

namespace gansde {

// Jacobian blocks of the per-sample (or dataset-averaged) gradient pair
// (g_theta, g_omega) with respect to (theta, omega).
struct HessianBlocks {
  Matrix dtheta_gtheta;  // d_theta x d_theta, symmetric
  Matrix domega_gtheta;  // d_theta x d_omega
  Matrix dtheta_gomega;  // d_omega x d_theta, transpose of the above
  Matrix domega_gomega;  // d_omega x d_omega, symmetric

  HessianBlocks& operator+=(const HessianBlocks& o) {
    dtheta_gtheta += o.dtheta_gtheta;
    domega_gtheta += o.domega_gtheta;
    dtheta_gomega += o.dtheta_gomega;
    domega_gomega += o.domega_gomega;
    return *this;
  }
  HessianBlocks& operator*=(double s) {
    dtheta_gtheta *= s;
    domega_gtheta *= s;
    dtheta_gomega *= s;
    domega_gomega *= s;
    return *this;
  }
  static HessianBlocks zero(Index dt, Index dw) {
    return {Matrix::Zero(dt, dt), Matrix::Zero(dt, dw), Matrix::Zero(dw, dt), Matrix::Zero(dw, dw)};
  }

  // Symmetry of the two diagonal blocks and mutual transposition of the mixed
  // blocks; these hold exactly for second derivatives of a scalar loss.
  double symmetry_defect() const {
    double d = (dtheta_gtheta - dtheta_gtheta.transpose()).cwiseAbs().maxCoeff();
    d = std::max(d, (domega_gomega - domega_gomega.transpose()).cwiseAbs().maxCoeff());
    d = std::max(d, (domega_gtheta - dtheta_gomega.transpose()).cwiseAbs().maxCoeff());
    return d;
  }
};

// A minimax loss Phi(theta, omega) = mean_{i,j} J(D_omega(x_j), D_omega(G_theta(z_i)))
// with per-sample evaluations that are deterministic in (theta, omega, z, x).
class MinimaxModel {
 public:
  virtual ~MinimaxModel() = default;

  virtual std::string kind() const = 0;
  virtual Index dim_theta() const = 0;
  virtual Index dim_omega() const = 0;
  // Expected z / x dimensions; -1 accepts anything (dataset-independent models).
  virtual Index dim_latent() const { return -1; }
  virtual Index dim_sample() const { return -1; }

  virtual double sample_loss(const JointParams& p, const Vector& z, const Vector& x) const = 0;
  virtual void sample_grads(const JointParams& p, const Vector& z, const Vector& x,
                            Vector& g_theta, Vector& g_omega) const = 0;
  virtual HessianBlocks sample_hessian(const JointParams& p, const Vector& z, const Vector& x) const = 0;

  // Scale s of the synthetic gradient noise injected at the minibatch layer;
  // 0 for dataset-driven models.
  virtual double noise_scale() const { return 0.0; }
  // Drift is dissipative by construction (safe for long stationary runs).
  virtual bool dissipative() const { return false; }

  void require_params(const JointParams& p) const {
    if (p.dim_theta() != dim_theta() || p.dim_omega() != dim_omega())
      throw Error(kind() + ": parameter dims (" + std::to_string(p.dim_theta()) + "," +
                  std::to_string(p.dim_omega()) + ") do not match model dims (" +
                  std::to_string(dim_theta()) + "," + std::to_string(dim_omega()) + ")");
    p.require_finite(kind());
  }

  void require_dataset(const Dataset& ds) const {
    ds.validate();
    if (dim_latent() >= 0 && ds.latents.front().size() != dim_latent())
      throw Error(kind() + ": latent dim " + std::to_string(ds.latents.front().size()) +
                  " does not match model latent dim " + std::to_string(dim_latent()));
    if (dim_sample() >= 0 && ds.reals.front().size() != dim_sample())
      throw Error(kind() + ": sample dim " + std::to_string(ds.reals.front().size()) +
                  " does not match model sample dim " + std::to_string(dim_sample()));
  }
};

namespace detail {

// Generator weight theta = vec(W) with W of shape d_x x d_z, row-major.
inline Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
gen_weight(const Vector& theta, Index dx, Index dz) {
  return {theta.data(), dx, dz};
}

inline Index flat_index(Index row, Index col, Index dz) { return row * dz + col; }

}  // namespace detail

// Wasserstein-style bilinear model: D_omega(x) = omega.x, G_theta(z) = W z,
// per-sample loss omega.x - omega.(W z). Scalar case: omega*x - omega*theta*z.
class LinWgan final : public MinimaxModel {
 public:
  LinWgan(Index dx, Index dz) : dx_(dx), dz_(dz) {
    require(dx >= 1 && dz >= 1, "lin-wgan: dims must be >= 1");
  }

  std::string kind() const override { return "lin-wgan"; }
  Index dim_theta() const override { return dx_ * dz_; }
  Index dim_omega() const override { return dx_; }
  Index dim_latent() const override { return dz_; }
  Index dim_sample() const override { return dx_; }

  double sample_loss(const JointParams& p, const Vector& z, const Vector& x) const override {
    const auto W = detail::gen_weight(p.theta, dx_, dz_);
    return p.omega.dot(x) - p.omega.dot(W * z);
  }

  void sample_grads(const JointParams& p, const Vector& z, const Vector& x,
                    Vector& g_theta, Vector& g_omega) const override {
    const auto W = detail::gen_weight(p.theta, dx_, dz_);
    g_theta.resize(dim_theta());
    for (Index k = 0; k < dx_; ++k)
      for (Index j = 0; j < dz_; ++j) g_theta[detail::flat_index(k, j, dz_)] = -p.omega[k] * z[j];
    g_omega = x - W * z;
  }

  HessianBlocks sample_hessian(const JointParams& p, const Vector& z, const Vector&) const override {
    (void)p;
    HessianBlocks h = HessianBlocks::zero(dim_theta(), dim_omega());
    for (Index k = 0; k < dx_; ++k)
      for (Index j = 0; j < dz_; ++j) {
        h.domega_gtheta(detail::flat_index(k, j, dz_), k) = -z[j];
        h.dtheta_gomega(k, detail::flat_index(k, j, dz_)) = -z[j];
      }
    return h;
  }

 private:
  Index dx_, dz_;
};

// Compact WGAN instance: D_omega(x) = tanh(omega.x), G_theta(z) = tanh(W z)
// componentwise, per-sample loss tanh(omega.x) - tanh(omega.G).
class TanhWgan final : public MinimaxModel {
 public:
  TanhWgan(Index dx, Index dz) : dx_(dx), dz_(dz) {
    require(dx >= 1 && dz >= 1, "tanh-wgan: dims must be >= 1");
  }

  std::string kind() const override { return "tanh-wgan"; }
  Index dim_theta() const override { return dx_ * dz_; }
  Index dim_omega() const override { return dx_; }
  Index dim_latent() const override { return dz_; }
  Index dim_sample() const override { return dx_; }

  double sample_loss(const JointParams& p, const Vector& z, const Vector& x) const override {
    const auto W = detail::gen_weight(p.theta, dx_, dz_);
    const Vector g = (W * z).array().tanh();
    return std::tanh(p.omega.dot(x)) - std::tanh(p.omega.dot(g));
  }

  void sample_grads(const JointParams& p, const Vector& z, const Vector& x,
                    Vector& g_theta, Vector& g_omega) const override {
    const auto W = detail::gen_weight(p.theta, dx_, dz_);
    const Vector u = W * z;
    const Vector g = u.array().tanh();
    const Vector gp = 1.0 - g.array().square();  // tanh'(u_k)
    const double vx = p.omega.dot(x);
    const double v = p.omega.dot(g);
    const double px = 1.0 - std::tanh(vx) * std::tanh(vx);
    const double pv = 1.0 - std::tanh(v) * std::tanh(v);
    g_omega = px * x - pv * g;
    g_theta.resize(dim_theta());
    for (Index k = 0; k < dx_; ++k)
      for (Index j = 0; j < dz_; ++j)
        g_theta[detail::flat_index(k, j, dz_)] = -pv * p.omega[k] * gp[k] * z[j];
  }

  HessianBlocks sample_hessian(const JointParams& p, const Vector& z, const Vector& x) const override {
    const auto W = detail::gen_weight(p.theta, dx_, dz_);
    const Vector u = W * z;
    const Vector g = u.array().tanh();
    const Vector gp = 1.0 - g.array().square();
    const Vector gpp = -2.0 * g.array() * gp.array();  // tanh''(u_k)
    const double vx = p.omega.dot(x);
    const double v = p.omega.dot(g);
    const double tx = std::tanh(vx);
    const double tv = std::tanh(v);
    const double px = 1.0 - tx * tx;
    const double pv = 1.0 - tv * tv;
    const double qx = -2.0 * tx * px;  // psi''(omega.x)
    const double qv = -2.0 * tv * pv;  // psi''(omega.G)

    HessianBlocks h = HessianBlocks::zero(dim_theta(), dim_omega());
    // dv/dtheta_{kj} = omega_k gp_k z_j; dv/domega_m = g_m
    for (Index k = 0; k < dx_; ++k) {
      for (Index j = 0; j < dz_; ++j) {
        const Index kj = detail::flat_index(k, j, dz_);
        for (Index k2 = 0; k2 < dx_; ++k2)
          for (Index j2 = 0; j2 < dz_; ++j2) {
            const Index kj2 = detail::flat_index(k2, j2, dz_);
            double val = -qv * (p.omega[k2] * gp[k2] * z[j2]) * (p.omega[k] * gp[k] * z[j]);
            if (k == k2) val -= pv * p.omega[k] * gpp[k] * z[j] * z[j2];
            h.dtheta_gtheta(kj, kj2) = val;
          }
        for (Index m = 0; m < dx_; ++m) {
          double val = -qv * g[m] * p.omega[k] * gp[k] * z[j];
          if (m == k) val -= pv * gp[k] * z[j];
          h.domega_gtheta(kj, m) = val;
          h.dtheta_gomega(m, kj) = val;
        }
      }
    }
    for (Index m = 0; m < dx_; ++m)
      for (Index m2 = 0; m2 < dx_; ++m2)
        h.domega_gomega(m, m2) = qx * x[m] * x[m2] - qv * g[m] * g[m2];
    return h;
  }

 private:
  Index dx_, dz_;
};

// Vanilla GAN with logistic discriminator D_omega(x) = sigmoid(omega.x) and
// linear generator G_theta(z) = W z; per-sample loss
// log D(x) + log(1 - D(G(z))). D is clamped away from {0,1} before the logs
// so the loss stays evaluable while the underlying instability remains
// visible in the gradients.
class VanillaLogistic final : public MinimaxModel {
 public:
  VanillaLogistic(Index dx, Index dz) : dx_(dx), dz_(dz) {
    require(dx >= 1 && dz >= 1, "vanilla-logistic: dims must be >= 1");
  }

  static constexpr double kClamp = 1e-12;

  std::string kind() const override { return "vanilla-logistic"; }
  Index dim_theta() const override { return dx_ * dz_; }
  Index dim_omega() const override { return dx_; }
  Index dim_latent() const override { return dz_; }
  Index dim_sample() const override { return dx_; }

  static double sigmoid(double y) { return 1.0 / (1.0 + std::exp(-y)); }

  double sample_loss(const JointParams& p, const Vector& z, const Vector& x) const override {
    const auto W = detail::gen_weight(p.theta, dx_, dz_);
    const double dx = std::clamp(sigmoid(p.omega.dot(x)), kClamp, 1.0 - kClamp);
    const double dg = std::clamp(sigmoid(p.omega.dot(W * z)), kClamp, 1.0 - kClamp);
    return std::log(dx) + std::log(1.0 - dg);
  }

  void sample_grads(const JointParams& p, const Vector& z, const Vector& x,
                    Vector& g_theta, Vector& g_omega) const override {
    const auto W = detail::gen_weight(p.theta, dx_, dz_);
    const Vector g = W * z;
    const double sx = sigmoid(p.omega.dot(x));
    const double sv = sigmoid(p.omega.dot(g));
    // d/da log sigmoid(a) = 1 - sigmoid(a); d/da log(1 - sigmoid(a)) = -sigmoid(a)
    g_omega = (1.0 - sx) * x - sv * g;
    g_theta.resize(dim_theta());
    for (Index k = 0; k < dx_; ++k)
      for (Index j = 0; j < dz_; ++j)
        g_theta[detail::flat_index(k, j, dz_)] = -sv * p.omega[k] * z[j];
  }

  HessianBlocks sample_hessian(const JointParams& p, const Vector& z, const Vector& x) const override {
    const auto W = detail::gen_weight(p.theta, dx_, dz_);
    const Vector g = W * z;
    const double sx = sigmoid(p.omega.dot(x));
    const double sv = sigmoid(p.omega.dot(g));
    const double spx = sx * (1.0 - sx);
    const double spv = sv * (1.0 - sv);

    HessianBlocks h = HessianBlocks::zero(dim_theta(), dim_omega());
    for (Index k = 0; k < dx_; ++k)
      for (Index j = 0; j < dz_; ++j) {
        const Index kj = detail::flat_index(k, j, dz_);
        for (Index k2 = 0; k2 < dx_; ++k2)
          for (Index j2 = 0; j2 < dz_; ++j2)
            h.dtheta_gtheta(kj, detail::flat_index(k2, j2, dz_)) =
                -spv * (p.omega[k2] * z[j2]) * (p.omega[k] * z[j]);
        for (Index m = 0; m < dx_; ++m) {
          double val = -spv * g[m] * p.omega[k] * z[j];
          if (m == k) val -= sv * z[j];
          h.domega_gtheta(kj, m) = val;
          h.dtheta_gomega(m, kj) = val;
        }
      }
    for (Index m = 0; m < dx_; ++m)
      for (Index m2 = 0; m2 < dx_; ++m2)
        h.domega_gomega(m, m2) = -spx * x[m] * x[m2] - spv * g[m] * g[m2];
    return h;
  }

 private:
  Index dx_, dz_;
};

// Synthetic-noise quadratic saddle Phi = (a/2)|theta|^2 + b theta.omega - (c/2)|omega|^2.
// Per-sample gradient equals the full gradient; stochasticity is injected at
// the minibatch layer as N(0, s^2 I) per batch element, giving the
// Ornstein-Uhlenbeck oracle with known invariant measure.
class QuadSim final : public MinimaxModel {
 public:
  QuadSim(double a, double c, double b, double s, Index dim)
      : a_(a), c_(c), b_(b), s_(s), d_(dim) {
    require(a > 0.0, "quad-sim: dissipativity coefficient a must be positive");
    require(c > 0.0, "quad-sim: dissipativity coefficient c must be positive");
    require(s >= 0.0, "quad-sim: noise scale s must be >= 0");
    require(dim >= 1, "quad-sim: dim must be >= 1");
  }

  std::string kind() const override { return "quad-sim"; }
  Index dim_theta() const override { return d_; }
  Index dim_omega() const override { return d_; }

  double a() const { return a_; }
  double c() const { return c_; }
  double coupling() const { return b_; }
  double noise_scale() const override { return s_; }
  bool dissipative() const override { return true; }

  double sample_loss(const JointParams& p, const Vector&, const Vector&) const override {
    return 0.5 * a_ * p.theta.squaredNorm() + b_ * p.theta.dot(p.omega) - 0.5 * c_ * p.omega.squaredNorm();
  }

  void sample_grads(const JointParams& p, const Vector&, const Vector&,
                    Vector& g_theta, Vector& g_omega) const override {
    g_theta = a_ * p.theta + b_ * p.omega;
    g_omega = b_ * p.theta - c_ * p.omega;
  }

  HessianBlocks sample_hessian(const JointParams&, const Vector&, const Vector&) const override {
    HessianBlocks h = HessianBlocks::zero(d_, d_);
    h.dtheta_gtheta = a_ * Matrix::Identity(d_, d_);
    h.domega_gtheta = b_ * Matrix::Identity(d_, d_);
    h.dtheta_gomega = b_ * Matrix::Identity(d_, d_);
    h.domega_gomega = -c_ * Matrix::Identity(d_, d_);
    return h;
  }

 private:
  double a_, c_, b_, s_;
  Index d_;
};

struct ModelSpec {
  std::string kind;          // lin-wgan | tanh-wgan | vanilla-logistic | quad-sim
  Index dim_sample = 1;      // d_x (GAN family)
  Index dim_latent = 1;      // d_z (GAN family)
  Index dim = 1;             // quad-sim block dimension
  double a = 1.0, c = 1.0, b = 0.0, s = 1.0;  // quad-sim coefficients
};

inline std::unique_ptr<MinimaxModel> build_model(const ModelSpec& spec) {
  if (spec.kind == "lin-wgan") return std::make_unique<LinWgan>(spec.dim_sample, spec.dim_latent);
  if (spec.kind == "tanh-wgan") return std::make_unique<TanhWgan>(spec.dim_sample, spec.dim_latent);
  if (spec.kind == "vanilla-logistic")
    return std::make_unique<VanillaLogistic>(spec.dim_sample, spec.dim_latent);
  if (spec.kind == "quad-sim") return std::make_unique<QuadSim>(spec.a, spec.c, spec.b, spec.s, spec.dim);
  throw Error("build_model: unknown model kind `" + spec.kind + "`");
}

// Phi(theta, omega) averaged over the full dataset.
inline double evaluate_loss(const MinimaxModel& model, const Dataset& ds, const JointParams& p) {
  model.require_params(p);
  model.require_dataset(ds);
  double acc = 0.0;
  for (std::size_t i = 0; i < ds.latents.size(); ++i)
    for (std::size_t j = 0; j < ds.reals.size(); ++j) {
      const double v = model.sample_loss(p, ds.latents[i], ds.reals[j]);
      if (!std::isfinite(v))
        throw Error(model.kind() + ": non-finite per-sample loss at (i,j)=(" + std::to_string(i + 1) +
                    "," + std::to_string(j + 1) + ")");
      acc += v;
    }
  return acc / static_cast<double>(ds.num_pairs());
}

inline constexpr double kHessianSymTol = 1e-10;

// Dataset average of the analytic per-sample Hessian blocks.
inline HessianBlocks full_hessian_blocks(const MinimaxModel& model, const Dataset& ds, const JointParams& p) {
  model.require_params(p);
  model.require_dataset(ds);
  HessianBlocks acc = HessianBlocks::zero(model.dim_theta(), model.dim_omega());
  for (const auto& z : ds.latents)
    for (const auto& x : ds.reals) acc += model.sample_hessian(p, z, x);
  acc *= 1.0 / static_cast<double>(ds.num_pairs());
  const double scale = std::max({acc.dtheta_gtheta.cwiseAbs().maxCoeff(), acc.domega_gomega.cwiseAbs().maxCoeff(),
                                 acc.domega_gtheta.cwiseAbs().maxCoeff(), 1.0});
  const double defect = acc.symmetry_defect();
  if (defect > kHessianSymTol * scale)
    throw Error(model.kind() + ": analytic Hessian blocks violate symmetry (defect " + format_double(defect) + ")");
  return acc;
}

// Central-difference fallback, differentiating the dataset-averaged gradients
// coordinate by coordinate with step h = 1e-5 * (1 + |coordinate|).
struct FdHessianResult {
  HessianBlocks blocks;
  double step_scale;
  double symmetry_defect;
  bool symmetry_warning;
};

inline FdHessianResult fd_hessian_blocks(const MinimaxModel& model, const Dataset& ds, const JointParams& p,
                                         double step_scale = 1e-5, double warn_tol = 1e-5);

namespace detail {
inline void averaged_grads(const MinimaxModel& model, const Dataset& ds, const JointParams& p,
                           Vector& g_theta, Vector& g_omega) {
  g_theta = Vector::Zero(model.dim_theta());
  g_omega = Vector::Zero(model.dim_omega());
  Vector gt(model.dim_theta()), go(model.dim_omega());
  for (const auto& z : ds.latents)
    for (const auto& x : ds.reals) {
      model.sample_grads(p, z, x, gt, go);
      g_theta += gt;
      g_omega += go;
    }
  g_theta /= static_cast<double>(ds.num_pairs());
  g_omega /= static_cast<double>(ds.num_pairs());
}
}  // namespace detail

inline FdHessianResult fd_hessian_blocks(const MinimaxModel& model, const Dataset& ds, const JointParams& p,
                                         double step_scale, double warn_tol) {
  model.require_params(p);
  const Index dt = model.dim_theta(), dw = model.dim_omega();
  HessianBlocks h = HessianBlocks::zero(dt, dw);
  Vector gtp(dt), gop(dw), gtm(dt), gom(dw);
  JointParams q = p;
  for (Index k = 0; k < dt + dw; ++k) {
    double& coord = k < dt ? q.theta[k] : q.omega[k - dt];
    const double h0 = step_scale * (1.0 + std::abs(coord));
    const double saved = coord;
    coord = saved + h0;
    detail::averaged_grads(model, ds, q, gtp, gop);
    coord = saved - h0;
    detail::averaged_grads(model, ds, q, gtm, gom);
    coord = saved;
    const Vector dgt = (gtp - gtm) / (2.0 * h0);
    const Vector dgo = (gop - gom) / (2.0 * h0);
    if (k < dt) {
      h.dtheta_gtheta.col(k) = dgt;
      h.dtheta_gomega.col(k) = dgo;
    } else {
      h.domega_gtheta.col(k - dt) = dgt;
      h.domega_gomega.col(k - dt) = dgo;
    }
  }
  FdHessianResult res{std::move(h), step_scale, 0.0, false};
  res.symmetry_defect = res.blocks.symmetry_defect();
  res.symmetry_warning = res.symmetry_defect > warn_tol;
  return res;
}

}  // namespace gansde
