#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "gansde/common.hpp"
#include "gansde/models.hpp"
#include "gansde/rng.hpp"

namespace gansde {

struct GradientPair {
  Vector theta;
  Vector omega;
};

// Minibatch of B index pairs (I_k, J_k), each uniform over {0..N-1}x{0..M-1},
// drawn i.i.d. with replacement.
struct Minibatch {
  std::vector<std::pair<int, int>> pairs;
  int size() const { return static_cast<int>(pairs.size()); }
};

inline Minibatch sample_minibatch(int num_latents, int num_reals, int batch_size, Rng& rng) {
  require(batch_size >= 1, "minibatch: B must be >= 1");
  Minibatch b;
  b.pairs.reserve(batch_size);
  for (int k = 0; k < batch_size; ++k) {
    const int i = static_cast<int>(rng.uniform_index(num_latents));
    const int j = static_cast<int>(rng.uniform_index(num_reals));
    b.pairs.emplace_back(i, j);
  }
  return b;
}

// Every (i, j) pair exactly once; averaging over it reproduces the full
// gradient, handy as a deterministic "full batch".
inline Minibatch full_batch(int num_latents, int num_reals) {
  Minibatch b;
  b.pairs.reserve(static_cast<std::size_t>(num_latents) * num_reals);
  for (int i = 0; i < num_latents; ++i)
    for (int j = 0; j < num_reals; ++j) b.pairs.emplace_back(i, j);
  return b;
}

inline void require_batch(const Minibatch& b, const Dataset& ds) {
  require(b.size() >= 1, "minibatch: empty batch");
  for (const auto& [i, j] : b.pairs)
    require(i >= 0 && i < ds.num_latents() && j >= 0 && j < ds.num_reals(),
            "minibatch: index pair out of range");
}

// Exact average of per-sample gradients over all N*M pairs.
inline GradientPair full_gradients(const MinimaxModel& model, const Dataset& ds, const JointParams& p) {
  model.require_params(p);
  model.require_dataset(ds);
  GradientPair g{Vector::Zero(model.dim_theta()), Vector::Zero(model.dim_omega())};
  Vector gt(model.dim_theta()), go(model.dim_omega());
  for (std::size_t i = 0; i < ds.latents.size(); ++i)
    for (std::size_t j = 0; j < ds.reals.size(); ++j) {
      model.sample_grads(p, ds.latents[i], ds.reals[j], gt, go);
      if (!all_finite(gt) || !all_finite(go))
        throw Error(model.kind() + ": non-finite per-sample gradient at (i,j)=(" + std::to_string(i + 1) +
                    "," + std::to_string(j + 1) + ")");
      g.theta += gt;
      g.omega += go;
    }
  g.theta /= static_cast<double>(ds.num_pairs());
  g.omega /= static_cast<double>(ds.num_pairs());
  return g;
}

struct GradientStats {
  Vector g_theta;
  Vector g_omega;
  Matrix sigma_theta;
  Matrix sigma_omega;
};

// Population covariances Sigma_theta/Sigma_omega of the per-sample gradients
// over the uniform pair distribution. Synthetic-noise models contribute their
// constant s^2 I on top of the (zero) empirical spread.
inline GradientStats population_covariances(const MinimaxModel& model, const Dataset& ds, const JointParams& p) {
  model.require_params(p);
  model.require_dataset(ds);
  const Index dt = model.dim_theta(), dw = model.dim_omega();
  GradientStats st{Vector::Zero(dt), Vector::Zero(dw), Matrix::Zero(dt, dt), Matrix::Zero(dw, dw)};
  std::vector<GradientPair> samples;
  samples.reserve(ds.num_pairs());
  Vector gt(dt), go(dw);
  for (const auto& z : ds.latents)
    for (const auto& x : ds.reals) {
      model.sample_grads(p, z, x, gt, go);
      st.g_theta += gt;
      st.g_omega += go;
      samples.push_back({gt, go});
    }
  const double n = static_cast<double>(ds.num_pairs());
  st.g_theta /= n;
  st.g_omega /= n;
  for (const auto& s : samples) {
    const Vector dt_ = s.theta - st.g_theta;
    const Vector dw_ = s.omega - st.g_omega;
    st.sigma_theta += dt_ * dt_.transpose();
    st.sigma_omega += dw_ * dw_.transpose();
  }
  st.sigma_theta /= n;
  st.sigma_omega /= n;
  const double s = model.noise_scale();
  if (s > 0.0) {
    st.sigma_theta += s * s * Matrix::Identity(dt, dt);
    st.sigma_omega += s * s * Matrix::Identity(dw, dw);
  }
  return st;
}

// Per-element gradient draws for one minibatch: the indexed per-sample
// gradient, plus N(0, s^2 I) noise per element for synthetic-noise models.
// Means recover the minibatch gradient estimate with the exact Sigma/B law;
// spreads feed the unbiased covariance estimator.
inline std::vector<GradientPair> minibatch_gradient_draws(const MinimaxModel& model, const Dataset& ds,
                                                          const Minibatch& batch, const JointParams& p,
                                                          Rng& rng) {
  model.require_params(p);
  require_batch(batch, ds);
  const double s = model.noise_scale();
  std::vector<GradientPair> draws;
  draws.reserve(batch.pairs.size());
  Vector gt(model.dim_theta()), go(model.dim_omega());
  for (const auto& [i, j] : batch.pairs) {
    model.sample_grads(p, ds.latents[i], ds.reals[j], gt, go);
    GradientPair d{gt, go};
    if (s > 0.0) {
      d.theta += s * rng.normal_vector(model.dim_theta());
      d.omega += s * rng.normal_vector(model.dim_omega());
    }
    draws.push_back(std::move(d));
  }
  return draws;
}

inline GradientPair minibatch_gradients(const MinimaxModel& model, const Dataset& ds, const Minibatch& batch,
                                        const JointParams& p, Rng& rng) {
  const auto draws = minibatch_gradient_draws(model, ds, batch, p, rng);
  GradientPair g{Vector::Zero(model.dim_theta()), Vector::Zero(model.dim_omega())};
  for (const auto& d : draws) {
    g.theta += d.theta;
    g.omega += d.omega;
  }
  g.theta /= static_cast<double>(draws.size());
  g.omega /= static_cast<double>(draws.size());
  return g;
}

struct MinibatchStats {
  Vector g_theta;
  Vector g_omega;
  Matrix sigma_hat_theta;
  Matrix sigma_hat_omega;
  int batch_size = 0;
};

// Minibatch mean gradients together with the (B-1)-normalized unbiased
// covariance estimators, computed from the same per-element draws.
inline MinibatchStats minibatch_stats(const MinimaxModel& model, const Dataset& ds, const Minibatch& batch,
                                      const JointParams& p, Rng& rng) {
  require(batch.size() >= 2, "covariance estimator undefined for B < 2");
  const auto draws = minibatch_gradient_draws(model, ds, batch, p, rng);
  const Index dt = model.dim_theta(), dw = model.dim_omega();
  MinibatchStats st{Vector::Zero(dt), Vector::Zero(dw), Matrix::Zero(dt, dt), Matrix::Zero(dw, dw),
                    batch.size()};
  for (const auto& d : draws) {
    st.g_theta += d.theta;
    st.g_omega += d.omega;
  }
  const double B = static_cast<double>(draws.size());
  st.g_theta /= B;
  st.g_omega /= B;
  for (const auto& d : draws) {
    const Vector ut = d.theta - st.g_theta;
    const Vector uw = d.omega - st.g_omega;
    st.sigma_hat_theta += ut * ut.transpose();
    st.sigma_hat_omega += uw * uw.transpose();
  }
  st.sigma_hat_theta /= (B - 1.0);
  st.sigma_hat_omega /= (B - 1.0);
  return st;
}

inline std::pair<Matrix, Matrix> unbiased_covariance_estimates(const MinimaxModel& model, const Dataset& ds,
                                                               const Minibatch& batch, const JointParams& p,
                                                               Rng& rng) {
  const auto st = minibatch_stats(model, ds, batch, p, rng);
  return {st.sigma_hat_theta, st.sigma_hat_omega};
}

inline double default_clip_tol(const Matrix& m) { return 1e-10 * std::max(m.trace(), 1.0); }

// Symmetric PSD square root by spectral decomposition. Eigenvalues in
// [-clip_tol, clip_tol) are clipped to zero; anything below -clip_tol is an
// indefinite-matrix error.
inline Matrix psd_sqrt(const Matrix& m, double clip_tol) {
  require(m.rows() == m.cols(), "psd_sqrt: matrix must be square");
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
    throw Error("psd_sqrt: input is not symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> es(m);
  require(es.info() == Eigen::Success, "psd_sqrt: eigendecomposition failed");
  Vector lam = es.eigenvalues();
  for (Index i = 0; i < lam.size(); ++i) {
    if (lam[i] < -clip_tol)
      throw Error("psd_sqrt: matrix is indefinite (eigenvalue " + format_double(lam[i]) +
                  " below -clip_tol " + format_double(-clip_tol) + ")");
    lam[i] = lam[i] > clip_tol ? std::sqrt(lam[i]) : 0.0;
  }
  Matrix root = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
  root = 0.5 * (root + root.transpose());
  const double defect = (root * root - m).norm();
  if (defect > 1e-8 * (1.0 + m.norm()))
    throw Error("psd_sqrt: round-trip defect " + format_double(defect) + " exceeds tolerance");
  return root;
}

inline Matrix psd_sqrt(const Matrix& m) { return psd_sqrt(m, default_clip_tol(m)); }

inline constexpr double kEnumerationBound = 1e6;

// Visits every ordered batch of B index pairs; the enumeration backs the
// exactness oracles and refuses to run past `bound` combinations.
inline void for_each_ordered_batch(int num_latents, int num_reals, int batch_size,
                                   const std::function<void(const Minibatch&)>& visit,
                                   double bound = kEnumerationBound) {
  const double total = std::pow(static_cast<double>(num_latents) * num_reals, batch_size);
  if (total > bound)
    throw Error("batch enumeration bound exceeded: (N*M)^B = " + format_double(total) + " > " +
                format_double(bound));
  Minibatch b;
  b.pairs.assign(batch_size, {0, 0});
  const long pair_count = static_cast<long>(num_latents) * num_reals;
  std::vector<long> idx(batch_size, 0);
  while (true) {
    for (int k = 0; k < batch_size; ++k)
      b.pairs[k] = {static_cast<int>(idx[k] / num_reals), static_cast<int>(idx[k] % num_reals)};
    visit(b);
    int k = batch_size - 1;
    while (k >= 0 && ++idx[k] == pair_count) idx[k--] = 0;
    if (k < 0) break;
  }
}

}  // namespace gansde
