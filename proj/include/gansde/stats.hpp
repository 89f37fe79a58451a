#pragma once

#include <numeric>
#include <span>
#include <vector>

#include "gansde/common.hpp"

namespace gansde {

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
  long n = 0;
};

inline MeanSe mean_se(std::span<const double> xs) {
  MeanSe r;
  r.n = static_cast<long>(xs.size());
  require(r.n >= 1, "mean_se: empty series");
  for (double x : xs) r.mean += x;
  r.mean /= static_cast<double>(r.n);
  if (r.n >= 2) {
    double ss = 0.0;
    for (double x : xs) ss += (x - r.mean) * (x - r.mean);
    r.se = std::sqrt(ss / (static_cast<double>(r.n) * (r.n - 1.0)));
  }
  return r;
}

// Standard error robust to serial correlation: block the series and treat
// block means as independent.
inline MeanSe batch_means_se(std::span<const double> xs, int n_blocks = 16) {
  const long n = static_cast<long>(xs.size());
  if (n < 2 * n_blocks) return mean_se(xs);
  const long block = n / n_blocks;
  std::vector<double> means;
  means.reserve(n_blocks);
  for (int b = 0; b < n_blocks; ++b) {
    double acc = 0.0;
    for (long i = b * block; i < (b + 1) * block; ++i) acc += xs[i];
    means.push_back(acc / static_cast<double>(block));
  }
  MeanSe r = mean_se(means);
  r.n = n;
  return r;
}

// Integrated autocorrelation time 1 + 2*sum rho_k with the self-consistent
// window cutoff (first k exceeding 5*tau, or rho turning negative).
inline double integrated_autocorr_time(std::span<const double> xs) {
  const long n = static_cast<long>(xs.size());
  if (n < 8) return 1.0;
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= static_cast<double>(n);
  if (var <= 0.0) return 1.0;
  double tau = 1.0;
  for (long k = 1; k < n / 2; ++k) {
    double c = 0.0;
    for (long i = 0; i + k < n; ++i) c += (xs[i] - mean) * (xs[i + k] - mean);
    c /= static_cast<double>(n - k) * var;
    if (c < 0.0) break;
    tau += 2.0 * c;
    if (static_cast<double>(k) > 5.0 * tau) break;
  }
  return std::max(1.0, tau);
}

struct SplitHalfReport {
  double mean_first = 0.0, mean_second = 0.0;
  double se_first = 0.0, se_second = 0.0;
  bool stationary = false;
  double z_score = 0.0;
};

// Split-half stationarity diagnostic: the two half-series means must agree
// within 3 combined standard errors (batch-means SEs).
inline SplitHalfReport split_half_diagnostic(std::span<const double> xs) {
  const long n = static_cast<long>(xs.size());
  require(n >= 4, "split-half diagnostic: series too short");
  const auto first = xs.subspan(0, n / 2);
  const auto second = xs.subspan(n / 2);
  const MeanSe a = batch_means_se(first);
  const MeanSe b = batch_means_se(second);
  SplitHalfReport r{a.mean, b.mean, a.se, b.se, false, 0.0};
  const double comb = std::sqrt(a.se * a.se + b.se * b.se);
  r.z_score = comb > 0.0 ? std::abs(a.mean - b.mean) / comb : (a.mean == b.mean ? 0.0 : HUGE_VAL);
  r.stationary = r.z_score <= 3.0;
  return r;
}

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_se = 0.0;
};

inline SlopeFit linear_fit(std::span<const double> xs, std::span<const double> ys) {
  const long n = static_cast<long>(xs.size());
  require(n == static_cast<long>(ys.size()) && n >= 2, "linear_fit: need >= 2 matched points");
  double mx = 0.0, my = 0.0;
  for (long i = 0; i < n; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (long i = 0; i < n; ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  require(sxx > 0.0, "linear_fit: degenerate abscissae");
  SlopeFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  if (n > 2) {
    double sse = 0.0;
    for (long i = 0; i < n; ++i) {
      const double r = ys[i] - (f.intercept + f.slope * xs[i]);
      sse += r * r;
    }
    f.slope_se = std::sqrt(sse / (n - 2.0) / sxx);
  }
  return f;
}

// Least-squares slope of log(y) against log(x); the order-of-accuracy
// measurement for error-vs-step curves.
inline SlopeFit loglog_fit(std::span<const double> xs, std::span<const double> ys) {
  std::vector<double> lx, ly;
  lx.reserve(xs.size());
  ly.reserve(ys.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    require(xs[i] > 0.0 && ys[i] > 0.0, "loglog_fit: needs positive data");
    lx.push_back(std::log(xs[i]));
    ly.push_back(std::log(ys[i]));
  }
  return linear_fit(lx, ly);
}

// Solves A S + S A^T + Q = 0 for symmetric S via the Kronecker system;
// the stationary covariance of a linear SDE with constant diffusion.
inline Matrix lyapunov_solve(const Matrix& A, const Matrix& Q) {
  const Index n = A.rows();
  require(A.cols() == n && Q.rows() == n && Q.cols() == n, "lyapunov_solve: shape mismatch");
  Matrix K = Matrix::Zero(n * n, n * n);
  const Matrix I = Matrix::Identity(n, n);
  // vec(AS + SA^T) = (I (x) A + A (x) I) vec(S), column-major vec
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      for (Index k = 0; k < n; ++k)
        for (Index l = 0; l < n; ++l)
          K(i + j * n, k + l * n) = I(j, l) * A(i, k) + A(j, l) * I(i, k);
  Vector q(n * n);
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < n; ++i) q[i + j * n] = -Q(i, j);
  const Vector s = K.fullPivLu().solve(q);
  Matrix S(n, n);
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < n; ++i) S(i, j) = s[i + j * n];
  return 0.5 * (S + S.transpose());
}

}  // namespace gansde
