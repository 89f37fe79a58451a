#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gansde/common.hpp"
#include "gansde/gradient_stats.hpp"
#include "gansde/models.hpp"
#include "gansde/rng.hpp"

namespace gansde {

enum class Scheme { Alt, Sml };

inline std::string to_string(Scheme s) { return s == Scheme::Alt ? "ALT" : "SML"; }

inline Scheme scheme_from_string(const std::string& s) {
  if (s == "ALT" || s == "alt") return Scheme::Alt;
  if (s == "SML" || s == "sml") return Scheme::Sml;
  throw Error("unknown scheme `" + s + "` (expected ALT or SML)");
}

struct SgaConfig {
  Scheme scheme = Scheme::Sml;
  double eta = 0.1;
  int batch_size = 1;
  long steps = 100;
  std::uint64_t seed = 0;
  long record_every = 1;
  bool record_stats = true;           // per-record Phi and gradient norms
  std::vector<int> moment_orders;     // running max of |(theta,omega)|^m monitors
  double divergence_norm = 1e8;
};

struct TrajectoryPoint {
  long step = 0;
  double time = 0.0;
  Vector theta;
  Vector omega;
  double phi = 0.0;
  double grad_norm_theta = 0.0;
  double grad_norm_omega = 0.0;
};

struct Trajectory {
  std::vector<TrajectoryPoint> points;
  std::map<int, double> moment_monitor_max;  // m -> max_t |(theta_t, omega_t)|^m
  bool has_time = false;
  bool has_stats = false;
};

// Alternating update on explicit batches: the omega ascent strictly precedes
// and feeds the theta descent, which sees the updated omega.
inline JointParams alt_step_batches(const MinimaxModel& model, const Dataset& ds, const JointParams& p,
                                    double eta, const Minibatch& batch_omega, const Minibatch& batch_theta,
                                    Rng& rng) {
  require(eta >= 0.0, "alt_step: eta must be >= 0");
  JointParams next = p;
  const GradientPair g_o = minibatch_gradients(model, ds, batch_omega, p, rng);
  next.omega = p.omega + eta * g_o.omega;
  const GradientPair g_t = minibatch_gradients(model, ds, batch_theta, next, rng);
  next.theta = p.theta - eta * g_t.theta;
  if (!all_finite(next.theta) || !all_finite(next.omega))
    throw Error("alt_step: non-finite update from state |theta|=" + format_double(p.theta.norm()) +
                ", |omega|=" + format_double(p.omega.norm()) + ", eta=" + format_double(eta));
  return next;
}

// Simultaneous update: one shared batch, both gradients read the old state.
inline JointParams sml_step_batch(const MinimaxModel& model, const Dataset& ds, const JointParams& p,
                                  double eta, const Minibatch& batch, Rng& rng) {
  require(eta >= 0.0, "sml_step: eta must be >= 0");
  const GradientPair g = minibatch_gradients(model, ds, batch, p, rng);
  JointParams next = p;
  next.omega = p.omega + eta * g.omega;
  next.theta = p.theta - eta * g.theta;
  if (!all_finite(next.theta) || !all_finite(next.omega))
    throw Error("sml_step: non-finite update from state |theta|=" + format_double(p.theta.norm()) +
                ", |omega|=" + format_double(p.omega.norm()) + ", eta=" + format_double(eta));
  return next;
}

inline JointParams alt_step(const MinimaxModel& model, const Dataset& ds, const JointParams& p, double eta,
                            int batch_size, Rng& rng) {
  const Minibatch b = sample_minibatch(ds.num_latents(), ds.num_reals(), batch_size, rng);
  const Minibatch b_bar = sample_minibatch(ds.num_latents(), ds.num_reals(), batch_size, rng);
  return alt_step_batches(model, ds, p, eta, b, b_bar, rng);
}

inline JointParams sml_step(const MinimaxModel& model, const Dataset& ds, const JointParams& p, double eta,
                            int batch_size, Rng& rng) {
  const Minibatch b = sample_minibatch(ds.num_latents(), ds.num_reals(), batch_size, rng);
  return sml_step_batch(model, ds, p, eta, b, rng);
}

namespace detail {
inline void record_point(Trajectory& traj, const MinimaxModel& model, const Dataset& ds,
                         const JointParams& p, long step, double time, bool stats) {
  TrajectoryPoint pt;
  pt.step = step;
  pt.time = time;
  pt.theta = p.theta;
  pt.omega = p.omega;
  if (stats) {
    pt.phi = evaluate_loss(model, ds, p);
    const GradientPair g = full_gradients(model, ds, p);
    pt.grad_norm_theta = g.theta.norm();
    pt.grad_norm_omega = g.omega.norm();
  }
  traj.points.push_back(std::move(pt));
}
}  // namespace detail

// Runs the chosen discrete recursion for config.steps iterations.
// Deterministic given the seed; aborts with a diagnostic when the joint
// parameter norm exceeds the divergence guard.
inline Trajectory run_sga(const MinimaxModel& model, const Dataset& ds, const SgaConfig& cfg,
                          const JointParams& initial) {
  model.require_params(initial);
  model.require_dataset(ds);
  require(cfg.eta > 0.0, "run_sga: eta must be > 0");
  require(cfg.steps >= 0, "run_sga: steps must be >= 0");
  require(cfg.record_every >= 1, "run_sga: record_every must be >= 1");

  Rng rng = derive_stream(cfg.seed, 0);
  Trajectory traj;
  traj.has_stats = cfg.record_stats;
  JointParams p = initial;
  for (const int m : cfg.moment_orders)
    traj.moment_monitor_max[m] = std::pow(p.norm(), m);
  detail::record_point(traj, model, ds, p, 0, 0.0, cfg.record_stats);

  for (long t = 1; t <= cfg.steps; ++t) {
    p = cfg.scheme == Scheme::Alt ? alt_step(model, ds, p, cfg.eta, cfg.batch_size, rng)
                                  : sml_step(model, ds, p, cfg.eta, cfg.batch_size, rng);
    const double norm = p.norm();
    if (norm > cfg.divergence_norm)
      throw Error("run_sga: divergence guard tripped at step " + std::to_string(t) + " (|(theta,omega)| = " +
                  format_double(norm) + " > " + format_double(cfg.divergence_norm) + ")");
    for (const int m : cfg.moment_orders) {
      double& mx = traj.moment_monitor_max[m];
      mx = std::max(mx, std::pow(norm, m));
    }
    if (t % cfg.record_every == 0)
      detail::record_point(traj, model, ds, p, t, static_cast<double>(t) * cfg.eta, cfg.record_stats);
  }
  return traj;
}

// CSV schema: step,theta_0..,omega_0..,phi,grad_norm_theta,grad_norm_omega
// (SDE trajectories replace `step` with a continuous `time` column).
inline void write_trajectory_csv(std::ostream& out, const Trajectory& traj, Index d_theta, Index d_omega) {
  out << (traj.has_time ? "time" : "step");
  for (Index i = 0; i < d_theta; ++i) out << ",theta_" << i;
  for (Index i = 0; i < d_omega; ++i) out << ",omega_" << i;
  if (traj.has_stats) out << ",phi,grad_norm_theta,grad_norm_omega";
  out << "\n";
  for (const auto& pt : traj.points) {
    if (traj.has_time)
      out << format_double(pt.time);
    else
      out << pt.step;
    for (Index i = 0; i < d_theta; ++i) out << "," << format_double(pt.theta[i]);
    for (Index i = 0; i < d_omega; ++i) out << "," << format_double(pt.omega[i]);
    if (traj.has_stats)
      out << "," << format_double(pt.phi) << "," << format_double(pt.grad_norm_theta) << ","
          << format_double(pt.grad_norm_omega);
    out << "\n";
  }
}

inline void write_trajectory_csv(const std::string& path, const Trajectory& traj, Index d_theta,
                                 Index d_omega) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  write_trajectory_csv(out, traj, d_theta, d_omega);
}

}  // namespace gansde
