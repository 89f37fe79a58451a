#pragma once

#include <optional>
#include <vector>

#include "gansde/analysis.hpp"
#include "gansde/common.hpp"
#include "gansde/gradient_stats.hpp"
#include "gansde/models.hpp"
#include "gansde/sga.hpp"
#include "gansde/stats.hpp"

namespace gansde {

// Learning-rate scheduler driven by the stationarity ratio
//   [theta.g^B_theta - omega.g^B_omega] / [beta^{-1} Tr(SigmaHat_theta + SigmaHat_omega)],
// which concentrates near 1 under the invariant measure. When the windowed
// ratio is within epsilon_tol of 1, eta decays by (1 - delta_decay).
struct SchedulerState {
  double eta = 0.1;
  double epsilon_tol = 0.1;
  double delta_decay = 0.1;
  int batch_size = 2;
  long window = 100;
  double eta_min = 1e-4;
  double eta_initial = 0.1;

  double beta() const { return 2.0 * static_cast<double>(batch_size) / eta; }

  void validate() const {
    require(eta > 0.0 && eta_initial > 0.0, "scheduler: eta must be > 0");
    require(eta_min > 0.0 && eta_min <= eta, "scheduler: need 0 < eta_min <= eta");
    require(epsilon_tol >= 0.0, "scheduler: epsilon_tol must be >= 0");
    require(delta_decay >= 0.0 && delta_decay < 1.0, "scheduler: delta_decay must lie in [0, 1)");
    require(batch_size >= 2, "scheduler: batch size must be >= 2 for the covariance estimator");
    require(window >= 1, "scheduler: window must be >= 1");
  }
};

// Instantaneous ratio statistic from one minibatch. Returns nothing when the
// estimated noise trace vanishes (the undefined-ratio signal).
inline std::optional<double> fdr2_ratio(const JointParams& p, const MinibatchStats& stats, double beta) {
  const double denom = (stats.sigma_hat_theta.trace() + stats.sigma_hat_omega.trace()) / beta;
  if (denom <= 0.0) return std::nullopt;
  const double numer = p.theta.dot(stats.g_theta) - p.omega.dot(stats.g_omega);
  return numer / denom;
}

// One scheduling decision: decay eta to max((1-delta) eta, eta_min) when the
// ratio sits within epsilon_tol of 1; beta tracks eta through the accessor.
inline SchedulerState scheduler_step(SchedulerState state, double ratio) {
  state.validate();
  if (std::abs(ratio - 1.0) < state.epsilon_tol)
    state.eta = std::max((1.0 - state.delta_decay) * state.eta, state.eta_min);
  return state;
}

struct ScheduleEvent {
  long step = 0;          // window boundary step
  double eta = 0.0;       // eta in force after the decision
  double ratio = 0.0;     // windowed ratio the decision saw
  bool ratio_defined = true;
  bool triggered = false;
  bool diagnostic_pass = false;  // split-half stationarity of the Phi series so far
};

struct ScheduledRun {
  Trajectory trajectory;
  std::vector<ScheduleEvent> events;
  SchedulerState final_state;
};

// Simultaneous-update training loop with the ratio scheduler. Per-step
// minibatch statistics are aggregated over each window as
// mean(numerator) / (beta^{-1} mean(trace)); window=1 recovers the per-step
// rule. The split-half diagnostic on the Phi record (with 50% burn-in) is
// evaluated at each boundary for reporting; the scheduler itself never sees it.
inline ScheduledRun scheduled_run(const MinimaxModel& model, const Dataset& ds, const SgaConfig& sga,
                                  const SchedulerState& initial_scheduler, const JointParams& initial) {
  require(sga.scheme == Scheme::Sml, "scheduled_run: the ratio rule targets the simultaneous update");
  SchedulerState sched = initial_scheduler;
  sched.validate();
  require(sched.batch_size == sga.batch_size, "scheduled_run: scheduler and SGA batch sizes must match");

  model.require_params(initial);
  model.require_dataset(ds);
  Rng rng = derive_stream(sga.seed, 0);

  ScheduledRun out;
  out.trajectory.has_stats = true;
  JointParams p = initial;
  detail::record_point(out.trajectory, model, ds, p, 0, 0.0, true);

  std::vector<double> phi_series;
  phi_series.reserve(sga.steps);
  double win_numer = 0.0, win_trace = 0.0;
  long win_count = 0;
  double time = 0.0;

  for (long t = 1; t <= sga.steps; ++t) {
    const Minibatch batch = sample_minibatch(ds.num_latents(), ds.num_reals(), sched.batch_size, rng);
    const MinibatchStats stats = minibatch_stats(model, ds, batch, p, rng);
    win_numer += p.theta.dot(stats.g_theta) - p.omega.dot(stats.g_omega);
    win_trace += stats.sigma_hat_theta.trace() + stats.sigma_hat_omega.trace();
    ++win_count;

    JointParams next = p;
    next.omega = p.omega + sched.eta * stats.g_omega;
    next.theta = p.theta - sched.eta * stats.g_theta;
    if (!all_finite(next.theta) || !all_finite(next.omega))
      throw Error("scheduled_run: non-finite update at step " + std::to_string(t));
    p = next;
    if (p.norm() > sga.divergence_norm)
      throw Error("scheduled_run: divergence guard tripped at step " + std::to_string(t));
    time += sched.eta;
    phi_series.push_back(evaluate_loss(model, ds, p));
    if (t % sga.record_every == 0) detail::record_point(out.trajectory, model, ds, p, t, time, true);

    if (win_count == sched.window) {
      ScheduleEvent ev;
      ev.step = t;
      const double mean_trace = win_trace / static_cast<double>(win_count);
      const double denom = mean_trace / sched.beta();
      if (denom > 0.0) {
        ev.ratio = (win_numer / static_cast<double>(win_count)) / denom;
        ev.ratio_defined = true;
        const SchedulerState before = sched;
        sched = scheduler_step(sched, ev.ratio);
        ev.triggered = sched.eta < before.eta;
      } else {
        ev.ratio = 0.0;
        ev.ratio_defined = false;  // undefined-ratio signal: skip the decision
      }
      ev.eta = sched.eta;
      const long burn = static_cast<long>(phi_series.size() / 2);
      if (static_cast<long>(phi_series.size()) - burn >= 8) {
        const std::span<const double> tail(phi_series.data() + burn, phi_series.size() - burn);
        ev.diagnostic_pass = split_half_diagnostic(tail).stationary;
      }
      out.events.push_back(ev);
      win_numer = win_trace = 0.0;
      win_count = 0;
    }
  }
  out.final_state = sched;
  return out;
}

// CSV schema: step,eta,ratio,triggered
inline void write_schedule_csv(std::ostream& os, const std::vector<ScheduleEvent>& events) {
  os << "step,eta,ratio,triggered\n";
  for (const auto& ev : events)
    os << ev.step << "," << format_double(ev.eta) << "," << (ev.ratio_defined ? format_double(ev.ratio) : "nan")
       << "," << (ev.triggered ? 1 : 0) << "\n";
}

}  // namespace gansde
