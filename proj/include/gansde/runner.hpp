#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>

#include "gansde/config.hpp"
#include "gansde/version.hpp"

namespace gansde {

namespace fs = std::filesystem;

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << text;
}

inline void write_json(const fs::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

inline Json fdr_to_json(const FdrReport& r, double se_mult = 3.0, double scale_frac = 0.05) {
  return Json{{"which", r.which},
              {"lhs", r.lhs},
              {"rhs", r.rhs},
              {"residual", r.residual},
              {"scale", r.scale},
              {"se", r.se},
              {"n", r.n},
              {"eta_term_included", r.eta_term_included},
              {"generator_mean", r.generator_mean},
              {"generator_se", r.generator_se},
              {"verdict", r.within(se_mult, scale_frac) ? "PASS" : "FAIL"}};
}

// Runs one experiment and persists manifest + results + summary under
// `out_dir`. Returns the exit status: 0 ok, 2 inconclusive.
inline int run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
  const int workers = default_worker_count();
  fs::create_directories(out_dir);
  const fs::path out(out_dir);

  Json manifest{{"tool", "gansde"}, {"version", kVersion}, {"experiment", cfg.experiment},
                {"seed", cfg.seed}, {"config", cfg.echo}};
  write_json(out / "manifest.json", manifest);

  const auto model = build_model(cfg.model);
  const Dataset ds = cfg.dataset();
  model->require_dataset(ds);
  std::ostringstream summary;
  summary << "experiment: " << cfg.experiment << "\nmodel: " << model->kind() << "\nseed: " << cfg.seed
          << "\n";
  int status = 0;

  try {
    if (cfg.experiment == "simulate-sga") {
      SgaConfig sc;
      sc.scheme = cfg.scheme;
      sc.eta = cfg.eta;
      sc.batch_size = cfg.batch_size;
      sc.steps = cfg.steps;
      sc.seed = cfg.seed;
      sc.record_every = cfg.record_every;
      sc.record_stats = cfg.record_stats;
      sc.moment_orders = cfg.moment_orders;
      const JointParams init = cfg.initial.realize(model->dim_theta(), model->dim_omega(), cfg.seed);
      const Trajectory tr = run_sga(*model, ds, sc, init);
      write_trajectory_csv((out / "trajectory.csv").string(), tr, model->dim_theta(), model->dim_omega());
      summary << "scheme: " << to_string(cfg.scheme) << "\nsteps: " << cfg.steps
              << "\nfinal_norm: " << format_double(std::sqrt(tr.points.back().theta.squaredNorm() +
                                                             tr.points.back().omega.squaredNorm()))
              << "\n";
      for (const auto& [m, v] : tr.moment_monitor_max)
        summary << "moment_monitor_max[m=" << m << "]: " << format_double(v) << "\n";
    } else if (cfg.experiment == "simulate-sde") {
      IntegratorConfig ic;
      ic.horizon = cfg.horizon;
      ic.inner_step = cfg.inner_step;
      ic.seed = cfg.seed;
      ic.record_every = cfg.record_every;
      ic.record_stats = cfg.record_stats;
      const JointParams init = cfg.initial.realize(model->dim_theta(), model->dim_omega(), cfg.seed);
      const Trajectory tr = em_integrate(cfg.sde_kind, *model, ds, init, cfg.eta, cfg.batch_size, ic);
      write_trajectory_csv((out / "trajectory.csv").string(), tr, model->dim_theta(), model->dim_omega());
      summary << "sde_kind: " << to_string(cfg.sde_kind) << "\nhorizon: " << format_double(cfg.horizon)
              << "\nrecords: " << tr.points.size() << "\n";
    } else if (cfg.experiment == "one-step-moments") {
      const JointParams init = cfg.initial.realize(model->dim_theta(), model->dim_omega(), cfg.seed);
      OneStepOptions opt;
      opt.mc_draws = cfg.mc_draws;
      opt.allow_mc = cfg.allow_mc;
      opt.seed = cfg.seed;
      Json per_eta = Json::array();
      std::vector<double> first_residuals, second_residuals;
      for (std::size_t i = 0; i < cfg.eta_grid.size(); ++i) {
        OneStepOptions o = opt;
        o.seed = derive_seed(cfg.seed, 0xA11, i);
        const auto rep = one_step_moment_compare(*model, ds, init, cfg.eta_grid[i], cfg.batch_size,
                                                 cfg.scheme, o);
        first_residuals.push_back(rep.first_residual_inf);
        second_residuals.push_back(rep.second_residual_inf);
        per_eta.push_back(Json{{"eta", cfg.eta_grid[i]},
                               {"first_residual", rep.first_residual_inf},
                               {"second_residual", rep.second_residual_inf},
                               {"exact", rep.exact},
                               {"evaluations", rep.evaluations},
                               {"first_mc_se", rep.first_mc_se}});
      }
      Json doc{{"scheme", to_string(cfg.scheme)}, {"per_eta", per_eta}};
      // an exactly matched expansion leaves nothing to fit a slope on
      auto all_positive = [](const std::vector<double>& v) {
        for (double x : v)
          if (!(x > 0.0)) return false;
        return true;
      };
      if (all_positive(first_residuals)) {
        const double slope = loglog_fit(cfg.eta_grid, first_residuals).slope;
        doc["first_moment_slope"] = slope;
        summary << "first_moment_slope: " << format_double(slope) << "\n";
      }
      if (all_positive(second_residuals))
        doc["second_moment_slope"] = loglog_fit(cfg.eta_grid, second_residuals).slope;
      write_json(out / "moments.json", doc);
    } else if (cfg.experiment == "weak-error") {
      const JointParams init = cfg.initial.realize(model->dim_theta(), model->dim_omega(), cfg.seed);
      WeakErrorOptions opt;
      opt.oracle = cfg.oracle;
      opt.replicas = cfg.replicas;
      opt.seed = cfg.seed;
      opt.workers = workers;
      std::vector<TestFunction> fns;
      if (cfg.oracle) {
        for (const auto& name : cfg.functions.empty() ? MomentState::function_names() : cfg.functions)
          fns.push_back(TestFunction{name, {}, {}, {}, 0.0, 0});
      } else {
        fns = standard_basis(model->dim_theta(), model->dim_omega(), cfg.seed);
      }
      const OrderStudyResult res = weak_error_curve(*model, ds, cfg.scheme, cfg.sde_kind, fns, cfg.horizon,
                                                    cfg.eta_grid, init, opt);
      std::ostringstream csv;
      csv << "eta,test_function,error,se\n";
      for (std::size_t i = 0; i < res.eta_grid.size(); ++i)
        for (std::size_t f = 0; f < res.function_names.size(); ++f)
          csv << format_double(res.eta_grid[i]) << "," << res.function_names[f] << ","
              << format_double(res.errors[i][f]) << "," << format_double(res.ses[i][f]) << "\n";
      write_text(out / "order_study.csv", csv.str());
      Json doc{{"scheme", to_string(cfg.scheme)},
               {"sde_kind", to_string(cfg.sde_kind)},
               {"slope", res.slope.slope},
               {"slope_se", res.slope.slope_se},
               {"max_errors", res.max_errors}};
      std::string verdict = "REPORTED";
      if (cfg.slope_window) {
        const bool ok = res.slope.slope >= cfg.slope_window->first && res.slope.slope <= cfg.slope_window->second;
        verdict = ok ? "PASS" : "FAIL";
        doc["slope_window"] = {cfg.slope_window->first, cfg.slope_window->second};
        if (!ok) status = 2;
      }
      doc["verdict"] = verdict;
      write_json(out / "order_study.json", doc);
      summary << "slope: " << format_double(res.slope.slope) << "\nverdict: " << verdict << "\n";
    } else if (cfg.experiment == "stationary-fdr") {
      const JointParams init = cfg.initial.realize(model->dim_theta(), model->dim_omega(), cfg.seed);
      StationaryOptions so;
      so.engine = cfg.engine == "sga" ? EngineKind::Sga : EngineKind::Sde;
      so.scheme = cfg.scheme;
      so.kind = cfg.sde_kind;
      so.eta = cfg.eta;
      so.batch_size = cfg.batch_size;
      so.horizon = cfg.horizon;
      so.inner_step = cfg.inner_step;
      so.seed = cfg.seed;
      so.replicas = std::max<long>(1, cfg.replicas);
      so.workers = workers;
      so.burn_in_fraction = cfg.burn_in_fraction;
      so.thin = cfg.thin;
      so.allow_nondissipative = cfg.allow_nondissipative;
      const EmpiricalMeasure measure = stationary_sample(*model, ds, so, init);
      Json doc{{"provenance", measure.provenance},
               {"samples", static_cast<long>(measure.samples.size())},
               {"thin", measure.thin},
               {"burn_in_records", measure.burn_in_records},
               {"diagnostic_z", measure.diagnostic.z_score}};
      for (const auto& which : cfg.fdr_which) {
        const FdrReport rep = fdr_residuals(measure, *model, ds, cfg.eta, cfg.batch_size,
                                            which == "FDR1" ? FdrKind::Fdr1 : FdrKind::Fdr2);
        doc[which == "FDR1" ? "fdr1" : "fdr2"] = fdr_to_json(rep);
        summary << which << " residual: " << format_double(rep.residual) << " (se "
                << format_double(rep.se) << ", scale " << format_double(rep.scale) << ") -> "
                << (rep.within(3.0, 0.05) ? "PASS" : "FAIL") << "\n";
        if (!rep.within(3.0, 0.05)) status = 2;
      }
      write_json(out / "fdr.json", doc);
    } else if (cfg.experiment == "condition-check") {
      const ConditionReport rep =
          convergence_condition_check(*model, ds, cfg.eta, cfg.batch_size, cfg.sde_kind, cfg.probe);
      Json doc{{"dissipative", rep.dissipative},
               {"r_found", rep.r_found},
               {"m0", cfg.probe.m0},
               {"min_ellipticity", rep.min_ellipticity},
               {"k2", rep.k2},
               {"lyapunov",
                Json{{"m", rep.lyap_m},
                     {"eps", rep.lyap_eps},
                     {"delta", rep.lyap_delta},
                     {"feasible", rep.lyap_feasible},
                     {"ok", rep.lyap_ok},
                     {"worst_margin", rep.lyap_worst_margin}}},
               {"probes", rep.probes}};
      if (rep.has_witness) {
        std::vector<double> w(rep.violation_witness.data(),
                              rep.violation_witness.data() + rep.violation_witness.size());
        doc["violation_witness"] = w;
      }
      write_json(out / "conditions.json", doc);
      summary << "dissipative: " << (rep.dissipative ? "yes" : "no")
              << "\nr_found: " << format_double(rep.r_found)
              << "\nlyapunov_ok: " << (rep.lyap_ok ? "yes" : "no") << "\n";
    } else if (cfg.experiment == "schedule-demo") {
      SgaConfig sc;
      sc.scheme = Scheme::Sml;
      sc.eta = cfg.eta;
      sc.batch_size = cfg.batch_size;
      sc.steps = cfg.steps;
      sc.seed = cfg.seed;
      sc.record_every = cfg.record_every;
      SchedulerState st;
      st.eta = cfg.eta;
      st.eta_initial = cfg.eta;
      st.epsilon_tol = cfg.epsilon_tol;
      st.delta_decay = cfg.delta_decay;
      st.batch_size = cfg.batch_size;
      st.window = cfg.window;
      st.eta_min = cfg.eta_min;
      const JointParams init = cfg.initial.realize(model->dim_theta(), model->dim_omega(), cfg.seed);
      const ScheduledRun run = scheduled_run(*model, ds, sc, st, init);
      std::ostringstream csv;
      write_schedule_csv(csv, run.events);
      write_text(out / "schedule.csv", csv.str());
      write_trajectory_csv((out / "trajectory.csv").string(), run.trajectory, model->dim_theta(),
                           model->dim_omega());
      long decays = 0;
      for (const auto& ev : run.events) decays += ev.triggered ? 1 : 0;
      summary << "final_eta: " << format_double(run.final_state.eta) << "\ndecay_events: " << decays
              << "\n";
    } else {
      throw Error("run_experiment: unknown experiment kind `" + cfg.experiment + "`");
    }
  } catch (const InconclusiveError& e) {
    summary << "inconclusive: " << e.what() << "\n";
    status = 2;
  }

  summary << "status: " << status << "\n";
  write_text(out / "summary.txt", summary.str());
  return status;
}

}  // namespace gansde
