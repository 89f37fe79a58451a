#pragma once

#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "gansde/analysis.hpp"
#include "gansde/common.hpp"
#include "gansde/models.hpp"
#include "gansde/scheduler.hpp"

namespace gansde {

using Json = nlohmann::json;

// Collects every schema violation so a bad config is reported in full.
class ConfigErrors {
 public:
  void add(const std::string& path, const std::string& msg) { items_.push_back(path + ": " + msg); }
  bool any() const { return !items_.empty(); }
  const std::vector<std::string>& items() const { return items_; }
  void raise_if_any() const {
    if (items_.empty()) return;
    std::string joined = "invalid config:";
    for (const auto& it : items_) joined += "\n  - " + it;
    throw Error(joined);
  }

 private:
  std::vector<std::string> items_;
};

namespace cfg_detail {

inline void check_keys(const Json& obj, const std::string& path, const std::set<std::string>& allowed,
                       ConfigErrors& errs) {
  for (const auto& [key, _] : obj.items())
    if (!allowed.count(key)) errs.add(path + "." + key, "unknown key");
}

template <typename T>
std::optional<T> get_opt(const Json& obj, const std::string& path, const std::string& key,
                         ConfigErrors& errs) {
  if (!obj.contains(key)) return std::nullopt;
  try {
    return obj.at(key).get<T>();
  } catch (const Json::exception&) {
    errs.add(path + "." + key, "wrong type");
    return std::nullopt;
  }
}

inline std::optional<double> get_positive(const Json& obj, const std::string& path, const std::string& key,
                                          ConfigErrors& errs) {
  auto v = get_opt<double>(obj, path, key, errs);
  if (v && !(*v > 0.0)) {
    errs.add(path + "." + key, "must be > 0 (got " + format_double(*v) + ")");
    return std::nullopt;
  }
  return v;
}

}  // namespace cfg_detail

struct InitialSpec {
  // Point mass, or an isotropic Gaussian drawn deterministically from the run seed.
  std::optional<Vector> theta, omega;
  std::optional<double> gaussian_stddev;
  double gaussian_mean = 0.0;

  JointParams realize(Index d_theta, Index d_omega, std::uint64_t seed) const {
    if (gaussian_stddev) {
      Rng rng = derive_stream(seed, 0x1217);
      JointParams p{Vector(d_theta), Vector(d_omega)};
      for (Index i = 0; i < d_theta; ++i) p.theta[i] = gaussian_mean + *gaussian_stddev * rng.normal();
      for (Index i = 0; i < d_omega; ++i) p.omega[i] = gaussian_mean + *gaussian_stddev * rng.normal();
      return p;
    }
    require(theta && omega, "initial: point mass requires theta and omega");
    require(theta->size() == d_theta && omega->size() == d_omega,
            "initial: dimensions do not match the model");
    return {*theta, *omega};
  }
};

struct ExperimentConfig {
  std::string experiment;
  std::uint64_t seed = 0;
  std::optional<std::string> out_dir;  // CLI-level destination; not part of the manifest echo

  ModelSpec model;
  std::optional<std::string> dataset_csv;
  std::vector<Vector> dataset_z, dataset_x;
  std::optional<double> dataset_box;  // declared bound on |entry| for compact-data models
  InitialSpec initial;

  // shared numeric fields (meaning depends on the experiment kind)
  Scheme scheme = Scheme::Sml;
  SdeKind sde_kind = SdeKind::SmlSde;
  double eta = 0.1;
  int batch_size = 1;
  long steps = 100;
  double horizon = 1.0;
  double inner_step = 0.0;
  long record_every = 1;
  bool record_stats = true;
  std::vector<int> moment_orders;

  // one-step-moments / weak-error
  std::vector<double> eta_grid;
  long mc_draws = 1000000;
  bool allow_mc = true;
  bool oracle = true;
  long replicas = 0;
  std::vector<std::string> functions;
  std::optional<std::pair<double, double>> slope_window;

  // stationary-fdr
  std::string engine = "sde";
  double burn_in_fraction = 0.5;
  long thin = 0;
  bool allow_nondissipative = false;
  std::vector<std::string> fdr_which{"FDR1", "FDR2"};

  // condition-check
  ProbeConfig probe;

  // schedule-demo
  double epsilon_tol = 0.1;
  double delta_decay = 0.1;
  long window = 100;
  double eta_min = 1e-4;

  Json echo;  // validated config echo (defaults filled), used by the manifest

  Dataset dataset() const {
    if (dataset_csv) {
      Dataset ds = load_dataset_csv(*dataset_csv);
      ds.validate(dataset_box);
      return ds;
    }
    if (!dataset_z.empty() || !dataset_x.empty()) {
      Dataset ds{dataset_z, dataset_x};
      ds.validate(dataset_box);
      return ds;
    }
    // dataset-independent models run on a placeholder pair
    Dataset ds = Dataset::scalar({0.0}, {0.0});
    return ds;
  }
};

inline const std::set<std::string>& experiment_kinds() {
  static const std::set<std::string> kinds{"simulate-sga", "simulate-sde",   "one-step-moments", "weak-error",
                                           "stationary-fdr", "condition-check", "schedule-demo"};
  return kinds;
}

inline ExperimentConfig parse_config_json(const Json& root);

inline ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("config: cannot open " + path);
  Json root;
  try {
    in >> root;
  } catch (const Json::exception& e) {
    throw Error("config: JSON parse error in " + path + ": " + e.what());
  }
  // A manifest echoes the config under "config"; accept it directly.
  if (root.is_object() && root.contains("config") && root.contains("tool")) root = root.at("config");
  return parse_config_json(root);
}

inline ExperimentConfig parse_config_json(const Json& root) {
  ConfigErrors errs;
  ExperimentConfig cfg;
  if (!root.is_object()) {
    errs.add("$", "config must be a JSON object");
    errs.raise_if_any();
  }

  using cfg_detail::check_keys;
  using cfg_detail::get_opt;
  using cfg_detail::get_positive;

  const std::set<std::string> top_keys{
      "experiment", "seed",        "out",        "model",      "dataset",     "initial",     "scheme",
      "sde_kind",   "eta",         "batch_size", "steps",      "horizon",     "inner_step",  "record_every",
      "record_stats", "moment_orders", "eta_grid", "mc_draws", "allow_mc",    "oracle",      "replicas",
      "functions",  "slope_window", "engine",    "burn_in_fraction", "thin",  "allow_nondissipative",
      "fdr_which",  "probes",      "epsilon_tol", "delta_decay", "window",    "eta_min"};
  check_keys(root, "$", top_keys, errs);

  if (auto v = get_opt<std::string>(root, "$", "experiment", errs)) {
    if (experiment_kinds().count(*v))
      cfg.experiment = *v;
    else
      errs.add("$.experiment", "unknown experiment kind `" + *v + "`");
  } else if (!root.contains("experiment")) {
    errs.add("$.experiment", "required");
  }
  if (auto v = get_opt<std::uint64_t>(root, "$", "seed", errs)) cfg.seed = *v;
  if (auto v = get_opt<std::string>(root, "$", "out", errs)) cfg.out_dir = *v;

  // model
  if (root.contains("model") && root.at("model").is_object()) {
    const Json& m = root.at("model");
    check_keys(m, "$.model", {"kind", "dim_sample", "dim_latent", "dim", "a", "c", "b", "s"}, errs);
    if (auto v = get_opt<std::string>(m, "$.model", "kind", errs)) cfg.model.kind = *v;
    else if (!m.contains("kind")) errs.add("$.model.kind", "required");
    if (auto v = get_opt<Index>(m, "$.model", "dim_sample", errs)) cfg.model.dim_sample = *v;
    if (auto v = get_opt<Index>(m, "$.model", "dim_latent", errs)) cfg.model.dim_latent = *v;
    if (auto v = get_opt<Index>(m, "$.model", "dim", errs)) cfg.model.dim = *v;
    if (auto v = get_opt<double>(m, "$.model", "a", errs)) cfg.model.a = *v;
    if (auto v = get_opt<double>(m, "$.model", "c", errs)) cfg.model.c = *v;
    if (auto v = get_opt<double>(m, "$.model", "b", errs)) cfg.model.b = *v;
    if (auto v = get_opt<double>(m, "$.model", "s", errs)) cfg.model.s = *v;
    if (cfg.model.kind == "quad-sim") {
      if (!(cfg.model.a > 0.0)) errs.add("$.model.a", "dissipativity coefficient must be positive");
      if (!(cfg.model.c > 0.0)) errs.add("$.model.c", "dissipativity coefficient must be positive");
      if (cfg.model.s < 0.0) errs.add("$.model.s", "noise scale must be >= 0");
    } else if (!cfg.model.kind.empty() && !std::set<std::string>{"lin-wgan", "tanh-wgan", "vanilla-logistic"}
                                               .count(cfg.model.kind)) {
      errs.add("$.model.kind", "unknown model kind `" + cfg.model.kind + "`");
    }
  } else {
    errs.add("$.model", root.contains("model") ? "must be an object" : "required");
  }

  // dataset
  if (root.contains("dataset")) {
    const Json& d = root.at("dataset");
    if (!d.is_object()) {
      errs.add("$.dataset", "must be an object");
    } else {
      check_keys(d, "$.dataset", {"csv", "z", "x", "box"}, errs);
      if (auto v = get_positive(d, "$.dataset", "box", errs)) cfg.dataset_box = *v;
      if (auto v = get_opt<std::string>(d, "$.dataset", "csv", errs)) {
        cfg.dataset_csv = *v;
        std::ifstream probe(*v);
        if (!probe) errs.add("$.dataset.csv", "file does not exist: " + *v);
      }
      auto read_vectors = [&](const char* key, std::vector<Vector>& out) {
        if (!d.contains(key)) return;
        const Json& arr = d.at(key);
        if (!arr.is_array() || arr.empty()) {
          errs.add(std::string("$.dataset.") + key, "must be a non-empty array");
          return;
        }
        for (const auto& item : arr) {
          if (item.is_number()) {
            out.push_back(Vector::Constant(1, item.get<double>()));
          } else if (item.is_array() && !item.empty()) {
            Vector v(static_cast<Index>(item.size()));
            bool ok = true;
            for (std::size_t i = 0; i < item.size(); ++i) {
              if (!item[i].is_number()) ok = false;
              else v[static_cast<Index>(i)] = item[i].get<double>();
            }
            if (ok) out.push_back(std::move(v));
            else errs.add(std::string("$.dataset.") + key, "entries must be numbers or numeric arrays");
          } else {
            errs.add(std::string("$.dataset.") + key, "entries must be numbers or numeric arrays");
          }
        }
      };
      read_vectors("z", cfg.dataset_z);
      read_vectors("x", cfg.dataset_x);
      if (!cfg.dataset_csv && (cfg.dataset_z.empty() != cfg.dataset_x.empty()))
        errs.add("$.dataset", "inline datasets need both z and x");
    }
  }

  // initial
  if (root.contains("initial")) {
    const Json& ini = root.at("initial");
    if (!ini.is_object()) {
      errs.add("$.initial", "must be an object");
    } else {
      check_keys(ini, "$.initial", {"theta", "omega", "gaussian_stddev", "gaussian_mean"}, errs);
      auto read_vec = [&](const char* key) -> std::optional<Vector> {
        if (!ini.contains(key)) return std::nullopt;
        const Json& arr = ini.at(key);
        if (arr.is_number()) return Vector::Constant(1, arr.get<double>());
        if (!arr.is_array() || arr.empty()) {
          errs.add(std::string("$.initial.") + key, "must be a number or non-empty numeric array");
          return std::nullopt;
        }
        Vector v(static_cast<Index>(arr.size()));
        for (std::size_t i = 0; i < arr.size(); ++i) {
          if (!arr[i].is_number()) {
            errs.add(std::string("$.initial.") + key, "must be numeric");
            return std::nullopt;
          }
          v[static_cast<Index>(i)] = arr[i].get<double>();
        }
        return v;
      };
      cfg.initial.theta = read_vec("theta");
      cfg.initial.omega = read_vec("omega");
      if (auto v = get_positive(ini, "$.initial", "gaussian_stddev", errs)) cfg.initial.gaussian_stddev = *v;
      if (auto v = get_opt<double>(ini, "$.initial", "gaussian_mean", errs)) cfg.initial.gaussian_mean = *v;
      if (!cfg.initial.gaussian_stddev && (!cfg.initial.theta || !cfg.initial.omega))
        errs.add("$.initial", "needs either theta+omega (point mass) or gaussian_stddev");
    }
  }

  // shared numerics
  if (auto v = get_opt<std::string>(root, "$", "scheme", errs)) {
    try {
      cfg.scheme = scheme_from_string(*v);
    } catch (const Error& e) {
      errs.add("$.scheme", e.what());
    }
  }
  if (auto v = get_opt<std::string>(root, "$", "sde_kind", errs)) {
    try {
      cfg.sde_kind = sde_kind_from_string(*v);
    } catch (const Error& e) {
      errs.add("$.sde_kind", e.what());
    }
  }
  if (auto v = get_opt<double>(root, "$", "eta", errs)) {
    if (*v > 0.0) cfg.eta = *v;
    else errs.add("$.eta", "constraint eta > 0 violated (got " + format_double(*v) + ")");
  }
  if (auto v = get_opt<int>(root, "$", "batch_size", errs)) {
    if (*v >= 1) cfg.batch_size = *v;
    else errs.add("$.batch_size", "must be >= 1");
  }
  if (auto v = get_opt<long>(root, "$", "steps", errs)) {
    if (*v >= 1) cfg.steps = *v;
    else errs.add("$.steps", "must be >= 1");
  }
  if (auto v = get_positive(root, "$", "horizon", errs)) cfg.horizon = *v;
  if (auto v = get_positive(root, "$", "inner_step", errs)) cfg.inner_step = *v;
  if (auto v = get_opt<long>(root, "$", "record_every", errs)) {
    if (*v >= 1) cfg.record_every = *v;
    else errs.add("$.record_every", "must be >= 1");
  }
  if (auto v = get_opt<bool>(root, "$", "record_stats", errs)) cfg.record_stats = *v;
  if (auto v = get_opt<std::vector<int>>(root, "$", "moment_orders", errs)) cfg.moment_orders = *v;

  if (root.contains("eta_grid")) {
    if (auto v = get_opt<std::vector<double>>(root, "$", "eta_grid", errs)) {
      cfg.eta_grid = *v;
      bool ok = cfg.eta_grid.size() >= 2;
      for (std::size_t i = 0; i < cfg.eta_grid.size() && ok; ++i) {
        ok = cfg.eta_grid[i] > 0.0 && (i == 0 || cfg.eta_grid[i] < cfg.eta_grid[i - 1]);
      }
      if (!ok) errs.add("$.eta_grid", "must be a strictly decreasing list of >= 2 positive values");
    }
  }
  if (auto v = get_opt<long>(root, "$", "mc_draws", errs)) {
    if (*v >= 1) cfg.mc_draws = *v;
    else errs.add("$.mc_draws", "must be >= 1");
  }
  if (auto v = get_opt<bool>(root, "$", "allow_mc", errs)) cfg.allow_mc = *v;
  if (auto v = get_opt<bool>(root, "$", "oracle", errs)) cfg.oracle = *v;
  if (auto v = get_opt<long>(root, "$", "replicas", errs)) {
    if (*v >= 1) cfg.replicas = *v;
    else errs.add("$.replicas", "must be >= 1");
  }
  if (auto v = get_opt<std::vector<std::string>>(root, "$", "functions", errs)) cfg.functions = *v;
  if (root.contains("slope_window")) {
    if (auto v = get_opt<std::vector<double>>(root, "$", "slope_window", errs)) {
      if (v->size() == 2 && (*v)[0] < (*v)[1]) cfg.slope_window = {{(*v)[0], (*v)[1]}};
      else errs.add("$.slope_window", "must be [lo, hi] with lo < hi");
    }
  }

  if (auto v = get_opt<std::string>(root, "$", "engine", errs)) {
    if (*v == "sde" || *v == "sga") cfg.engine = *v;
    else errs.add("$.engine", "must be `sde` or `sga`");
  }
  if (auto v = get_opt<double>(root, "$", "burn_in_fraction", errs)) {
    if (*v >= 0.0 && *v < 1.0) cfg.burn_in_fraction = *v;
    else errs.add("$.burn_in_fraction", "must lie in [0, 1)");
  }
  if (auto v = get_opt<long>(root, "$", "thin", errs)) {
    if (*v >= 0) cfg.thin = *v;
    else errs.add("$.thin", "must be >= 0 (0 = auto)");
  }
  if (auto v = get_opt<bool>(root, "$", "allow_nondissipative", errs)) cfg.allow_nondissipative = *v;
  if (auto v = get_opt<std::vector<std::string>>(root, "$", "fdr_which", errs)) {
    cfg.fdr_which = *v;
    for (const auto& w : cfg.fdr_which)
      if (w != "FDR1" && w != "FDR2") errs.add("$.fdr_which", "entries must be FDR1 or FDR2");
  }

  if (root.contains("probes")) {
    const Json& p = root.at("probes");
    if (!p.is_object()) {
      errs.add("$.probes", "must be an object");
    } else {
      check_keys(p, "$.probes",
                 {"m0", "r_max", "shells", "directions_per_shell", "lyap_m", "lyap_eps", "lyap_delta"}, errs);
      if (auto v = get_positive(p, "$.probes", "m0", errs)) cfg.probe.m0 = *v;
      if (auto v = get_positive(p, "$.probes", "r_max", errs)) cfg.probe.r_max = *v;
      if (auto v = get_opt<int>(p, "$.probes", "shells", errs)) cfg.probe.shells = *v;
      if (auto v = get_opt<int>(p, "$.probes", "directions_per_shell", errs))
        cfg.probe.directions_per_shell = *v;
      if (auto v = get_opt<double>(p, "$.probes", "lyap_m", errs)) cfg.probe.lyap_m = *v;
      if (auto v = get_opt<double>(p, "$.probes", "lyap_eps", errs)) cfg.probe.lyap_eps = *v;
      if (auto v = get_opt<double>(p, "$.probes", "lyap_delta", errs)) cfg.probe.lyap_delta = *v;
      if (cfg.probe.r_max <= cfg.probe.m0) errs.add("$.probes.r_max", "must exceed m0");
    }
  }

  if (auto v = get_opt<double>(root, "$", "epsilon_tol", errs)) {
    if (*v >= 0.0) cfg.epsilon_tol = *v;
    else errs.add("$.epsilon_tol", "must be >= 0");
  }
  if (auto v = get_opt<double>(root, "$", "delta_decay", errs)) {
    if (*v >= 0.0 && *v < 1.0) cfg.delta_decay = *v;
    else errs.add("$.delta_decay", "must lie in [0, 1)");
  }
  if (auto v = get_opt<long>(root, "$", "window", errs)) {
    if (*v >= 1) cfg.window = *v;
    else errs.add("$.window", "must be >= 1");
  }
  if (auto v = get_positive(root, "$", "eta_min", errs)) cfg.eta_min = *v;

  // per-kind requirements
  if (cfg.experiment == "one-step-moments" || cfg.experiment == "weak-error") {
    if (!root.contains("eta_grid")) errs.add("$.eta_grid", "required for " + cfg.experiment);
  }
  // learning rates live in (0, 1) throughout
  if (root.contains("eta") && cfg.eta >= 1.0) errs.add("$.eta", "constraint eta < 1 violated");
  for (double e : cfg.eta_grid)
    if (e >= 1.0) {
      errs.add("$.eta_grid", "entries must be < 1");
      break;
    }
  if (cfg.experiment == "simulate-sga" && !root.contains("steps") && root.contains("horizon")) {
    cfg.steps = static_cast<long>(std::floor(cfg.horizon / cfg.eta + 1e-9));
    if (cfg.steps < 1) errs.add("$.horizon", "horizon shorter than one step at this eta");
  }
  if (cfg.experiment == "schedule-demo" && cfg.batch_size < 2)
    errs.add("$.batch_size", "schedule-demo needs batch_size >= 2 for the covariance estimator");
  const bool needs_initial = cfg.experiment == "simulate-sga" || cfg.experiment == "simulate-sde" ||
                             cfg.experiment == "one-step-moments" || cfg.experiment == "weak-error" ||
                             cfg.experiment == "stationary-fdr" || cfg.experiment == "schedule-demo";
  if (needs_initial && !root.contains("initial")) errs.add("$.initial", "required for " + cfg.experiment);

  errs.raise_if_any();

  // echo with defaults filled (everything the run depends on; `out` excluded)
  Json echo = root;
  echo.erase("out");
  echo["seed"] = cfg.seed;
  cfg.echo = echo;
  return cfg;
}

}  // namespace gansde
