#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "gansde/runner.hpp"

using namespace gansde;
namespace fs = std::filesystem;

namespace {

Json minimal_sga_config() {
  return Json{{"experiment", "simulate-sga"},
              {"model", Json{{"kind", "quad-sim"}, {"a", 1.0}, {"c", 1.0}, {"b", 0.0}, {"s", 1.0}}},
              {"scheme", "SML"},
              {"eta", 0.1},
              {"batch_size", 2},
              {"steps", 50},
              {"seed", 5},
              {"initial", Json{{"theta", {1.0}}, {"omega", {1.0}}}}};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("minimal config parses with defaults filled") {
  const ExperimentConfig cfg = parse_config_json(minimal_sga_config());
  CHECK(cfg.experiment == "simulate-sga");
  CHECK(cfg.record_every == 1);
  CHECK(cfg.model.kind == "quad-sim");
  CHECK(cfg.seed == 5);
}

TEST_CASE("constraint violations name the key and the rule") {
  Json bad = minimal_sga_config();
  bad["eta"] = -0.1;
  try {
    parse_config_json(bad);
    FAIL("expected parse to throw");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("$.eta") != std::string::npos);
    CHECK(msg.find("eta > 0") != std::string::npos);
  }
}

TEST_CASE("non-decreasing eta grids are rejected") {
  Json bad{{"experiment", "weak-error"},
           {"model", Json{{"kind", "lin-wgan"}}},
           {"eta_grid", {0.1, 0.2}},
           {"initial", Json{{"theta", {1.0}}, {"omega", {1.0}}}}};
  CHECK_THROWS_WITH(parse_config_json(bad), Catch::Matchers::ContainsSubstring("strictly decreasing"));
}

TEST_CASE("unknown keys are rejected and all violations are reported together") {
  Json bad = minimal_sga_config();
  bad["tpyo"] = 1;
  bad["eta"] = -1.0;
  bad["batch_size"] = 0;
  try {
    parse_config_json(bad);
    FAIL("expected parse to throw");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("$.tpyo") != std::string::npos);
    CHECK(msg.find("$.eta") != std::string::npos);
    CHECK(msg.find("$.batch_size") != std::string::npos);
  }
}

TEST_CASE("dataset csv round-trips through the documented two-section format") {
  TempDir tmp("gansde-csv-test");
  const fs::path csv = tmp.path / "data.csv";
  write_text(csv, "kind,value\nz,1.0\nz,3.0\nx,2.0\nx,0.0\n");
  const Dataset ds = load_dataset_csv(csv.string());
  REQUIRE(ds.num_latents() == 2);
  REQUIRE(ds.num_reals() == 2);
  CHECK(ds.latents[1][0] == 3.0);
  CHECK(ds.reals[1][0] == 0.0);

  write_text(csv, "kind,v1,v2\nz,1.0,2.0\nx,0.5,0.25\n");
  const Dataset vec = load_dataset_csv(csv.string());
  CHECK(vec.latents[0].size() == 2);

  write_text(csv, "nope,value\nz,1\n");
  CHECK_THROWS_WITH(load_dataset_csv(csv.string()), Catch::Matchers::ContainsSubstring("header"));
  write_text(csv, "kind,value\nq,1\n");
  CHECK_THROWS_WITH(load_dataset_csv(csv.string()), Catch::Matchers::ContainsSubstring("unknown kind"));
}

TEST_CASE("run_experiment writes manifest, results and summary") {
  TempDir tmp("gansde-runner-test");
  const ExperimentConfig cfg = parse_config_json(minimal_sga_config());
  const int status = run_experiment(cfg, (tmp.path / "out").string());
  CHECK(status == 0);
  CHECK(fs::exists(tmp.path / "out" / "manifest.json"));
  CHECK(fs::exists(tmp.path / "out" / "trajectory.csv"));
  CHECK(fs::exists(tmp.path / "out" / "summary.txt"));
  const std::string traj = slurp(tmp.path / "out" / "trajectory.csv");
  CHECK(traj.rfind("step,theta_0,omega_0,phi,grad_norm_theta,grad_norm_omega\n", 0) == 0);
}

TEST_CASE("identical config and seed reproduce byte-identical outputs") {
  TempDir tmp("gansde-repro-test");
  const ExperimentConfig cfg = parse_config_json(minimal_sga_config());
  run_experiment(cfg, (tmp.path / "a").string());
  run_experiment(cfg, (tmp.path / "b").string());
  for (const char* name : {"manifest.json", "trajectory.csv", "summary.txt"}) {
    INFO(name);
    CHECK(slurp(tmp.path / "a" / name) == slurp(tmp.path / "b" / name));
  }
}

TEST_CASE("the manifest echo can be fed back as a config") {
  TempDir tmp("gansde-manifest-test");
  const ExperimentConfig cfg = parse_config_json(minimal_sga_config());
  run_experiment(cfg, (tmp.path / "a").string());
  const ExperimentConfig again = parse_config((tmp.path / "a" / "manifest.json").string());
  run_experiment(again, (tmp.path / "b").string());
  CHECK(slurp(tmp.path / "a" / "trajectory.csv") == slurp(tmp.path / "b" / "trajectory.csv"));
  CHECK(slurp(tmp.path / "a" / "manifest.json") == slurp(tmp.path / "b" / "manifest.json"));
}

TEST_CASE("a horizon stands in for an explicit step count") {
  Json j = minimal_sga_config();
  j.erase("steps");
  j["horizon"] = 5.0;  // eta = 0.1 -> 50 steps
  const ExperimentConfig cfg = parse_config_json(j);
  CHECK(cfg.steps == 50);
}

TEST_CASE("learning rates of one or more are rejected") {
  Json j = minimal_sga_config();
  j["eta"] = 1.0;
  CHECK_THROWS_WITH(parse_config_json(j), Catch::Matchers::ContainsSubstring("eta < 1"));
}

TEST_CASE("gaussian initialization is deterministic in the seed") {
  Json cfg_json = minimal_sga_config();
  cfg_json["initial"] = Json{{"gaussian_stddev", 0.5}};
  const ExperimentConfig cfg = parse_config_json(cfg_json);
  const JointParams a = cfg.initial.realize(1, 1, 5);
  const JointParams b = cfg.initial.realize(1, 1, 5);
  const JointParams c = cfg.initial.realize(1, 1, 6);
  CHECK(a.theta[0] == b.theta[0]);
  CHECK(a.theta[0] != c.theta[0]);
}

TEST_CASE("weak-error experiment emits the order-study schema and verdict") {
  TempDir tmp("gansde-weak-error-test");
  Json j{{"experiment", "weak-error"},
         {"model", Json{{"kind", "lin-wgan"}}},
         {"dataset", Json{{"z", {2.0, 2.0}}, {"x", {2.0, 0.0}}}},
         {"scheme", "ALT"},
         {"sde_kind", "ALT-SDE"},
         {"horizon", 1.0},
         {"eta_grid", {0.2, 0.1, 0.05, 0.025}},
         {"oracle", true},
         {"slope_window", {1.7, 2.3}},
         {"initial", Json{{"theta", {1.0}}, {"omega", {1.0}}}}};
  const ExperimentConfig cfg = parse_config_json(j);
  const int status = run_experiment(cfg, (tmp.path / "out").string());
  CHECK(status == 0);
  const std::string csv = slurp(tmp.path / "out" / "order_study.csv");
  CHECK(csv.rfind("eta,test_function,error,se\n", 0) == 0);
  const Json doc = Json::parse(slurp(tmp.path / "out" / "order_study.json"));
  CHECK(doc.at("verdict") == "PASS");
  const double slope = doc.at("slope").get<double>();
  CHECK(slope > 1.7);
  CHECK(slope < 2.3);
}

TEST_CASE("datasets can declare a bounding box that entries must respect") {
  Json j = minimal_sga_config();
  j["model"] = Json{{"kind", "tanh-wgan"}};
  j["dataset"] = Json{{"z", {0.5, -2.0}}, {"x", {1.0}}, {"box", 1.5}};
  const ExperimentConfig cfg = parse_config_json(j);
  CHECK_THROWS_WITH(cfg.dataset(), Catch::Matchers::ContainsSubstring("outside declared box"));
}

TEST_CASE("stationary-fdr experiment reports residual verdicts") {
  TempDir tmp("gansde-fdr-runner-test");
  Json j{{"experiment", "stationary-fdr"},
         {"model", Json{{"kind", "quad-sim"}, {"s", 1.0}}},
         {"engine", "sde"},
         {"sde_kind", "SML-SDE"},
         {"eta", 0.1},
         {"batch_size", 4},
         {"horizon", 60.0},
         {"replicas", 4},
         {"seed", 5},
         {"initial", Json{{"theta", {0.5}}, {"omega", {-0.5}}}}};
  const ExperimentConfig cfg = parse_config_json(j);
  CHECK(run_experiment(cfg, (tmp.path / "out").string()) == 0);
  const Json doc = Json::parse(slurp(tmp.path / "out" / "fdr.json"));
  CHECK(doc.at("fdr1").at("verdict") == "PASS");
  CHECK(doc.at("fdr2").at("verdict") == "PASS");
  CHECK(doc.at("fdr2").contains("generator_mean"));
}

TEST_CASE("condition-check experiment reports the probe verdicts") {
  TempDir tmp("gansde-condition-test");
  Json j{{"experiment", "condition-check"},
         {"model", Json{{"kind", "quad-sim"}, {"s", 1.0}}},
         {"eta", 0.1},
         {"batch_size", 4},
         {"probes", Json{{"shells", 8}, {"directions_per_shell", 50}}}};
  const ExperimentConfig cfg = parse_config_json(j);
  CHECK(run_experiment(cfg, (tmp.path / "out").string()) == 0);
  const Json doc = Json::parse(slurp(tmp.path / "out" / "conditions.json"));
  CHECK(doc.at("dissipative").get<bool>());
  CHECK(doc.at("lyapunov").at("ok").get<bool>());
}
