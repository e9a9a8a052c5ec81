#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mcrnet/config.hpp"
#include "mcrnet/errors.hpp"
#include "mcrnet/experiment.hpp"

using namespace mcrnet;

namespace {

const char* kMinimalConfig = R"(
[experiment]
algorithm = iid
master_seed = 7

[data]
source = synthetic
classes = 3
per_class = 12
test_per_class = 6
ambient_dim = 16

[partition]
mode = iid
nodes = 2

[train]
rounds = 3
feature_dim = 16
batch = 64
)";

std::string tiny_run_config(int rounds) {
  std::ostringstream ss;
  ss << "[experiment]\nalgorithm = iid\nmaster_seed = 11\n"
     << "[data]\nsource = synthetic\nclasses = 2\nclass_dims = 2,2\nper_class = 10\ntest_per_class = 6\n"
     << "ambient_dim = 8\nnoise = 0.05\n"
     << "[partition]\nmode = iid\nnodes = 2\n"
     << "[topology]\nedge_prob = 1.0\n"
     << "[encoder]\nhidden = 12\n"
     << "[train]\nrounds = " << rounds << "\nfeature_dim = 8\nbatch = 64\nlocal_epochs = 2\nlr = 0.05\n"
     << "[eval]\neval_samples = 12\n";
  return ss.str();
}

std::string temp_dir(const std::string& tag) {
  const auto path = std::filesystem::temp_directory_path() / ("mcrnet_test_" + tag);
  std::filesystem::remove_all(path);
  std::filesystem::create_directories(path);
  return path.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_SUITE("cli_runner") {

TEST_CASE("minimal config fills the documented defaults") {
  const ExperimentConfig cfg = parse_config_text(kMinimalConfig);
  CHECK(cfg.train.gamma == doctest::Approx(1.0));
  CHECK(cfg.train.rho == doctest::Approx(0.1));
  CHECK(cfg.train.eps_sq == doctest::Approx(0.5));
  CHECK(cfg.eval.energy_tau == doctest::Approx(0.95));
  CHECK(cfg.train.weight_decay == doctest::Approx(1e-5));
  CHECK(cfg.train.local_epochs == 5);
}

TEST_CASE("unknown keys are rejected by name") {
  const std::string bad = std::string(kMinimalConfig) + "\n[train]\nrho_step = 0.2\n";
  try {
    parse_config_text(bad);
    FAIL("expected ValidationError");
  } catch (const ParseError&) {
    // duplicate section header is fine; the unknown key must be the complaint
    FAIL("expected ValidationError, got ParseError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("rho_step") != std::string::npos);
  }
}

TEST_CASE("noniid without a plan path is rejected") {
  std::string good =
      "[experiment]\nalgorithm = noniid\nmaster_seed = 1\n"
      "[data]\nsource = synthetic\nclasses = 3\nper_class = 9\nambient_dim = 12\n"
      "[partition]\nmode = by-labels\nnodes = 2\nlabels_node0 = 0,1\nlabels_node1 = 1,2\n"
      "[train]\nrounds = 2\nfeature_dim = 8\n";
  CHECK_THROWS_AS(parse_config_text(good), ValidationError);
  const ExperimentConfig ok = parse_config_text(good + "[experiment]\nplan = plan.json\n");
  CHECK(ok.plan_path == "plan.json");
}

TEST_CASE("parse errors carry line numbers") {
  try {
    parse_config_text("[experiment\nalgorithm = iid\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 1") != std::string::npos);
  }
}

TEST_CASE("config hash is stable under reordering and sensitive to values") {
  const ExperimentConfig a = parse_config_text(kMinimalConfig);
  // same fields, different file order
  const char* reordered = R"(
[train]
batch = 64
feature_dim = 16
rounds = 3

[partition]
nodes = 2
mode = iid

[data]
ambient_dim = 16
per_class = 12
test_per_class = 6
classes = 3
source = synthetic

[experiment]
master_seed = 7
algorithm = iid
)";
  const ExperimentConfig b = parse_config_text(reordered);
  CHECK(a.hash() == b.hash());

  ExperimentConfig c = a;
  c.train.gamma = 2.0;
  CHECK(a.hash() != c.hash());
  ExperimentConfig d = a;
  d.master_seed = 8;
  CHECK(a.hash() != d.hash());
}

TEST_CASE("every shipped preset parses") {
  for (const char* name : {"synthetic-desk-iid.ini", "synthetic-desk-noniid.ini", "mnist-iid-paper.ini",
                           "mnist-noniid-4.ini", "noniid-5-replicated.ini"}) {
    for (const char* prefix : {"configs/", "../configs/", "../../configs/"}) {
      const std::string path = std::string(prefix) + name;
      if (!std::filesystem::exists(path)) continue;
      const ExperimentConfig cfg = load_config(path);
      CHECK(cfg.train.eps_sq == doctest::Approx(0.5));
      break;
    }
  }
  // the replicated preset must run its assumption check in warn mode
  for (const char* prefix : {"configs/", "../configs/", "../../configs/"}) {
    const std::string path = std::string(prefix) + "noniid-5-replicated.ini";
    if (!std::filesystem::exists(path)) continue;
    CHECK_FALSE(load_config(path).train.assumption_strict);
    break;
  }
}

TEST_CASE("experiment reruns reproduce the numeric outputs byte for byte") {
  const ExperimentConfig cfg = parse_config_text(tiny_run_config(3));
  const std::string dir_a = temp_dir("rerun_a");
  const std::string dir_b = temp_dir("rerun_b");
  run_experiment(cfg, dir_a, true);
  run_experiment(cfg, dir_b, true);
  CHECK(slurp(dir_a + "/loss.csv") == slurp(dir_b + "/loss.csv"));
  CHECK(slurp(dir_a + "/consensus.csv") == slurp(dir_b + "/consensus.csv"));
  CHECK(slurp(dir_a + "/comm_bytes.csv") == slurp(dir_b + "/comm_bytes.csv"));
  CHECK(slurp(dir_a + "/cosine.csv") == slurp(dir_b + "/cosine.csv"));
  std::filesystem::remove_all(dir_a);
  std::filesystem::remove_all(dir_b);
}

TEST_CASE("experiment emits the documented artifact set") {
  const ExperimentConfig cfg = parse_config_text(tiny_run_config(2));
  const std::string dir = temp_dir("artifacts");
  const ExperimentResult result = run_experiment(cfg, dir, true);

  for (const char* name : {"loss.csv", "consensus.csv", "comm_bytes.csv", "geometry.json", "cosine.csv",
                           "cosine.svg", "spectra.csv", "manifest.json", "train.mc2d", "test.mc2d"}) {
    CHECK(std::filesystem::exists(dir + "/" + name));
  }
  CHECK(std::filesystem::exists(dir + "/checkpoints/node_0.mc2e"));
  CHECK(std::filesystem::exists(dir + "/checkpoints/node_1.mc2e"));

  // svg rect count equals the squared evaluation subset size
  const std::string svg = slurp(dir + "/cosine.svg");
  size_t rects = 0;
  for (size_t at = svg.find("<rect"); at != std::string::npos; at = svg.find("<rect", at + 1)) ++rects;
  CHECK(rects == 12u * 12u);

  // cost log passes through the mailbox counters exactly
  uint64_t csv_total = 0;
  std::stringstream ss(slurp(dir + "/comm_bytes.csv"));
  std::string line;
  std::getline(ss, line);  // header
  while (std::getline(ss, line)) {
    csv_total += std::stoull(line.substr(line.rfind(',') + 1));
  }
  CHECK(csv_total == result.state.total_bytes);
  CHECK(check_run(result).empty());

  std::filesystem::remove_all(dir);
}

TEST_CASE("aborted stage leaves a manifest naming the failure point") {
  std::string cfg_text =
      "[experiment]\nalgorithm = iid\nmaster_seed = 3\n"
      "[data]\nsource = idx\nidx_images = /nonexistent/img\nidx_labels = /nonexistent/lab\n"
      "[partition]\nmode = iid\nnodes = 2\n"
      "[train]\nrounds = 2\nfeature_dim = 8\n";
  const ExperimentConfig cfg = parse_config_text(cfg_text);
  const std::string dir = temp_dir("abort");
  CHECK_THROWS(run_experiment(cfg, dir, true));
  const std::string manifest = slurp(dir + "/manifest.json");
  CHECK(manifest.find("\"failed_stage\": \"data\"") != std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST_CASE("noniid experiment writes plan and trace artifacts") {
  std::string cfg_text =
      "[experiment]\nalgorithm = noniid\nmaster_seed = 5\nplan = plan.json\n"
      "[data]\nsource = synthetic\nclasses = 4\nclass_dims = 2,2,2,2\nper_class = 12\ntest_per_class = 4\n"
      "ambient_dim = 12\nnoise = 0.05\n"
      "[partition]\nmode = by-labels\nnodes = 4\n"
      "labels_node0 = 0,1\nlabels_node1 = 2,3\nlabels_node2 = 0,2\nlabels_node3 = 1,3\n"
      "[encoder]\nhidden = 10\n"
      "[train]\nrounds = 2\nfeature_dim = 8\nbatch = 64\nlocal_epochs = 2\nlr = 0.05\n"
      "[eval]\neval_samples = 8\n";
  const ExperimentConfig cfg = parse_config_text(cfg_text);
  const std::string dir = temp_dir("noniid");
  const ExperimentResult result = run_experiment(cfg, dir, true);
  CHECK(std::filesystem::exists(dir + "/plan.json"));
  CHECK(std::filesystem::exists(dir + "/cluster_trace.csv"));
  CHECK(check_run(result).empty());
  std::filesystem::remove_all(dir);
}

}  // TEST_SUITE
