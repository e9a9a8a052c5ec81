#ifndef MCRNET_CONFIG_HPP
#define MCRNET_CONFIG_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mcrnet/encoder.hpp"
#include "mcrnet/objective.hpp"
#include "mcrnet/trainer_iid.hpp"

namespace mcrnet {

enum class Algorithm { iid, noniid, dsgd };

struct DataConfig {
  enum class Source { synthetic, idx } source = Source::synthetic;
  int classes = 3;
  std::vector<int> class_dims;  // synthetic
  int per_class = 40;
  int test_per_class = 10;
  int ambient_dim = 16;
  double noise = 0.05;
  std::string idx_images, idx_labels, idx_test_images, idx_test_labels;
  int limit = 2000;
  int test_limit = 500;
};

struct PartitionConfig {
  enum class Mode { iid, by_labels } mode = Mode::iid;
  int nodes = 4;
  std::vector<std::vector<int>> node_labels;
};

struct EvalConfig {
  double energy_tau = 0.95;
  int eval_samples = 240;
  double tol_orth = 0.2;
  double tol_spec = 0.05;
};

struct ExperimentConfig {
  Algorithm algorithm = Algorithm::iid;
  uint64_t master_seed = 0;
  std::string plan_path;  // non-i.i.d. only
  DataConfig data;
  PartitionConfig part;
  double edge_prob = 0.5;
  std::vector<int> hidden = {32};
  std::map<int, std::vector<int>> hidden_overrides;  // per node
  Activation activation = Activation::elu;
  TrainConfig train;

  EvalConfig eval;

  // canonical "section.key=value" lines of the effective config, sorted
  std::string canonical() const;
  uint64_t hash() const;
};

ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text);

}  // namespace mcrnet

#endif
