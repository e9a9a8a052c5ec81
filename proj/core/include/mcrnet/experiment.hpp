#ifndef MCRNET_EXPERIMENT_HPP
#define MCRNET_EXPERIMENT_HPP

#include <string>
#include <vector>

#include "mcrnet/config.hpp"
#include "mcrnet/evaluation.hpp"
#include "mcrnet/trainer_iid.hpp"

namespace mcrnet {

struct StageRecord {
  std::string name;
  double millis = 0.0;
};

struct RunManifest {
  std::string config_hash;
  std::string code_version;
  std::string started;
  std::string finished;
  std::vector<StageRecord> stages;
  std::vector<std::string> files;
  std::string failed_stage;  // empty on success
  std::string error;
  // recorded for --check
  uint64_t logged_bytes = 0;
  uint64_t expected_bytes = 0;
  double max_dual_asymmetry = 0.0;
  double max_unit_norm_err = 0.0;
  std::vector<std::string> notes;
};

struct ExperimentResult {
  RunManifest manifest;
  TrainedState state;
  GeometryReport geometry;
  Matrix figure_cosine;  // label-sorted cosine matrix of the learned representations
};

// data -> partition -> enforce -> (plan) -> train -> eval -> reports,
// everything under out_dir; numeric CSVs are byte-reproducible per config
ExperimentResult run_experiment(const ExperimentConfig& config, const std::string& out_dir, bool quiet = true);

// post-run invariant audit; returns human-readable failures (empty = clean)
std::vector<std::string> check_run(const ExperimentResult& result);

void write_manifest(const std::string& path, const RunManifest& manifest);

// 17-significant-digit CSV cell formatting
std::string csv_real(double v);

}  // namespace mcrnet

#endif
