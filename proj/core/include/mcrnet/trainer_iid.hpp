#ifndef MCRNET_TRAINER_IID_HPP
#define MCRNET_TRAINER_IID_HPP

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mcrnet/data.hpp"
#include "mcrnet/encoder.hpp"
#include "mcrnet/network.hpp"
#include "mcrnet/objective.hpp"

namespace mcrnet {

struct DualVar {
  int owner = -1;
  int peer = -1;
  int class_id = -1;
  SymMatrix matrix;  // Y_ijk, antisymmetric in (owner, peer)
};

// Y <- Y + rho (V_own - V_peer)
DualVar dual_update(const DualVar& prev, const GramStat& v_own, const GramStat& v_peer, double rho);

struct TrainConfig {
  double rho = 0.1;
  double gamma = 1.0;
  double lr = 0.1;
  double weight_decay = 1e-5;
  int rounds = 100;      // T
  int local_epochs = 5;  // inner steps T' = local_epochs * ceil(m_i / batch)
  int batch = 1000;
  double eps_sq = 0.5;
  int feature_dim = 16;
  uint64_t seed = 0;
  bool check_invariants = true;
  bool shared_encoder_init = false;  // symmetry experiments: same init on every node
  bool early_stop = false;
  double early_stop_tol = 1e-5;
  int early_stop_window = 10;
  int grad_norm_every = 10;
  // non-i.i.d. extras
  bool substitute_shared = true;
  CompressionWeight weight_reading = CompressionWeight::per_node_inside;
  bool assumption_strict = true;
  bool bcd_descending = false;
};

struct EncoderSpec {
  std::vector<int> hidden;
  Activation activation = Activation::elu;
};

struct TrainedState {
  std::vector<EncoderParams> encoders;               // per (virtual) node
  std::vector<std::map<int, GramStat>> final_stats;  // per node: class -> stat
  std::vector<LossBreakdown> initial_loss;           // full-batch loss before round 1
  std::vector<std::vector<LossBreakdown>> trajectory;  // [node][round-1], length rounds_run
  std::vector<double> consensus;                       // [0..rounds_run]
  std::vector<std::pair<int, double>> grad_norm_sq;    // sampled (round, estimate)
  std::vector<std::string> cost_rows;                  // "round,node,bytes"
  uint64_t total_bytes = 0;
  long long stat_posts = 0;
  long long node_gram_posts = 0;
  int rounds_run = 0;
  // always-on audits
  double max_dual_asymmetry = 0.0;
  double max_unit_norm_err = 0.0;
  std::vector<std::string> cluster_trace;  // non-i.i.d. only
  std::vector<std::string> notes;
};

// One node's inner optimization: T' stratified mini-batch steps against a
// fixed dual/stat context.
struct LocalRoundResult {
  LossBreakdown last_batch_loss;
  int steps_taken = 0;
};
LocalRoundResult local_round(EncoderParams& params, AdamState& adam, const Dataset& data,
                             const LocalLossContext& ctx, const RateParams& rate, int inner_steps, int batch,
                             uint64_t step_seed);

TrainedState run_iid(const std::vector<Dataset>& parts, const Topology& topo,
                     const std::vector<EncoderSpec>& encoder_specs, const TrainConfig& cfg);

// D-SGD cross-entropy baseline for the collapse contrast: local SGD plus
// parameter averaging among architecture-identical neighbors.
TrainedState run_dsgd_baseline(const std::vector<Dataset>& parts, const Topology& topo,
                               const std::vector<EncoderSpec>& encoder_specs, const TrainConfig& cfg);

// penultimate-layer embeddings of the classifier trained by run_dsgd_baseline
Matrix classifier_embed(const EncoderParams& params, const Matrix& x);
Matrix classifier_logits(const EncoderParams& params, const Matrix& x);

// stratified batch column indices: quotas by largest remainder, every class
// with samples gets at least one slot when the batch allows it
std::vector<int> stratified_batch(const ClassPartition& part, int batch, uint64_t seed);

// per-class Gram stats of a full local forward pass
std::map<int, GramStat> node_class_stats(const Matrix& z, const ClassPartition& part, int node, int round);

}  // namespace mcrnet

#endif
