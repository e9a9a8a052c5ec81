#ifndef MCRNET_OBJECTIVE_HPP
#define MCRNET_OBJECTIVE_HPP

#include <map>
#include <utility>
#include <vector>

#include "mcrnet/linalg.hpp"
#include "mcrnet/matrix.hpp"

namespace mcrnet {

// Column labels for one feature matrix. Class ids are global (0..K-1); a
// node that lacks a class simply has count 0 there.
struct ClassPartition {
  std::vector<int> labels;
  int num_classes = 0;
  std::vector<int> class_counts;

  static ClassPartition from_labels(std::vector<int> labels, int num_classes);

  int count(int k) const { return class_counts[k]; }
  std::vector<int> columns_of(int k) const;
  std::vector<int> present_classes() const;  // classes with count > 0
  int total() const { return static_cast<int>(labels.size()); }
};

struct RateParams {
  double eps_sq = 0.5;  // squared precision parameter
  int total_m = 0;      // global sample count
  int dim = 0;          // feature dimension d

  // eps^4 < min_k (m_k/m) * (d/d_k)^2
  bool precision_ok(const std::vector<int>& global_class_counts, const std::vector<int>& class_dims) const;
};

double coding_rate(const Matrix& z, const RateParams& p, int m_eff);
Matrix coding_rate_grad(const Matrix& z, const RateParams& p, int m_eff);

double class_coding_rate(const Matrix& z, const ClassPartition& part, const RateParams& p);
Matrix class_coding_rate_grad(const Matrix& z, const ClassPartition& part, const RateParams& p);

double mcr2_delta(const Matrix& z, const ClassPartition& part, const RateParams& p);

struct LocalRates {
  double rate = 0.0;        // (m_i/2m) logdet(I + d/(m_i eps^2) Z_i Z_i^T)
  double class_rate = 0.0;  // sum_k (m_ik/2m) logdet(I + d/(m_ik eps^2) Z_ik Z_ik^T)
};
LocalRates local_rates(const Matrix& z_i, const ClassPartition& part_i, const RateParams& p);

// Stale statistics and multipliers entering one node's augmented-Lagrangian
// loss. pair_terms enumerates the (peer, class) combinations the dual and
// penalty sums run over; every listed pair must have a dual and a peer stat.
struct LocalLossContext {
  std::vector<std::pair<int, int>> pair_terms;
  std::map<std::pair<int, int>, SymMatrix> duals;      // (j,k) -> Y_ijk
  std::map<int, SymMatrix> self_prev;                  // k -> V_ik at t-1
  std::map<std::pair<int, int>, SymMatrix> peer_prev;  // (j,k) -> V_jk at t-1
  double gamma = 0.0;
};

struct LossBreakdown {
  double class_rate = 0.0;
  double rate = 0.0;  // enters the total with a minus sign
  double dual = 0.0;
  double penalty = 0.0;
  double total() const { return class_rate - rate + dual + penalty; }
};

LossBreakdown iid_local_loss(const Matrix& z_i, const ClassPartition& part_i, const LocalLossContext& ctx,
                             const RateParams& p);
Matrix iid_local_loss_grad(const Matrix& z_i, const ClassPartition& part_i, const LocalLossContext& ctx,
                           const RateParams& p);

// --- cluster (non-i.i.d.) loss ---

// Which index the 1/S_i factor in the per-class compression weight binds to.
// per_node_inside keeps 1/S_j inside the Gram sum only; outer_s_i also
// divides the class weight by the updating node's S_i.
enum class CompressionWeight { per_node_inside, outer_s_i };

struct ClusterPeer {
  int node = -1;       // virtual node id
  double inv_s = 1.0;  // 1/S_j
  // (1/S_j)(Z_j Z_j^T - sum over shared classes of Z_jk Z_jk^T), at the
  // freshness the BCD schedule dictates
  SymMatrix expansion_base;
  std::map<int, int> class_counts;  // full m_jk for k in K_j
  std::vector<int> shared_classes;  // classes held by both this peer and the updating node
  bool fresh = false;
};

struct ClusterLossInputs {
  double cluster_m = 0.0;                 // m^s with full-data counts
  std::map<int, double> cluster_class_m;  // m_k^s for the node's classes
  double inv_s_self = 1.0;                // 1/S_i
  int self_full_m = 0;                    // full m_i
  std::map<int, int> self_full_class_m;   // full m_ik
  std::vector<ClusterPeer> peers;
  LocalLossContext ctx;  // label-wise dual/penalty terms over tilde-V_k \ {i}
  bool substitute_shared = true;
  CompressionWeight weight_reading = CompressionWeight::per_node_inside;
};

LossBreakdown cluster_loss(const Matrix& z_i, const ClassPartition& part_i, const ClusterLossInputs& in,
                           const RateParams& p);
Matrix cluster_loss_grad(const Matrix& z_i, const ClassPartition& part_i, const ClusterLossInputs& in,
                         const RateParams& p);

}  // namespace mcrnet

#endif
