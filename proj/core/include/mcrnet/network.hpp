#ifndef MCRNET_NETWORK_HPP
#define MCRNET_NETWORK_HPP

#include <cstdint>
#include <map>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "mcrnet/matrix.hpp"

namespace mcrnet {

struct Topology {
  int n_nodes = 0;
  std::vector<uint8_t> adjacency;           // row-major n x n, {0,1}, zero diagonal
  std::vector<std::vector<int>> neighbors;  // sorted neighbor lists

  bool edge(int i, int j) const { return adjacency[static_cast<size_t>(i) * n_nodes + j] != 0; }
  bool connected() const;
};

// Erdos-Renyi graph, resampled with a derived seed until connected.
// Unconnectable after 1000 attempts.
Topology build_topology(int n_nodes, double edge_prob, uint64_t seed);

// Per-node per-class second-moment statistic, the only class-wise payload
// nodes ever exchange.
struct GramStat {
  int node = -1;
  int class_id = -1;
  int count = 0;  // m_ik behind the matrix
  int round = -1;
  SymMatrix matrix;  // Z_ik Z_ik^T / m_ik
};

// Whole-node Gram forwarded inside a cluster in non-i.i.d. mode. The matrix
// is personalized per recipient: classes the recipient shares are already
// removed, so the consumer never needs a peer matrix it would substitute.
struct NodeGramPayload {
  int sender = -1;
  int recipient = -1;
  int round = -1;
  double weight = 0.0;  // m_j / S_j
  SymMatrix matrix;
};

// Bulk-synchronous mailbox. Round-t posts are visible to round-t reads and
// later; the reader names the round it wants, never "latest".
class MailBox {
 public:
  explicit MailBox(int n_nodes) : n_nodes_(n_nodes), agent_of_(n_nodes) {
    for (int i = 0; i < n_nodes; ++i) agent_of_[i] = i;
  }

  // non-i.i.d. mode: payload bytes between co-located virtual nodes are free
  void set_agent_map(std::vector<int> agent_of) { agent_of_ = std::move(agent_of); }

  void post_stats(int sender, const std::vector<GramStat>& stats, const std::vector<int>& recipients);
  void post_node_gram(const NodeGramPayload& payload);

  // all class stats posted to `reader` at exactly round `round`
  std::map<std::pair<int, int>, GramStat> read_stats(int reader, int round) const;
  const GramStat& require_stat(int reader, int sender, int class_id, int round) const;
  const NodeGramPayload& require_node_gram(int reader, int sender, int round) const;

  uint64_t bytes_sent(int round, int node) const;
  uint64_t total_bytes() const;
  // CSV rows "round,node,bytes_sent", rounds ascending
  std::vector<std::string> cost_rows() const;

  long long stat_posts() const { return stat_posts_; }
  long long node_gram_posts() const { return node_gram_posts_; }

 private:
  int n_nodes_;
  std::vector<int> agent_of_;
  // (recipient, round, sender, class) -> stat
  std::map<std::tuple<int, int, int, int>, GramStat> stats_;
  std::map<std::tuple<int, int, int>, NodeGramPayload> node_grams_;
  std::map<std::pair<int, int>, uint64_t> bytes_;  // (round, node) -> bytes
  long long stat_posts_ = 0;
  long long node_gram_posts_ = 0;

  void add_bytes(int round, int sender, int recipient, int dim);
};

}  // namespace mcrnet

#endif
