#include "mcrnet/network.hpp"

#include <string>
#include <tuple>

#include "mcrnet/errors.hpp"
#include "mcrnet/rng.hpp"

namespace mcrnet {

bool Topology::connected() const {
  if (n_nodes == 0) return false;
  std::vector<uint8_t> seen(n_nodes, 0);
  std::vector<int> stack = {0};
  seen[0] = 1;
  int visited = 1;
  while (!stack.empty()) {
    const int u = stack.back();
    stack.pop_back();
    for (int v : neighbors[u]) {
      if (!seen[v]) {
        seen[v] = 1;
        ++visited;
        stack.push_back(v);
      }
    }
  }
  return visited == n_nodes;
}

Topology build_topology(int n_nodes, double edge_prob, uint64_t seed) {
  if (n_nodes < 1) throw Unconnectable("need at least one node");
  if (!(edge_prob > 0.0 && edge_prob <= 1.0)) throw Unconnectable("edge probability out of (0,1]");
  for (int attempt = 0; attempt < 1000; ++attempt) {
    Rng rng(mix_seed(seed, 0x70b0, static_cast<uint64_t>(attempt)));
    Topology t;
    t.n_nodes = n_nodes;
    t.adjacency.assign(static_cast<size_t>(n_nodes) * n_nodes, 0);
    t.neighbors.assign(n_nodes, {});
    for (int i = 0; i < n_nodes; ++i) {
      for (int j = i + 1; j < n_nodes; ++j) {
        if (rng.uniform() < edge_prob) {
          t.adjacency[static_cast<size_t>(i) * n_nodes + j] = 1;
          t.adjacency[static_cast<size_t>(j) * n_nodes + i] = 1;
          t.neighbors[i].push_back(j);
          t.neighbors[j].push_back(i);
        }
      }
    }
    if (t.connected()) return t;
  }
  throw Unconnectable("no connected graph in 1000 resamples; raise edge probability");
}

void MailBox::add_bytes(int round, int sender, int recipient, int dim) {
  if (agent_of_[sender] == agent_of_[recipient]) return;  // intra-agent, free
  bytes_[{round, sender}] += static_cast<uint64_t>(dim) * dim * 8;
}

void MailBox::post_stats(int sender, const std::vector<GramStat>& stats, const std::vector<int>& recipients) {
  for (int r : recipients) {
    if (r < 0 || r >= n_nodes_) throw UnknownRecipient("node " + std::to_string(r));
  }
  for (const GramStat& s : stats) {
    for (int r : recipients) {
      stats_[{r, s.round, s.node, s.class_id}] = s;
      add_bytes(s.round, sender, r, s.matrix.dim());
    }
    ++stat_posts_;
  }
}

void MailBox::post_node_gram(const NodeGramPayload& payload) {
  if (payload.recipient < 0 || payload.recipient >= n_nodes_) {
    throw UnknownRecipient("node " + std::to_string(payload.recipient));
  }
  node_grams_[{payload.recipient, payload.round, payload.sender}] = payload;
  add_bytes(payload.round, payload.sender, payload.recipient, payload.matrix.dim());
  ++node_gram_posts_;
}

std::map<std::pair<int, int>, GramStat> MailBox::read_stats(int reader, int round) const {
  // a round-t reader consumes what its peers posted at round t-1
  const int posted = round - 1;
  std::map<std::pair<int, int>, GramStat> out;
  const auto lo = stats_.lower_bound({reader, posted, -1, -1});
  for (auto it = lo; it != stats_.end(); ++it) {
    const auto& [rec, rnd, sender, cls] = it->first;
    if (rec != reader || rnd != posted) break;
    out[{sender, cls}] = it->second;
  }
  if (out.empty()) {
    throw MissingStat("no stats for reader " + std::to_string(reader) + " consuming round " + std::to_string(round));
  }
  return out;
}

const GramStat& MailBox::require_stat(int reader, int sender, int class_id, int round) const {
  const auto it = stats_.find({reader, round, sender, class_id});
  if (it == stats_.end()) {
    throw MissingStat("sender " + std::to_string(sender) + ", class " + std::to_string(class_id) + ", round " +
                      std::to_string(round));
  }
  return it->second;
}

const NodeGramPayload& MailBox::require_node_gram(int reader, int sender, int round) const {
  const auto it = node_grams_.find({reader, round, sender});
  if (it == node_grams_.end()) {
    throw MissingStat("node gram from " + std::to_string(sender) + " at round " + std::to_string(round));
  }
  return it->second;
}

uint64_t MailBox::bytes_sent(int round, int node) const {
  const auto it = bytes_.find({round, node});
  return it == bytes_.end() ? 0 : it->second;
}

uint64_t MailBox::total_bytes() const {
  uint64_t acc = 0;
  for (const auto& [key, b] : bytes_) acc += b;
  return acc;
}

std::vector<std::string> MailBox::cost_rows() const {
  std::vector<std::string> rows;
  rows.reserve(bytes_.size());
  for (const auto& [key, b] : bytes_) {
    rows.push_back(std::to_string(key.first) + "," + std::to_string(key.second) + "," + std::to_string(b));
  }
  return rows;
}

}  // namespace mcrnet
