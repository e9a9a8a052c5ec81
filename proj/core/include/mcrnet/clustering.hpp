#ifndef MCRNET_CLUSTERING_HPP
#define MCRNET_CLUSTERING_HPP

#include <map>
#include <string>
#include <vector>

#include "mcrnet/rational.hpp"

namespace mcrnet {

struct LabelSets {
  std::vector<std::vector<int>> labels_per_agent;  // each sorted, deduped
  int num_classes = 0;
};

// Greedy label-cover clustering with local replication. Virtual nodes get
// dense ids; each is one (agent, cluster) membership.
struct ClusterPlan {
  struct VirtualNode {
    int agent = -1;
    int cluster = -1;
    int replica_index = 0;  // 0..S_agent-1
  };

  std::vector<std::vector<int>> clusters;            // agent ids, in pick order
  std::vector<int> replication;                      // S_i per agent
  std::vector<VirtualNode> virtual_nodes;            // virtual id = index
  std::vector<std::vector<int>> cluster_members;     // virtual ids per cluster, ascending agent id
  std::vector<std::vector<int>> virtual_of_agent;    // agent -> its virtual ids

  // filled by attach_counts
  std::vector<std::map<int, Rational>> class_m;  // per cluster: k -> m_k^s
  std::vector<Rational> cluster_m;               // per cluster: m^s

  int n_agents() const { return static_cast<int>(replication.size()); }
  int n_virtual() const { return static_cast<int>(virtual_nodes.size()); }
  int n_clusters() const { return static_cast<int>(clusters.size()); }

  // virtual nodes (anywhere) whose agent holds class k: tilde-V_k
  std::vector<int> label_peers(int class_id, const LabelSets& labels) const;
};

ClusterPlan cluster_with_replication(const LabelSets& labels);

// per-agent per-class full sample counts -> m_k^s, m^s as exact rationals
void attach_counts(ClusterPlan& plan, const std::vector<std::map<int, int>>& agent_class_counts);

// empty result means the plan satisfies every invariant
std::vector<std::string> validate_plan(const ClusterPlan& plan, const LabelSets& labels);

std::string plan_to_json(const ClusterPlan& plan);
ClusterPlan plan_from_json(const std::string& text);

}  // namespace mcrnet

#endif
