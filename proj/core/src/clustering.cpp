#include "mcrnet/clustering.hpp"

#include <algorithm>
#include <set>

#include <json.hpp>

#include "mcrnet/errors.hpp"

namespace mcrnet {

namespace {

int coverage_gain(const std::vector<int>& agent_labels, const std::set<int>& uncovered) {
  int gain = 0;
  for (int l : agent_labels) gain += uncovered.count(l) ? 1 : 0;
  return gain;
}

}  // namespace

std::vector<int> ClusterPlan::label_peers(int class_id, const LabelSets& labels) const {
  std::vector<int> peers;
  for (int v = 0; v < n_virtual(); ++v) {
    const auto& agent_labels = labels.labels_per_agent[virtual_nodes[v].agent];
    if (std::find(agent_labels.begin(), agent_labels.end(), class_id) != agent_labels.end()) {
      peers.push_back(v);
    }
  }
  return peers;
}

ClusterPlan cluster_with_replication(const LabelSets& labels) {
  const int n_agents = static_cast<int>(labels.labels_per_agent.size());

  std::set<int> all_labels;
  for (const auto& ls : labels.labels_per_agent) all_labels.insert(ls.begin(), ls.end());
  for (int k = 0; k < labels.num_classes; ++k) {
    if (!all_labels.count(k)) throw UncoverableLabel("label " + std::to_string(k) + " held by no agent");
  }

  std::set<int> unclustered;
  for (int i = 0; i < n_agents; ++i) unclustered.insert(i);

  ClusterPlan plan;
  plan.replication.assign(n_agents, 0);

  while (!unclustered.empty()) {
    std::vector<int> cluster;
    std::set<int> uncovered;
    for (int k = 0; k < labels.num_classes; ++k) uncovered.insert(k);

    while (!uncovered.empty()) {
      int pick = -1;
      int best = -1;
      if (!unclustered.empty()) {
        for (int i : unclustered) {
          const int g = coverage_gain(labels.labels_per_agent[i], uncovered);
          if (g > best) {
            best = g;
            pick = i;
          }
        }
      }
      if (pick >= 0 && best > 0) {
        unclustered.erase(pick);
      } else {
        // replication branch; also taken when every remaining unclustered
        // agent has zero coverage, which would otherwise loop forever
        pick = -1;
        best = -1;
        for (int i = 0; i < n_agents; ++i) {
          if (std::find(cluster.begin(), cluster.end(), i) != cluster.end()) continue;
          const int g = coverage_gain(labels.labels_per_agent[i], uncovered);
          if (g > best) {
            best = g;
            pick = i;
          }
        }
        if (pick < 0 || best == 0) throw UncoverableLabel("remaining labels covered by no agent");
      }
      cluster.push_back(pick);
      for (int l : labels.labels_per_agent[pick]) uncovered.erase(l);
    }
    plan.clusters.push_back(std::move(cluster));
  }

  for (const auto& cluster : plan.clusters) {
    for (int agent : cluster) ++plan.replication[agent];
  }

  // virtual node registry; replica index follows cluster construction order
  plan.virtual_of_agent.assign(n_agents, {});
  plan.cluster_members.assign(plan.clusters.size(), {});
  std::vector<int> replica_counter(n_agents, 0);
  for (size_t s = 0; s < plan.clusters.size(); ++s) {
    std::vector<int> sorted_agents = plan.clusters[s];
    std::sort(sorted_agents.begin(), sorted_agents.end());
    for (int agent : sorted_agents) {
      ClusterPlan::VirtualNode vn;
      vn.agent = agent;
      vn.cluster = static_cast<int>(s);
      vn.replica_index = replica_counter[agent]++;
      const int vid = static_cast<int>(plan.virtual_nodes.size());
      plan.virtual_nodes.push_back(vn);
      plan.cluster_members[s].push_back(vid);
      plan.virtual_of_agent[agent].push_back(vid);
    }
  }
  return plan;
}

void attach_counts(ClusterPlan& plan, const std::vector<std::map<int, int>>& agent_class_counts) {
  plan.class_m.assign(plan.n_clusters(), {});
  plan.cluster_m.assign(plan.n_clusters(), Rational(0));
  for (int s = 0; s < plan.n_clusters(); ++s) {
    for (int vid : plan.cluster_members[s]) {
      const int agent = plan.virtual_nodes[vid].agent;
      const int s_i = plan.replication[agent];
      for (const auto& [k, count] : agent_class_counts[agent]) {
        plan.class_m[s][k] += Rational(count, s_i);
      }
    }
    for (const auto& [k, r] : plan.class_m[s]) plan.cluster_m[s] += r;
  }
}

std::vector<std::string> validate_plan(const ClusterPlan& plan, const LabelSets& labels) {
  std::vector<std::string> violations;
  const int n_agents = static_cast<int>(labels.labels_per_agent.size());

  if (plan.n_agents() != n_agents) {
    violations.push_back("plan covers " + std::to_string(plan.n_agents()) + " agents, label sets have " +
                         std::to_string(n_agents));
    return violations;
  }

  for (size_t s = 0; s < plan.clusters.size(); ++s) {
    std::set<int> covered;
    for (int agent : plan.clusters[s]) {
      covered.insert(labels.labels_per_agent[agent].begin(), labels.labels_per_agent[agent].end());
    }
    for (int k = 0; k < labels.num_classes; ++k) {
      if (!covered.count(k)) {
        violations.push_back("cluster " + std::to_string(s) + " misses label " + std::to_string(k));
      }
    }
  }

  std::vector<int> memberships(n_agents, 0);
  for (const auto& cluster : plan.clusters) {
    for (int agent : cluster) ++memberships[agent];
  }
  for (int i = 0; i < n_agents; ++i) {
    if (memberships[i] < 1) violations.push_back("agent " + std::to_string(i) + " is in no cluster");
    if (memberships[i] != plan.replication[i]) {
      violations.push_back("agent " + std::to_string(i) + " replication " + std::to_string(plan.replication[i]) +
                           " != membership count " + std::to_string(memberships[i]));
    }
  }

  if (!plan.cluster_m.empty()) {
    Rational total(0);
    for (const Rational& r : plan.cluster_m) total += r;
    if (!total.is_integer()) {
      violations.push_back("sum of cluster sample masses is not integral");
    }
    for (int s = 0; s < plan.n_clusters(); ++s) {
      Rational by_class(0);
      for (const auto& [k, r] : plan.class_m[s]) by_class += r;
      if (by_class != plan.cluster_m[s]) {
        violations.push_back("cluster " + std::to_string(s) + " class masses do not sum to its total");
      }
    }
  }
  return violations;
}

std::string plan_to_json(const ClusterPlan& plan) {
  nlohmann::json j;
  j["clusters"] = plan.clusters;
  j["S"] = plan.replication;
  nlohmann::json vns = nlohmann::json::array();
  for (size_t v = 0; v < plan.virtual_nodes.size(); ++v) {
    const auto& vn = plan.virtual_nodes[v];
    vns.push_back({{"id", v}, {"agent", vn.agent}, {"cluster", vn.cluster}, {"replica", vn.replica_index}});
  }
  j["virtual_nodes"] = vns;
  return j.dump(2);
}

ClusterPlan plan_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("plan json: ") + e.what());
  }
  ClusterPlan plan;
  try {
    plan.clusters = j.at("clusters").get<std::vector<std::vector<int>>>();
    plan.replication = j.at("S").get<std::vector<int>>();
    plan.cluster_members.assign(plan.clusters.size(), {});
    plan.virtual_of_agent.assign(plan.replication.size(), {});
    for (const auto& vn : j.at("virtual_nodes")) {
      ClusterPlan::VirtualNode v;
      v.agent = vn.at("agent").get<int>();
      v.cluster = vn.at("cluster").get<int>();
      v.replica_index = vn.at("replica").get<int>();
      const int vid = static_cast<int>(plan.virtual_nodes.size());
      plan.virtual_nodes.push_back(v);
      plan.cluster_members[v.cluster].push_back(vid);
      plan.virtual_of_agent[v.agent].push_back(vid);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("plan json fields: ") + e.what());
  }
  return plan;
}

}  // namespace mcrnet
