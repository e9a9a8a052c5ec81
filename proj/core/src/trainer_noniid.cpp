#include "mcrnet/trainer_noniid.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "mcrnet/errors.hpp"
#include "mcrnet/rng.hpp"

namespace mcrnet {

void average_virtual_nodes(std::vector<EncoderParams>& params, const std::vector<int>& replica_ids) {
  if (replica_ids.size() < 2) return;
  std::vector<const EncoderParams*> group;
  group.reserve(replica_ids.size());
  for (int id : replica_ids) group.push_back(&params[id]);
  const EncoderParams mean = average_params(group);
  for (int id : replica_ids) params[id] = mean;
}

namespace {

std::vector<int> shared_labels(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<int> out;
  for (int k : a) {
    if (std::find(b.begin(), b.end(), k) != b.end()) out.push_back(k);
  }
  return out;
}

void check_assumption4(const ClusterPlan& plan, bool strict, std::vector<std::string>& notes) {
  const int n_clusters = plan.n_clusters();
  if (n_clusters < 2) return;
  std::set<int> all_classes;
  for (const auto& cm : plan.class_m) {
    for (const auto& [k, r] : cm) all_classes.insert(k);
  }
  for (int k : all_classes) {
    double ref = -1.0;
    for (int s = 0; s < n_clusters; ++s) {
      const auto it = plan.class_m[s].find(k);
      const double mk = it == plan.class_m[s].end() ? 0.0 : it->second.to_double();
      const double frac = mk / plan.cluster_m[s].to_double();
      if (ref < 0.0) {
        ref = frac;
      } else if (std::abs(frac - ref) > 1e-9 * std::max(std::abs(ref), std::abs(frac))) {
        const std::string msg = "class " + std::to_string(k) + " proportion differs across clusters (" +
                                std::to_string(ref) + " vs " + std::to_string(frac) + ")";
        if (strict) throw AssumptionViolated(msg);
        notes.push_back("assumption 4 relaxed: " + msg);
        break;
      }
    }
  }
}

}  // namespace

TrainedState run_noniid(const std::vector<Dataset>& parts, const ClusterPlan& plan_in, const LabelSets& labels,
                        const std::vector<EncoderSpec>& encoder_specs, const TrainConfig& cfg) {
  const int n_agents = static_cast<int>(parts.size());
  if (plan_in.n_agents() != n_agents || static_cast<int>(encoder_specs.size()) != n_agents) {
    throw PlanMismatch("plan, parts and encoder specs must cover the same agents");
  }
  for (int a = 0; a < n_agents; ++a) {
    std::set<int> present;
    for (int l : parts[a].labels) present.insert(l);
    const std::set<int> declared(labels.labels_per_agent[a].begin(), labels.labels_per_agent[a].end());
    if (present != declared) throw PlanMismatch("agent " + std::to_string(a) + " holds classes not in its label set");
  }

  ClusterPlan plan = plan_in;
  std::vector<std::map<int, int>> agent_counts(n_agents);
  for (int a = 0; a < n_agents; ++a) agent_counts[a] = parts[a].class_counts();
  attach_counts(plan, agent_counts);

  TrainedState out;
  check_assumption4(plan, cfg.assumption_strict, out.notes);

  const int n_virtual = plan.n_virtual();
  int total_m = 0;
  for (const Dataset& p : parts) total_m += p.sample_count();
  const RateParams rate{cfg.eps_sq, total_m, cfg.feature_dim};

  std::vector<ClassPartition> agent_parts;
  for (int a = 0; a < n_agents; ++a) {
    agent_parts.push_back(ClassPartition::from_labels(parts[a].labels, parts[a].num_classes));
  }

  // replicas of one agent start from identical parameters
  std::vector<AdamState> adam;
  for (int v = 0; v < n_virtual; ++v) {
    const int a = plan.virtual_nodes[v].agent;
    std::vector<int> arch = {parts[a].inputs.rows()};
    arch.insert(arch.end(), encoder_specs[a].hidden.begin(), encoder_specs[a].hidden.end());
    arch.push_back(cfg.feature_dim);
    out.encoders.push_back(init_params(arch, encoder_specs[a].activation, mix_seed(cfg.seed, 0xe0c, a)));
    adam.push_back(AdamState::for_params(out.encoders[v], cfg.lr, cfg.weight_decay));
  }

  MailBox mailbox(n_virtual);
  {
    std::vector<int> agent_of(n_virtual);
    for (int v = 0; v < n_virtual; ++v) agent_of[v] = plan.virtual_nodes[v].agent;
    mailbox.set_agent_map(agent_of);
  }

  // label-wise peer sets over the virtual registry
  std::vector<std::vector<int>> by_class(parts.front().num_classes);
  for (int k = 0; k < parts.front().num_classes; ++k) by_class[k] = plan.label_peers(k, labels);

  std::vector<std::map<int, GramStat>> stats(n_virtual);
  std::vector<std::map<std::pair<int, int>, SymMatrix>> duals(n_virtual);

  auto unit_norm_error = [](const Matrix& z) {
    double worst = 0.0;
    for (int c = 0; c < z.cols(); ++c) worst = std::max(worst, std::abs(z.column_norm(c) - 1.0));
    return worst;
  };

  auto post_label_stats = [&](int round) {
    for (int v = 0; v < n_virtual; ++v) {
      const int a = plan.virtual_nodes[v].agent;
      const Matrix z = encoder_forward(out.encoders[v], parts[a].inputs);
      out.max_unit_norm_err = std::max(out.max_unit_norm_err, unit_norm_error(z));
      stats[v] = node_class_stats(z, agent_parts[a], v, round);
      for (const auto& [k, s] : stats[v]) {
        std::vector<int> recipients;
        for (int u : by_class[k]) {
          if (u != v) recipients.push_back(u);
        }
        if (!recipients.empty()) mailbox.post_stats(v, {s}, recipients);
      }
    }
  };

  auto post_whole_grams = [&](int v, int round) {
    const int a = plan.virtual_nodes[v].agent;
    const int s_cluster = plan.virtual_nodes[v].cluster;
    const Matrix z = encoder_forward(out.encoders[v], parts[a].inputs);
    const SymMatrix whole = gram(z, static_cast<double>(plan.replication[a]));
    for (int u : plan.cluster_members[s_cluster]) {
      if (u == v) continue;
      const int ua = plan.virtual_nodes[u].agent;
      NodeGramPayload payload;
      payload.sender = v;
      payload.recipient = u;
      payload.round = round;
      payload.weight = static_cast<double>(parts[a].sample_count()) / plan.replication[a];
      SymMatrix base = whole;
      for (int k : shared_labels(labels.labels_per_agent[a], labels.labels_per_agent[ua])) {
        base.axpy(-1.0 / plan.replication[a], gram(z.select_columns(agent_parts[a].columns_of(k)), 1.0));
      }
      payload.matrix = std::move(base);
      mailbox.post_node_gram(payload);
    }
  };

  auto context_for = [&](int v, int prev_round) {
    const int a = plan.virtual_nodes[v].agent;
    LocalLossContext ctx;
    ctx.gamma = cfg.gamma;
    for (int k : labels.labels_per_agent[a]) {
      for (int j : by_class[k]) {
        if (j == v) continue;
        ctx.pair_terms.push_back({j, k});
        auto& y = duals[v][{j, k}];
        if (y.dim() == 0) y = SymMatrix(cfg.feature_dim);
        ctx.duals[{j, k}] = y;
        ctx.peer_prev[{j, k}] = mailbox.require_stat(v, j, k, prev_round).matrix;
      }
      ctx.self_prev[k] = stats[v].at(k).matrix;
    }
    return ctx;
  };

  auto inputs_for = [&](int v, int round, std::vector<int>* fresh_used) {
    const int a = plan.virtual_nodes[v].agent;
    const int s_cluster = plan.virtual_nodes[v].cluster;
    const auto& members = plan.cluster_members[s_cluster];
    std::vector<int> order = members;
    if (cfg.bcd_descending) std::reverse(order.begin(), order.end());
    const int pos = static_cast<int>(std::find(order.begin(), order.end(), v) - order.begin());

    ClusterLossInputs in;
    in.cluster_m = plan.cluster_m[s_cluster].to_double();
    for (int k : labels.labels_per_agent[a]) {
      const auto it = plan.class_m[s_cluster].find(k);
      if (it == plan.class_m[s_cluster].end()) throw PlanMismatch("cluster lacks class " + std::to_string(k));
      in.cluster_class_m[k] = it->second.to_double();
    }
    in.inv_s_self = 1.0 / plan.replication[a];
    in.self_full_m = parts[a].sample_count();
    for (const auto& [k, c] : agent_counts[a]) in.self_full_class_m[k] = c;
    in.substitute_shared = cfg.substitute_shared;
    in.weight_reading = cfg.weight_reading;

    for (int p = 0; p < static_cast<int>(order.size()); ++p) {
      const int u = order[p];
      if (u == v) continue;
      const bool fresh = round > 0 && p < pos;
      const int read_round = fresh ? round : std::max(0, round - 1);
      const NodeGramPayload& payload = mailbox.require_node_gram(v, u, read_round);
      ClusterPeer peer;
      peer.node = u;
      peer.fresh = fresh;
      const int ua = plan.virtual_nodes[u].agent;
      peer.inv_s = 1.0 / plan.replication[ua];
      peer.expansion_base = payload.matrix;
      for (const auto& [k, c] : agent_counts[ua]) peer.class_counts[k] = c;
      peer.shared_classes = shared_labels(labels.labels_per_agent[a], labels.labels_per_agent[ua]);
      if (fresh && fresh_used) fresh_used->push_back(u);
      in.peers.push_back(std::move(peer));
    }
    in.ctx = context_for(v, std::max(0, round - 1));
    return in;
  };

  post_label_stats(0);
  for (int v = 0; v < n_virtual; ++v) post_whole_grams(v, 0);
  out.consensus.push_back([&] {
    double worst = 0.0;
    for (size_t k = 0; k < by_class.size(); ++k) {
      for (size_t i = 0; i < by_class[k].size(); ++i) {
        for (size_t j = i + 1; j < by_class[k].size(); ++j) {
          SymMatrix diff = stats[by_class[k][i]].at(static_cast<int>(k)).matrix;
          diff -= stats[by_class[k][j]].at(static_cast<int>(k)).matrix;
          worst = std::max(worst, diff.frobenius_norm());
        }
      }
    }
    return worst;
  }());

  for (int v = 0; v < n_virtual; ++v) {
    const int a = plan.virtual_nodes[v].agent;
    const Matrix z = encoder_forward(out.encoders[v], parts[a].inputs);
    out.initial_loss.push_back(cluster_loss(z, agent_parts[a], inputs_for(v, 0, nullptr), rate));
  }
  out.trajectory.assign(n_virtual, {});

  for (int t = 1; t <= cfg.rounds; ++t) {
    // label-wise dual ascent on round-(t-1) statistics
    for (int v = 0; v < n_virtual; ++v) {
      const int a = plan.virtual_nodes[v].agent;
      for (int k : labels.labels_per_agent[a]) {
        for (int j : by_class[k]) {
          if (j == v) continue;
          const GramStat& peer = mailbox.require_stat(v, j, k, t - 1);
          SymMatrix diff = stats[v].at(k).matrix;
          diff -= peer.matrix;
          auto& y = duals[v][{j, k}];
          if (y.dim() == 0) y = SymMatrix(cfg.feature_dim);
          y.axpy(cfg.rho, diff);
        }
      }
    }
    if (cfg.check_invariants) {
      for (int v = 0; v < n_virtual; ++v) {
        for (const auto& [key, y_vj] : duals[v]) {
          const auto& [j, k] = key;
          if (j < v) continue;
          const auto it = duals[j].find({v, k});
          if (it == duals[j].end()) continue;
          SymMatrix sum = y_vj;
          sum += it->second;
          out.max_dual_asymmetry = std::max(out.max_dual_asymmetry, sum.max_abs_diff(SymMatrix(sum.dim())));
        }
      }
    }

    // clusters in parallel, nodes within a cluster in sequence
    std::vector<ClusterLossInputs> round_inputs(n_virtual);
    for (int s = 0; s < plan.n_clusters(); ++s) {
      std::vector<int> order = plan.cluster_members[s];
      if (cfg.bcd_descending) std::reverse(order.begin(), order.end());
      for (int pos = 0; pos < static_cast<int>(order.size()); ++pos) {
        const int v = order[pos];
        const int a = plan.virtual_nodes[v].agent;
        std::vector<int> fresh_used;
        round_inputs[v] = inputs_for(v, t, &fresh_used);

        const int inner = cfg.local_epochs * ((parts[a].sample_count() + cfg.batch - 1) / std::max(1, cfg.batch));
        for (int step = 0; step < inner; ++step) {
          const std::vector<int> cols = stratified_batch(
              agent_parts[a], cfg.batch, mix_seed(cfg.seed, 0xbcd * (t + 1), static_cast<uint64_t>(v * 977 + step)));
          const Matrix x = parts[a].inputs.select_columns(cols);
          std::vector<int> batch_labels(cols.size());
          for (size_t i = 0; i < cols.size(); ++i) batch_labels[i] = parts[a].labels[cols[i]];
          const ClassPartition bpart = ClassPartition::from_labels(batch_labels, parts[a].num_classes);
          const ForwardTrace trace = encoder_forward_trace(out.encoders[v], x);
          const Matrix zg = cluster_loss_grad(trace.output, bpart, round_inputs[v], rate);
          const ParamGrads grads = encoder_backward(out.encoders[v], trace, zg);
          adam_step(out.encoders[v], grads, adam[v]);
        }
        post_whole_grams(v, t);

        std::string fresh_str;
        for (size_t i = 0; i < fresh_used.size(); ++i) {
          if (i) fresh_str += '|';
          fresh_str += std::to_string(fresh_used[i]);
        }
        out.cluster_trace.push_back(std::to_string(t) + "," + std::to_string(s) + "," + std::to_string(pos) + "," +
                                    std::to_string(v) + "," + fresh_str);
      }
    }

    // local consensus across replicas, then the label-wise exchange
    for (int a = 0; a < n_agents; ++a) {
      if (plan.replication[a] > 1) average_virtual_nodes(out.encoders, plan.virtual_of_agent[a]);
    }
    post_label_stats(t);

    double worst = 0.0;
    for (size_t k = 0; k < by_class.size(); ++k) {
      for (size_t i = 0; i < by_class[k].size(); ++i) {
        for (size_t j = i + 1; j < by_class[k].size(); ++j) {
          SymMatrix diff = stats[by_class[k][i]].at(static_cast<int>(k)).matrix;
          diff -= stats[by_class[k][j]].at(static_cast<int>(k)).matrix;
          worst = std::max(worst, diff.frobenius_norm());
        }
      }
    }
    out.consensus.push_back(worst);

    for (int v = 0; v < n_virtual; ++v) {
      const int a = plan.virtual_nodes[v].agent;
      const Matrix z = encoder_forward(out.encoders[v], parts[a].inputs);
      out.trajectory[v].push_back(cluster_loss(z, agent_parts[a], round_inputs[v], rate));
    }
    out.rounds_run = t;
  }

  out.final_stats = stats;
  out.cost_rows = mailbox.cost_rows();
  out.total_bytes = mailbox.total_bytes();
  out.stat_posts = mailbox.stat_posts();
  out.node_gram_posts = mailbox.node_gram_posts();
  return out;
}

}  // namespace mcrnet
