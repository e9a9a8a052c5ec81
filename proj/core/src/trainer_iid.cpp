#include "mcrnet/trainer_iid.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mcrnet/errors.hpp"
#include "mcrnet/rng.hpp"

namespace mcrnet {

DualVar dual_update(const DualVar& prev, const GramStat& v_own, const GramStat& v_peer, double rho) {
  if (v_own.class_id != v_peer.class_id) throw ClassMismatch("dual update across classes");
  if (v_own.matrix.dim() != v_peer.matrix.dim()) throw ShapeMismatch("dual update dims");
  DualVar next = prev;
  if (next.matrix.dim() == 0) next.matrix = SymMatrix(v_own.matrix.dim());
  next.class_id = v_own.class_id;
  SymMatrix diff = v_own.matrix;
  diff -= v_peer.matrix;
  next.matrix.axpy(rho, diff);
  return next;
}

std::vector<int> stratified_batch(const ClassPartition& part, int batch, uint64_t seed) {
  const int m = part.total();
  if (batch >= m) {
    std::vector<int> all(m);
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  const std::vector<int> present = part.present_classes();
  Rng rng(seed);

  // proportional quotas by largest remainder
  std::vector<int> quota(present.size(), 0);
  std::vector<std::pair<double, size_t>> remainders;
  int assigned = 0;
  for (size_t idx = 0; idx < present.size(); ++idx) {
    const double exact = static_cast<double>(batch) * part.count(present[idx]) / m;
    quota[idx] = static_cast<int>(exact);
    assigned += quota[idx];
    remainders.push_back({exact - quota[idx], idx});
  }
  std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (int i = 0; assigned < batch; ++i, ++assigned) ++quota[remainders[i % remainders.size()].second];

  // every present class is represented when the batch is large enough
  if (batch >= static_cast<int>(present.size())) {
    for (size_t idx = 0; idx < present.size(); ++idx) {
      while (quota[idx] == 0) {
        size_t donor = std::max_element(quota.begin(), quota.end()) - quota.begin();
        if (quota[donor] <= 1) break;
        --quota[donor];
        ++quota[idx];
      }
    }
  }

  std::vector<int> cols;
  cols.reserve(batch);
  for (size_t idx = 0; idx < present.size(); ++idx) {
    std::vector<int> pool = part.columns_of(present[idx]);
    rng.shuffle(pool);
    const int take = std::min<int>(quota[idx], static_cast<int>(pool.size()));
    for (int i = 0; i < take; ++i) cols.push_back(pool[i]);
  }
  std::sort(cols.begin(), cols.end());
  return cols;
}

std::map<int, GramStat> node_class_stats(const Matrix& z, const ClassPartition& part, int node, int round) {
  std::map<int, GramStat> stats;
  for (int k : part.present_classes()) {
    GramStat s;
    s.node = node;
    s.class_id = k;
    s.count = part.count(k);
    s.round = round;
    s.matrix = gram(z.select_columns(part.columns_of(k)), s.count);
    stats.emplace(k, std::move(s));
  }
  return stats;
}

LocalRoundResult local_round(EncoderParams& params, AdamState& adam, const Dataset& data,
                             const LocalLossContext& ctx, const RateParams& rate, int inner_steps, int batch,
                             uint64_t step_seed) {
  LocalRoundResult result;
  for (int step = 0; step < inner_steps; ++step) {
    const ClassPartition full = ClassPartition::from_labels(data.labels, data.num_classes);
    const std::vector<int> cols = stratified_batch(full, batch, mix_seed(step_seed, static_cast<uint64_t>(step)));
    const Matrix x = data.inputs.select_columns(cols);
    std::vector<int> batch_labels(cols.size());
    for (size_t i = 0; i < cols.size(); ++i) batch_labels[i] = data.labels[cols[i]];
    const ClassPartition part = ClassPartition::from_labels(batch_labels, data.num_classes);

    const ForwardTrace trace = encoder_forward_trace(params, x);
    const Matrix z_grad = iid_local_loss_grad(trace.output, part, ctx, rate);
    const ParamGrads grads = encoder_backward(params, trace, z_grad);
    adam_step(params, grads, adam);
    ++result.steps_taken;
    if (step + 1 == inner_steps) {
      const Matrix z = encoder_forward(params, x);
      result.last_batch_loss = iid_local_loss(z, part, ctx, rate);
    }
  }
  return result;
}

namespace {

void check_assumption1(const std::vector<Dataset>& parts) {
  const int num_classes = parts.front().num_classes;
  for (int k = 0; k < num_classes; ++k) {
    double ref = -1.0;
    for (const Dataset& p : parts) {
      int count = 0;
      for (int l : p.labels) count += l == k ? 1 : 0;
      const double frac = static_cast<double>(count) / p.sample_count();
      if (ref < 0.0) {
        ref = frac;
      } else if (std::abs(frac - ref) > 1e-9 * std::max(frac, ref)) {
        throw AssumptionViolated("class " + std::to_string(k) + " proportions differ across nodes");
      }
    }
  }
}

double consensus_gap(const std::vector<std::map<int, GramStat>>& stats) {
  double worst = 0.0;
  for (size_t i = 0; i < stats.size(); ++i) {
    for (size_t j = i + 1; j < stats.size(); ++j) {
      for (const auto& [k, si] : stats[i]) {
        const auto it = stats[j].find(k);
        if (it == stats[j].end()) continue;
        SymMatrix diff = si.matrix;
        diff -= it->second.matrix;
        worst = std::max(worst, diff.frobenius_norm());
      }
    }
  }
  return worst;
}

double unit_norm_error(const Matrix& z) {
  double worst = 0.0;
  for (int c = 0; c < z.cols(); ++c) worst = std::max(worst, std::abs(z.column_norm(c) - 1.0));
  return worst;
}

std::vector<int> full_arch(const EncoderSpec& spec, int input_dim, int out_dim) {
  std::vector<int> arch = {input_dim};
  arch.insert(arch.end(), spec.hidden.begin(), spec.hidden.end());
  arch.push_back(out_dim);
  return arch;
}

double param_grad_norm_sq(const ParamGrads& grads) {
  double acc = 0.0;
  for (const Matrix& w : grads.weights) {
    for (double v : w.data()) acc += v * v;
  }
  for (const auto& b : grads.biases) {
    for (double v : b) acc += v * v;
  }
  return acc;
}

}  // namespace

TrainedState run_iid(const std::vector<Dataset>& parts, const Topology& topo,
                     const std::vector<EncoderSpec>& encoder_specs, const TrainConfig& cfg) {
  const int n = static_cast<int>(parts.size());
  if (n == 0 || topo.n_nodes != n || static_cast<int>(encoder_specs.size()) != n) {
    throw ShapeMismatch("parts, topology and encoder specs must agree");
  }
  check_assumption1(parts);

  int total_m = 0;
  for (const Dataset& p : parts) total_m += p.sample_count();
  const RateParams rate{cfg.eps_sq, total_m, cfg.feature_dim};

  TrainedState out;
  std::vector<AdamState> adam;
  std::vector<ClassPartition> full_parts;
  for (int i = 0; i < n; ++i) {
    const uint64_t enc_seed =
        cfg.shared_encoder_init ? mix_seed(cfg.seed, 0xe0c) : mix_seed(cfg.seed, 0xe0c, static_cast<uint64_t>(i));
    out.encoders.push_back(init_params(full_arch(encoder_specs[i], parts[i].inputs.rows(), cfg.feature_dim),
                                       encoder_specs[i].activation, enc_seed));
    adam.push_back(AdamState::for_params(out.encoders[i], cfg.lr, cfg.weight_decay));
    full_parts.push_back(ClassPartition::from_labels(parts[i].labels, parts[i].num_classes));
  }

  MailBox mailbox(n);
  std::vector<std::map<int, GramStat>> stats(n);
  std::vector<std::map<std::pair<int, int>, SymMatrix>> duals(n);

  auto recompute_and_post = [&](int round) {
    for (int i = 0; i < n; ++i) {
      const Matrix z = encoder_forward(out.encoders[i], parts[i].inputs);
      out.max_unit_norm_err = std::max(out.max_unit_norm_err, unit_norm_error(z));
      stats[i] = node_class_stats(z, full_parts[i], i, round);
      std::vector<GramStat> payload;
      for (const auto& [k, s] : stats[i]) payload.push_back(s);
      mailbox.post_stats(i, payload, topo.neighbors[i]);
    }
  };

  auto context_for = [&](int i, int round_prev) {
    LocalLossContext ctx;
    ctx.gamma = cfg.gamma;
    for (int j : topo.neighbors[i]) {
      for (const auto& [k, s] : stats[i]) {
        ctx.pair_terms.push_back({j, k});
        ctx.duals[{j, k}] = duals[i].count({j, k}) ? duals[i][{j, k}] : SymMatrix(cfg.feature_dim);
        ctx.peer_prev[{j, k}] = mailbox.require_stat(i, j, k, round_prev).matrix;
      }
    }
    for (const auto& [k, s] : stats[i]) ctx.self_prev[k] = s.matrix;
    return ctx;
  };

  recompute_and_post(0);
  out.consensus.push_back(consensus_gap(stats));
  for (int i = 0; i < n; ++i) {
    const Matrix z = encoder_forward(out.encoders[i], parts[i].inputs);
    out.initial_loss.push_back(iid_local_loss(z, full_parts[i], context_for(i, 0), rate));
  }
  out.trajectory.assign(n, {});

  std::vector<double> recent_totals;
  for (int t = 1; t <= cfg.rounds; ++t) {
    // dual ascent on last round's statistics
    for (int i = 0; i < n; ++i) {
      for (int j : topo.neighbors[i]) {
        for (const auto& [k, own] : stats[i]) {
          const GramStat& peer = mailbox.require_stat(i, j, k, t - 1);
          SymMatrix diff = own.matrix;
          diff -= peer.matrix;
          auto& y = duals[i][{j, k}];
          if (y.dim() == 0) y = SymMatrix(cfg.feature_dim);
          y.axpy(cfg.rho, diff);
        }
      }
    }
    if (cfg.check_invariants) {
      for (int i = 0; i < n; ++i) {
        for (int j : topo.neighbors[i]) {
          if (j < i) continue;
          for (const auto& [key, y_ij] : duals[i]) {
            if (key.first != j) continue;
            const auto& y_ji = duals[j].at({i, key.second});
            SymMatrix sum = y_ij;
            sum += y_ji;
            out.max_dual_asymmetry = std::max(out.max_dual_asymmetry, sum.max_abs_diff(SymMatrix(sum.dim())));
          }
        }
      }
    }

    // inner descent against the round-(t-1) snapshot
    std::vector<LocalLossContext> contexts;
    contexts.reserve(n);
    for (int i = 0; i < n; ++i) contexts.push_back(context_for(i, t - 1));
    for (int i = 0; i < n; ++i) {
      const int inner =
          cfg.local_epochs * ((parts[i].sample_count() + cfg.batch - 1) / std::max(1, cfg.batch));
      local_round(out.encoders[i], adam[i], parts[i], contexts[i], rate, inner, cfg.batch,
                  mix_seed(cfg.seed, 0xba7c * (t + 1), static_cast<uint64_t>(i)));
    }

    recompute_and_post(t);
    out.consensus.push_back(consensus_gap(stats));

    double mean_total = 0.0;
    for (int i = 0; i < n; ++i) {
      const Matrix z = encoder_forward(out.encoders[i], parts[i].inputs);
      const LossBreakdown row = iid_local_loss(z, full_parts[i], contexts[i], rate);
      out.trajectory[i].push_back(row);
      mean_total += row.total() / n;
    }

    if (cfg.grad_norm_every > 0 && (t % cfg.grad_norm_every == 0 || t == cfg.rounds)) {
      double norm_sq = 0.0;
      for (int i = 0; i < n; ++i) {
        const ForwardTrace trace = encoder_forward_trace(out.encoders[i], parts[i].inputs);
        const Matrix zg = iid_local_loss_grad(trace.output, full_parts[i], contexts[i], rate);
        norm_sq += param_grad_norm_sq(encoder_backward(out.encoders[i], trace, zg));
      }
      out.grad_norm_sq.push_back({t, norm_sq});
    }

    out.rounds_run = t;
    recent_totals.push_back(mean_total);
    if (cfg.early_stop && static_cast<int>(recent_totals.size()) > cfg.early_stop_window) {
      const double prev = recent_totals[recent_totals.size() - 1 - cfg.early_stop_window];
      if (std::abs(mean_total - prev) < cfg.early_stop_tol * std::max(1.0, std::abs(prev))) break;
    }
  }

  out.final_stats = stats;
  out.cost_rows = mailbox.cost_rows();
  out.total_bytes = mailbox.total_bytes();
  out.stat_posts = mailbox.stat_posts();
  out.node_gram_posts = mailbox.node_gram_posts();
  return out;
}

// ---- D-SGD baseline ----

namespace {

struct ClassifierTrace {
  std::vector<Matrix> inputs;
  Matrix logits;
};

ClassifierTrace classifier_trace(const EncoderParams& params, const Matrix& x) {
  ClassifierTrace t;
  Matrix cur = x;
  const size_t n_layers = params.weights.size();
  for (size_t l = 0; l < n_layers; ++l) {
    t.inputs.push_back(cur);
    Matrix next = matmul(params.weights[l], cur);
    for (int r = 0; r < next.rows(); ++r) {
      const double b = params.biases[l][r];
      double* row = next.row_ptr(r);
      for (int c = 0; c < next.cols(); ++c) row[c] += b;
    }
    if (l + 1 < n_layers) {
      for (double& v : next.data()) {
        if (params.activation == Activation::relu) {
          v = v > 0.0 ? v : 0.0;
        } else {
          v = v > 0.0 ? v : std::expm1(v);
        }
      }
    }
    cur = std::move(next);
  }
  t.logits = std::move(cur);
  return t;
}

double softmax_ce_loss(const Matrix& logits, const std::vector<int>& labels, Matrix& dlogits) {
  const int k = logits.rows();
  const int m = logits.cols();
  dlogits = Matrix(k, m);
  double loss = 0.0;
  for (int c = 0; c < m; ++c) {
    double mx = logits(0, c);
    for (int r = 1; r < k; ++r) mx = std::max(mx, logits(r, c));
    double denom = 0.0;
    for (int r = 0; r < k; ++r) denom += std::exp(logits(r, c) - mx);
    loss += -(logits(labels[c], c) - mx - std::log(denom));
    for (int r = 0; r < k; ++r) {
      const double p = std::exp(logits(r, c) - mx) / denom;
      dlogits(r, c) = (p - (r == labels[c] ? 1.0 : 0.0)) / m;
    }
  }
  return loss / m;
}

ParamGrads classifier_backward(const EncoderParams& params, const ClassifierTrace& trace, const Matrix& dlogits) {
  const size_t n_layers = params.weights.size();
  ParamGrads g;
  g.weights.resize(n_layers);
  g.biases.resize(n_layers);
  Matrix delta = dlogits;
  for (size_t l = n_layers; l-- > 0;) {
    if (l + 1 < n_layers) {
      const Matrix& post = trace.inputs[l + 1];
      for (int r = 0; r < delta.rows(); ++r) {
        for (int c = 0; c < delta.cols(); ++c) {
          const double pv = post(r, c);
          delta(r, c) *= params.activation == Activation::relu ? (pv > 0.0 ? 1.0 : 0.0) : (pv > 0.0 ? 1.0 : pv + 1.0);
        }
      }
    }
    const Matrix& in = trace.inputs[l];
    Matrix wg(delta.rows(), in.rows());
    for (int r = 0; r < delta.rows(); ++r) {
      for (int kk = 0; kk < in.rows(); ++kk) {
        double acc = 0.0;
        for (int c = 0; c < delta.cols(); ++c) acc += delta(r, c) * in(kk, c);
        wg(r, kk) = acc;
      }
    }
    g.weights[l] = std::move(wg);
    std::vector<double> bg(delta.rows(), 0.0);
    for (int r = 0; r < delta.rows(); ++r) {
      for (int c = 0; c < delta.cols(); ++c) bg[r] += delta(r, c);
    }
    g.biases[l] = std::move(bg);
    if (l > 0) delta = matmul_tn(params.weights[l], delta);
  }
  return g;
}

}  // namespace

Matrix classifier_logits(const EncoderParams& params, const Matrix& x) { return classifier_trace(params, x).logits; }

Matrix classifier_embed(const EncoderParams& params, const Matrix& x) {
  const ClassifierTrace t = classifier_trace(params, x);
  return t.inputs.back();  // input to the last affine layer
}

TrainedState run_dsgd_baseline(const std::vector<Dataset>& parts, const Topology& topo,
                               const std::vector<EncoderSpec>& encoder_specs, const TrainConfig& cfg) {
  const int n = static_cast<int>(parts.size());
  if (n == 0 || topo.n_nodes != n || static_cast<int>(encoder_specs.size()) != n) {
    throw ShapeMismatch("parts, topology and encoder specs must agree");
  }
  const int num_classes = parts.front().num_classes;

  TrainedState out;
  std::vector<std::vector<int>> archs;
  for (int i = 0; i < n; ++i) {
    archs.push_back(full_arch(encoder_specs[i], parts[i].inputs.rows(), num_classes));
    out.encoders.push_back(
        init_params(archs[i], encoder_specs[i].activation, mix_seed(cfg.seed, 0xd59d, static_cast<uint64_t>(i))));
  }
  out.trajectory.assign(n, {});
  out.initial_loss.assign(n, {});

  std::map<std::pair<int, int>, uint64_t> bytes;
  for (int t = 1; t <= cfg.rounds; ++t) {
    for (int i = 0; i < n; ++i) {
      const int inner = cfg.local_epochs * ((parts[i].sample_count() + cfg.batch - 1) / std::max(1, cfg.batch));
      double last_loss = 0.0;
      for (int step = 0; step < inner; ++step) {
        const ClassPartition full = ClassPartition::from_labels(parts[i].labels, num_classes);
        const std::vector<int> cols =
            stratified_batch(full, cfg.batch, mix_seed(cfg.seed, 0x5d9 * (t + 1), static_cast<uint64_t>(i * 131 + step)));
        const Matrix x = parts[i].inputs.select_columns(cols);
        std::vector<int> labels(cols.size());
        for (size_t c = 0; c < cols.size(); ++c) labels[c] = parts[i].labels[cols[c]];
        const ClassifierTrace trace = classifier_trace(out.encoders[i], x);
        Matrix dlogits;
        last_loss = softmax_ce_loss(trace.logits, labels, dlogits);
        const ParamGrads grads = classifier_backward(out.encoders[i], trace, dlogits);
        for (size_t l = 0; l < out.encoders[i].weights.size(); ++l) {
          auto& wd = out.encoders[i].weights[l].data();
          for (size_t v = 0; v < wd.size(); ++v) wd[v] -= cfg.lr * grads.weights[l].data()[v];
          for (size_t v = 0; v < out.encoders[i].biases[l].size(); ++v) {
            out.encoders[i].biases[l][v] -= cfg.lr * grads.biases[l][v];
          }
        }
      }
      LossBreakdown row;
      row.dual = 0.0;
      row.class_rate = last_loss;  // total() reports the cross-entropy value
      out.trajectory[i].push_back(row);
    }

    // synchronous parameter averaging among architecture-identical neighbors
    std::vector<EncoderParams> averaged = out.encoders;
    for (int i = 0; i < n; ++i) {
      std::vector<const EncoderParams*> group = {&out.encoders[i]};
      for (int j : topo.neighbors[i]) {
        if (archs[j] == archs[i] && encoder_specs[j].activation == encoder_specs[i].activation) {
          group.push_back(&out.encoders[j]);
          bytes[{t, j}] += out.encoders[j].param_count() * 8;
        }
      }
      if (group.size() > 1) averaged[i] = average_params(group);
    }
    out.encoders = std::move(averaged);
    out.rounds_run = t;
  }

  for (const auto& [key, b] : bytes) {
    out.cost_rows.push_back(std::to_string(key.first) + "," + std::to_string(key.second) + "," + std::to_string(b));
    out.total_bytes += b;
  }
  return out;
}

}  // namespace mcrnet
