// Acceptance suite: runs the measurable exit criteria end to end and prints
// one pass/fail line per criterion. Invoke with no arguments to run all, or
// with criterion numbers to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mcrnet/config.hpp"
#include "mcrnet/errors.hpp"
#include "mcrnet/evaluation.hpp"
#include "mcrnet/experiment.hpp"
#include "mcrnet/rng.hpp"
#include "mcrnet/trainer_iid.hpp"
#include "mcrnet/trainer_noniid.hpp"

using namespace mcrnet;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Check {
  int id;
  std::string name;
  std::function<Outcome()> run;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(6);
  ss << v;
  return ss.str();
}

// ---------- shared fixtures ----------

std::string repo_config(const std::string& name) {
  // the binary runs from the build tree; configs sit next to the sources
  for (const char* prefix : {"configs/", "../configs/", "../../configs/"}) {
    const std::string candidate = prefix + name;
    if (std::filesystem::exists(candidate)) return candidate;
  }
  throw IoError("cannot locate configs/" + name);
}

std::string scratch_dir(const std::string& tag) {
  const auto path = std::filesystem::temp_directory_path() / ("mcrnet_accept_" + tag);
  std::filesystem::remove_all(path);
  std::filesystem::create_directories(path);
  return path.string();
}

ExperimentResult run_desk_iid(int rounds, uint64_t seed_override, const std::string& tag) {
  ExperimentConfig cfg = load_config(repo_config("synthetic-desk-iid.ini"));
  cfg.train.rounds = rounds;
  if (seed_override) cfg.master_seed = seed_override;
  return run_experiment(cfg, scratch_dir(tag), true);
}

// eigenvalue-route logdet, independent of the Cholesky path under test
double logdet_eig(const SymMatrix& m, double shift) {
  const Spectrum s = sym_eig(m, 1e-12, 100, false);
  double acc = 0.0;
  for (double v : s.values) acc += std::log(v + shift);
  return acc;
}

Matrix random_unit_columns(int rows, int cols, uint64_t seed) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.normal();
  for (int c = 0; c < cols; ++c) m.scale_column(c, 1.0 / m.column_norm(c));
  return m;
}

SymMatrix random_psd(int dim, uint64_t seed) {
  const Matrix z = random_unit_columns(dim, 2 * dim, seed);
  return gram(z, static_cast<double>(2 * dim));
}

// ---------- criterion 1 ----------

Outcome criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  const int rounds = 50;

  // single node holding all the data
  const Dataset data = gen_synthetic_subspaces(3, {2, 2, 2}, 40, 8, 0.05, mix_seed(4041, 0xda7a));
  std::vector<Dataset> parts = {data};
  const Topology topo = build_topology(1, 1.0, 1);
  TrainConfig cfg;
  cfg.rounds = rounds;
  cfg.feature_dim = 8;
  cfg.batch = 48;
  cfg.local_epochs = 2;
  cfg.lr = 0.05;
  cfg.seed = 4041;
  const std::vector<EncoderSpec> specs = {{{24}, Activation::elu}};
  const TrainedState state = run_iid(parts, topo, specs, cfg);

  // direct centralized descent on the rate-reduction objective with the same
  // seeds and batch schedule, composed from the rate primitives
  const RateParams rate{cfg.eps_sq, data.sample_count(), cfg.feature_dim};
  EncoderParams params = init_params({8, 24, 8}, Activation::elu, mix_seed(cfg.seed, 0xe0c, 0));
  AdamState adam = AdamState::for_params(params, cfg.lr, cfg.weight_decay);
  const ClassPartition full = ClassPartition::from_labels(data.labels, data.num_classes);
  const int inner = cfg.local_epochs * ((data.sample_count() + cfg.batch - 1) / cfg.batch);

  double worst_gap = 0.0;
  for (int t = 1; t <= rounds; ++t) {
    const uint64_t step_seed = mix_seed(cfg.seed, 0xba7c * (t + 1), 0);
    for (int step = 0; step < inner; ++step) {
      const std::vector<int> cols = stratified_batch(full, cfg.batch, mix_seed(step_seed, step));
      const Matrix x = data.inputs.select_columns(cols);
      std::vector<int> labels(cols.size());
      for (size_t i = 0; i < cols.size(); ++i) labels[i] = data.labels[cols[i]];
      const ClassPartition part = ClassPartition::from_labels(labels, data.num_classes);
      const ForwardTrace trace = encoder_forward_trace(params, x);
      Matrix grad = class_coding_rate_grad(trace.output, part, rate);
      Matrix rg = coding_rate_grad(trace.output, rate, trace.output.cols());
      rg *= static_cast<double>(trace.output.cols()) / rate.total_m;
      grad -= rg;
      adam_step(params, encoder_backward(params, trace, grad), adam);
    }
    const Matrix z = encoder_forward(params, data.inputs);
    const double central = class_coding_rate(z, full, rate) -
                           (static_cast<double>(data.sample_count()) / rate.total_m) *
                               coding_rate(z, rate, data.sample_count());
    worst_gap = std::max(worst_gap, std::abs(central - state.trajectory[0][t - 1].total()));
  }

  const double secs = seconds_since(t0);
  Outcome out;
  out.pass = worst_gap < 1e-10 && secs < 30.0 && state.max_dual_asymmetry <= 1e-10;
  out.detail = "max per-round loss gap " + fmt(worst_gap) + ", " + fmt(secs) + " s";
  return out;
}

// ---------- criterion 2 ----------

template <typename LossFn, typename GradFn>
double fd_rel_err(const Matrix& z, LossFn&& loss, GradFn&& grad) {
  const Matrix analytic = grad(z);
  Matrix probe = z;
  double scale = 1e-8;
  for (double v : analytic.data()) scale = std::max(scale, std::abs(v));
  double worst = 0.0;
  const double step = 1e-5;
  for (int r = 0; r < z.rows(); ++r) {
    for (int c = 0; c < z.cols(); ++c) {
      const double keep = probe(r, c);
      probe(r, c) = keep + step;
      const double hi = loss(probe);
      probe(r, c) = keep - step;
      const double lo = loss(probe);
      probe(r, c) = keep;
      worst = std::max(worst, std::abs((hi - lo) / (2 * step) - analytic(r, c)) / scale);
    }
  }
  return worst;
}

Outcome criterion2() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  int instances = 0;

  // iid loss gradients
  for (uint64_t trial = 0; trial < 8; ++trial) {
    const int d = 3 + static_cast<int>(trial % 6);
    const int m = 6 + static_cast<int>(trial % 7);
    const Matrix z = random_unit_columns(d, m, 9000 + trial);
    std::vector<int> labels(m);
    for (int i = 0; i < m; ++i) labels[i] = i % 2;
    const ClassPartition part = ClassPartition::from_labels(labels, 2);
    const RateParams p{0.5, m + 4, d};
    LocalLossContext ctx;
    ctx.gamma = 1.1;
    for (int k = 0; k < 2; ++k) {
      ctx.pair_terms.push_back({1, k});
      SymMatrix y = random_psd(d, 9100 + trial * 10 + k);
      y *= 0.1;
      ctx.duals[{1, k}] = y;
      ctx.peer_prev[{1, k}] = random_psd(d, 9200 + trial * 10 + k);
      ctx.self_prev[k] = random_psd(d, 9300 + trial * 10 + k);
    }
    worst = std::max(worst, fd_rel_err(
                                z, [&](const Matrix& w) { return iid_local_loss(w, part, ctx, p).total(); },
                                [&](const Matrix& w) { return iid_local_loss_grad(w, part, ctx, p); }));
    ++instances;
  }

  // cluster loss gradients, substitution active on half the trials
  for (uint64_t trial = 0; trial < 6; ++trial) {
    const int d = 3 + static_cast<int>(trial % 4);
    const int m = 6;
    const Matrix z = random_unit_columns(d, m, 9500 + trial);
    const Matrix zp = random_unit_columns(d, m, 9600 + trial);
    std::vector<int> labels(m);
    for (int i = 0; i < m; ++i) labels[i] = i % 2;
    const ClassPartition part = ClassPartition::from_labels(labels, 2);
    const RateParams p{0.5, 2 * m, d};

    ClusterLossInputs in;
    in.cluster_m = 2 * m;
    in.inv_s_self = 1.0;
    in.self_full_m = m;
    ClusterPeer peer;
    peer.node = 3;
    peer.inv_s = 1.0;
    const bool shared = trial % 2 == 0;
    SymMatrix base = gram(zp, 1.0);
    for (int k = 0; k < 2; ++k) {
      in.self_full_class_m[k] = part.count(k);
      in.cluster_class_m[k] = part.count(k) + (shared ? part.count(k) : 0);
      peer.class_counts[k] = part.count(k);
      if (shared) {
        peer.shared_classes.push_back(k);
        base.axpy(-1.0, gram(zp.select_columns(part.columns_of(k)), 1.0));
      }
    }
    peer.expansion_base = base;
    in.peers.push_back(peer);
    in.ctx.gamma = 0.9;
    for (int k = 0; k < 2; ++k) {
      in.ctx.pair_terms.push_back({3, k});
      SymMatrix y = random_psd(d, 9700 + trial * 10 + k);
      y *= 0.1;
      in.ctx.duals[{3, k}] = y;
      in.ctx.peer_prev[{3, k}] = random_psd(d, 9800 + trial * 10 + k);
      in.ctx.self_prev[k] = random_psd(d, 9900 + trial * 10 + k);
    }
    worst = std::max(worst, fd_rel_err(
                                z, [&](const Matrix& w) { return cluster_loss(w, part, in, p).total(); },
                                [&](const Matrix& w) { return cluster_loss_grad(w, part, in, p); }));
    ++instances;
  }

  // encoder backward against finite differences on the parameters
  for (uint64_t trial = 0; trial < 6; ++trial) {
    EncoderParams params = init_params({5, 7, 4}, trial % 2 ? Activation::relu : Activation::elu, 9950 + trial);
    const Matrix x = random_unit_columns(5, 6, 9960 + trial);
    const Matrix upstream = random_unit_columns(4, 6, 9970 + trial);
    const ParamGrads grads = encoder_backward(params, x, upstream);
    double scale = 1e-8;
    for (const Matrix& w : grads.weights) {
      for (double v : w.data()) scale = std::max(scale, std::abs(v));
    }
    auto loss = [&]() {
      const Matrix z = encoder_forward(params, x);
      double acc = 0.0;
      for (size_t i = 0; i < z.data().size(); ++i) acc += z.data()[i] * upstream.data()[i];
      return acc;
    };
    const double step = 1e-5;
    for (size_t l = 0; l < params.weights.size(); ++l) {
      for (size_t i = 0; i < params.weights[l].data().size(); ++i) {
        const double keep = params.weights[l].data()[i];
        params.weights[l].data()[i] = keep + step;
        const double hi = loss();
        params.weights[l].data()[i] = keep - step;
        const double lo = loss();
        params.weights[l].data()[i] = keep;
        worst = std::max(worst, std::abs((hi - lo) / (2 * step) - grads.weights[l].data()[i]) / scale);
      }
    }
    ++instances;
  }

  const double secs = seconds_since(t0);
  Outcome out;
  out.pass = worst <= 1e-4 && instances >= 20 && secs < 60.0;
  out.detail = std::to_string(instances) + " instances, worst rel err " + fmt(worst) + ", " + fmt(secs) + " s";
  return out;
}

// ---------- criteria 3-5, 8, 9a share the desk preset ----------

Outcome criterion3() {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentResult result = run_desk_iid(300, 0, "c3");
  const Theorem1Report& t1 = result.geometry.theorem1;
  bool rank_ok = true;
  double worst_spread = 0.0;
  for (const auto& spec : t1.spectra) {
    rank_ok = rank_ok && spec.effective_rank >= 2;  // d_k - 1 with d_k = 3
    worst_spread = std::max(worst_spread, spec.top_spread);
  }
  const double secs = seconds_since(t0);
  Outcome out;
  out.pass = t1.max_within_node_cos < 0.2 && t1.max_across_node_cos < 0.2 && rank_ok && worst_spread < 2.0 &&
             secs < 300.0 && result.state.max_dual_asymmetry <= 1e-10;
  out.detail = "max |cos| within " + fmt(t1.max_within_node_cos) + ", across " + fmt(t1.max_across_node_cos) +
               ", top-2 spread " + fmt(worst_spread) + ", " + fmt(secs) + " s";
  return out;
}

Outcome criterion4() {
  const ExperimentResult result = run_desk_iid(300, 0, "c4");
  const std::vector<double>& cons = result.state.consensus;
  const double final_gap = cons.back();

  // trend over the last 100 rounds: the noise envelope must not grow beyond
  // 10%, and no excursion may cross the converged threshold
  const size_t n = cons.size();
  double first_half = 0.0, second_half = 0.0, tail_max = 0.0;
  for (size_t i = n - 100; i < n; ++i) {
    tail_max = std::max(tail_max, cons[i]);
    if (i < n - 50) {
      first_half = std::max(first_half, cons[i]);
    } else {
      second_half = std::max(second_half, cons[i]);
    }
  }
  Outcome out;
  out.pass = final_gap < 0.15 && tail_max < 0.15 && second_half <= 1.1 * first_half;
  out.detail = "final gap " + fmt(final_gap) + ", tail envelope " + fmt(first_half) + " -> " + fmt(second_half);
  return out;
}

Outcome criterion5() {
  const ExperimentResult run300 = run_desk_iid(300, 0, "c5a");
  const ExperimentResult run150 = run_desk_iid(150, 0, "c5b");

  double initial = 0.0, final_loss = 0.0;
  const TrainedState& st = run300.state;
  for (size_t i = 0; i < st.initial_loss.size(); ++i) {
    initial += st.initial_loss[i].total() / st.initial_loss.size();
    final_loss += st.trajectory[i].back().total() / st.initial_loss.size();
  }
  const double decrease = (initial - final_loss) / std::abs(initial);

  auto min_grad = [](const TrainedState& s) {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& [round, g] : s.grad_norm_sq) m = std::min(m, g);
    return m;
  };
  const double min300 = min_grad(run300.state);
  const double min150 = min_grad(run150.state);

  Outcome out;
  out.pass = decrease >= 0.20 && min300 < min150;
  out.detail = "loss drop " + fmt(100.0 * decrease) + "%, min grad norm " + fmt(min150) + " -> " + fmt(min300);
  return out;
}

// ---------- criterion 6 ----------

Outcome criterion6() {
  const auto t0 = std::chrono::steady_clock::now();
  auto as_set = [](const std::vector<int>& v) { return std::set<int>(v.begin(), v.end()); };

  LabelSets four;
  four.num_classes = 10;
  four.labels_per_agent = {{1, 2, 3, 4, 5}, {6, 7, 8, 9, 0}, {0, 3, 5, 7, 9}, {1, 2, 4, 6, 8}};
  const ClusterPlan plan4 = cluster_with_replication(four);
  const bool four_ok = plan4.n_clusters() == 2 && as_set(plan4.clusters[0]) == std::set<int>{0, 1} &&
                       as_set(plan4.clusters[1]) == std::set<int>{2, 3} &&
                       plan4.replication == std::vector<int>{1, 1, 1, 1};

  LabelSets five;
  five.num_classes = 10;
  five.labels_per_agent = {{1, 3, 5, 6}, {0, 5, 7, 8}, {1, 3, 8, 9}, {2, 4, 6, 7}, {0, 2, 4, 9}};
  const ClusterPlan plan5 = cluster_with_replication(five);
  const bool five_ok = plan5.n_clusters() == 2 && as_set(plan5.clusters[0]) == std::set<int>{0, 1, 4} &&
                       as_set(plan5.clusters[1]) == std::set<int>{1, 2, 3} &&
                       plan5.replication == std::vector<int>{1, 2, 1, 1, 1};

  const double secs = seconds_since(t0);
  Outcome out;
  out.pass = four_ok && five_ok && secs < 1.0;
  out.detail = std::string("4-node ") + (four_ok ? "exact" : "WRONG") + ", 5-node " + (five_ok ? "exact" : "WRONG") +
               ", " + fmt(secs) + " s";
  return out;
}

// ---------- criterion 7 ----------

Outcome criterion7() {
  const ExperimentResult iid = run_desk_iid(60, 0, "c7a");

  ExperimentConfig noniid_cfg = load_config(repo_config("synthetic-desk-noniid.ini"));
  noniid_cfg.train.rounds = 30;
  const ExperimentResult noniid = run_experiment(noniid_cfg, scratch_dir("c7b"), true);

  Outcome out;
  out.pass = iid.state.max_dual_asymmetry <= 1e-10 && noniid.state.max_dual_asymmetry <= 1e-10;
  out.detail = "iid max asymmetry " + fmt(iid.state.max_dual_asymmetry) + ", noniid " +
               fmt(noniid.state.max_dual_asymmetry);
  return out;
}

// ---------- criterion 8 ----------

Outcome criterion8() {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentResult mcr = run_desk_iid(300, 0, "c8a");

  // the cross-entropy baseline needs long post-separation training for the
  // within-class variance to shrink
  ExperimentConfig dsgd_cfg = load_config(repo_config("synthetic-desk-iid.ini"));
  dsgd_cfg.algorithm = Algorithm::dsgd;
  dsgd_cfg.train.rounds = 300;
  dsgd_cfg.train.local_epochs = 10;
  dsgd_cfg.train.lr = 0.5;
  const ExperimentResult dsgd = run_experiment(dsgd_cfg, scratch_dir("c8b"), true);

  const double secs = seconds_since(t0);
  Outcome out;
  out.pass = mcr.geometry.wccr_value > dsgd.geometry.wccr_value &&
             mcr.geometry.iidr_value < dsgd.geometry.iidr_value && secs < 600.0;
  out.detail = "wccr " + fmt(mcr.geometry.wccr_value) + " vs " + fmt(dsgd.geometry.wccr_value) + ", iidr " +
               fmt(mcr.geometry.iidr_value) + " vs " + fmt(dsgd.geometry.iidr_value) + ", " + fmt(secs) + " s";
  return out;
}

// ---------- criterion 9 ----------

Outcome criterion9() {
  const ExperimentResult desk = run_desk_iid(300, 0, "c9a");
  const double synth_acc = desk.geometry.accuracy;
  const bool synth_ok = synth_acc >= 0.90;

  // MNIST leg: a 2000-sample training subset, feature dim 32, 200 rounds.
  // Requires the IDX files; point MCRNET_MNIST_DIR at a directory holding
  // train-images-idx3-ubyte etc., or place them under data/mnist.
  std::string mnist_dir = "data/mnist";
  if (const char* env = std::getenv("MCRNET_MNIST_DIR")) mnist_dir = env;
  const std::string images = mnist_dir + "/train-images-idx3-ubyte";
  if (!std::filesystem::exists(images)) {
    Outcome out;
    out.pass = false;
    out.detail = "synthetic accuracy " + fmt(synth_acc) + (synth_ok ? " (pass)" : " (FAIL)") +
                 "; MNIST leg BLOCKED: no IDX files at " + mnist_dir +
                 " and this environment has no network access - supply the files and rerun";
    return out;
  }

  ExperimentConfig cfg;
  cfg.algorithm = Algorithm::iid;
  cfg.master_seed = 99;
  cfg.data.source = DataConfig::Source::idx;
  cfg.data.idx_images = images;
  cfg.data.idx_labels = mnist_dir + "/train-labels-idx1-ubyte";
  cfg.data.idx_test_images = mnist_dir + "/t10k-images-idx3-ubyte";
  cfg.data.idx_test_labels = mnist_dir + "/t10k-labels-idx1-ubyte";
  cfg.data.limit = 2000;
  cfg.data.test_limit = 500;
  cfg.part.mode = PartitionConfig::Mode::iid;
  cfg.part.nodes = 4;
  cfg.part.node_labels.assign(4, {});
  cfg.hidden = {64};
  cfg.train.rounds = 200;
  cfg.train.feature_dim = 32;
  cfg.train.batch = 1000;
  cfg.train.lr = 0.01;
  cfg.eval.eval_samples = 500;
  const ExperimentResult mnist = run_experiment(cfg, scratch_dir("c9b"), true);
  const double mnist_acc = mnist.geometry.accuracy;

  Outcome out;
  out.pass = synth_ok && mnist_acc >= 0.80;
  out.detail = "synthetic accuracy " + fmt(synth_acc) + ", mnist accuracy " + fmt(mnist_acc);
  return out;
}

// ---------- criterion 10 ----------

Outcome criterion10() {
  // scripted 3-round iid run against the closed form of the class-stat cost
  ExperimentConfig cfg = load_config(repo_config("synthetic-desk-iid.ini"));
  cfg.train.rounds = 3;
  const ExperimentResult iid = run_experiment(cfg, scratch_dir("c10a"), true);
  const bool iid_ok = iid.manifest.logged_bytes == iid.manifest.expected_bytes && iid.manifest.expected_bytes > 0;

  ExperimentConfig ncfg = load_config(repo_config("synthetic-desk-noniid.ini"));
  ncfg.train.rounds = 3;
  const ExperimentResult noniid = run_experiment(ncfg, scratch_dir("c10b"), true);
  const bool noniid_ok =
      noniid.manifest.logged_bytes == noniid.manifest.expected_bytes && noniid.manifest.expected_bytes > 0;

  Outcome out;
  out.pass = iid_ok && noniid_ok;
  out.detail = "iid logged " + std::to_string(iid.manifest.logged_bytes) + " == closed form " +
               std::to_string(iid.manifest.expected_bytes) + "; noniid logged " +
               std::to_string(noniid.manifest.logged_bytes) + " == " + std::to_string(noniid.manifest.expected_bytes);
  return out;
}

// ---------- criterion 11 ----------

Outcome criterion11() {
  // two agents in one cluster sharing class 1; replay the trainer's exact
  // two-round schedule and rebuild each loss from the raw features
  LabelSets labels;
  labels.num_classes = 3;
  labels.labels_per_agent = {{0, 1}, {1, 2}};
  const ClusterPlan plan = cluster_with_replication(labels);
  if (plan.n_clusters() != 1 || plan.cluster_members[0].size() != 2) {
    return {false, "unexpected plan shape"};
  }

  const Dataset data = gen_synthetic_subspaces(3, {2, 2, 2}, 18, 12, 0.05, 7171);
  PartitionSpec spec;
  spec.mode = PartitionSpec::Mode::by_labels;
  spec.n_nodes = 2;
  spec.node_labels = labels.labels_per_agent;
  spec.seed = 7172;
  std::vector<Dataset> parts = partition(data, spec);
  enforce_cluster_proportions(parts, plan, 7173);

  TrainConfig cfg;
  cfg.rounds = 2;
  cfg.local_epochs = 1;
  cfg.batch = 1000;  // full batch, one inner step
  cfg.feature_dim = 8;
  cfg.lr = 0.05;
  cfg.seed = 7174;
  const std::vector<EncoderSpec> specs(2, EncoderSpec{{16}, Activation::elu});
  const TrainedState state = run_noniid(parts, plan, labels, specs, cfg);

  // audit log: node 0 never sees fresh stats, node 1 always sees node 0's
  const std::vector<std::string> expected_trace = {"1,0,0,0,", "1,0,1,1,0", "2,0,0,0,", "2,0,1,1,0"};
  bool trace_ok = state.cluster_trace.size() == expected_trace.size();
  for (size_t i = 0; trace_ok && i < expected_trace.size(); ++i) {
    trace_ok = state.cluster_trace[i] == expected_trace[i];
  }

  // independent replay with explicit staleness bookkeeping
  std::vector<EncoderParams> params;
  std::vector<AdamState> adam;
  std::vector<ClassPartition> cparts;
  for (int a = 0; a < 2; ++a) {
    params.push_back(init_params({12, 16, 8}, Activation::elu, mix_seed(cfg.seed, 0xe0c, a)));
    adam.push_back(AdamState::for_params(params[a], cfg.lr, cfg.weight_decay));
    cparts.push_back(ClassPartition::from_labels(parts[a].labels, 3));
  }
  const RateParams rate{cfg.eps_sq, parts[0].sample_count() + parts[1].sample_count(), cfg.feature_dim};

  // rolling stores: per node, label-wise stats and whole grams by round
  std::vector<std::map<int, SymMatrix>> label_stats(2);
  std::vector<SymMatrix> whole(2), whole_prev(2);
  std::vector<std::map<int, SymMatrix>> class_gram(2), class_gram_prev(2);
  auto refresh = [&](int a) {
    const Matrix z = encoder_forward(params[a], parts[a].inputs);
    whole[a] = gram(z, 1.0);
    for (int k : cparts[a].present_classes()) {
      class_gram[a][k] = gram(z.select_columns(cparts[a].columns_of(k)), 1.0);
      label_stats[a][k] = gram(z.select_columns(cparts[a].columns_of(k)), cparts[a].count(k));
    }
  };
  refresh(0);
  refresh(1);

  std::vector<std::map<int, SymMatrix>> duals(2);
  for (int a = 0; a < 2; ++a) {
    for (int k : cparts[a].present_classes()) duals[a][k] = SymMatrix(cfg.feature_dim);
  }

  auto eq18_value = [&](int a, const std::map<int, SymMatrix>& peer_whole_gram,
                        const std::map<int, SymMatrix>& peer_label_prev,
                        const std::map<int, SymMatrix>& self_label_prev) {
    const int b = 1 - a;
    const Matrix z = encoder_forward(params[a], parts[a].inputs);
    const ClassPartition& part = cparts[a];
    const int shared = 1;  // both agents hold class 1
    const double m_s = rate.total_m;

    // expansion with the shared class substituted by the scaled self term
    SymMatrix g = gram(z, 1.0);
    g += peer_whole_gram.at(b);  // peer whole gram minus its shared-class block
    const double sub_scale = static_cast<double>(cparts[b].count(shared)) / part.count(shared);
    g.axpy(sub_scale, gram(z.select_columns(part.columns_of(shared)), 1.0));
    SymMatrix scaled = g;
    scaled *= rate.dim / (m_s * rate.eps_sq);
    double value = -(m_s / (2.0 * rate.total_m)) * logdet_eig(scaled, 1.0);

    // compression over the node's own classes, substituted likewise
    for (int k : part.present_classes()) {
      double mass = part.count(k);
      double coeff = 1.0;
      if (k == shared) {
        mass += cparts[b].count(k);
        coeff += sub_scale;
      }
      SymMatrix gk = gram(z.select_columns(part.columns_of(k)), 1.0);
      gk *= coeff * rate.dim / (mass * rate.eps_sq);
      value += (mass / (2.0 * rate.total_m)) * logdet_eig(gk, 1.0);
    }

    // label-wise dual and penalty terms for the shared class only
    const SymMatrix a_mat = gram(z.select_columns(part.columns_of(shared)), part.count(shared));
    const SymMatrix& y = duals[a].at(shared);
    const SymMatrix& vj = peer_label_prev.at(shared);
    const SymMatrix& vi = self_label_prev.at(shared);
    for (int r = 0; r < a_mat.dim(); ++r) {
      for (int c = 0; c < a_mat.dim(); ++c) {
        value += y(r, c) * (a_mat(r, c) - vj(r, c));
        const double diff = a_mat(r, c) - 0.5 * (vi(r, c) + vj(r, c));
        value += cfg.gamma * diff * diff;
      }
    }
    return value;
  };

  double worst_gap = 0.0;
  for (int t = 1; t <= 2; ++t) {
    // dual ascent on round-(t-1) label stats (shared class only has a peer)
    for (int a = 0; a < 2; ++a) {
      SymMatrix diff = label_stats[a].at(1);
      diff -= label_stats[1 - a].at(1);
      duals[a][1].axpy(cfg.rho, diff);
    }
    const auto label_prev = label_stats;  // round t-1 snapshot
    whole_prev = whole;
    class_gram_prev = class_gram;

    for (int pos = 0; pos < 2; ++pos) {
      const int a = pos;  // ascending order: node 0 then node 1
      const int b = 1 - a;
      // node 0 sees node 1's round-(t-1) gram, node 1 sees node 0's fresh one
      const SymMatrix& peer_whole = pos == 0 ? whole_prev[b] : whole[b];
      const SymMatrix& peer_shared_block = pos == 0 ? class_gram_prev[b].at(1) : class_gram[b].at(1);

      ClusterLossInputs in;
      in.cluster_m = rate.total_m;
      in.inv_s_self = 1.0;
      in.self_full_m = parts[a].sample_count();
      for (int k : cparts[a].present_classes()) {
        in.self_full_class_m[k] = cparts[a].count(k);
        in.cluster_class_m[k] = cparts[a].count(k) + (k == 1 ? cparts[b].count(k) : 0);
      }
      ClusterPeer peer;
      peer.node = b;
      peer.inv_s = 1.0;
      peer.fresh = pos == 1;
      SymMatrix base = peer_whole;
      base.axpy(-1.0, peer_shared_block);
      peer.expansion_base = base;
      for (int k : cparts[b].present_classes()) peer.class_counts[k] = cparts[b].count(k);
      peer.shared_classes = {1};
      in.peers.push_back(peer);
      in.ctx.gamma = cfg.gamma;
      in.ctx.pair_terms.push_back({b, 1});
      in.ctx.duals[{b, 1}] = duals[a].at(1);
      in.ctx.peer_prev[{b, 1}] = label_prev[b].at(1);
      for (int k : cparts[a].present_classes()) in.ctx.self_prev[k] = label_prev[a].at(k);

      // one full-batch inner step, exactly like the trainer's schedule
      const ForwardTrace trace = encoder_forward_trace(params[a], parts[a].inputs);
      const Matrix zg = cluster_loss_grad(trace.output, cparts[a], in, rate);
      adam_step(params[a], encoder_backward(params[a], trace, zg), adam[a]);
      refresh(a);

      // replayed loss value straight from the raw features
      std::map<int, SymMatrix> peer_whole_for_loss;
      SymMatrix for_loss = pos == 0 ? whole_prev[b] : whole[b];
      for_loss.axpy(-1.0, pos == 0 ? class_gram_prev[b].at(1) : class_gram[b].at(1));
      peer_whole_for_loss[b] = for_loss;
      const double oracle = eq18_value(a, peer_whole_for_loss, label_prev[b], label_prev[a]);
      const double trainer_value = state.trajectory[a][t - 1].total();
      worst_gap = std::max(worst_gap, std::abs(oracle - trainer_value));
    }
  }

  // the replay must land on the trainer's exact parameters
  bool params_ok = true;
  for (int a = 0; a < 2; ++a) {
    for (size_t l = 0; l < params[a].weights.size(); ++l) {
      params_ok = params_ok && params[a].weights[l].data() == state.encoders[a].weights[l].data();
    }
  }

  Outcome out;
  out.pass = trace_ok && params_ok && worst_gap < 1e-9;
  out.detail = std::string("trace ") + (trace_ok ? "exact" : "MISMATCH") + ", replay " +
               (params_ok ? "bitwise" : "DIVERGED") + ", max loss gap " + fmt(worst_gap);
  return out;
}

// ---------- criterion 12 ----------

Outcome criterion12() {
  bool ok = true;
  std::string detail;

  // three-byte vector file, bit-exact
  const std::vector<uint8_t> tiny = {0, 0, 0x08, 0x01, 0, 0, 0, 3, 9, 8, 7};
  const IdxTensor t = parse_idx(tiny);
  ok = ok && t.dims == std::vector<int>{3} && t.values == std::vector<double>{9.0, 8.0, 7.0};

  // MNIST-style image header
  std::vector<uint8_t> img = {0, 0, 0x08, 0x03, 0, 0, 0, 2, 0, 0, 0, 28, 0, 0, 0, 28};
  img.resize(16 + 2 * 28 * 28, 42);
  const IdxTensor imgs = parse_idx(img);
  ok = ok && imgs.dims == std::vector<int>{2, 28, 28} && imgs.values.size() == 2u * 28 * 28 && imgs.values[0] == 42.0;

  int errors_seen = 0;
  try {
    auto bad = tiny;
    bad[0] = 9;
    parse_idx(bad);
  } catch (const BadMagic&) {
    ++errors_seen;
  }
  try {
    auto bad = tiny;
    bad[2] = 0x0C;
    parse_idx(bad);
  } catch (const TypeUnsupported&) {
    ++errors_seen;
  }
  try {
    auto bad = tiny;
    bad.pop_back();
    parse_idx(bad);
  } catch (const TruncatedPayload&) {
    ++errors_seen;
  }

  Outcome out;
  out.pass = ok && errors_seen == 3;
  out.detail = std::string("parses ") + (ok ? "bit-exact" : "WRONG") + ", " + std::to_string(errors_seen) +
               "/3 error classes raised";
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Check> checks = {
      {1, "single-node reduction matches centralized descent", criterion1},
      {2, "analytic gradients match finite differences", criterion2},
      {3, "orthogonality and spectrum guarantees on the desk preset", criterion3},
      {4, "variance consensus converges and stays converged", criterion4},
      {5, "augmented-Lagrangian loss trend", criterion5},
      {6, "clustering reproduces both label-cover fixtures", criterion6},
      {7, "dual antisymmetry holds on every trainer run", criterion7},
      {8, "collapse contrast against the D-SGD baseline", criterion8},
      {9, "nearest-subspace classifier sanity", criterion9},
      {10, "communication accounting matches the closed forms", criterion10},
      {11, "non-iid staleness and substitution audit", criterion11},
      {12, "idx parser bit-exactness and error taxonomy", criterion12},
  };

  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));

  int failures = 0;
  for (const Check& check : checks) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), check.id) == selected.end()) continue;
    Outcome outcome;
    try {
      outcome = check.run();
    } catch (const std::exception& e) {
      outcome.pass = false;
      outcome.detail = std::string("exception: ") + e.what();
    }
    std::cout << "criterion " << check.id << " [" << check.name << "]: " << (outcome.pass ? "PASS" : "FAIL") << " ("
              << outcome.detail << ")\n";
    if (!outcome.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
