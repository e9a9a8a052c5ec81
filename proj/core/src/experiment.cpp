#include "mcrnet/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include <json.hpp>

#include "mcrnet/errors.hpp"
#include "mcrnet/rng.hpp"
#include "mcrnet/trainer_noniid.hpp"

namespace mcrnet {

namespace {

constexpr const char* kCodeVersion = "0.1.0";

std::string now_iso() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&t, &tm_utc);
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

std::string hash_hex(uint64_t h) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

struct FileRegistry {
  std::vector<std::string> all;
  std::vector<std::string> current_stage;

  void add(const std::string& path) {
    all.push_back(path);
    current_stage.push_back(path);
  }
  void stage_done() { current_stage.clear(); }
  void mark_partial() {
    for (const std::string& path : current_stage) {
      std::error_code ec;
      std::filesystem::rename(path, path + ".partial", ec);
    }
  }
};

std::vector<EncoderSpec> encoder_specs_from(const ExperimentConfig& cfg) {
  std::vector<EncoderSpec> specs(cfg.part.nodes);
  for (int i = 0; i < cfg.part.nodes; ++i) {
    specs[i].hidden = cfg.hidden;
    const auto it = cfg.hidden_overrides.find(i);
    if (it != cfg.hidden_overrides.end()) specs[i].hidden = it->second;
    specs[i].activation = cfg.activation;
  }
  return specs;
}

uint64_t expected_bytes_iid(const Topology& topo, int num_classes, int dim, int rounds_run) {
  uint64_t per_round = 0;
  for (int i = 0; i < topo.n_nodes; ++i) {
    per_round += static_cast<uint64_t>(topo.neighbors[i].size()) * num_classes * dim * dim * 8;
  }
  return per_round * static_cast<uint64_t>(rounds_run + 1);
}

uint64_t expected_bytes_noniid(const ClusterPlan& plan, const LabelSets& labels, int dim, int rounds_run) {
  uint64_t per_round = 0;
  const uint64_t mat = static_cast<uint64_t>(dim) * dim * 8;
  for (int v = 0; v < plan.n_virtual(); ++v) {
    const int agent = plan.virtual_nodes[v].agent;
    const int cluster = plan.virtual_nodes[v].cluster;
    for (int u : plan.cluster_members[cluster]) {
      if (u != v && plan.virtual_nodes[u].agent != agent) per_round += mat;
    }
    for (int k : labels.labels_per_agent[agent]) {
      for (int j : plan.label_peers(k, labels)) {
        if (j != v && plan.virtual_nodes[j].agent != agent) per_round += mat;
      }
    }
  }
  return per_round * static_cast<uint64_t>(rounds_run + 1);
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  for (const std::string& l : lines) out << l << '\n';
  if (!out) throw IoError("write failed for " + path);
}

Matrix balanced_subset(const Dataset& data, int cap, std::vector<int>& labels_out) {
  const int per_class = std::max(1, cap / std::max(1, data.num_classes));
  std::vector<int> cols;
  std::map<int, int> taken;
  for (int c = 0; c < data.sample_count(); ++c) {
    if (taken[data.labels[c]] < per_class) {
      ++taken[data.labels[c]];
      cols.push_back(c);
    }
  }
  labels_out.clear();
  for (int c : cols) labels_out.push_back(data.labels[c]);
  return data.inputs.select_columns(cols);
}

Matrix average_features(const std::vector<Matrix>& views) {
  Matrix acc = views.front();
  for (size_t i = 1; i < views.size(); ++i) acc += views[i];
  acc *= 1.0 / views.size();
  return acc;
}

}  // namespace

std::string csv_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_manifest(const std::string& path, const RunManifest& m) {
  nlohmann::json j;
  j["config_hash"] = m.config_hash;
  j["code_version"] = m.code_version;
  j["started"] = m.started;
  j["finished"] = m.finished;
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : m.stages) stages.push_back({{"name", s.name}, {"millis", s.millis}});
  j["stages"] = stages;
  j["files"] = m.files;
  if (!m.failed_stage.empty()) {
    j["failed_stage"] = m.failed_stage;
    j["error"] = m.error;
  }
  j["logged_bytes"] = m.logged_bytes;
  j["expected_bytes"] = m.expected_bytes;
  j["max_dual_asymmetry"] = m.max_dual_asymmetry;
  j["max_unit_norm_err"] = m.max_unit_norm_err;
  j["notes"] = m.notes;
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << j.dump(2) << '\n';
}

ExperimentResult run_experiment(const ExperimentConfig& config, const std::string& out_dir, bool quiet) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  fs::create_directories(out_dir + "/checkpoints");

  ExperimentResult result;
  RunManifest& manifest = result.manifest;
  manifest.config_hash = hash_hex(config.hash());
  manifest.code_version = kCodeVersion;
  manifest.started = now_iso();

  FileRegistry files;
  std::string stage_name;
  const auto stage_clock = [&](const std::string& name) {
    files.stage_done();
    stage_name = name;
    if (!quiet) std::cerr << "[stage] " << name << '\n';
    return std::chrono::steady_clock::now();
  };
  const auto stage_end = [&](std::chrono::steady_clock::time_point t0) {
    const auto dt = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    manifest.stages.push_back({stage_name, dt});
  };

  Dataset train, test;
  std::vector<Dataset> parts;
  ClusterPlan plan;
  LabelSets labels;
  TrainConfig tc = config.train;
  tc.seed = config.master_seed;

  try {
    {
      const auto t0 = stage_clock("data");
      if (config.data.source == DataConfig::Source::synthetic) {
        const Dataset full =
            gen_synthetic_subspaces(config.data.classes, config.data.class_dims,
                                    config.data.per_class + config.data.test_per_class, config.data.ambient_dim,
                                    config.data.noise, mix_seed(config.master_seed, 0xda7a));
        auto split = split_per_class(full, config.data.per_class);
        train = std::move(split.first);
        test = std::move(split.second);
      } else {
        train = load_mnist(config.data.idx_images, config.data.idx_labels, config.data.limit);
        if (!config.data.idx_test_images.empty()) {
          test = load_mnist(config.data.idx_test_images, config.data.idx_test_labels, config.data.test_limit);
        } else {
          auto split = split_per_class(train, train.sample_count() * 4 / (5 * train.num_classes));
          train = std::move(split.first);
          test = std::move(split.second);
        }
      }
      save_dataset(out_dir + "/train.mc2d", train);
      files.add(out_dir + "/train.mc2d");
      save_dataset(out_dir + "/test.mc2d", test);
      files.add(out_dir + "/test.mc2d");
      stage_end(t0);
    }

    {
      const auto t0 = stage_clock("partition");
      PartitionSpec spec;
      spec.mode = config.part.mode == PartitionConfig::Mode::iid ? PartitionSpec::Mode::iid
                                                                 : PartitionSpec::Mode::by_labels;
      spec.n_nodes = config.part.nodes;
      spec.node_labels = config.part.node_labels;
      spec.seed = mix_seed(config.master_seed, 0x9a47);
      parts = partition(train, spec);
      stage_end(t0);
    }

    if (config.algorithm == Algorithm::noniid) {
      const auto t0 = stage_clock("plan");
      labels.num_classes = train.num_classes;
      labels.labels_per_agent = config.part.node_labels;
      for (auto& ls : labels.labels_per_agent) {
        std::sort(ls.begin(), ls.end());
        ls.erase(std::unique(ls.begin(), ls.end()), ls.end());
      }
      std::string plan_file = config.plan_path;
      if (!fs::path(plan_file).is_absolute()) plan_file = out_dir + "/" + plan_file;
      if (fs::exists(plan_file)) {
        std::ifstream in(plan_file);
        std::stringstream ss;
        ss << in.rdbuf();
        plan = plan_from_json(ss.str());
      } else {
        plan = cluster_with_replication(labels);
        std::ofstream out(plan_file);
        if (!out) throw IoError("cannot write plan to " + plan_file);
        out << plan_to_json(plan) << '\n';
        files.add(plan_file);
      }
      const auto violations = validate_plan(plan, labels);
      if (!violations.empty()) throw ValidationError("plan: " + violations.front());
      stage_end(t0);
    }

    {
      const auto t0 = stage_clock("enforce");
      EnforcementReport rep;
      if (config.algorithm == Algorithm::noniid) {
        rep = enforce_cluster_proportions(parts, plan, mix_seed(config.master_seed, 0xadd));
      } else {
        rep = enforce_proportions(parts, mix_seed(config.master_seed, 0xadd));
      }
      manifest.notes.push_back("enforcement duplicates: " + std::to_string(rep.duplicates_added));
      if (!rep.exact) {
        manifest.notes.push_back("enforcement inexact, max relative deviation " + csv_real(rep.max_rel_deviation));
        for (const auto& n : rep.notes) manifest.notes.push_back("enforcement: " + n);
      }
      stage_end(t0);
    }

    Topology topo;
    {
      const auto t0 = stage_clock("train");
      const std::vector<EncoderSpec> specs = encoder_specs_from(config);
      switch (config.algorithm) {
        case Algorithm::iid: {
          topo = build_topology(config.part.nodes, config.edge_prob, mix_seed(config.master_seed, 0x70b0));
          result.state = run_iid(parts, topo, specs, tc);
          manifest.expected_bytes =
              expected_bytes_iid(topo, train.num_classes, tc.feature_dim, result.state.rounds_run);
          break;
        }
        case Algorithm::dsgd: {
          topo = build_topology(config.part.nodes, config.edge_prob, mix_seed(config.master_seed, 0x70b0));
          result.state = run_dsgd_baseline(parts, topo, specs, tc);
          manifest.expected_bytes = result.state.total_bytes;
          break;
        }
        case Algorithm::noniid: {
          result.state = run_noniid(parts, plan, labels, specs, tc);
          manifest.expected_bytes = expected_bytes_noniid(plan, labels, tc.feature_dim, result.state.rounds_run);
          break;
        }
      }
      manifest.logged_bytes = result.state.total_bytes;
      manifest.max_dual_asymmetry = result.state.max_dual_asymmetry;
      manifest.max_unit_norm_err = result.state.max_unit_norm_err;
      for (const auto& n : result.state.notes) manifest.notes.push_back(n);
      stage_end(t0);
    }

    {
      const auto t0 = stage_clock("eval");
      // evaluation encoders: one per agent
      std::vector<const EncoderParams*> units;
      if (config.algorithm == Algorithm::noniid) {
        for (int a = 0; a < plan.n_agents(); ++a) units.push_back(&result.state.encoders[plan.virtual_of_agent[a][0]]);
      } else {
        for (const auto& enc : result.state.encoders) units.push_back(&enc);
      }
      const bool dsgd = config.algorithm == Algorithm::dsgd;
      auto embed = [&](const EncoderParams& enc, const Matrix& x) {
        return dsgd ? classifier_embed(enc, x) : encoder_forward(enc, x);
      };

      // trained features per node on its own shard
      std::vector<Matrix> node_features;
      std::vector<std::vector<int>> node_labels;
      for (size_t i = 0; i < units.size(); ++i) {
        node_features.push_back(embed(*units[i], parts[i].inputs));
        node_labels.push_back(parts[i].labels);
      }
      const std::vector<int> class_dims =
          config.data.source == DataConfig::Source::synthetic ? config.data.class_dims : std::vector<int>{};
      result.geometry.theorem1 =
          check_theorem1(node_features, node_labels, config.eval.tol_orth, config.eval.tol_spec, class_dims);
      result.geometry.spectra = result.geometry.theorem1.spectra;

      // pooled overall spectrum
      {
        int total_cols = 0;
        for (const Matrix& f : node_features) total_cols += f.cols();
        Matrix pooled(node_features.front().rows(), total_cols);
        int at = 0;
        for (const Matrix& f : node_features) {
          for (int c = 0; c < f.cols(); ++c, ++at) {
            for (int r = 0; r < f.rows(); ++r) pooled(r, at) = f(r, c);
          }
        }
        result.geometry.overall_spectrum = singular_values(pooled);
      }

      // common evaluation subset encoded by every node
      std::vector<int> eval_labels;
      const Matrix eval_x = balanced_subset(test, config.eval.eval_samples, eval_labels);
      std::vector<Matrix> views;
      for (const EncoderParams* enc : units) views.push_back(embed(*enc, eval_x));
      for (size_t i = 0; i < views.size(); ++i) {
        for (size_t j = i + 1; j < views.size(); ++j) {
          result.geometry.cka[{static_cast<int>(i), static_cast<int>(j)}] = linear_cka(views[i], views[j]);
        }
      }
      bool same_dim = true;
      for (const Matrix& v : views) same_dim = same_dim && v.rows() == views.front().rows();
      const Matrix global = same_dim ? average_features(views) : views.front();
      if (!same_dim) manifest.notes.push_back("heterogeneous embed dims; global metrics use node 0");

      result.geometry.class_cosine = class_mean_cosine_stats(global, eval_labels, test.num_classes);
      result.geometry.wccr_value = wccr(global, eval_labels);
      result.geometry.iidr_value = iidr(global, eval_labels);

      // cosine heatmap object: per-node features of their own shards,
      // concatenated and capped at the evaluation budget
      {
        std::vector<std::vector<double>> cols;
        std::vector<int> fig_labels;
        const int quota = std::max(1, config.eval.eval_samples / std::max<int>(1, units.size()));
        for (size_t i = 0; i < units.size() && static_cast<int>(cols.size()) < config.eval.eval_samples; ++i) {
          std::vector<int> sub_labels;
          const Matrix sub = balanced_subset(parts[i], quota, sub_labels);
          const Matrix z = embed(*units[i], sub);
          for (int c = 0; c < z.cols() && static_cast<int>(cols.size()) < config.eval.eval_samples; ++c) {
            std::vector<double> col(z.rows());
            for (int r = 0; r < z.rows(); ++r) col[r] = z(r, c);
            cols.push_back(std::move(col));
            fig_labels.push_back(sub_labels[c]);
          }
        }
        Matrix pooled(static_cast<int>(cols.front().size()), static_cast<int>(cols.size()));
        for (size_t c = 0; c < cols.size(); ++c) {
          for (size_t r = 0; r < cols[c].size(); ++r) pooled(static_cast<int>(r), static_cast<int>(c)) = cols[c][r];
        }
        result.figure_cosine = cosine_similarity_matrix(pooled, label_sorted_order(fig_labels));
      }

      // nearest-subspace accuracy on globally averaged representations
      {
        std::vector<Matrix> train_views;
        Matrix all_train = train.inputs;
        std::vector<int> all_labels = train.labels;
        for (const EncoderParams* enc : units) train_views.push_back(embed(*enc, all_train));
        bool ok = true;
        for (const Matrix& v : train_views) ok = ok && v.rows() == train_views.front().rows();
        if (ok) {
          const Matrix train_glob = average_features(train_views);
          const SubspaceModel model =
              fit_subspace_model(train_glob, all_labels, train.num_classes, config.eval.energy_tau);
          result.geometry.accuracy = classification_accuracy(model, global, eval_labels);
        }
      }
      stage_end(t0);
    }

    {
      const auto t0 = stage_clock("reports");
      const TrainedState& st = result.state;
      // loss.csv
      {
        std::vector<std::string> rows = {"round,node,rc,r,dual,penalty,total"};
        for (size_t i = 0; i < st.initial_loss.size(); ++i) {
          const LossBreakdown& b = st.initial_loss[i];
          rows.push_back("0," + std::to_string(i) + "," + csv_real(b.class_rate) + "," + csv_real(b.rate) + "," +
                         csv_real(b.dual) + "," + csv_real(b.penalty) + "," + csv_real(b.total()));
        }
        for (int t = 1; t <= st.rounds_run; ++t) {
          for (size_t i = 0; i < st.trajectory.size(); ++i) {
            const LossBreakdown& b = st.trajectory[i][t - 1];
            rows.push_back(std::to_string(t) + "," + std::to_string(i) + "," + csv_real(b.class_rate) + "," +
                           csv_real(b.rate) + "," + csv_real(b.dual) + "," + csv_real(b.penalty) + "," +
                           csv_real(b.total()));
          }
        }
        write_lines(out_dir + "/loss.csv", rows);
        files.add(out_dir + "/loss.csv");
      }
      // consensus.csv
      {
        std::vector<std::string> rows = {"round,max_pair_gap"};
        for (size_t t = 0; t < st.consensus.size(); ++t) {
          rows.push_back(std::to_string(t) + "," + csv_real(st.consensus[t]));
        }
        write_lines(out_dir + "/consensus.csv", rows);
        files.add(out_dir + "/consensus.csv");
      }
      // comm_bytes.csv
      {
        std::vector<std::string> rows = {"round,node,bytes_sent"};
        rows.insert(rows.end(), st.cost_rows.begin(), st.cost_rows.end());
        write_lines(out_dir + "/comm_bytes.csv", rows);
        files.add(out_dir + "/comm_bytes.csv");
      }
      // cluster_trace.csv
      if (!st.cluster_trace.empty()) {
        std::vector<std::string> rows = {"round,cluster,position,node,fresh_stats_used"};
        rows.insert(rows.end(), st.cluster_trace.begin(), st.cluster_trace.end());
        write_lines(out_dir + "/cluster_trace.csv", rows);
        files.add(out_dir + "/cluster_trace.csv");
      }
      // geometry.json
      {
        std::ofstream out(out_dir + "/geometry.json");
        out << geometry_to_json(result.geometry) << '\n';
        files.add(out_dir + "/geometry.json");
      }
      // cosine.csv + cosine.svg: the label-sorted learned representations
      {
        const Matrix& cosine = result.figure_cosine;
        std::vector<std::string> rows;
        rows.reserve(cosine.rows());
        for (int r = 0; r < cosine.rows(); ++r) {
          std::string row;
          for (int c = 0; c < cosine.cols(); ++c) {
            if (c) row += ',';
            row += csv_real(cosine(r, c));
          }
          rows.push_back(std::move(row));
        }
        write_lines(out_dir + "/cosine.csv", rows);
        files.add(out_dir + "/cosine.csv");
        write_cosine_svg(out_dir + "/cosine.svg", cosine);
        files.add(out_dir + "/cosine.svg");
      }
      // spectra.csv
      {
        std::vector<std::string> rows = {"scope,class,index,sigma"};
        for (size_t i = 0; i < result.geometry.overall_spectrum.size(); ++i) {
          rows.push_back("overall,-1," + std::to_string(i) + "," + csv_real(result.geometry.overall_spectrum[i]));
        }
        for (const auto& spec : result.geometry.spectra) {
          for (size_t i = 0; i < spec.singular_values.size(); ++i) {
            rows.push_back("class," + std::to_string(spec.class_id) + "," + std::to_string(i) + "," +
                           csv_real(spec.singular_values[i]));
          }
        }
        write_lines(out_dir + "/spectra.csv", rows);
        files.add(out_dir + "/spectra.csv");
      }
      // checkpoints
      {
        if (config.algorithm == Algorithm::noniid) {
          for (int a = 0; a < plan.n_agents(); ++a) {
            const std::string path = out_dir + "/checkpoints/node_" + std::to_string(a) + ".mc2e";
            save_encoder(path, result.state.encoders[plan.virtual_of_agent[a][0]]);
            files.add(path);
          }
        } else {
          for (size_t i = 0; i < st.encoders.size(); ++i) {
            const std::string path = out_dir + "/checkpoints/node_" + std::to_string(i) + ".mc2e";
            save_encoder(path, st.encoders[i]);
            files.add(path);
          }
        }
      }
      stage_end(t0);
    }
  } catch (const std::exception& e) {
    files.mark_partial();
    manifest.failed_stage = stage_name;
    manifest.error = e.what();
    manifest.finished = now_iso();
    manifest.files = files.all;
    write_manifest(out_dir + "/manifest.json", manifest);
    throw;
  }

  files.stage_done();
  manifest.finished = now_iso();
  manifest.files = files.all;
  manifest.files.push_back(out_dir + "/manifest.json");
  write_manifest(out_dir + "/manifest.json", manifest);
  return result;
}

std::vector<std::string> check_run(const ExperimentResult& result) {
  std::vector<std::string> failures;
  const TrainedState& st = result.state;
  if (st.max_dual_asymmetry > 1e-10) {
    failures.push_back("dual antisymmetry violated: " + csv_real(st.max_dual_asymmetry));
  }
  if (st.max_unit_norm_err > 1e-6) {
    failures.push_back("unit-norm contract violated: " + csv_real(st.max_unit_norm_err));
  }
  for (const auto& node_stats : st.final_stats) {
    for (const auto& [k, s] : node_stats) {
      if (std::abs(s.matrix.trace() - 1.0) > 1e-6) {
        failures.push_back("gram trace != 1 for class " + std::to_string(k));
      }
    }
  }
  if (result.manifest.expected_bytes != result.manifest.logged_bytes) {
    failures.push_back("communication bytes mismatch: logged " + std::to_string(result.manifest.logged_bytes) +
                       ", closed form " + std::to_string(result.manifest.expected_bytes));
  }
  return failures;
}

}  // namespace mcrnet
