#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mcrnet/clustering.hpp"
#include "mcrnet/config.hpp"
#include "mcrnet/errors.hpp"
#include "mcrnet/evaluation.hpp"
#include "mcrnet/experiment.hpp"
#include "mcrnet/rng.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;
constexpr int kExitCheck = 4;

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "out";
  std::string plan_path;
  long long seed_override = -1;
  bool quiet = false;
  bool check = false;
};

mcrnet::ExperimentConfig load_with_overrides(const CommonArgs& args, mcrnet::Algorithm algorithm) {
  mcrnet::ExperimentConfig cfg = mcrnet::load_config(args.config_path);
  cfg.algorithm = algorithm;
  if (!args.plan_path.empty()) cfg.plan_path = args.plan_path;
  if (args.seed_override >= 0) cfg.master_seed = static_cast<uint64_t>(args.seed_override);
  if (algorithm == mcrnet::Algorithm::noniid && cfg.plan_path.empty()) {
    throw mcrnet::ValidationError("experiment.plan: required for noniid (use --plan)");
  }
  return cfg;
}

int run_training(const CommonArgs& args, mcrnet::Algorithm algorithm) {
  const mcrnet::ExperimentConfig cfg = load_with_overrides(args, algorithm);
  const mcrnet::ExperimentResult result = mcrnet::run_experiment(cfg, args.out_dir, args.quiet);
  if (!args.quiet) {
    std::cout << "run complete: " << result.state.rounds_run << " rounds, outputs in " << args.out_dir << '\n';
  }
  if (args.check) {
    const auto failures = mcrnet::check_run(result);
    if (!failures.empty()) {
      for (const auto& f : failures) std::cerr << "check failed: " << f << '\n';
      return kExitCheck;
    }
    if (!args.quiet) std::cout << "all run checks passed\n";
  }
  return kExitOk;
}

int run_gen_data(const CommonArgs& args) {
  mcrnet::ExperimentConfig cfg = mcrnet::load_config(args.config_path);
  if (args.seed_override >= 0) cfg.master_seed = static_cast<uint64_t>(args.seed_override);
  std::filesystem::create_directories(args.out_dir);
  mcrnet::Dataset train, test;
  if (cfg.data.source == mcrnet::DataConfig::Source::synthetic) {
    const mcrnet::Dataset full = mcrnet::gen_synthetic_subspaces(
        cfg.data.classes, cfg.data.class_dims, cfg.data.per_class + cfg.data.test_per_class, cfg.data.ambient_dim,
        cfg.data.noise, mcrnet::mix_seed(cfg.master_seed, 0xda7a));
    auto split = mcrnet::split_per_class(full, cfg.data.per_class);
    train = std::move(split.first);
    test = std::move(split.second);
  } else {
    train = mcrnet::load_mnist(cfg.data.idx_images, cfg.data.idx_labels, cfg.data.limit);
    test = mcrnet::load_mnist(cfg.data.idx_test_images, cfg.data.idx_test_labels, cfg.data.test_limit);
  }
  mcrnet::save_dataset(args.out_dir + "/train.mc2d", train);
  mcrnet::save_dataset(args.out_dir + "/test.mc2d", test);
  if (!args.quiet) {
    std::cout << "wrote " << train.sample_count() << " train and " << test.sample_count() << " test samples to "
              << args.out_dir << '\n';
  }
  return kExitOk;
}

int run_cluster_plan(const std::string& labels_path, const std::string& out_path) {
  std::ifstream in(labels_path);
  if (!in) throw mcrnet::IoError("cannot open " + labels_path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw mcrnet::ParseError(std::string("labels json: ") + e.what());
  }
  mcrnet::LabelSets labels;
  labels.num_classes = j.at("num_classes").get<int>();
  labels.labels_per_agent = j.at("labels").get<std::vector<std::vector<int>>>();
  const mcrnet::ClusterPlan plan = mcrnet::cluster_with_replication(labels);
  const std::string text = mcrnet::plan_to_json(plan);
  if (out_path.empty()) {
    std::cout << text << '\n';
  } else {
    std::ofstream out(out_path);
    if (!out) throw mcrnet::IoError("cannot open " + out_path);
    out << text << '\n';
  }
  return kExitOk;
}

int run_eval(const std::string& checkpoints_dir, const std::string& data_path, const std::string& train_path,
             const std::string& out_dir, double tau, bool quiet) {
  namespace fs = std::filesystem;
  std::vector<std::string> ckpt_files;
  for (const auto& entry : fs::directory_iterator(checkpoints_dir)) {
    if (entry.path().extension() == ".mc2e") ckpt_files.push_back(entry.path().string());
  }
  std::sort(ckpt_files.begin(), ckpt_files.end());
  if (ckpt_files.empty()) throw mcrnet::IoError("no .mc2e checkpoints in " + checkpoints_dir);

  std::vector<mcrnet::EncoderParams> encoders;
  for (const auto& f : ckpt_files) encoders.push_back(mcrnet::load_encoder(f));

  const mcrnet::Dataset data = mcrnet::load_dataset(data_path);
  fs::create_directories(out_dir);

  std::vector<mcrnet::Matrix> views;
  std::vector<std::vector<int>> view_labels;
  for (const auto& enc : encoders) {
    views.push_back(mcrnet::encoder_forward(enc, data.inputs));
    view_labels.push_back(data.labels);
  }

  mcrnet::GeometryReport report;
  report.theorem1 = mcrnet::check_theorem1(views, view_labels, 0.2, 0.05);
  report.spectra = report.theorem1.spectra;

  mcrnet::Matrix global = views.front();
  for (size_t i = 1; i < views.size(); ++i) global += views[i];
  global *= 1.0 / views.size();
  report.overall_spectrum = mcrnet::singular_values(global);

  for (size_t i = 0; i < views.size(); ++i) {
    for (size_t j = i + 1; j < views.size(); ++j) {
      report.cka[{static_cast<int>(i), static_cast<int>(j)}] = mcrnet::linear_cka(views[i], views[j]);
    }
  }
  report.class_cosine = mcrnet::class_mean_cosine_stats(global, data.labels, data.num_classes);
  report.wccr_value = mcrnet::wccr(global, data.labels);
  report.iidr_value = mcrnet::iidr(global, data.labels);

  if (!train_path.empty()) {
    const mcrnet::Dataset train = mcrnet::load_dataset(train_path);
    std::vector<mcrnet::Matrix> train_views;
    for (const auto& enc : encoders) train_views.push_back(mcrnet::encoder_forward(enc, train.inputs));
    mcrnet::Matrix train_glob = train_views.front();
    for (size_t i = 1; i < train_views.size(); ++i) train_glob += train_views[i];
    train_glob *= 1.0 / train_views.size();
    const mcrnet::SubspaceModel model = mcrnet::fit_subspace_model(train_glob, train.labels, train.num_classes, tau);
    report.accuracy = mcrnet::classification_accuracy(model, global, data.labels);
  }

  {
    std::ofstream out(out_dir + "/geometry.json");
    out << mcrnet::geometry_to_json(report) << '\n';
  }
  const mcrnet::Matrix cosine = mcrnet::cosine_similarity_matrix(global, mcrnet::label_sorted_order(data.labels));
  {
    std::ofstream out(out_dir + "/cosine.csv");
    for (int r = 0; r < cosine.rows(); ++r) {
      for (int c = 0; c < cosine.cols(); ++c) {
        if (c) out << ',';
        out << mcrnet::csv_real(cosine(r, c));
      }
      out << '\n';
    }
  }
  mcrnet::write_cosine_svg(out_dir + "/cosine.svg", cosine);
  {
    std::ofstream out(out_dir + "/spectra.csv");
    out << "scope,class,index,sigma\n";
    for (size_t i = 0; i < report.overall_spectrum.size(); ++i) {
      out << "overall,-1," << i << "," << mcrnet::csv_real(report.overall_spectrum[i]) << '\n';
    }
    for (const auto& spec : report.spectra) {
      for (size_t i = 0; i < spec.singular_values.size(); ++i) {
        out << "class," << spec.class_id << "," << i << "," << mcrnet::csv_real(spec.singular_values[i]) << '\n';
      }
    }
  }
  if (!quiet) {
    std::cout << "wccr=" << report.wccr_value << " iidr=" << report.iidr_value
              << " offdiag_mean=" << report.class_cosine.offdiag_mean;
    if (report.accuracy >= 0.0) std::cout << " accuracy=" << report.accuracy;
    std::cout << '\n';
  }
  return kExitOk;
}

int run_report(const std::string& out_dir) {
  std::ifstream in(out_dir + "/manifest.json");
  if (!in) throw mcrnet::IoError("no manifest.json in " + out_dir);
  nlohmann::json manifest;
  in >> manifest;
  std::cout << "run " << manifest.value("config_hash", "?") << " (code " << manifest.value("code_version", "?")
            << ")\n";
  std::cout << "  started  " << manifest.value("started", "?") << "\n  finished " << manifest.value("finished", "?")
            << '\n';
  if (manifest.contains("failed_stage")) {
    std::cout << "  FAILED at stage " << manifest["failed_stage"] << ": " << manifest.value("error", "") << '\n';
  }
  for (const auto& stage : manifest.value("stages", nlohmann::json::array())) {
    std::cout << "  stage " << stage.value("name", "?") << ": " << stage.value("millis", 0.0) << " ms\n";
  }
  std::cout << "  bytes logged " << manifest.value("logged_bytes", 0ULL) << ", closed form "
            << manifest.value("expected_bytes", 0ULL) << '\n';
  std::ifstream geo(out_dir + "/geometry.json");
  if (geo) {
    nlohmann::json g;
    geo >> g;
    std::cout << "  wccr " << g.value("wccr", 0.0) << ", offdiag_mean " << g.value("offdiag_mean", 0.0);
    if (g.contains("accuracy")) std::cout << ", accuracy " << g["accuracy"];
    std::cout << '\n';
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"decentralized coding-rate representation learning workbench"};
  app.require_subcommand(1);

  CommonArgs args;
  app.add_option("--config", args.config_path, "experiment config file")->envname("MCRNET_CONFIG");
  app.add_option("--out", args.out_dir, "output directory");
  app.add_option("--seed", args.seed_override, "master seed override");
  app.add_flag("--quiet", args.quiet, "suppress progress output");
  app.fallthrough();

  auto* gen = app.add_subcommand("gen-data", "generate or ingest datasets");
  auto* plan_cmd = app.add_subcommand("cluster-plan", "compute a label-cover cluster plan");
  std::string labels_path, plan_out;
  plan_cmd->add_option("--labels", labels_path, "per-agent label sets (json)")->required();
  plan_cmd->add_option("--plan-out", plan_out, "write plan here instead of stdout");

  auto* train_iid = app.add_subcommand("train-iid", "Algorithm-1 style training on i.i.d. shards");
  auto* train_noniid = app.add_subcommand("train-noniid", "cluster BCD training on label-skewed shards");
  auto* train_dsgd = app.add_subcommand("train-dsgd", "decentralized SGD cross-entropy baseline");
  train_noniid->add_option("--plan", args.plan_path, "cluster plan json");
  for (CLI::App* cmd : {train_iid, train_noniid, train_dsgd}) {
    cmd->add_flag("--check", args.check, "run post-run invariant checks (exit 4 on failure)");
  }

  auto* eval_cmd = app.add_subcommand("eval", "geometry metrics for saved checkpoints");
  std::string ckpt_dir, data_path, train_path;
  double tau = 0.95;
  eval_cmd->add_option("--checkpoints", ckpt_dir, "checkpoint directory")->required();
  eval_cmd->add_option("--data", data_path, "dataset cache to evaluate on")->required();
  eval_cmd->add_option("--train", train_path, "training cache for the subspace classifier");
  eval_cmd->add_option("--tau", tau, "spectral energy threshold for subspace rank");

  auto* report_cmd = app.add_subcommand("report", "summarize an existing run directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (gen->parsed()) {
      if (args.config_path.empty()) throw mcrnet::ValidationError("--config is required");
      return run_gen_data(args);
    }
    if (plan_cmd->parsed()) return run_cluster_plan(labels_path, plan_out);
    if (train_iid->parsed()) {
      if (args.config_path.empty()) throw mcrnet::ValidationError("--config is required");
      return run_training(args, mcrnet::Algorithm::iid);
    }
    if (train_noniid->parsed()) {
      if (args.config_path.empty()) throw mcrnet::ValidationError("--config is required");
      return run_training(args, mcrnet::Algorithm::noniid);
    }
    if (train_dsgd->parsed()) {
      if (args.config_path.empty()) throw mcrnet::ValidationError("--config is required");
      return run_training(args, mcrnet::Algorithm::dsgd);
    }
    if (eval_cmd->parsed()) return run_eval(ckpt_dir, data_path, train_path, args.out_dir, tau, args.quiet);
    if (report_cmd->parsed()) return run_report(args.out_dir);
  } catch (const mcrnet::ParseError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const mcrnet::ValidationError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}
