#include "mcrnet/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "mcrnet/errors.hpp"

namespace mcrnet {

namespace {

std::string trim(const std::string& s) {
  const size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<int> parse_int_list(const std::string& value, const std::string& field) {
  std::vector<int> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      size_t pos = 0;
      out.push_back(std::stoi(item, &pos));
      if (pos != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValidationError(field + ": bad integer '" + item + "'");
    }
  }
  if (out.empty()) throw ValidationError(field + ": empty list");
  return out;
}

long long parse_int(const std::string& value, const std::string& field) {
  try {
    size_t pos = 0;
    const long long v = std::stoll(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ValidationError(field + ": bad integer '" + value + "'");
  }
}

double parse_real(const std::string& value, const std::string& field) {
  try {
    size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ValidationError(field + ": bad real '" + value + "'");
  }
}

bool parse_bool(const std::string& value, const std::string& field) {
  if (value == "true" || value == "on" || value == "1") return true;
  if (value == "false" || value == "off" || value == "0") return false;
  throw ValidationError(field + ": bad boolean '" + value + "'");
}

std::string fmt_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
  // flat two-level key space: section.key
  std::map<std::string, std::string> kv;
  {
    std::stringstream ss(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(ss, line)) {
      ++lineno;
      const size_t comment = line.find_first_of("#;");
      if (comment != std::string::npos) line = line.substr(0, comment);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') throw ParseError("line " + std::to_string(lineno) + ": unterminated section header");
        section = trim(line.substr(1, line.size() - 2));
        if (section.empty()) throw ParseError("line " + std::to_string(lineno) + ": empty section name");
        continue;
      }
      const size_t eq = line.find('=');
      if (eq == std::string::npos) throw ParseError("line " + std::to_string(lineno) + ": expected key = value");
      if (section.empty()) throw ParseError("line " + std::to_string(lineno) + ": key outside any section");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty()) throw ParseError("line " + std::to_string(lineno) + ": empty key");
      const std::string full = section + "." + key;
      if (kv.count(full)) throw ParseError("line " + std::to_string(lineno) + ": duplicate key " + full);
      kv[full] = value;
    }
  }

  ExperimentConfig cfg;
  std::set<std::string> consumed;
  auto take = [&kv, &consumed](const std::string& full) -> const std::string* {
    const auto it = kv.find(full);
    if (it == kv.end()) return nullptr;
    consumed.insert(full);
    return &it->second;
  };

  if (const auto* v = take("experiment.algorithm")) {
    if (*v == "iid") {
      cfg.algorithm = Algorithm::iid;
    } else if (*v == "noniid") {
      cfg.algorithm = Algorithm::noniid;
    } else if (*v == "dsgd") {
      cfg.algorithm = Algorithm::dsgd;
    } else {
      throw ValidationError("experiment.algorithm: unknown value '" + *v + "'");
    }
  }
  if (const auto* v = take("experiment.master_seed")) cfg.master_seed = static_cast<uint64_t>(parse_int(*v, "experiment.master_seed"));
  if (const auto* v = take("experiment.plan")) cfg.plan_path = *v;

  if (const auto* v = take("data.source")) {
    if (*v == "synthetic") {
      cfg.data.source = DataConfig::Source::synthetic;
    } else if (*v == "idx") {
      cfg.data.source = DataConfig::Source::idx;
    } else {
      throw ValidationError("data.source: unknown value '" + *v + "'");
    }
  }
  if (const auto* v = take("data.classes")) cfg.data.classes = static_cast<int>(parse_int(*v, "data.classes"));
  if (const auto* v = take("data.class_dims")) cfg.data.class_dims = parse_int_list(*v, "data.class_dims");
  if (const auto* v = take("data.per_class")) cfg.data.per_class = static_cast<int>(parse_int(*v, "data.per_class"));
  if (const auto* v = take("data.test_per_class")) cfg.data.test_per_class = static_cast<int>(parse_int(*v, "data.test_per_class"));
  if (const auto* v = take("data.ambient_dim")) cfg.data.ambient_dim = static_cast<int>(parse_int(*v, "data.ambient_dim"));
  if (const auto* v = take("data.noise")) cfg.data.noise = parse_real(*v, "data.noise");
  if (const auto* v = take("data.idx_images")) cfg.data.idx_images = *v;
  if (const auto* v = take("data.idx_labels")) cfg.data.idx_labels = *v;
  if (const auto* v = take("data.idx_test_images")) cfg.data.idx_test_images = *v;
  if (const auto* v = take("data.idx_test_labels")) cfg.data.idx_test_labels = *v;
  if (const auto* v = take("data.limit")) cfg.data.limit = static_cast<int>(parse_int(*v, "data.limit"));
  if (const auto* v = take("data.test_limit")) cfg.data.test_limit = static_cast<int>(parse_int(*v, "data.test_limit"));

  if (const auto* v = take("partition.mode")) {
    if (*v == "iid") {
      cfg.part.mode = PartitionConfig::Mode::iid;
    } else if (*v == "by-labels") {
      cfg.part.mode = PartitionConfig::Mode::by_labels;
    } else {
      throw ValidationError("partition.mode: unknown value '" + *v + "'");
    }
  }
  if (const auto* v = take("partition.nodes")) cfg.part.nodes = static_cast<int>(parse_int(*v, "partition.nodes"));
  cfg.part.node_labels.assign(cfg.part.nodes, {});
  for (int i = 0; i < cfg.part.nodes; ++i) {
    if (const auto* v = take("partition.labels_node" + std::to_string(i))) {
      cfg.part.node_labels[i] = parse_int_list(*v, "partition.labels_node" + std::to_string(i));
    }
  }

  if (const auto* v = take("topology.edge_prob")) cfg.edge_prob = parse_real(*v, "topology.edge_prob");

  if (const auto* v = take("encoder.hidden")) cfg.hidden = parse_int_list(*v, "encoder.hidden");
  if (const auto* v = take("encoder.activation")) {
    if (*v == "elu") {
      cfg.activation = Activation::elu;
    } else if (*v == "relu") {
      cfg.activation = Activation::relu;
    } else {
      throw ValidationError("encoder.activation: unknown value '" + *v + "'");
    }
  }
  for (int i = 0; i < cfg.part.nodes; ++i) {
    if (const auto* v = take("encoder.hidden_node" + std::to_string(i))) {
      cfg.hidden_overrides[i] = parse_int_list(*v, "encoder.hidden_node" + std::to_string(i));
    }
  }

  if (const auto* v = take("train.rho")) cfg.train.rho = parse_real(*v, "train.rho");
  if (const auto* v = take("train.gamma")) cfg.train.gamma = parse_real(*v, "train.gamma");
  if (const auto* v = take("train.lr")) cfg.train.lr = parse_real(*v, "train.lr");
  if (const auto* v = take("train.weight_decay")) cfg.train.weight_decay = parse_real(*v, "train.weight_decay");
  if (const auto* v = take("train.rounds")) cfg.train.rounds = static_cast<int>(parse_int(*v, "train.rounds"));
  if (const auto* v = take("train.local_epochs")) cfg.train.local_epochs = static_cast<int>(parse_int(*v, "train.local_epochs"));
  if (const auto* v = take("train.batch")) cfg.train.batch = static_cast<int>(parse_int(*v, "train.batch"));
  if (const auto* v = take("train.eps_sq")) cfg.train.eps_sq = parse_real(*v, "train.eps_sq");
  if (const auto* v = take("train.feature_dim")) cfg.train.feature_dim = static_cast<int>(parse_int(*v, "train.feature_dim"));
  if (const auto* v = take("train.early_stop")) cfg.train.early_stop = parse_bool(*v, "train.early_stop");
  if (const auto* v = take("train.early_stop_tol")) cfg.train.early_stop_tol = parse_real(*v, "train.early_stop_tol");
  if (const auto* v = take("train.early_stop_window")) cfg.train.early_stop_window = static_cast<int>(parse_int(*v, "train.early_stop_window"));
  if (const auto* v = take("train.grad_norm_every")) cfg.train.grad_norm_every = static_cast<int>(parse_int(*v, "train.grad_norm_every"));
  if (const auto* v = take("train.check_invariants")) cfg.train.check_invariants = parse_bool(*v, "train.check_invariants");
  if (const auto* v = take("train.assumption_check")) {
    if (*v == "strict") {
      cfg.train.assumption_strict = true;
    } else if (*v == "warn") {
      cfg.train.assumption_strict = false;
    } else {
      throw ValidationError("train.assumption_check: unknown value '" + *v + "'");
    }
  }
  if (const auto* v = take("train.substitution")) cfg.train.substitute_shared = parse_bool(*v, "train.substitution");
  if (const auto* v = take("train.compression_weight")) {
    if (*v == "inside") {
      cfg.train.weight_reading = CompressionWeight::per_node_inside;
    } else if (*v == "outer") {
      cfg.train.weight_reading = CompressionWeight::outer_s_i;
    } else {
      throw ValidationError("train.compression_weight: unknown value '" + *v + "'");
    }
  }
  if (const auto* v = take("train.bcd_order")) {
    if (*v == "ascending") {
      cfg.train.bcd_descending = false;
    } else if (*v == "descending") {
      cfg.train.bcd_descending = true;
    } else {
      throw ValidationError("train.bcd_order: unknown value '" + *v + "'");
    }
  }

  if (const auto* v = take("eval.energy_tau")) cfg.eval.energy_tau = parse_real(*v, "eval.energy_tau");
  if (const auto* v = take("eval.eval_samples")) cfg.eval.eval_samples = static_cast<int>(parse_int(*v, "eval.eval_samples"));
  if (const auto* v = take("eval.tol_orth")) cfg.eval.tol_orth = parse_real(*v, "eval.tol_orth");
  if (const auto* v = take("eval.tol_spec")) cfg.eval.tol_spec = parse_real(*v, "eval.tol_spec");

  for (const auto& [key, value] : kv) {
    if (!consumed.count(key)) throw ValidationError("unknown key " + key);
  }

  // cross-field validation
  if (cfg.data.source == DataConfig::Source::synthetic) {
    if (cfg.data.class_dims.empty()) cfg.data.class_dims.assign(cfg.data.classes, 3);
    if (static_cast<int>(cfg.data.class_dims.size()) != cfg.data.classes) {
      throw ValidationError("data.class_dims: need one dim per class");
    }
  } else {
    if (cfg.data.idx_images.empty() || cfg.data.idx_labels.empty()) {
      throw ValidationError("data.idx_images/data.idx_labels: required for idx source");
    }
    cfg.data.classes = 10;
  }
  if (cfg.part.mode == PartitionConfig::Mode::by_labels) {
    for (int i = 0; i < cfg.part.nodes; ++i) {
      if (cfg.part.node_labels[i].empty()) {
        throw ValidationError("partition.labels_node" + std::to_string(i) + ": required in by-labels mode");
      }
    }
  }
  if (cfg.algorithm == Algorithm::noniid) {
    if (cfg.plan_path.empty()) throw ValidationError("experiment.plan: required for noniid");
    if (cfg.part.mode != PartitionConfig::Mode::by_labels) {
      throw ValidationError("partition.mode: noniid requires by-labels");
    }
  }
  if (!(cfg.train.rho > 0.0)) throw ValidationError("train.rho: must be positive");
  if (cfg.train.gamma < 0.0) throw ValidationError("train.gamma: must be nonnegative");
  if (!(cfg.train.lr > 0.0)) throw ValidationError("train.lr: must be positive");
  if (cfg.train.rounds < 1) throw ValidationError("train.rounds: must be at least 1");
  if (cfg.train.local_epochs < 1) throw ValidationError("train.local_epochs: must be at least 1");
  if (!(cfg.train.eps_sq > 0.0)) throw ValidationError("train.eps_sq: must be positive");
  if (!(cfg.edge_prob > 0.0 && cfg.edge_prob <= 1.0)) throw ValidationError("topology.edge_prob: must be in (0,1]");
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string ExperimentConfig::canonical() const {
  std::vector<std::string> lines;
  auto add = [&lines](const std::string& key, const std::string& value) { lines.push_back(key + "=" + value); };

  add("experiment.algorithm", algorithm == Algorithm::iid ? "iid" : (algorithm == Algorithm::noniid ? "noniid" : "dsgd"));
  add("experiment.master_seed", std::to_string(master_seed));
  add("experiment.plan", plan_path);

  add("data.source", data.source == DataConfig::Source::synthetic ? "synthetic" : "idx");
  add("data.classes", std::to_string(data.classes));
  add("data.class_dims", join_ints(data.class_dims));
  add("data.per_class", std::to_string(data.per_class));
  add("data.test_per_class", std::to_string(data.test_per_class));
  add("data.ambient_dim", std::to_string(data.ambient_dim));
  add("data.noise", fmt_real(data.noise));
  add("data.idx_images", data.idx_images);
  add("data.idx_labels", data.idx_labels);
  add("data.idx_test_images", data.idx_test_images);
  add("data.idx_test_labels", data.idx_test_labels);
  add("data.limit", std::to_string(data.limit));
  add("data.test_limit", std::to_string(data.test_limit));

  add("partition.mode", part.mode == PartitionConfig::Mode::iid ? "iid" : "by-labels");
  add("partition.nodes", std::to_string(part.nodes));
  for (int i = 0; i < part.nodes; ++i) {
    if (!part.node_labels[i].empty()) {
      add("partition.labels_node" + std::to_string(i), join_ints(part.node_labels[i]));
    }
  }

  add("topology.edge_prob", fmt_real(edge_prob));
  add("encoder.hidden", join_ints(hidden));
  add("encoder.activation", activation == Activation::elu ? "elu" : "relu");
  for (const auto& [node, dims] : hidden_overrides) {
    add("encoder.hidden_node" + std::to_string(node), join_ints(dims));
  }

  add("train.rho", fmt_real(train.rho));
  add("train.gamma", fmt_real(train.gamma));
  add("train.lr", fmt_real(train.lr));
  add("train.weight_decay", fmt_real(train.weight_decay));
  add("train.rounds", std::to_string(train.rounds));
  add("train.local_epochs", std::to_string(train.local_epochs));
  add("train.batch", std::to_string(train.batch));
  add("train.eps_sq", fmt_real(train.eps_sq));
  add("train.feature_dim", std::to_string(train.feature_dim));
  add("train.early_stop", train.early_stop ? "true" : "false");
  add("train.early_stop_tol", fmt_real(train.early_stop_tol));
  add("train.early_stop_window", std::to_string(train.early_stop_window));
  add("train.grad_norm_every", std::to_string(train.grad_norm_every));
  add("train.check_invariants", train.check_invariants ? "true" : "false");
  add("train.assumption_check", train.assumption_strict ? "strict" : "warn");
  add("train.substitution", train.substitute_shared ? "true" : "false");
  add("train.compression_weight", train.weight_reading == CompressionWeight::per_node_inside ? "inside" : "outer");
  add("train.bcd_order", train.bcd_descending ? "descending" : "ascending");

  add("eval.energy_tau", fmt_real(eval.energy_tau));
  add("eval.eval_samples", std::to_string(eval.eval_samples));
  add("eval.tol_orth", fmt_real(eval.tol_orth));
  add("eval.tol_spec", fmt_real(eval.tol_spec));

  std::sort(lines.begin(), lines.end());
  std::string out;
  for (const std::string& l : lines) {
    out += l;
    out += '\n';
  }
  return out;
}

uint64_t ExperimentConfig::hash() const {
  const std::string text = canonical();
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace mcrnet
