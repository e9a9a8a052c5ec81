#include "mcrnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>

#include "mcrnet/errors.hpp"
#include "mcrnet/rng.hpp"

namespace mcrnet {

std::map<int, int> Dataset::class_counts() const {
  std::map<int, int> counts;
  for (int l : labels) ++counts[l];
  return counts;
}

Dataset gen_synthetic_subspaces(int num_classes, const std::vector<int>& class_dims, int per_class, int ambient_dim,
                                double noise, uint64_t seed) {
  if (static_cast<int>(class_dims.size()) != num_classes) throw BadDims("class_dims size != num_classes");
  int dim_sum = 0;
  for (int d : class_dims) {
    if (d < 1) throw BadDims("class dim must be positive");
    dim_sum += d;
  }
  if (dim_sum > ambient_dim) throw BadDims("sum of class dims exceeds ambient dimension");
  if (noise < 0.0) throw BadDims("negative noise");
  if (per_class < 1) throw BadDims("per_class must be positive");

  // random orthogonal basis via Gram-Schmidt on Gaussian columns; class k
  // takes a disjoint block, so the frames are exactly orthogonal
  Rng frame_rng(mix_seed(seed, 0xf7a3e5));
  Matrix basis(ambient_dim, dim_sum);
  for (int c = 0; c < dim_sum; ++c) {
    std::vector<double> v(ambient_dim);
    double norm = 0.0;
    while (true) {
      for (double& x : v) x = frame_rng.normal();
      for (int prev = 0; prev < c; ++prev) {
        double proj = 0.0;
        for (int r = 0; r < ambient_dim; ++r) proj += v[r] * basis(r, prev);
        for (int r = 0; r < ambient_dim; ++r) v[r] -= proj * basis(r, prev);
      }
      norm = 0.0;
      for (double x : v) norm += x * x;
      norm = std::sqrt(norm);
      if (norm > 1e-8) break;
    }
    for (int r = 0; r < ambient_dim; ++r) basis(r, c) = v[r] / norm;
  }

  Rng sample_rng(mix_seed(seed, 0x5a3b1e));
  Dataset out;
  out.num_classes = num_classes;
  out.provenance = Dataset::Provenance::synthetic;
  out.inputs = Matrix(ambient_dim, num_classes * per_class);
  out.labels.resize(static_cast<size_t>(num_classes) * per_class);

  int col = 0;
  int offset = 0;
  for (int k = 0; k < num_classes; ++k) {
    const int dk = class_dims[k];
    for (int s = 0; s < per_class; ++s, ++col) {
      for (int j = 0; j < dk; ++j) {
        const double coef = sample_rng.normal();
        for (int r = 0; r < ambient_dim; ++r) out.inputs(r, col) += coef * basis(r, offset + j);
      }
      if (noise > 0.0) {
        for (int r = 0; r < ambient_dim; ++r) out.inputs(r, col) += noise * sample_rng.normal();
      }
      out.labels[col] = k;
    }
    offset += dk;
  }
  return out;
}

std::pair<Dataset, Dataset> split_per_class(const Dataset& data, int count) {
  std::vector<int> head_cols, tail_cols;
  std::map<int, int> taken;
  for (int c = 0; c < data.sample_count(); ++c) {
    if (taken[data.labels[c]]++ < count) {
      head_cols.push_back(c);
    } else {
      tail_cols.push_back(c);
    }
  }
  auto pick = [&data](const std::vector<int>& cols) {
    Dataset d;
    d.num_classes = data.num_classes;
    d.provenance = data.provenance;
    d.inputs = data.inputs.select_columns(cols);
    d.labels.reserve(cols.size());
    for (int c : cols) d.labels.push_back(data.labels[c]);
    return d;
  };
  return {pick(head_cols), pick(tail_cols)};
}

IdxTensor parse_idx(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 4) throw BadMagic("header shorter than 4 bytes");
  if (bytes[0] != 0 || bytes[1] != 0) throw BadMagic("first two bytes must be zero");
  const int type = bytes[2];
  if (type != 0x08 && type != 0x0D) {
    throw TypeUnsupported("type code " + std::to_string(type) + " (only 0x08 ubyte and 0x0D float)");
  }
  const int rank = bytes[3];
  const size_t header = 4 + 4 * static_cast<size_t>(rank);
  if (bytes.size() < header) throw TruncatedPayload("dimension table cut short");

  IdxTensor t;
  t.type_code = type;
  size_t count = 1;
  for (int i = 0; i < rank; ++i) {
    const size_t o = 4 + 4 * static_cast<size_t>(i);
    const uint32_t dim = (static_cast<uint32_t>(bytes[o]) << 24) | (static_cast<uint32_t>(bytes[o + 1]) << 16) |
                         (static_cast<uint32_t>(bytes[o + 2]) << 8) | static_cast<uint32_t>(bytes[o + 3]);
    t.dims.push_back(static_cast<int>(dim));
    count *= dim;
  }
  const size_t elem = type == 0x08 ? 1 : 4;
  const size_t expected = header + count * elem;
  if (bytes.size() != expected) {
    throw TruncatedPayload("expected " + std::to_string(expected) + " bytes, got " + std::to_string(bytes.size()));
  }
  t.values.resize(count);
  if (type == 0x08) {
    for (size_t i = 0; i < count; ++i) t.values[i] = static_cast<double>(bytes[header + i]);
  } else {
    for (size_t i = 0; i < count; ++i) {
      const size_t o = header + 4 * i;
      uint32_t bits = (static_cast<uint32_t>(bytes[o]) << 24) | (static_cast<uint32_t>(bytes[o + 1]) << 16) |
                      (static_cast<uint32_t>(bytes[o + 2]) << 8) | static_cast<uint32_t>(bytes[o + 3]);
      float f;
      std::memcpy(&f, &bits, 4);
      t.values[i] = static_cast<double>(f);
    }
  }
  return t;
}

IdxTensor parse_idx_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_idx(bytes);
}

Dataset load_mnist(const std::string& images_path, const std::string& labels_path, int limit) {
  const IdxTensor images = parse_idx_file(images_path);
  const IdxTensor labels = parse_idx_file(labels_path);
  if (images.dims.size() != 3) throw BadDims("image tensor must have rank 3");
  if (labels.dims.size() != 1) throw BadDims("label tensor must have rank 1");
  if (images.dims[0] != labels.dims[0]) throw BadDims("image/label counts differ");

  int m = images.dims[0];
  if (limit > 0 && limit < m) m = limit;
  const int pixels = images.dims[1] * images.dims[2];

  Dataset d;
  d.provenance = Dataset::Provenance::idx;
  d.num_classes = 10;
  d.inputs = Matrix(pixels, m);
  d.labels.resize(m);
  for (int c = 0; c < m; ++c) {
    for (int r = 0; r < pixels; ++r) {
      d.inputs(r, c) = images.values[static_cast<size_t>(c) * pixels + r] / 255.0;
    }
    d.labels[c] = static_cast<int>(labels.values[c]);
  }
  return d;
}

namespace {

Dataset empty_like(const Dataset& data) {
  Dataset d;
  d.num_classes = data.num_classes;
  d.provenance = data.provenance;
  return d;
}

Dataset from_columns(const Dataset& data, const std::vector<int>& cols) {
  Dataset d = empty_like(data);
  d.inputs = data.inputs.select_columns(cols);
  d.labels.reserve(cols.size());
  for (int c : cols) d.labels.push_back(data.labels[c]);
  return d;
}

}  // namespace

std::vector<Dataset> partition(const Dataset& data, const PartitionSpec& spec) {
  if (spec.n_nodes < 1) throw InsufficientSamples("need at least one node");

  // per-class column pools, shuffled deterministically
  std::vector<std::vector<int>> pools(data.num_classes);
  for (int c = 0; c < data.sample_count(); ++c) pools[data.labels[c]].push_back(c);
  Rng rng(mix_seed(spec.seed, 0x9a47));
  for (auto& pool : pools) rng.shuffle(pool);

  std::vector<std::vector<int>> node_cols(spec.n_nodes);

  if (spec.mode == PartitionSpec::Mode::iid) {
    for (int k = 0; k < data.num_classes; ++k) {
      const auto& pool = pools[k];
      if (static_cast<int>(pool.size()) < spec.n_nodes) {
        throw InsufficientSamples("class " + std::to_string(k) + " has fewer samples than nodes");
      }
      const int base = static_cast<int>(pool.size()) / spec.n_nodes;
      const int extra = static_cast<int>(pool.size()) % spec.n_nodes;
      size_t pos = 0;
      for (int i = 0; i < spec.n_nodes; ++i) {
        const int take = base + (i < extra ? 1 : 0);
        for (int t = 0; t < take; ++t) node_cols[i].push_back(pool[pos++]);
      }
    }
  } else {
    if (static_cast<int>(spec.node_labels.size()) != spec.n_nodes) {
      throw InsufficientSamples("node label lists do not match node count");
    }
    for (int k = 0; k < data.num_classes; ++k) {
      std::vector<int> holders;
      for (int i = 0; i < spec.n_nodes; ++i) {
        const auto& ls = spec.node_labels[i];
        if (std::find(ls.begin(), ls.end(), k) != ls.end()) holders.push_back(i);
      }
      if (pools[k].empty()) continue;
      if (holders.empty()) throw InsufficientSamples("class " + std::to_string(k) + " assigned to no node");
      const auto& pool = pools[k];
      const int base = static_cast<int>(pool.size()) / static_cast<int>(holders.size());
      const int extra = static_cast<int>(pool.size()) % static_cast<int>(holders.size());
      size_t pos = 0;
      for (size_t h = 0; h < holders.size(); ++h) {
        const int take = base + (static_cast<int>(h) < extra ? 1 : 0);
        for (int t = 0; t < take; ++t) node_cols[holders[h]].push_back(pool[pos++]);
      }
    }
  }

  std::vector<Dataset> parts;
  parts.reserve(spec.n_nodes);
  for (int i = 0; i < spec.n_nodes; ++i) {
    std::sort(node_cols[i].begin(), node_cols[i].end());
    parts.push_back(from_columns(data, node_cols[i]));
  }
  return parts;
}

namespace {

// duplicate `extra` random class-k samples inside one node
int pad_class(Dataset& part, int class_id, int extra, Rng& rng) {
  if (extra <= 0) return 0;
  std::vector<int> cols;
  for (int c = 0; c < part.sample_count(); ++c) {
    if (part.labels[c] == class_id) cols.push_back(c);
  }
  if (cols.empty()) throw EmptyClass("cannot duplicate class " + std::to_string(class_id) + " from zero samples");
  std::vector<int> chosen(extra);
  for (int i = 0; i < extra; ++i) chosen[i] = cols[rng.below(cols.size())];

  Matrix grown(part.inputs.rows(), part.sample_count() + extra);
  for (int r = 0; r < part.inputs.rows(); ++r) {
    const double* src = part.inputs.row_ptr(r);
    double* dst = grown.row_ptr(r);
    std::copy(src, src + part.sample_count(), dst);
    for (int i = 0; i < extra; ++i) dst[part.sample_count() + i] = src[chosen[i]];
  }
  part.inputs = std::move(grown);
  for (int i = 0; i < extra; ++i) part.labels.push_back(class_id);
  return extra;
}

}  // namespace

EnforcementReport enforce_proportions(std::vector<Dataset>& parts, uint64_t seed) {
  EnforcementReport report;
  if (parts.empty()) return report;
  const int num_classes = parts.front().num_classes;
  Rng rng(mix_seed(seed, 0xadd0));

  for (int k = 0; k < num_classes; ++k) {
    int target = 0;
    for (const Dataset& p : parts) {
      int count = 0;
      for (int l : p.labels) count += l == k ? 1 : 0;
      target = std::max(target, count);
    }
    for (Dataset& p : parts) {
      int count = 0;
      for (int l : p.labels) count += l == k ? 1 : 0;
      report.duplicates_added += pad_class(p, k, target - count, rng);
    }
  }
  return report;
}

bool proportions_equal_iid(const std::vector<Dataset>& parts) {
  if (parts.size() < 2) return true;
  const int num_classes = parts.front().num_classes;
  for (int k = 0; k < num_classes; ++k) {
    // exact rational comparison: m_ik * m_j == m_jk * m_i
    long long ref_num = -1, ref_den = -1;
    for (const Dataset& p : parts) {
      long long count = 0;
      for (int l : p.labels) count += l == k ? 1 : 0;
      const long long total = p.sample_count();
      if (ref_num < 0) {
        ref_num = count;
        ref_den = total;
      } else if (count * ref_den != ref_num * total) {
        return false;
      }
    }
  }
  return true;
}

EnforcementReport enforce_cluster_proportions(std::vector<Dataset>& parts, const ClusterPlan& plan, uint64_t seed) {
  EnforcementReport report;
  const int n_clusters = plan.n_clusters();
  if (n_clusters <= 1) return report;
  const int num_classes = parts.front().num_classes;
  Rng rng(mix_seed(seed, 0xadd1));

  long long lcm = 1;
  for (int s_i : plan.replication) lcm = std::lcm(lcm, static_cast<long long>(std::max(1, s_i)));

  auto class_count = [&parts](int agent, int k) {
    long long count = 0;
    for (int l : parts[agent].labels) count += l == k ? 1 : 0;
    return count;
  };
  // per-cluster holders of class k (agents, deduped)
  auto holders_in_cluster = [&](int s, int k) {
    std::vector<int> out;
    for (int vid : plan.cluster_members[s]) {
      const int agent = plan.virtual_nodes[vid].agent;
      if (class_count(agent, k) > 0 && std::find(out.begin(), out.end(), agent) == out.end()) out.push_back(agent);
    }
    return out;
  };
  auto sigma_units = [&](int s, int k) {
    long long units = 0;
    for (int agent : holders_in_cluster(s, k)) {
      units += class_count(agent, k) * (lcm / plan.replication[agent]);
    }
    return units;
  };

  for (int k = 0; k < num_classes; ++k) {
    for (int iter = 0; iter < 200; ++iter) {
      std::vector<long long> units(n_clusters);
      long long max_units = 0;
      for (int s = 0; s < n_clusters; ++s) {
        units[s] = sigma_units(s, k);
        max_units = std::max(max_units, units[s]);
      }
      int worst = -1;
      for (int s = 0; s < n_clusters; ++s) {
        if (units[s] < max_units && (worst < 0 || units[s] < units[worst])) worst = s;
      }
      if (worst < 0) break;  // equal across clusters

      // prefer an unreplicated holder: its padding touches only this cluster
      int pad_agent = -1;
      for (int agent : holders_in_cluster(worst, k)) {
        if (plan.replication[agent] == 1) {
          pad_agent = agent;
          break;
        }
      }
      if (pad_agent >= 0) {
        const long long deficit = max_units - units[worst];
        const long long dups = (deficit + lcm - 1) / lcm;  // each dup adds lcm units
        report.duplicates_added += pad_class(parts[pad_agent], k, static_cast<int>(dups), rng);
        continue;
      }
      // only replicated holders: padding raises other clusters too; if one of
      // them already attains the max, the gap cannot close by duplication
      const auto holders = holders_in_cluster(worst, k);
      if (holders.empty()) {
        report.notes.push_back("class " + std::to_string(k) + " absent from cluster " + std::to_string(worst));
        report.exact = false;
        break;
      }
      const int agent = holders.front();
      bool stuck = false;
      for (int vid : plan.virtual_of_agent[agent]) {
        const int other = plan.virtual_nodes[vid].cluster;
        if (other != worst && units[other] == max_units) stuck = true;
      }
      if (stuck) {
        report.exact = false;
        report.notes.push_back("class " + std::to_string(k) +
                               ": replicated holder cannot close the gap by duplication");
        break;
      }
      report.duplicates_added += pad_class(parts[agent], k, 1, rng);
    }
  }

  // measure what was achieved
  std::vector<std::map<int, int>> counts(parts.size());
  for (size_t i = 0; i < parts.size(); ++i) counts[i] = parts[i].class_counts();
  ClusterPlan measured = plan;
  attach_counts(measured, counts);
  for (int k = 0; k < num_classes; ++k) {
    double lo = 1e300, hi = -1e300;
    for (int s = 0; s < n_clusters; ++s) {
      const auto it = measured.class_m[s].find(k);
      const double mk = it == measured.class_m[s].end() ? 0.0 : it->second.to_double();
      const double frac = mk / measured.cluster_m[s].to_double();
      lo = std::min(lo, frac);
      hi = std::max(hi, frac);
    }
    if (hi > 0.0) report.max_rel_deviation = std::max(report.max_rel_deviation, (hi - lo) / hi);
  }
  if (report.max_rel_deviation > 1e-9) report.exact = false;
  return report;
}

namespace {

constexpr char kDataMagic[4] = {'M', 'C', '2', 'D'};

template <typename T>
void write_raw(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& in) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("dataset cache truncated");
  return v;
}

}  // namespace

void save_dataset(const std::string& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(kDataMagic, 4);
  write_raw<uint8_t>(out, 1);
  write_raw<uint8_t>(out, data.provenance == Dataset::Provenance::synthetic ? 0 : 1);
  write_raw<uint32_t>(out, static_cast<uint32_t>(data.inputs.rows()));
  write_raw<uint32_t>(out, static_cast<uint32_t>(data.inputs.cols()));
  write_raw<uint32_t>(out, static_cast<uint32_t>(data.num_classes));
  for (double v : data.inputs.data()) write_raw<double>(out, v);
  for (int l : data.labels) write_raw<uint32_t>(out, static_cast<uint32_t>(l));
  if (!out) throw IoError("write failed for " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kDataMagic, 4) != 0) throw IoError("bad dataset magic in " + path);
  const uint8_t version = read_raw<uint8_t>(in);
  if (version != 1) throw IoError("unsupported dataset cache version");
  const uint8_t prov = read_raw<uint8_t>(in);
  const uint32_t rows = read_raw<uint32_t>(in);
  const uint32_t cols = read_raw<uint32_t>(in);
  const uint32_t num_classes = read_raw<uint32_t>(in);
  Dataset d;
  d.provenance = prov == 0 ? Dataset::Provenance::synthetic : Dataset::Provenance::idx;
  d.num_classes = static_cast<int>(num_classes);
  d.inputs = Matrix(static_cast<int>(rows), static_cast<int>(cols));
  for (double& v : d.inputs.data()) v = read_raw<double>(in);
  d.labels.resize(cols);
  for (uint32_t i = 0; i < cols; ++i) d.labels[i] = static_cast<int>(read_raw<uint32_t>(in));
  return d;
}

}  // namespace mcrnet
