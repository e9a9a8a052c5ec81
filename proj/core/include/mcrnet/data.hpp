#ifndef MCRNET_DATA_HPP
#define MCRNET_DATA_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mcrnet/clustering.hpp"
#include "mcrnet/matrix.hpp"

namespace mcrnet {

struct Dataset {
  Matrix inputs;  // n_features x m, column per sample
  std::vector<int> labels;
  int num_classes = 0;
  enum class Provenance { synthetic, idx } provenance = Provenance::synthetic;

  int sample_count() const { return inputs.cols(); }
  std::map<int, int> class_counts() const;
};

// Samples class k from a random orthonormal d_k-frame with isotropic N(0,1)
// coefficients plus ambient Gaussian noise. Frames of different classes are
// mutually orthogonal by construction, so ground truth structure is known.
Dataset gen_synthetic_subspaces(int num_classes, const std::vector<int>& class_dims, int per_class, int ambient_dim,
                                double noise, uint64_t seed);

// first `count` samples of every class, and the rest; preserves column order
std::pair<Dataset, Dataset> split_per_class(const Dataset& data, int count);

struct IdxTensor {
  int type_code = 0;
  std::vector<int> dims;
  std::vector<double> values;  // row-major
};
IdxTensor parse_idx(const std::vector<uint8_t>& bytes);
IdxTensor parse_idx_file(const std::string& path);

// images scaled to [0,1], flattened column-per-sample; labels from the
// companion file; optionally truncated to the first `limit` samples
Dataset load_mnist(const std::string& images_path, const std::string& labels_path, int limit = 0);

struct PartitionSpec {
  enum class Mode { iid, by_labels } mode = Mode::iid;
  int n_nodes = 1;
  std::vector<std::vector<int>> node_labels;  // by_labels mode
  uint64_t seed = 0;
};

std::vector<Dataset> partition(const Dataset& data, const PartitionSpec& spec);

struct EnforcementReport {
  int duplicates_added = 0;
  bool exact = true;
  double max_rel_deviation = 0.0;
  std::vector<std::string> notes;
};

// i.i.d. mode: duplicate within classes until every node holds identical
// per-class counts, which makes the per-node proportions exactly equal
EnforcementReport enforce_proportions(std::vector<Dataset>& parts, uint64_t seed);

// non-i.i.d. mode: duplicate within classes so the per-cluster class masses
// m_k^s/m^s match across clusters; exact when the plan admits it
EnforcementReport enforce_cluster_proportions(std::vector<Dataset>& parts, const ClusterPlan& plan, uint64_t seed);

// exact integer audit of Assumption-1 style proportion equality
bool proportions_equal_iid(const std::vector<Dataset>& parts);

// synthetic dataset cache, magic "MC2D"
void save_dataset(const std::string& path, const Dataset& data);
Dataset load_dataset(const std::string& path);

}  // namespace mcrnet

#endif
