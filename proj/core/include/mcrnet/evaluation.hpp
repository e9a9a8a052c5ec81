#ifndef MCRNET_EVALUATION_HPP
#define MCRNET_EVALUATION_HPP

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mcrnet/linalg.hpp"
#include "mcrnet/matrix.hpp"

namespace mcrnet {

// Pairwise cosine matrix with columns reordered by `order` (typically a
// label-sorted permutation). Columns are normalized before the products.
Matrix cosine_similarity_matrix(const Matrix& z, const std::vector<int>& order);

// label-sorted column permutation, stable within a class
std::vector<int> label_sorted_order(const std::vector<int>& labels);

struct Theorem1Report {
  double max_within_node_cos = 0.0;   // between-class, same node
  double max_across_node_cos = 0.0;   // between-class, node pairs
  struct ClassSpectrum {
    int class_id = 0;
    std::vector<double> singular_values;
    int effective_rank = 0;   // count of sigma > tol_spec * sigma_1
    double top_spread = 0.0;  // max/min over the top d_k-1 values (0 if unknown d_k)
  };
  std::vector<ClassSpectrum> spectra;
  bool orthogonality_pass = false;
  bool spectrum_pass = true;  // meaningful only when class dims were given
};

Theorem1Report check_theorem1(const std::vector<Matrix>& z_per_node,
                              const std::vector<std::vector<int>>& labels_per_node, double tol_orth, double tol_spec,
                              const std::vector<int>& class_dims = {});

struct SubspaceModel {
  struct ClassSubspace {
    std::vector<double> mean;
    Matrix basis;  // d x r_k, orthonormal columns
  };
  std::vector<ClassSubspace> classes;
};

SubspaceModel fit_subspace_model(const Matrix& z, const std::vector<int>& labels, int num_classes,
                                 double energy_tau = 0.95);
int nearest_subspace_classify(const SubspaceModel& model, const std::vector<double>& z);
double classification_accuracy(const SubspaceModel& model, const Matrix& z, const std::vector<int>& labels);

// trace(within-class scatter) / trace(total scatter)
double wccr(const Matrix& z, const std::vector<int>& labels);

// mean pairwise class-mean distance over mean within-class distance;
// +inf sentinel when the within-class distance collapses to zero
double iidr(const Matrix& z, const std::vector<int>& labels);

// linear centered kernel alignment between two views of the same samples
double linear_cka(const Matrix& z_a, const Matrix& z_b);

struct ClassMeanCosineStats {
  Matrix matrix;  // K x K
  double offdiag_mean = 0.0;
  double offdiag_std = 0.0;
};
ClassMeanCosineStats class_mean_cosine_stats(const Matrix& z, const std::vector<int>& labels, int num_classes);

struct GeometryReport {
  ClassMeanCosineStats class_cosine;
  double wccr_value = 0.0;
  double iidr_value = 0.0;
  std::map<std::pair<int, int>, double> cka;  // node pair -> value
  std::vector<Theorem1Report::ClassSpectrum> spectra;
  std::vector<double> overall_spectrum;
  Theorem1Report theorem1;
  double accuracy = -1.0;  // optional; negative when not computed
};

std::string geometry_to_json(const GeometryReport& report);

// simple rect-grid heatmap, blue-to-red diverging over [-1, 1]
void write_cosine_svg(const std::string& path, const Matrix& cosine);

}  // namespace mcrnet

#endif
