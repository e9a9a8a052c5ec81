#include "mcrnet/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

#include <json.hpp>

#include "mcrnet/errors.hpp"

namespace mcrnet {

namespace {

Matrix normalized_columns(const Matrix& z) {
  Matrix out = z;
  for (int c = 0; c < out.cols(); ++c) {
    const double n = out.column_norm(c);
    if (n > 1e-12) out.scale_column(c, 1.0 / n);
  }
  return out;
}

std::vector<double> column_of(const Matrix& m, int c) {
  std::vector<double> v(m.rows());
  for (int r = 0; r < m.rows(); ++r) v[r] = m(r, c);
  return v;
}

std::vector<std::vector<double>> class_means(const Matrix& z, const std::vector<int>& labels, int num_classes) {
  std::vector<std::vector<double>> means(num_classes, std::vector<double>(z.rows(), 0.0));
  std::vector<int> counts(num_classes, 0);
  for (int c = 0; c < z.cols(); ++c) {
    const int k = labels[c];
    ++counts[k];
    for (int r = 0; r < z.rows(); ++r) means[k][r] += z(r, c);
  }
  for (int k = 0; k < num_classes; ++k) {
    if (counts[k] == 0) throw EmptyClass("class " + std::to_string(k) + " empty in evaluation set");
    for (double& v : means[k]) v /= counts[k];
  }
  return means;
}

}  // namespace

std::vector<int> label_sorted_order(const std::vector<int>& labels) {
  std::vector<int> order(labels.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&labels](int a, int b) { return labels[a] < labels[b]; });
  return order;
}

Matrix cosine_similarity_matrix(const Matrix& z, const std::vector<int>& order) {
  const Matrix zn = normalized_columns(z.select_columns(order));
  Matrix out(zn.cols(), zn.cols());
  for (int a = 0; a < zn.cols(); ++a) {
    out(a, a) = 1.0;
    for (int b = a + 1; b < zn.cols(); ++b) {
      double acc = 0.0;
      for (int r = 0; r < zn.rows(); ++r) acc += zn(r, a) * zn(r, b);
      out(a, b) = acc;
      out(b, a) = acc;
    }
  }
  return out;
}

Theorem1Report check_theorem1(const std::vector<Matrix>& z_per_node,
                              const std::vector<std::vector<int>>& labels_per_node, double tol_orth, double tol_spec,
                              const std::vector<int>& class_dims) {
  Theorem1Report report;
  const size_t n_nodes = z_per_node.size();
  std::vector<Matrix> zn;
  zn.reserve(n_nodes);
  for (const Matrix& z : z_per_node) zn.push_back(normalized_columns(z));

  for (size_t i = 0; i < n_nodes; ++i) {
    for (size_t j = i; j < n_nodes; ++j) {
      double worst = 0.0;
      for (int a = 0; a < zn[i].cols(); ++a) {
        for (int b = 0; b < zn[j].cols(); ++b) {
          if (labels_per_node[i][a] == labels_per_node[j][b]) continue;
          double acc = 0.0;
          for (int r = 0; r < zn[i].rows(); ++r) acc += zn[i](r, a) * zn[j](r, b);
          worst = std::max(worst, std::abs(acc));
        }
      }
      if (i == j) {
        report.max_within_node_cos = std::max(report.max_within_node_cos, worst);
      } else {
        report.max_across_node_cos = std::max(report.max_across_node_cos, worst);
      }
    }
  }
  report.orthogonality_pass = report.max_within_node_cos < tol_orth && report.max_across_node_cos < tol_orth;

  // pooled per-class spectra across all nodes
  std::set<int> class_ids;
  for (const auto& ls : labels_per_node) class_ids.insert(ls.begin(), ls.end());
  for (int k : class_ids) {
    std::vector<std::vector<double>> cols;
    for (size_t i = 0; i < n_nodes; ++i) {
      for (int c = 0; c < zn[i].cols(); ++c) {
        if (labels_per_node[i][c] == k) cols.push_back(column_of(zn[i], c));
      }
    }
    Matrix zk(static_cast<int>(cols.front().size()), static_cast<int>(cols.size()));
    for (size_t c = 0; c < cols.size(); ++c) {
      for (size_t r = 0; r < cols[c].size(); ++r) zk(static_cast<int>(r), static_cast<int>(c)) = cols[c][r];
    }
    Theorem1Report::ClassSpectrum spec;
    spec.class_id = k;
    spec.singular_values = singular_values(zk);
    const double sigma1 = spec.singular_values.empty() ? 0.0 : spec.singular_values.front();
    for (double s : spec.singular_values) spec.effective_rank += (sigma1 > 0.0 && s > tol_spec * sigma1) ? 1 : 0;
    if (!class_dims.empty() && k < static_cast<int>(class_dims.size())) {
      const int top = class_dims[k] - 1;
      if (top >= 1 && top <= static_cast<int>(spec.singular_values.size())) {
        const double hi = spec.singular_values[0];
        const double lo = spec.singular_values[top - 1];
        spec.top_spread = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
        if (spec.effective_rank < top) report.spectrum_pass = false;
      }
    }
    report.spectra.push_back(std::move(spec));
  }
  return report;
}

SubspaceModel fit_subspace_model(const Matrix& z, const std::vector<int>& labels, int num_classes, double energy_tau) {
  SubspaceModel model;
  model.classes.resize(num_classes);
  const auto means = class_means(z, labels, num_classes);
  for (int k = 0; k < num_classes; ++k) {
    std::vector<int> cols;
    for (int c = 0; c < z.cols(); ++c) {
      if (labels[c] == k) cols.push_back(c);
    }
    Matrix centered = z.select_columns(cols);
    for (int c = 0; c < centered.cols(); ++c) {
      for (int r = 0; r < centered.rows(); ++r) centered(r, c) -= means[k][r];
    }
    const Spectrum eig = sym_eig(gram(centered, 1.0), 1e-12, 100, true);
    double total = 0.0;
    for (double v : eig.values) total += std::max(0.0, v);
    int r_k = 1;
    if (total > 0.0) {
      double acc = 0.0;
      r_k = 0;
      for (double v : eig.values) {
        if (v <= 1e-12 && r_k >= 1) break;  // never pick up numerically null directions
        acc += std::max(0.0, v);
        ++r_k;
        if (acc >= energy_tau * total) break;
      }
    }
    SubspaceModel::ClassSubspace sub;
    sub.mean = means[k];
    sub.basis = Matrix(z.rows(), r_k);
    for (int c = 0; c < r_k; ++c) {
      for (int r = 0; r < z.rows(); ++r) sub.basis(r, c) = (*eig.vectors)(r, c);
    }
    model.classes[k] = std::move(sub);
  }
  return model;
}

int nearest_subspace_classify(const SubspaceModel& model, const std::vector<double>& z) {
  int best = 0;
  double best_res = std::numeric_limits<double>::infinity();
  double best_mean_dist = std::numeric_limits<double>::infinity();
  for (size_t k = 0; k < model.classes.size(); ++k) {
    const auto& sub = model.classes[k];
    std::vector<double> diff(z.size());
    double mean_dist = 0.0;
    for (size_t r = 0; r < z.size(); ++r) {
      diff[r] = z[r] - sub.mean[r];
      mean_dist += diff[r] * diff[r];
    }
    // residual = diff - Phi Phi^T diff
    std::vector<double> proj(sub.basis.cols(), 0.0);
    for (int c = 0; c < sub.basis.cols(); ++c) {
      for (size_t r = 0; r < diff.size(); ++r) proj[c] += sub.basis(static_cast<int>(r), c) * diff[r];
    }
    double res = 0.0;
    for (size_t r = 0; r < diff.size(); ++r) {
      double v = diff[r];
      for (int c = 0; c < sub.basis.cols(); ++c) v -= sub.basis(static_cast<int>(r), c) * proj[c];
      res += v * v;
    }
    // exact residual ties (full-rank bases zero them out) fall back to the
    // mean offset, further ties to the lowest class id
    if (res < best_res || (res == best_res && mean_dist < best_mean_dist)) {
      best_res = res;
      best_mean_dist = mean_dist;
      best = static_cast<int>(k);
    }
  }
  return best;
}

double classification_accuracy(const SubspaceModel& model, const Matrix& z, const std::vector<int>& labels) {
  int hits = 0;
  for (int c = 0; c < z.cols(); ++c) {
    if (nearest_subspace_classify(model, column_of(z, c)) == labels[c]) ++hits;
  }
  return static_cast<double>(hits) / z.cols();
}

double wccr(const Matrix& z, const std::vector<int>& labels) {
  if (z.cols() < 2) throw ZeroVariance("need at least two samples");
  const int num_classes = *std::max_element(labels.begin(), labels.end()) + 1;
  const auto means = class_means(z, labels, num_classes);
  std::vector<double> global_mean(z.rows(), 0.0);
  for (int c = 0; c < z.cols(); ++c) {
    for (int r = 0; r < z.rows(); ++r) global_mean[r] += z(r, c);
  }
  for (double& v : global_mean) v /= z.cols();

  double within = 0.0, total = 0.0;
  for (int c = 0; c < z.cols(); ++c) {
    const auto& mu = means[labels[c]];
    for (int r = 0; r < z.rows(); ++r) {
      const double dw = z(r, c) - mu[r];
      const double dt = z(r, c) - global_mean[r];
      within += dw * dw;
      total += dt * dt;
    }
  }
  if (total < 1e-12) throw ZeroVariance("total scatter trace below 1e-12");
  return within / total;
}

double iidr(const Matrix& z, const std::vector<int>& labels) {
  const int num_classes = *std::max_element(labels.begin(), labels.end()) + 1;
  if (num_classes < 2) throw EmptyClass("iidr needs at least two classes");
  const auto means = class_means(z, labels, num_classes);

  double inter = 0.0;
  int pairs = 0;
  for (int a = 0; a < num_classes; ++a) {
    for (int b = a + 1; b < num_classes; ++b) {
      double acc = 0.0;
      for (int r = 0; r < z.rows(); ++r) {
        const double d = means[a][r] - means[b][r];
        acc += d * d;
      }
      inter += std::sqrt(acc);
      ++pairs;
    }
  }
  inter /= pairs;

  double intra = 0.0;
  for (int c = 0; c < z.cols(); ++c) {
    const auto& mu = means[labels[c]];
    double acc = 0.0;
    for (int r = 0; r < z.rows(); ++r) {
      const double d = z(r, c) - mu[r];
      acc += d * d;
    }
    intra += std::sqrt(acc);
  }
  intra /= z.cols();
  if (intra < 1e-12) return std::numeric_limits<double>::infinity();
  return inter / intra;
}

double linear_cka(const Matrix& z_a, const Matrix& z_b) {
  if (z_a.cols() != z_b.cols()) throw ShapeMismatch("cka needs a common sample set");
  auto center = [](const Matrix& z) {
    Matrix out = z;
    for (int r = 0; r < out.rows(); ++r) {
      double mean = 0.0;
      const double* row = out.row_ptr(r);
      for (int c = 0; c < out.cols(); ++c) mean += row[c];
      mean /= out.cols();
      double* wrow = out.row_ptr(r);
      for (int c = 0; c < out.cols(); ++c) wrow[c] -= mean;
    }
    return out;
  };
  const Matrix a = center(z_a);
  const Matrix b = center(z_b);

  // ||A~ B~^T||_F^2 through the d_a x d_b cross product
  double cross_sq = 0.0;
  {
    Matrix c(a.rows(), b.rows());
    for (int i = 0; i < a.rows(); ++i) {
      const double* arow = a.row_ptr(i);
      for (int j = 0; j < b.rows(); ++j) {
        const double* brow = b.row_ptr(j);
        double acc = 0.0;
        for (int s = 0; s < a.cols(); ++s) acc += arow[s] * brow[s];
        c(i, j) = acc;
      }
    }
    for (double v : c.data()) cross_sq += v * v;
  }
  const double aa = gram(a, 1.0).frobenius_norm();
  const double bb = gram(b, 1.0).frobenius_norm();
  if (aa * aa < 1e-12 || bb * bb < 1e-12) throw ZeroVariance("constant features in cka");
  return cross_sq / (aa * bb);
}

ClassMeanCosineStats class_mean_cosine_stats(const Matrix& z, const std::vector<int>& labels, int num_classes) {
  if (num_classes < 2) throw EmptyClass("need at least two classes");
  const auto means = class_means(z, labels, num_classes);
  std::vector<std::vector<double>> unit = means;
  for (auto& mu : unit) {
    double n = std::sqrt(dot(mu, mu));
    if (n < 1e-12) throw ZeroVariance("zero class mean");
    for (double& v : mu) v /= n;
  }
  ClassMeanCosineStats out;
  out.matrix = Matrix(num_classes, num_classes);
  std::vector<double> offdiag;
  for (int a = 0; a < num_classes; ++a) {
    out.matrix(a, a) = 1.0;
    for (int b = a + 1; b < num_classes; ++b) {
      const double cosv = dot(unit[a], unit[b]);
      out.matrix(a, b) = cosv;
      out.matrix(b, a) = cosv;
      offdiag.push_back(cosv);
    }
  }
  double mean = 0.0;
  for (double v : offdiag) mean += v;
  mean /= offdiag.size();
  double var = 0.0;
  for (double v : offdiag) var += (v - mean) * (v - mean);
  out.offdiag_mean = mean;
  out.offdiag_std = std::sqrt(var / offdiag.size());
  return out;
}

std::string geometry_to_json(const GeometryReport& report) {
  nlohmann::json j;
  j["offdiag_mean"] = report.class_cosine.offdiag_mean;
  j["offdiag_std"] = report.class_cosine.offdiag_std;
  j["wccr"] = report.wccr_value;
  j["iidr"] = std::isinf(report.iidr_value) ? nlohmann::json("inf") : nlohmann::json(report.iidr_value);
  nlohmann::json cka = nlohmann::json::object();
  for (const auto& [pair, v] : report.cka) {
    cka[std::to_string(pair.first) + "-" + std::to_string(pair.second)] = v;
  }
  j["cka"] = cka;
  nlohmann::json t1;
  t1["max_within_node_cos"] = report.theorem1.max_within_node_cos;
  t1["max_across_node_cos"] = report.theorem1.max_across_node_cos;
  t1["orthogonality_pass"] = report.theorem1.orthogonality_pass;
  t1["spectrum_pass"] = report.theorem1.spectrum_pass;
  nlohmann::json spectra = nlohmann::json::array();
  for (const auto& spec : report.theorem1.spectra) {
    spectra.push_back({{"class", spec.class_id},
                       {"effective_rank", spec.effective_rank},
                       {"top_spread", spec.top_spread},
                       {"singular_values", spec.singular_values}});
  }
  t1["spectra"] = spectra;
  j["theorem1"] = t1;
  if (report.accuracy >= 0.0) j["accuracy"] = report.accuracy;
  return j.dump(2);
}

void write_cosine_svg(const std::string& path, const Matrix& cosine) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  const int n = cosine.rows();
  const int cell = n <= 64 ? 8 : (n <= 256 ? 3 : 1);
  const int size = n * cell;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size << "\">\n";
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const double v = std::clamp(cosine(r, c), -1.0, 1.0);
      // diverging blue (-1) .. white (0) .. red (+1)
      int red, green, blue;
      if (v >= 0.0) {
        red = 255;
        green = blue = static_cast<int>(255.0 * (1.0 - v));
      } else {
        blue = 255;
        red = green = static_cast<int>(255.0 * (1.0 + v));
      }
      out << "<rect x=\"" << c * cell << "\" y=\"" << r * cell << "\" width=\"" << cell << "\" height=\"" << cell
          << "\" fill=\"rgb(" << red << "," << green << "," << blue << ")\"/>\n";
    }
  }
  out << "</svg>\n";
}

}  // namespace mcrnet
