#include "mcrnet/objective.hpp"

#include <cmath>
#include <string>

#include "mcrnet/errors.hpp"

namespace mcrnet {

namespace {

std::string pair_name(int j, int k) { return "(peer " + std::to_string(j) + ", class " + std::to_string(k) + ")"; }

const SymMatrix& require_dual(const LocalLossContext& ctx, int j, int k) {
  const auto it = ctx.duals.find({j, k});
  if (it == ctx.duals.end()) throw MissingStat("dual " + pair_name(j, k));
  return it->second;
}

const SymMatrix& require_peer_prev(const LocalLossContext& ctx, int j, int k) {
  const auto it = ctx.peer_prev.find({j, k});
  if (it == ctx.peer_prev.end()) throw MissingStat("peer stat " + pair_name(j, k));
  return it->second;
}

const SymMatrix& require_self_prev(const LocalLossContext& ctx, int k) {
  const auto it = ctx.self_prev.find(k);
  if (it == ctx.self_prev.end()) throw MissingStat("self stat (class " + std::to_string(k) + ")");
  return it->second;
}

double sym_dot(const SymMatrix& a, const SymMatrix& b) {
  double acc = 0.0;
  const auto& da = a.data();
  const auto& db = b.data();
  for (size_t i = 0; i < da.size(); ++i) acc += da[i] * db[i];
  return acc;
}

}  // namespace

ClassPartition ClassPartition::from_labels(std::vector<int> labels, int num_classes) {
  ClassPartition part;
  part.num_classes = num_classes;
  part.class_counts.assign(num_classes, 0);
  for (int l : labels) {
    if (l < 0 || l >= num_classes) throw ClassMismatch("label " + std::to_string(l) + " out of range");
    ++part.class_counts[l];
  }
  part.labels = std::move(labels);
  return part;
}

std::vector<int> ClassPartition::columns_of(int k) const {
  std::vector<int> idx;
  idx.reserve(class_counts[k]);
  for (size_t c = 0; c < labels.size(); ++c) {
    if (labels[c] == k) idx.push_back(static_cast<int>(c));
  }
  return idx;
}

std::vector<int> ClassPartition::present_classes() const {
  std::vector<int> out;
  for (int k = 0; k < num_classes; ++k) {
    if (class_counts[k] > 0) out.push_back(k);
  }
  return out;
}

bool RateParams::precision_ok(const std::vector<int>& global_class_counts, const std::vector<int>& class_dims) const {
  const double eps4 = eps_sq * eps_sq;
  for (size_t k = 0; k < global_class_counts.size(); ++k) {
    const double frac = static_cast<double>(global_class_counts[k]) / total_m;
    const double ratio = static_cast<double>(dim) / class_dims[k];
    if (!(eps4 < frac * ratio * ratio)) return false;
  }
  return true;
}

double coding_rate(const Matrix& z, const RateParams& p, int m_eff) {
  SymMatrix g = gram(z, 1.0);
  g *= static_cast<double>(p.dim) / (m_eff * p.eps_sq);
  return 0.5 * logdet_psd(g, 1.0);
}

Matrix coding_rate_grad(const Matrix& z, const RateParams& p, int m_eff) {
  const double c = static_cast<double>(p.dim) / (m_eff * p.eps_sq);
  SymMatrix g = gram(z, 1.0);
  g *= c;
  const CholeskyFactor f = CholeskyFactor::factor(g, 1.0);
  Matrix x = z;
  f.solve_in_place(x);
  x *= c;
  return x;
}

double class_coding_rate(const Matrix& z, const ClassPartition& part, const RateParams& p) {
  double acc = 0.0;
  for (int k = 0; k < part.num_classes; ++k) {
    const int mk = part.count(k);
    if (mk == 0) throw EmptyClass("class " + std::to_string(k) + " has no samples");
    const Matrix zk = z.select_columns(part.columns_of(k));
    const double ck = static_cast<double>(p.dim) / (mk * p.eps_sq);
    SymMatrix g = gram(zk, 1.0);
    g *= ck;
    acc += (static_cast<double>(mk) / (2.0 * p.total_m)) * logdet_psd(g, 1.0);
  }
  return acc;
}

Matrix class_coding_rate_grad(const Matrix& z, const ClassPartition& part, const RateParams& p) {
  Matrix grad(z.rows(), z.cols());
  for (int k = 0; k < part.num_classes; ++k) {
    const int mk = part.count(k);
    if (mk == 0) throw EmptyClass("class " + std::to_string(k) + " has no samples");
    const std::vector<int> cols = part.columns_of(k);
    const Matrix zk = z.select_columns(cols);
    const double ck = static_cast<double>(p.dim) / (mk * p.eps_sq);
    SymMatrix g = gram(zk, 1.0);
    g *= ck;
    const CholeskyFactor f = CholeskyFactor::factor(g, 1.0);
    Matrix x = zk;
    f.solve_in_place(x);
    const double w = (static_cast<double>(mk) / p.total_m) * ck;
    for (size_t j = 0; j < cols.size(); ++j) {
      for (int r = 0; r < z.rows(); ++r) grad(r, cols[j]) += w * x(r, static_cast<int>(j));
    }
  }
  return grad;
}

double mcr2_delta(const Matrix& z, const ClassPartition& part, const RateParams& p) {
  return coding_rate(z, p, p.total_m) - class_coding_rate(z, part, p);
}

LocalRates local_rates(const Matrix& z_i, const ClassPartition& part_i, const RateParams& p) {
  LocalRates out;
  const int mi = z_i.cols();
  out.rate = (static_cast<double>(mi) / p.total_m) * coding_rate(z_i, p, mi);
  out.class_rate = class_coding_rate(z_i, part_i, p);
  return out;
}

namespace {

// shared dual/penalty evaluation over ctx.pair_terms, with the per-class
// Gram A_k = Z_k Z_k^T / m_k cached across peers
struct PairTermSums {
  double dual = 0.0;
  double penalty = 0.0;
};

PairTermSums pair_term_sums(const Matrix& z, const ClassPartition& part, const LocalLossContext& ctx) {
  PairTermSums out;
  std::map<int, SymMatrix> a_cache;
  for (const auto& [j, k] : ctx.pair_terms) {
    const int mk = part.count(k);
    if (mk == 0) throw EmptyClass("pair term class " + std::to_string(k) + " empty");
    auto it = a_cache.find(k);
    if (it == a_cache.end()) {
      it = a_cache.emplace(k, gram(z.select_columns(part.columns_of(k)), mk)).first;
    }
    const SymMatrix& a = it->second;
    const SymMatrix& y = require_dual(ctx, j, k);
    const SymMatrix& vj = require_peer_prev(ctx, j, k);
    const SymMatrix& vi = require_self_prev(ctx, k);

    out.dual += sym_dot(y, a - vj);

    SymMatrix mid = vi;
    mid += vj;
    mid *= 0.5;
    SymMatrix diff = a;
    diff -= mid;
    const double fro = diff.frobenius_norm();
    out.penalty += ctx.gamma * fro * fro;
  }
  return out;
}

// accumulates the dual/penalty gradient: for every class with pair terms,
// G_k += W_k Z_k with W_k = sum_j (2/m_k) Y + (4 gamma / m_k)(A_k - mid)
void add_pair_term_grads(Matrix& grad, const Matrix& z, const ClassPartition& part, const LocalLossContext& ctx) {
  std::map<int, SymMatrix> w_by_class;
  std::map<int, SymMatrix> a_cache;
  for (const auto& [j, k] : ctx.pair_terms) {
    const int mk = part.count(k);
    if (mk == 0) throw EmptyClass("pair term class " + std::to_string(k) + " empty");
    auto it = a_cache.find(k);
    if (it == a_cache.end()) {
      it = a_cache.emplace(k, gram(z.select_columns(part.columns_of(k)), mk)).first;
    }
    const SymMatrix& a = it->second;
    const SymMatrix& y = require_dual(ctx, j, k);
    const SymMatrix& vj = require_peer_prev(ctx, j, k);
    const SymMatrix& vi = require_self_prev(ctx, k);

    auto wit = w_by_class.find(k);
    if (wit == w_by_class.end()) wit = w_by_class.emplace(k, SymMatrix(a.dim())).first;
    SymMatrix& w = wit->second;
    w.axpy(2.0 / mk, y);

    SymMatrix mid = vi;
    mid += vj;
    mid *= 0.5;
    SymMatrix diff = a;
    diff -= mid;
    w.axpy(4.0 * ctx.gamma / mk, diff);
  }
  for (const auto& [k, w] : w_by_class) {
    const std::vector<int> cols = part.columns_of(k);
    const Matrix zk = z.select_columns(cols);
    const Matrix wz = sym_apply(w, zk);
    for (size_t j = 0; j < cols.size(); ++j) {
      for (int r = 0; r < z.rows(); ++r) grad(r, cols[j]) += wz(r, static_cast<int>(j));
    }
  }
}

}  // namespace

LossBreakdown iid_local_loss(const Matrix& z_i, const ClassPartition& part_i, const LocalLossContext& ctx,
                             const RateParams& p) {
  LossBreakdown out;
  const LocalRates lr = local_rates(z_i, part_i, p);
  out.rate = lr.rate;
  out.class_rate = lr.class_rate;
  const PairTermSums sums = pair_term_sums(z_i, part_i, ctx);
  out.dual = sums.dual;
  out.penalty = sums.penalty;
  return out;
}

Matrix iid_local_loss_grad(const Matrix& z_i, const ClassPartition& part_i, const LocalLossContext& ctx,
                           const RateParams& p) {
  Matrix grad = class_coding_rate_grad(z_i, part_i, p);
  Matrix rg = coding_rate_grad(z_i, p, z_i.cols());
  rg *= static_cast<double>(z_i.cols()) / p.total_m;
  grad -= rg;
  add_pair_term_grads(grad, z_i, part_i, ctx);
  return grad;
}

namespace {

struct ClusterTerms {
  double eff_m_s = 0.0;
  std::map<int, double> eff_class_m;  // per class in K_i
  std::map<int, double> self_coeff;   // a_k multiplying Z_ik Z_ik^T in both terms
  SymMatrix expansion;                // the full Gram sum inside the expansion logdet
};

ClusterTerms build_cluster_terms(const Matrix& z, const ClassPartition& part, const ClusterLossInputs& in) {
  ClusterTerms t;
  const int batch_m = z.cols();
  t.eff_m_s = in.cluster_m - in.inv_s_self * (in.self_full_m - batch_m);

  // own classes: every k the plan assigns this node must appear in the batch
  for (const auto& [k, full_mk] : in.self_full_class_m) {
    const int batch_mk = part.count(k);
    if (batch_mk == 0) throw EmptyClass("own class " + std::to_string(k) + " missing from batch");
    const auto cit = in.cluster_class_m.find(k);
    if (cit == in.cluster_class_m.end()) throw PlanMismatch("no cluster count for class " + std::to_string(k));
    t.eff_class_m[k] = cit->second - in.inv_s_self * (full_mk - batch_mk);

    double coeff = in.inv_s_self;
    if (in.substitute_shared) {
      for (const ClusterPeer& peer : in.peers) {
        for (int shared : peer.shared_classes) {
          if (shared != k) continue;
          const auto mjk = peer.class_counts.find(k);
          if (mjk == peer.class_counts.end()) throw PlanMismatch("peer lacks count for shared class");
          coeff += (static_cast<double>(mjk->second) * peer.inv_s) / batch_mk;
        }
      }
    }
    t.self_coeff[k] = coeff;
  }

  // expansion Gram: own (batch-scale) whole Gram, plus substituted shared
  // mass, plus each peer's shared-class-removed base
  SymMatrix g = gram(z, 1.0);
  g *= in.inv_s_self;
  for (const auto& [k, coeff] : t.self_coeff) {
    const double extra = coeff - in.inv_s_self;
    if (extra != 0.0) {
      g.axpy(extra, gram(z.select_columns(part.columns_of(k)), 1.0));
    }
  }
  for (const ClusterPeer& peer : in.peers) {
    if (peer.expansion_base.dim() != g.dim()) throw ShapeMismatch("peer expansion base dim");
    g += peer.expansion_base;
    if (!in.substitute_shared) {
      // restore the peer's own shared-class mass from its stale label-wise stat
      for (int k : peer.shared_classes) {
        const auto vit = in.ctx.peer_prev.find({peer.node, k});
        if (vit == in.ctx.peer_prev.end()) throw MissingStat("peer gram for unsubstituted class " + std::to_string(k));
        const auto mjk = peer.class_counts.find(k);
        if (mjk == peer.class_counts.end()) throw PlanMismatch("peer lacks count for shared class");
        g.axpy(static_cast<double>(mjk->second) * peer.inv_s, vit->second);
      }
    }
  }
  t.expansion = std::move(g);
  return t;
}

}  // namespace

LossBreakdown cluster_loss(const Matrix& z_i, const ClassPartition& part_i, const ClusterLossInputs& in,
                           const RateParams& p) {
  const ClusterTerms t = build_cluster_terms(z_i, part_i, in);
  LossBreakdown out;

  SymMatrix g = t.expansion;
  g *= static_cast<double>(p.dim) / (t.eff_m_s * p.eps_sq);
  out.rate = (t.eff_m_s / (2.0 * p.total_m)) * logdet_psd(g, 1.0);

  for (const auto& [k, eff_mk] : t.eff_class_m) {
    const Matrix zk = z_i.select_columns(part_i.columns_of(k));
    const double a_k = in.substitute_shared ? t.self_coeff.at(k) : in.inv_s_self;
    SymMatrix gk = gram(zk, 1.0);
    gk *= a_k;
    if (!in.substitute_shared) {
      for (const ClusterPeer& peer : in.peers) {
        const auto cit = peer.class_counts.find(k);
        if (cit == peer.class_counts.end()) continue;
        const auto vit = in.ctx.peer_prev.find({peer.node, k});
        if (vit == in.ctx.peer_prev.end()) throw MissingStat("peer gram for class " + std::to_string(k));
        gk.axpy(static_cast<double>(cit->second) * peer.inv_s, vit->second);
      }
    }
    gk *= static_cast<double>(p.dim) / (eff_mk * p.eps_sq);
    double w = eff_mk / (2.0 * p.total_m);
    if (in.weight_reading == CompressionWeight::outer_s_i) w *= in.inv_s_self;
    out.class_rate += w * logdet_psd(gk, 1.0);
  }

  const PairTermSums sums = pair_term_sums(z_i, part_i, in.ctx);
  out.dual = sums.dual;
  out.penalty = sums.penalty;
  return out;
}

Matrix cluster_loss_grad(const Matrix& z_i, const ClassPartition& part_i, const ClusterLossInputs& in,
                         const RateParams& p) {
  const ClusterTerms t = build_cluster_terms(z_i, part_i, in);
  Matrix grad(z_i.rows(), z_i.cols());
  const double base = static_cast<double>(p.dim) / (p.total_m * p.eps_sq);

  // expansion term
  {
    SymMatrix g = t.expansion;
    const double kappa = static_cast<double>(p.dim) / (t.eff_m_s * p.eps_sq);
    g *= kappa;
    const CholeskyFactor f = CholeskyFactor::factor(g, 1.0);
    Matrix x = z_i;
    f.solve_in_place(x);
    for (const auto& [k, coeff] : t.self_coeff) {
      const double a_k = in.substitute_shared ? coeff : in.inv_s_self;
      for (int c : part_i.columns_of(k)) {
        for (int r = 0; r < z_i.rows(); ++r) grad(r, c) -= base * a_k * x(r, c);
      }
    }
  }

  // compression terms
  for (const auto& [k, eff_mk] : t.eff_class_m) {
    const std::vector<int> cols = part_i.columns_of(k);
    const Matrix zk = z_i.select_columns(cols);
    const double a_k = in.substitute_shared ? t.self_coeff.at(k) : in.inv_s_self;
    SymMatrix gk = gram(zk, 1.0);
    gk *= a_k;
    if (!in.substitute_shared) {
      for (const ClusterPeer& peer : in.peers) {
        const auto cit = peer.class_counts.find(k);
        if (cit == peer.class_counts.end()) continue;
        const auto vit = in.ctx.peer_prev.find({peer.node, k});
        if (vit == in.ctx.peer_prev.end()) throw MissingStat("peer gram for class " + std::to_string(k));
        gk.axpy(static_cast<double>(cit->second) * peer.inv_s, vit->second);
      }
    }
    const double kappa_k = static_cast<double>(p.dim) / (eff_mk * p.eps_sq);
    gk *= kappa_k;
    const CholeskyFactor f = CholeskyFactor::factor(gk, 1.0);
    Matrix x = zk;
    f.solve_in_place(x);
    double w = base * a_k;
    if (in.weight_reading == CompressionWeight::outer_s_i) w *= in.inv_s_self;
    for (size_t j = 0; j < cols.size(); ++j) {
      for (int r = 0; r < z_i.rows(); ++r) grad(r, cols[j]) += w * x(r, static_cast<int>(j));
    }
  }

  add_pair_term_grads(grad, z_i, part_i, in.ctx);
  return grad;
}

}  // namespace mcrnet
