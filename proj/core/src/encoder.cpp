#include "mcrnet/encoder.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "mcrnet/errors.hpp"
#include "mcrnet/rng.hpp"

namespace mcrnet {

namespace {

constexpr double kNormFloor = 1e-12;
constexpr char kMagic[4] = {'M', 'C', '2', 'E'};
constexpr uint8_t kVersion = 1;

double activate(Activation a, double x) {
  if (a == Activation::relu) return x > 0.0 ? x : 0.0;
  return x > 0.0 ? x : std::expm1(x);
}

}  // namespace

std::vector<int> EncoderParams::arch() const {
  std::vector<int> a;
  if (weights.empty()) return a;
  a.push_back(weights.front().cols());
  for (const Matrix& w : weights) a.push_back(w.rows());
  return a;
}

size_t EncoderParams::param_count() const {
  size_t n = 0;
  for (const Matrix& w : weights) n += w.data().size();
  for (const auto& b : biases) n += b.size();
  return n;
}

EncoderParams init_params(const std::vector<int>& arch, Activation activation, uint64_t seed) {
  if (arch.size() < 2) throw BadArch("arch needs at least input and output dims");
  for (int d : arch) {
    if (d <= 0) throw BadArch("non-positive layer dim");
  }
  EncoderParams p;
  p.activation = activation;
  Rng rng(mix_seed(seed, 0x0e5c0de));
  for (size_t l = 0; l + 1 < arch.size(); ++l) {
    const int fan_in = arch[l];
    const int fan_out = arch[l + 1];
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    Matrix w(fan_out, fan_in);
    for (double& v : w.data()) v = rng.uniform(-bound, bound);
    p.weights.push_back(std::move(w));
    p.biases.emplace_back(fan_out, 0.0);
  }
  return p;
}

ForwardTrace encoder_forward_trace(const EncoderParams& params, const Matrix& x) {
  if (x.rows() != params.in_dim()) throw ShapeMismatch("encoder input rows");
  ForwardTrace t;
  t.inputs.reserve(params.weights.size());
  Matrix cur = x;
  const size_t n_layers = params.weights.size();
  for (size_t l = 0; l < n_layers; ++l) {
    t.inputs.push_back(cur);
    const Matrix& w = params.weights[l];
    Matrix next = matmul(w, cur);
    for (int r = 0; r < next.rows(); ++r) {
      const double b = params.biases[l][r];
      double* row = next.row_ptr(r);
      for (int c = 0; c < next.cols(); ++c) row[c] += b;
    }
    if (l + 1 < n_layers) {
      for (double& v : next.data()) v = activate(params.activation, v);
    }
    cur = std::move(next);
  }
  t.pre_norm = cur;
  t.norms.resize(cur.cols());
  t.output = cur;
  for (int c = 0; c < cur.cols(); ++c) {
    const double n = std::max(cur.column_norm(c), kNormFloor);
    t.norms[c] = n;
    t.output.scale_column(c, 1.0 / n);
  }
  return t;
}

Matrix encoder_forward(const EncoderParams& params, const Matrix& x) {
  return encoder_forward_trace(params, x).output;
}

ParamGrads encoder_backward(const EncoderParams& params, const ForwardTrace& trace, const Matrix& upstream) {
  const size_t n_layers = params.weights.size();
  if (upstream.rows() != params.out_dim() || upstream.cols() != trace.output.cols()) {
    throw ShapeMismatch("upstream gradient shape");
  }
  ParamGrads g;
  g.weights.resize(n_layers);
  g.biases.resize(n_layers);

  // through normalization: J = (I - u u^T)/n per column, u the unit output
  Matrix delta(upstream.rows(), upstream.cols());
  for (int c = 0; c < upstream.cols(); ++c) {
    double proj = 0.0;
    for (int r = 0; r < upstream.rows(); ++r) proj += upstream(r, c) * trace.output(r, c);
    const double inv_n = 1.0 / trace.norms[c];
    for (int r = 0; r < upstream.rows(); ++r) {
      delta(r, c) = (upstream(r, c) - proj * trace.output(r, c)) * inv_n;
    }
  }

  for (size_t l = n_layers; l-- > 0;) {
    if (l + 1 < n_layers) {
      // delta currently holds dLoss/d(post-activation); fold in the
      // activation derivative at the stored pre-activation values
      const Matrix& post = trace.inputs[l + 1];
      for (int r = 0; r < delta.rows(); ++r) {
        for (int c = 0; c < delta.cols(); ++c) {
          const double post_v = post(r, c);
          double d;
          if (params.activation == Activation::relu) {
            d = post_v > 0.0 ? 1.0 : 0.0;
          } else {
            // elu: post = expm1(pre) for pre <= 0, so deriv = post + 1
            d = post_v > 0.0 ? 1.0 : post_v + 1.0;
          }
          delta(r, c) *= d;
        }
      }
    }
    const Matrix& in = trace.inputs[l];
    Matrix wt(delta.rows(), in.rows());
    // dW = delta * in^T
    for (int r = 0; r < delta.rows(); ++r) {
      for (int k = 0; k < in.rows(); ++k) {
        double acc = 0.0;
        const double* drow = delta.row_ptr(r);
        const double* irow = in.row_ptr(k);
        for (int c = 0; c < delta.cols(); ++c) acc += drow[c] * irow[c];
        wt(r, k) = acc;
      }
    }
    g.weights[l] = std::move(wt);
    std::vector<double> bg(delta.rows(), 0.0);
    for (int r = 0; r < delta.rows(); ++r) {
      const double* drow = delta.row_ptr(r);
      for (int c = 0; c < delta.cols(); ++c) bg[r] += drow[c];
    }
    g.biases[l] = std::move(bg);

    if (l > 0) delta = matmul_tn(params.weights[l], delta);
  }
  return g;
}

ParamGrads encoder_backward(const EncoderParams& params, const Matrix& x, const Matrix& upstream) {
  return encoder_backward(params, encoder_forward_trace(params, x), upstream);
}

AdamState AdamState::for_params(const EncoderParams& params, double lr, double weight_decay) {
  AdamState s;
  s.lr = lr;
  s.weight_decay = weight_decay;
  for (const Matrix& w : params.weights) {
    s.m_w.emplace_back(w.rows(), w.cols());
    s.v_w.emplace_back(w.rows(), w.cols());
  }
  for (const auto& b : params.biases) {
    s.m_b.emplace_back(b.size(), 0.0);
    s.v_b.emplace_back(b.size(), 0.0);
  }
  return s;
}

namespace {

void adam_update(std::vector<double>& p, const std::vector<double>& g, std::vector<double>& m,
                 std::vector<double>& v, const AdamState& s, double bc1, double bc2, bool decay) {
  for (size_t i = 0; i < p.size(); ++i) {
    m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g[i];
    v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g[i] * g[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    if (decay) p[i] *= 1.0 - s.lr * s.weight_decay;
    p[i] -= s.lr * mhat / (std::sqrt(vhat) + s.eps);
  }
}

}  // namespace

void adam_step(EncoderParams& params, const ParamGrads& grads, AdamState& state) {
  if (grads.weights.size() != params.weights.size()) throw ShapeMismatch("adam grads layer count");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (size_t l = 0; l < params.weights.size(); ++l) {
    if (grads.weights[l].rows() != params.weights[l].rows() || grads.weights[l].cols() != params.weights[l].cols()) {
      throw ShapeMismatch("adam weight grad shape");
    }
    adam_update(params.weights[l].data(), grads.weights[l].data(), state.m_w[l].data(), state.v_w[l].data(), state,
                bc1, bc2, /*decay=*/true);
    adam_update(params.biases[l], grads.biases[l], state.m_b[l], state.v_b[l], state, bc1, bc2, /*decay=*/false);
  }
}

namespace {

template <typename T>
void write_le(std::ostream& out, T value) {
  // this codebase targets little-endian hosts; serialize raw
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  T value;
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw IoError("checkpoint truncated");
  return value;
}

}  // namespace

void save_encoder(const std::string& path, const EncoderParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(kMagic, 4);
  write_le<uint8_t>(out, kVersion);
  write_le<uint8_t>(out, params.activation == Activation::relu ? 0 : 1);
  const std::vector<int> arch = params.arch();
  write_le<uint32_t>(out, static_cast<uint32_t>(arch.size()));
  for (int d : arch) write_le<uint32_t>(out, static_cast<uint32_t>(d));
  for (size_t l = 0; l < params.weights.size(); ++l) {
    for (double v : params.weights[l].data()) write_le<double>(out, v);
    for (double v : params.biases[l]) write_le<double>(out, v);
  }
  if (!out) throw IoError("write failed for " + path);
}

EncoderParams load_encoder(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw IoError("bad checkpoint magic in " + path);
  const uint8_t version = read_le<uint8_t>(in);
  if (version != kVersion) throw IoError("unsupported checkpoint version");
  const uint8_t act = read_le<uint8_t>(in);
  const uint32_t n_dims = read_le<uint32_t>(in);
  if (n_dims < 2 || n_dims > 64) throw IoError("implausible arch length");
  std::vector<int> arch(n_dims);
  for (uint32_t i = 0; i < n_dims; ++i) arch[i] = static_cast<int>(read_le<uint32_t>(in));

  EncoderParams p;
  p.activation = act == 0 ? Activation::relu : Activation::elu;
  for (size_t l = 0; l + 1 < arch.size(); ++l) {
    Matrix w(arch[l + 1], arch[l]);
    for (double& v : w.data()) v = read_le<double>(in);
    std::vector<double> b(arch[l + 1]);
    for (double& v : b) v = read_le<double>(in);
    p.weights.push_back(std::move(w));
    p.biases.push_back(std::move(b));
  }
  return p;
}

EncoderParams average_params(const std::vector<const EncoderParams*>& replicas) {
  if (replicas.empty()) throw ArchMismatch("no replicas to average");
  const EncoderParams& first = *replicas.front();
  for (const EncoderParams* r : replicas) {
    if (r->arch() != first.arch() || r->activation != first.activation) {
      throw ArchMismatch("replica architectures differ");
    }
  }
  EncoderParams avg = first;
  const double inv = 1.0 / replicas.size();
  for (size_t l = 0; l < avg.weights.size(); ++l) {
    auto& wd = avg.weights[l].data();
    for (size_t i = 0; i < wd.size(); ++i) {
      double acc = 0.0;
      for (const EncoderParams* r : replicas) acc += r->weights[l].data()[i];
      wd[i] = acc * inv;
    }
    for (size_t i = 0; i < avg.biases[l].size(); ++i) {
      double acc = 0.0;
      for (const EncoderParams* r : replicas) acc += r->biases[l][i];
      avg.biases[l][i] = acc * inv;
    }
  }
  return avg;
}

}  // namespace mcrnet
