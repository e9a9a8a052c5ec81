#ifndef MCRNET_ENCODER_HPP
#define MCRNET_ENCODER_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "mcrnet/matrix.hpp"

namespace mcrnet {

enum class Activation { relu, elu };

// Per-node MLP encoder: affine + activation layers, then per-column L2
// normalization so every emitted feature lies on the unit sphere.
struct EncoderParams {
  std::vector<Matrix> weights;              // layer l: out_dim x in_dim
  std::vector<std::vector<double>> biases;  // layer l: out_dim
  Activation activation = Activation::elu;

  int in_dim() const { return weights.empty() ? 0 : weights.front().cols(); }
  int out_dim() const { return weights.empty() ? 0 : weights.back().rows(); }
  std::vector<int> arch() const;
  size_t param_count() const;
};

EncoderParams init_params(const std::vector<int>& arch, Activation activation, uint64_t seed);

// Forward pass with the per-column norm floored at 1e-12.
Matrix encoder_forward(const EncoderParams& params, const Matrix& x);

// Cached intermediates for the backward pass.
struct ForwardTrace {
  std::vector<Matrix> inputs;  // input of each layer (post-activation of previous)
  Matrix pre_norm;             // last affine output before normalization
  std::vector<double> norms;   // per-column norms (after flooring)
  Matrix output;
};
ForwardTrace encoder_forward_trace(const EncoderParams& params, const Matrix& x);

struct ParamGrads {
  std::vector<Matrix> weights;
  std::vector<std::vector<double>> biases;
};

ParamGrads encoder_backward(const EncoderParams& params, const Matrix& x, const Matrix& upstream);
ParamGrads encoder_backward(const EncoderParams& params, const ForwardTrace& trace, const Matrix& upstream);

// Adam with decoupled weight decay.
struct AdamState {
  double lr = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
  long long step = 0;
  std::vector<Matrix> m_w, v_w;
  std::vector<std::vector<double>> m_b, v_b;

  static AdamState for_params(const EncoderParams& params, double lr, double weight_decay);
};

void adam_step(EncoderParams& params, const ParamGrads& grads, AdamState& state);

// Checkpoint file: "MC2E" magic, version byte, activation byte, layer count,
// arch dims, then the flat little-endian f64 parameter array.
void save_encoder(const std::string& path, const EncoderParams& params);
EncoderParams load_encoder(const std::string& path);

// arithmetic mean of identically shaped parameter sets
EncoderParams average_params(const std::vector<const EncoderParams*>& replicas);

}  // namespace mcrnet

#endif
