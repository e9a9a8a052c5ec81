#include <benchmark/benchmark.h>

#include "mcrnet/encoder.hpp"
#include "mcrnet/linalg.hpp"
#include "mcrnet/objective.hpp"
#include "mcrnet/rng.hpp"

namespace {

mcrnet::SymMatrix random_psd(int dim, uint64_t seed) {
  mcrnet::Rng rng(seed);
  mcrnet::Matrix z(dim, 2 * dim);
  for (double& v : z.data()) v = rng.normal();
  return mcrnet::gram(z, static_cast<double>(2 * dim));
}

mcrnet::Matrix random_features(int dim, int cols, uint64_t seed) {
  mcrnet::Rng rng(seed);
  mcrnet::Matrix z(dim, cols);
  for (double& v : z.data()) v = rng.normal();
  for (int c = 0; c < cols; ++c) z.scale_column(c, 1.0 / z.column_norm(c));
  return z;
}

void BM_logdet_psd(benchmark::State& state) {
  const auto m = random_psd(static_cast<int>(state.range(0)), 7);
  for (auto _ : state) {
    benchmark::DoNotOptimize(mcrnet::logdet_psd(m, 1.0));
  }
}
BENCHMARK(BM_logdet_psd)->Arg(32)->Arg(128)->Arg(256);

void BM_sym_eig(benchmark::State& state) {
  const auto m = random_psd(static_cast<int>(state.range(0)), 11);
  for (auto _ : state) {
    benchmark::DoNotOptimize(mcrnet::sym_eig(m, 1e-10, 100));
  }
}
BENCHMARK(BM_sym_eig)->Arg(16)->Arg(64);

void BM_coding_rate_grad(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  const auto z = random_features(d, 4 * d, 13);
  const mcrnet::RateParams p{0.5, 4 * d, d};
  for (auto _ : state) {
    benchmark::DoNotOptimize(mcrnet::coding_rate_grad(z, p, z.cols()));
  }
}
BENCHMARK(BM_coding_rate_grad)->Arg(16)->Arg(64)->Arg(128);

void BM_encoder_step(benchmark::State& state) {
  const int d = 32;
  const auto params = mcrnet::init_params({64, 48, d}, mcrnet::Activation::elu, 3);
  const auto x = random_features(64, 256, 17);
  const mcrnet::Matrix upstream = random_features(d, 256, 19);
  for (auto _ : state) {
    benchmark::DoNotOptimize(mcrnet::encoder_backward(params, x, upstream));
  }
}
BENCHMARK(BM_encoder_step);

}  // namespace

BENCHMARK_MAIN();
