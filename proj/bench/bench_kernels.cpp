// Serial reference kernels against their OpenMP counterparts. Each benchmark
// is registered twice, once per implementation, with identical inputs.

#include <benchmark/benchmark.h>

#include <vector>

#include "cdsgen/kernels.hpp"
#include "cdsgen/rng.hpp"

namespace {

using namespace cdsgen;

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

struct Parallel {
  static constexpr auto linear_forward = &kernels::linear_forward;
  static void linear_backward(ConstMatView x, ConstMatView w, ConstMatView dout, MatView dx,
                              MatView dw, std::span<double> db) {
    kernels::linear_backward(x, w, dout, dx, dw, db, false);
  }
  static constexpr auto layernorm_forward = &kernels::layernorm_forward;
  static constexpr auto gelu_forward = &kernels::gelu_forward;
  static constexpr auto attention_forward = &kernels::attention_forward;
  static constexpr auto attention_backward = &kernels::attention_backward;
  static constexpr auto softmax_cross_entropy = &kernels::softmax_cross_entropy;
};

struct Serial {
  static constexpr auto linear_forward = &kernels::ref::linear_forward;
  static void linear_backward(ConstMatView x, ConstMatView w, ConstMatView dout, MatView dx,
                              MatView dw, std::span<double> db) {
    kernels::ref::linear_backward(x, w, dout, dx, dw, db, false);
  }
  static constexpr auto layernorm_forward = &kernels::ref::layernorm_forward;
  static constexpr auto gelu_forward = &kernels::ref::gelu_forward;
  static constexpr auto attention_forward = &kernels::ref::attention_forward;
  static constexpr auto attention_backward = &kernels::ref::attention_backward;
  static constexpr auto softmax_cross_entropy = &kernels::ref::softmax_cross_entropy;
};

// rows = range(0), square weight of size range(1).
template <class K>
void BM_LinearForward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto d = static_cast<std::size_t>(state.range(1));
  auto x = random_values(n * d, 1), w = random_values(d * d, 2), b = random_values(d, 3);
  std::vector<double> out(n * d);
  for (auto _ : state) {
    K::linear_forward({x.data(), n, d}, {w.data(), d, d}, b, {out.data(), n, d});
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * d * d));
}

template <class K>
void BM_LinearBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto d = static_cast<std::size_t>(state.range(1));
  auto x = random_values(n * d, 1), w = random_values(d * d, 2), dout = random_values(n * d, 3);
  std::vector<double> dx(n * d), dw(d * d), db(d);
  for (auto _ : state) {
    K::linear_backward({x.data(), n, d}, {w.data(), d, d}, {dout.data(), n, d},
                       {dx.data(), n, d}, {dw.data(), d, d}, db);
    benchmark::DoNotOptimize(dw.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * d * d));
}

template <class K>
void BM_LayerNorm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto d = static_cast<std::size_t>(state.range(1));
  auto x = random_values(n * d, 1), g = random_values(d, 2), b = random_values(d, 3);
  std::vector<double> out(n * d), mean(n), rstd(n);
  for (auto _ : state) {
    K::layernorm_forward({x.data(), n, d}, g, b, {out.data(), n, d}, mean, rstd);
    benchmark::DoNotOptimize(out.data());
  }
}

template <class K>
void BM_Gelu(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0)) * static_cast<std::size_t>(state.range(1));
  auto x = random_values(n, 1);
  std::vector<double> out(n);
  for (auto _ : state) {
    K::gelu_forward(x, out);
    benchmark::DoNotOptimize(out.data());
  }
}

// sequences = range(0), length = range(1), 8 heads of width 64.
template <class K>
void BM_AttentionForward(benchmark::State& state) {
  const AttentionShape shape{static_cast<std::size_t>(state.range(0)),
                             static_cast<std::size_t>(state.range(1)), 8, 512};
  const std::size_t rows = shape.sequences * shape.length;
  auto qkv = random_values(rows * 3 * shape.model_dim, 1);
  std::vector<double> probs(shape.sequences * shape.heads * shape.length * shape.length);
  std::vector<double> out(rows * shape.model_dim);
  for (auto _ : state) {
    K::attention_forward({qkv.data(), rows, 3 * shape.model_dim}, shape, probs,
                         {out.data(), rows, shape.model_dim});
    benchmark::DoNotOptimize(out.data());
  }
}

template <class K>
void BM_AttentionBackward(benchmark::State& state) {
  const AttentionShape shape{static_cast<std::size_t>(state.range(0)),
                             static_cast<std::size_t>(state.range(1)), 8, 512};
  const std::size_t rows = shape.sequences * shape.length;
  auto qkv = random_values(rows * 3 * shape.model_dim, 1);
  auto dout = random_values(rows * shape.model_dim, 2);
  std::vector<double> probs(shape.sequences * shape.heads * shape.length * shape.length);
  std::vector<double> out(rows * shape.model_dim), dqkv(rows * 3 * shape.model_dim);
  K::attention_forward({qkv.data(), rows, 3 * shape.model_dim}, shape, probs,
                       {out.data(), rows, shape.model_dim});
  for (auto _ : state) {
    K::attention_backward({qkv.data(), rows, 3 * shape.model_dim}, shape, probs,
                          {dout.data(), rows, shape.model_dim}, {dqkv.data(), rows, 3 * shape.model_dim});
    benchmark::DoNotOptimize(dqkv.data());
  }
}

// rows = range(0), vocabulary = range(1).
template <class K>
void BM_SoftmaxCrossEntropy(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto v = static_cast<std::size_t>(state.range(1));
  auto logits = random_values(n * v, 1);
  std::vector<int> targets(n);
  for (std::size_t i = 0; i < n; ++i) targets[i] = static_cast<int>((i * 7919) % v);
  std::vector<double> loss(n), dlogits(n * v);
  for (auto _ : state) {
    K::softmax_cross_entropy({logits.data(), n, v}, targets, 1.0, loss, {dlogits.data(), n, v});
    benchmark::DoNotOptimize(dlogits.data());
  }
}

#define CDSGEN_BENCH_PAIR(fn, ...)                              \
  BENCHMARK_TEMPLATE(fn, Serial)->Args(__VA_ARGS__)->Unit(benchmark::kMicrosecond); \
  BENCHMARK_TEMPLATE(fn, Parallel)->Args(__VA_ARGS__)->Unit(benchmark::kMicrosecond)

CDSGEN_BENCH_PAIR(BM_LinearForward, {800, 512});
CDSGEN_BENCH_PAIR(BM_LinearBackward, {800, 512});
CDSGEN_BENCH_PAIR(BM_LayerNorm, {800, 512});
CDSGEN_BENCH_PAIR(BM_Gelu, {800, 2048});
CDSGEN_BENCH_PAIR(BM_AttentionForward, {8, 100});
CDSGEN_BENCH_PAIR(BM_AttentionBackward, {8, 100});
CDSGEN_BENCH_PAIR(BM_SoftmaxCrossEntropy, {800, 5000});

}  // namespace

BENCHMARK_MAIN();
