#include <random>

#include <benchmark/benchmark.h>

#include "quiver/detect.hpp"
#include "quiver/induced.hpp"
#include "quiver/mlp.hpp"
#include "quiver/verify.hpp"

using namespace quiver;

namespace {

// MNIST-shaped net: 784 -> width x depth -> 10.
Mlp mnist_net(std::size_t width, std::size_t depth) {
  MlpSpec s;
  s.input_dim = 784;
  s.hidden.assign(depth, width);
  s.output_dim = 10;
  s.init_seed = 1;
  return Mlp(s);
}

Eigen::VectorXd pixels() {
  Eigen::VectorXd x = 0.5 * (random_input(784, 3).array() + 1.0);
  return x;
}

}  // namespace

static void BM_Forward(benchmark::State& state) {
  const Mlp mlp = mnist_net(state.range(0), state.range(1));
  const Eigen::VectorXd x = pixels();
  for (auto _ : state) benchmark::DoNotOptimize(forward(mlp, x));
}
BENCHMARK(BM_Forward)->Args({256, 2})->Args({1000, 8});

static void BM_ForwardBackward(benchmark::State& state) {
  const Mlp mlp = mnist_net(state.range(0), state.range(1));
  const Eigen::VectorXd x = pixels();
  for (auto _ : state) benchmark::DoNotOptimize(backward(mlp, forward(mlp, x), 3));
}
BENCHMARK(BM_ForwardBackward)->Args({256, 2})->Args({1000, 8});

static void BM_InducedMatrix(benchmark::State& state) {
  const Mlp mlp = mnist_net(state.range(0), state.range(1));
  const Eigen::VectorXd x = pixels();
  RatioPolicy policy;
  for (auto _ : state) benchmark::DoNotOptimize(induced_matrix(mlp, x, policy));
}
BENCHMARK(BM_InducedMatrix)->Args({256, 2})->Args({1000, 8})->Unit(benchmark::kMicrosecond);

static void BM_CountReliable(benchmark::State& state) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g(0.0, 0.05);
  std::vector<std::vector<Eigen::MatrixXd>> groups(10);
  for (auto& group : groups)
    for (int i = 0; i < 3; ++i) group.push_back(Eigen::MatrixXd::NullaryExpr(10, 785, [&] { return g(rng); }));
  const ClassStats stats = class_stats(groups);
  const Eigen::MatrixXd m = Eigen::MatrixXd::NullaryExpr(10, 785, [&] { return g(rng); });
  for (auto _ : state) benchmark::DoNotOptimize(count_reliable_entries(m, stats, 4, 0.05));
}
BENCHMARK(BM_CountReliable);
BENCHMARK_MAIN();
