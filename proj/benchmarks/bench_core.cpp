#include <benchmark/benchmark.h>

#include "ng4d/config.hpp"
#include "ng4d/gaussian.hpp"
#include "ng4d/kdtree.hpp"
#include "ng4d/losses.hpp"
#include "ng4d/model.hpp"
#include "ng4d/ops.hpp"
#include "ng4d/pipeline.hpp"
#include "scenes.hpp"

namespace ng4d {
namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor::parameter(std::move(shape), std::move(v));
}

PointMatrix cloud(std::size_t n, std::uint64_t seed) {
  return testing::blobs({Eigen::Vector3d(0, 0, 0), Eigen::Vector3d(1, 0.2, 0)}, (n + 1) / 2, 0.2, seed)
      .topRows(static_cast<Eigen::Index>(n));
}

void BM_LinearForwardBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  auto x = random_tensor({n, 64}, rng), w = random_tensor({64, 64}, rng), b = random_tensor({64}, rng);
  for (auto _ : state) {
    auto loss = sum(relu(linear(x, w, b)));
    backward(loss);
    benchmark::DoNotOptimize(w.grad().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_LinearForwardBackward)->Arg(256)->Arg(1024);

void BM_Attention(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  auto q = random_tensor({n, 32}, rng), k = random_tensor({8, 32}, rng), v = random_tensor({8, 32}, rng);
  for (auto _ : state) {
    auto loss = sum(attention(q, k, v, 1.0 / std::sqrt(32.0)));
    backward(loss);
    benchmark::DoNotOptimize(q.grad().data());
  }
}
BENCHMARK(BM_Attention)->Arg(256)->Arg(1024);

void BM_KdTreeKnn(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const KdTree tree(cloud(n, 3));
  const auto q = cloud(n, 4);
  for (auto _ : state) {
    for (Eigen::Index i = 0; i < q.rows(); ++i) benchmark::DoNotOptimize(tree.knn(q.row(i).transpose(), 16));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_KdTreeKnn)->Arg(1024)->Arg(8192);

void BM_Chamfer(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto a = to_tensor(cloud(n, 5));
  a.set_requires_grad(true);
  const auto b = to_tensor(cloud(n, 6));
  for (auto _ : state) {
    auto loss = chamfer_loss(a, b);
    backward(loss);
    benchmark::DoNotOptimize(a.grad().data());
  }
}
BENCHMARK(BM_Chamfer)->Arg(256)->Arg(1024);

void BM_OptimalAssignment(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = cloud(n, 7), b = cloud(n, 8);
  for (auto _ : state) benchmark::DoNotOptimize(optimal_assignment(a, b));
}
BENCHMARK(BM_OptimalAssignment)->Arg(64)->Arg(256)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_Sinkhorn(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = cloud(n, 9), b = cloud(n, 10);
  for (auto _ : state) benchmark::DoNotOptimize(sinkhorn_plan(a, b));
}
BENCHMARK(BM_Sinkhorn)->Arg(512)->Arg(2048)->Unit(benchmark::kMillisecond);

void BM_SoftCluster(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto p = cloud(n, 11);
  for (auto _ : state) benchmark::DoNotOptimize(soft_cluster(p, 8, 200, 1));
}
BENCHMARK(BM_SoftCluster)->Arg(1024)->Arg(8192)->Unit(benchmark::kMillisecond);

// One training step without the optimizer update: forward over every
// supervised pair and a full backward pass.
void BM_SequenceLossStep(benchmark::State& state) {
  RunConfig cfg;
  cfg.points_per_frame = static_cast<std::size_t>(state.range(0));
  cfg.iterations = 0;
  const auto fix = testing::rigid_translation();
  const auto model = build_model(fix.seq, cfg);
  auto params = model.params.active(cfg.components);
  for (auto _ : state) {
    auto loss = sequence_loss(model, Mode{});
    backward(loss);
    for (auto& [name, p] : params) p.clear_grad();
  }
}
BENCHMARK(BM_SequenceLossStep)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_Interpolate(benchmark::State& state) {
  RunConfig cfg;
  cfg.points_per_frame = 256;
  cfg.iterations = 0;
  const auto model = build_model(testing::rigid_translation().seq, cfg);
  for (auto _ : state) benchmark::DoNotOptimize(interpolate(model, 0.5));
}
BENCHMARK(BM_Interpolate)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace ng4d

BENCHMARK_MAIN();
