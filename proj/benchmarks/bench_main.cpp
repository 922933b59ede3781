// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <random>

#include "bline/detect/coding.hpp"
#include "bline/detect/detector.hpp"
#include "bline/detect/losses.hpp"
#include "bline/detect/nms.hpp"
#include "bline/ndgrad/ops.hpp"
#include "bline/phantom/phantom.hpp"
#include "bline/pretrain/trainer.hpp"

using namespace bline;

namespace {

nd::Tensor random_tensor(nd::Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  nd::Tensor t(std::move(shape));
  for (auto& v : t.values()) v = u(rng);
  return t;
}

std::vector<Box> random_boxes(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> pos(0.0, 140.0), size(2.0, 40.0);
  std::vector<Box> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = pos(rng), y = pos(rng);
    out.push_back({x, y, x + size(rng), y + size(rng)});
  }
  return out;
}

// Args: batch, input channels, output channels, height, width (stride 2, pad 1).
void BM_Conv2dForwardBackward(benchmark::State& state) {
  std::mt19937_64 rng(1);
  const auto n = static_cast<std::size_t>(state.range(0)), c = static_cast<std::size_t>(state.range(1)),
             o = static_cast<std::size_t>(state.range(2)), h = static_cast<std::size_t>(state.range(3)),
             w = static_cast<std::size_t>(state.range(4));
  const nd::Tensor x = random_tensor({n, c, h, w}, rng);
  nd::Tensor k = random_tensor({o, c, 3, 3}, rng), b = random_tensor({o}, rng);
  k.set_requires_grad(true);
  b.set_requires_grad(true);
  for (auto _ : state) {
    nd::Graph g;
    const auto y = nd::conv2d(g.constant(x), g.param(k), g.param(b), 2, 1);
    g.backward(nd::sum(y));
    benchmark::DoNotOptimize(k.grad().data());
  }
}
BENCHMARK(BM_Conv2dForwardBackward)->Args({4, 1, 8, 36, 48})->Args({4, 8, 16, 18, 24})->Args({4, 1, 8, 120, 154});

void BM_Nms(benchmark::State& state) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> score(0.0, 1.0);
  std::vector<Detection> dets;
  for (const auto& b : random_boxes(static_cast<std::size_t>(state.range(0)), rng)) dets.push_back({b, score(rng)});
  for (auto _ : state) benchmark::DoNotOptimize(nms(dets, 0.5, 0.0));
}
BENCHMARK(BM_Nms)->Arg(20)->Arg(100)->Arg(1000);

void BM_EiouForwardBackward(benchmark::State& state) {
  std::mt19937_64 rng(3);
  const auto n = static_cast<std::size_t>(state.range(0));
  nd::Tensor p = boxes_tensor(random_boxes(n, rng));
  const nd::Tensor t = boxes_tensor(random_boxes(n, rng));
  p.set_requires_grad(true);
  for (auto _ : state) {
    nd::Graph g;
    g.backward(nd::mean(eiou_loss(g.param(p), g.constant(t))));
    benchmark::DoNotOptimize(p.grad().data());
  }
}
BENCHMARK(BM_EiouForwardBackward)->Arg(16)->Arg(256);

void BM_EiouScalar(benchmark::State& state) {
  std::mt19937_64 rng(4);
  const auto a = random_boxes(256, rng), b = random_boxes(256, rng);
  for (auto _ : state) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += eiou_loss(a[i], b[i]);
    benchmark::DoNotOptimize(s);
  }
}
BENCHMARK(BM_EiouScalar);

void BM_PretrainStep(benchmark::State& state) {
  PretrainConfig cfg;
  cfg.queue_capacity = 16;
  PretrainState trainer(cfg);
  std::vector<ViewSet> batch;
  for (std::uint64_t i = 0; i < cfg.batch_size; ++i) {
    PhantomParams p;
    p.seed = i;
    batch.push_back(make_views(generate_phantom(p).image, i, cfg.views));
  }
  for (auto _ : state) benchmark::DoNotOptimize(trainer.step(batch));
}
BENCHMARK(BM_PretrainStep)->Unit(benchmark::kMillisecond);

void BM_DetectorInference(benchmark::State& state) {
  Detector det(DetectConfig{}, EncoderConfig{}, 1);
  const auto image = generate_phantom(PhantomParams{}).image;
  for (auto _ : state) benchmark::DoNotOptimize(det.detect(image));
}
BENCHMARK(BM_DetectorInference)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
