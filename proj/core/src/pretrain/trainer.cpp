// SPDX-License-Identifier: Apache-2.0
#include "bline/pretrain/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "bline/ndgrad/ops.hpp"
#include "bline/phantom/phantom.hpp"
#include "bline/pretrain/contrastive.hpp"

namespace bline {

void PretrainConfig::validate() const {
  if (!(tau > 0.0)) throw std::invalid_argument("pretrain.tau must be positive");
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw std::invalid_argument("pretrain.momentum must lie in [0,1]");
  if (level_weights.size() != encoder.levels()) {
    throw std::invalid_argument("pretrain.level_weights needs one weight per encoder level");
  }
  for (double w : level_weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("pretrain.level_weights must be non-negative");
  }
  if (queue_capacity == 0 || batch_size == 0 || epochs == 0) {
    throw std::invalid_argument("pretrain queue_capacity, batch_size and epochs must be positive");
  }
  if (!(lr >= 0.0)) throw std::invalid_argument("pretrain.lr must be non-negative");
  if (views.grid != encoder.grid) throw std::invalid_argument("view grid and encoder grid differ");
  encoder.validate();
  views.validate();
}

nd::Tensor stack_images(std::span<const Image* const> images) {
  if (images.empty()) throw std::invalid_argument("stack_images: no images");
  const std::size_t w = images[0]->width, h = images[0]->height;
  nd::Tensor t({images.size(), 1, h, w});
  auto out = t.values();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i]->width != w || images[i]->height != h) throw nd::ShapeError("stack_images: extents differ");
    std::copy(images[i]->pixels.begin(), images[i]->pixels.end(), out.begin() + static_cast<std::ptrdiff_t>(i * w * h));
  }
  return t;
}

namespace {

struct BatchInputs {
  nd::Tensor global_q, global_k, patches_q, patches_k;
};

BatchInputs gather(std::span<const ViewSet> batch) {
  std::vector<const Image*> gq, gk, pq, pk;
  for (const auto& v : batch) {
    gq.push_back(&v.global_q);
    gk.push_back(&v.global_k);
    for (const auto& p : v.patches_q) pq.push_back(&p);
    for (const auto& p : v.patches_k) pk.push_back(&p);
  }
  return {stack_images(gq), stack_images(gk), stack_images(pq), stack_images(pk)};
}

}  // namespace

PretrainState::PretrainState(const PretrainConfig& config)
    : config_(config),
      query_((config.validate(), config.encoder), config.seed),
      key_(config.encoder, config.seed),
      queues_(config.encoder.levels(), config.encoder.embed_dim, config.queue_capacity) {
  nd::copy_values(query_.params(), key_.params(), true);
  key_.params().set_requires_grad(false);
}

double PretrainState::step(std::span<const ViewSet> batch) {
  if (batch.empty()) throw std::invalid_argument("pretrain step needs a non-empty batch");
  const auto in = gather(batch);
  const std::size_t n = batch.size();

  // Keys come from the momentum encoder in a separate graph and enter the
  // query graph as constants.
  std::vector<nd::Tensor> key_global, key_local;
  {
    nd::Graph kg;
    auto kp = key_.bind(kg);
    for (auto v : key_.encode_global(kp, kg.constant(in.global_k))) key_global.push_back(v.value());
    for (auto v : key_.encode_patches(kp, kg.constant(in.patches_k), n)) key_local.push_back(v.value());
  }

  nd::Graph g;
  auto qp = query_.bind(g);
  LevelEmbeddings q{query_.encode_global(qp, g.constant(in.global_q)),
                    query_.encode_patches(qp, g.constant(in.patches_q), n)};
  LevelEmbeddings k;
  for (const auto& t : key_global) k.global.push_back(g.constant(t));
  for (const auto& t : key_local) k.local.push_back(g.constant(t));

  const auto loss = detco_loss(q, k, queues_, config_.level_weights, config_.tau);
  const double value = loss.total.item();
  if (!std::isfinite(value)) throw nd::NonFiniteError("pretrain loss is not finite");
  g.backward(loss.total);
  nd::sgd_step(query_.params(), config_.lr);
  momentum_update(query_.params(), key_.params(), config_.momentum);
  for (std::size_t i = 0; i < queues_.levels(); ++i) {
    queues_.global[i].enqueue(key_global[i]);
    queues_.local[i].enqueue(key_local[i]);
  }
  return value;
}

PretrainResult pretrain(std::span<const Image> images, const PretrainConfig& config, const PretrainLogger& log) {
  if (images.empty()) throw std::invalid_argument("pretrain needs at least one image");
  PretrainState state(config);
  PretrainResult result;
  std::mt19937_64 order_rng(mix_seed(config.seed, 0x6f72646572ULL));
  std::vector<std::size_t> order(images.size());
  std::size_t step = 0;
  bool have_best = false;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    if (config.max_steps != 0 && step >= config.max_steps) break;
    const bool counted = state.queues().full();
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), order_rng);
    const std::uint64_t epoch_seed = mix_seed(config.seed, epoch + 1);
    double sum = 0.0;
    std::size_t steps_in_epoch = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      if (config.max_steps != 0 && step >= config.max_steps) break;
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<ViewSet> batch;
      for (std::size_t j = start; j < end; ++j) {
        batch.push_back(make_views(images[order[j]], mix_seed(epoch_seed, order[j]), config.views));
      }
      PretrainStep rec;
      rec.step = ++step;
      rec.epoch = epoch + 1;
      rec.queue_full = state.queues().full();
      rec.loss = state.step(batch);
      result.steps.push_back(rec);
      if (log) log(rec);
      sum += rec.loss;
      ++steps_in_epoch;
    }
    if (steps_in_epoch == 0) break;
    const double mean = sum / static_cast<double>(steps_in_epoch);
    if (counted && (!have_best || mean < result.best_epoch_loss)) {
      have_best = true;
      result.best = state.query().params();
      result.best_epoch = epoch + 1;
      result.best_epoch_loss = mean;
    }
  }
  result.final_params = state.query().params();
  if (!have_best) result.best = result.final_params;
  return result;
}

}  // namespace bline
