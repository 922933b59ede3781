// SPDX-License-Identifier: Apache-2.0
#include "bline/pretrain/encoder.hpp"

#include <random>
#include <stdexcept>
#include <string>

#include "bline/ndgrad/ops.hpp"

namespace bline {

using nd::Shape;
using nd::Tensor;
using nd::Var;

void EncoderConfig::validate() const {
  if (widths.empty()) throw std::invalid_argument("encoder needs at least one stage");
  for (auto w : widths) {
    if (w == 0) throw std::invalid_argument("encoder widths must be positive");
  }
  if (kernel == 0 || embed_dim == 0 || head_hidden == 0 || grid == 0 || !(input_std > 0.0)) {
    throw std::invalid_argument("encoder kernel, embed_dim, head_hidden, grid and input_std must be positive");
  }
}

Encoder::Encoder(EncoderConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t k = config_.kernel;
  std::size_t in_ch = 1;
  for (std::size_t i = 0; i < config_.levels(); ++i) {
    const std::size_t out_ch = config_.widths[i];
    const auto base = std::string(kConvPrefix) + std::to_string(i + 1);
    params_.add(base + ".w", nd::he_normal({out_ch, in_ch, k, k}, in_ch * k * k, rng));
    params_.add(base + ".b", Tensor({out_ch}, 0.0));
    in_ch = out_ch;
  }
  const std::size_t patches = config_.grid * config_.grid;
  for (std::size_t i = 0; i < config_.levels(); ++i) {
    const std::size_t c = config_.widths[i];
    const auto g = "head.global" + std::to_string(i + 1);
    params_.add(g + ".fc1.w", nd::he_normal({config_.head_hidden, c}, c, rng));
    params_.add(g + ".fc1.b", Tensor({config_.head_hidden}, 0.0));
    params_.add(g + ".fc2.w", nd::he_normal({config_.embed_dim, config_.head_hidden}, config_.head_hidden, rng));
    params_.add(g + ".fc2.b", Tensor({config_.embed_dim}, 0.0));
    const auto l = "head.local" + std::to_string(i + 1);
    params_.add(l + ".fc1.w", nd::he_normal({config_.head_hidden, c * patches}, c * patches, rng));
    params_.add(l + ".fc1.b", Tensor({config_.head_hidden}, 0.0));
    params_.add(l + ".fc2.w", nd::he_normal({config_.embed_dim, config_.head_hidden}, config_.head_hidden, rng));
    params_.add(l + ".fc2.b", Tensor({config_.embed_dim}, 0.0));
  }
}

Encoder::Bound Encoder::bind(nd::Graph& graph) {
  Bound b;
  for (std::size_t i = 0; i < config_.levels(); ++i) {
    const auto base = std::string(kConvPrefix) + std::to_string(i + 1);
    b.conv_w.push_back(graph.param(params_.at(base + ".w")));
    b.conv_b.push_back(graph.param(params_.at(base + ".b")));
  }
  for (std::size_t i = 0; i < config_.levels(); ++i) {
    const auto g = "head.global" + std::to_string(i + 1);
    b.global_w1.push_back(graph.param(params_.at(g + ".fc1.w")));
    b.global_b1.push_back(graph.param(params_.at(g + ".fc1.b")));
    b.global_w2.push_back(graph.param(params_.at(g + ".fc2.w")));
    b.global_b2.push_back(graph.param(params_.at(g + ".fc2.b")));
    const auto l = "head.local" + std::to_string(i + 1);
    b.local_w1.push_back(graph.param(params_.at(l + ".fc1.w")));
    b.local_b1.push_back(graph.param(params_.at(l + ".fc1.b")));
    b.local_w2.push_back(graph.param(params_.at(l + ".fc2.w")));
    b.local_b2.push_back(graph.param(params_.at(l + ".fc2.b")));
  }
  return b;
}

std::vector<Var> Encoder::stages(const Bound& p, Var input) const {
  if (input.value().rank() != 4 || input.dim(1) != 1) {
    throw nd::ShapeError("encoder input must be [N,1,H,W], got " + nd::shape_string(input.shape()));
  }
  std::vector<Var> out;
  Var x = nd::scale(nd::add_scalar(input, -config_.input_mean), 1.0 / config_.input_std);
  const std::size_t pad = config_.kernel / 2;
  for (std::size_t i = 0; i < config_.levels(); ++i) {
    x = nd::relu(nd::conv2d(x, p.conv_w[i], p.conv_b[i], 2, pad));
    out.push_back(x);
  }
  return out;
}

std::vector<Var> Encoder::encode_global(const Bound& p, Var views) const {
  const auto feats = stages(p, views);
  std::vector<Var> emb;
  for (std::size_t i = 0; i < feats.size(); ++i) {
    Var pooled = nd::mean_pool(feats[i]);
    Var h = nd::relu(nd::linear(pooled, p.global_w1[i], p.global_b1[i]));
    emb.push_back(nd::l2_normalize(nd::linear(h, p.global_w2[i], p.global_b2[i])));
  }
  return emb;
}

std::vector<Var> Encoder::encode_patches(const Bound& p, Var patches, std::size_t n_images) const {
  const std::size_t per_image = config_.grid * config_.grid;
  if (patches.value().rank() != 4 || patches.dim(0) != n_images * per_image) {
    throw nd::ShapeError("patch batch must be [N*grid^2,1,h,w] with N=" + std::to_string(n_images));
  }
  const auto feats = stages(p, patches);
  std::vector<Var> emb;
  for (std::size_t i = 0; i < feats.size(); ++i) {
    Var pooled = nd::mean_pool(feats[i]);
    Var joined = nd::reshape(pooled, Shape{n_images, per_image * config_.widths[i]});
    Var h = nd::relu(nd::linear(joined, p.local_w1[i], p.local_b1[i]));
    emb.push_back(nd::l2_normalize(nd::linear(h, p.local_w2[i], p.local_b2[i])));
  }
  return emb;
}

void momentum_update(const nd::ParameterStore& query, nd::ParameterStore& key, double m) {
  if (!(m >= 0.0 && m <= 1.0)) throw std::invalid_argument("momentum must lie in [0,1]");
  if (query.size() != key.size()) throw std::invalid_argument("momentum_update: parameter sets differ in size");
  for (const auto& item : query) {
    if (!key.contains(item.name)) throw std::invalid_argument("momentum_update: key encoder lacks " + item.name);
    auto& k = key.at(item.name);
    if (k.shape() != item.tensor.shape()) throw nd::ShapeError("momentum_update: shape mismatch for " + item.name);
    auto kv = k.values();
    const auto qv = item.tensor.values();
    for (std::size_t i = 0; i < kv.size(); ++i) kv[i] = m * kv[i] + (1.0 - m) * qv[i];
  }
}

}  // namespace bline
