// SPDX-License-Identifier: Apache-2.0
#include "bline/detect/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bline/detect/coding.hpp"
#include "bline/ndgrad/ops.hpp"
#include "bline/pretrain/trainer.hpp"

namespace bline {

using nd::Shape;
using nd::Tensor;
using nd::Var;

namespace {

constexpr std::size_t kStages = 3;
constexpr std::size_t kGeometry = 4;
constexpr std::size_t kStripColumns = 3;

std::size_t conv_out(std::size_t in, std::size_t kernel) { return (in + 2 * (kernel / 2) - kernel) / 2 + 1; }

std::string conv_name(std::size_t i) { return std::string(Encoder::kConvPrefix) + std::to_string(i + 1); }

Tensor small_normal(Shape shape, double stddev, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

void DetectConfig::validate() const {
  if (lambda_rpn < 0.0 || lambda_fastrcnn < 0.0) throw std::invalid_argument("loss weights must be non-negative");
  if (!(neg_iou > 0.0 && neg_iou <= pos_iou && pos_iou < 1.0)) {
    throw std::invalid_argument("anchor thresholds must satisfy 0 < neg_iou <= pos_iou < 1");
  }
  if (!(nms_iou > 0.0 && nms_iou <= 1.0)) throw std::invalid_argument("nms_iou must lie in (0,1]");
  if (!(score_threshold >= 0.0 && score_threshold <= 1.0)) throw std::invalid_argument("score_threshold must lie in [0,1]");
  if (!(roi_fg_iou > 0.0 && roi_fg_iou <= 1.0)) throw std::invalid_argument("roi_fg_iou must lie in (0,1]");
  if (!(rpn_pos_fraction > 0.0 && rpn_pos_fraction <= 1.0)) throw std::invalid_argument("rpn_pos_fraction must lie in (0,1]");
  if (!(lr >= 0.0)) throw std::invalid_argument("lr must be non-negative");
  if (!(lr_drop_factor > 0.0 && lr_drop_factor <= 1.0)) throw std::invalid_argument("lr_drop_factor must lie in (0,1]");
  if (epochs == 0 || batch_size == 0 || rpn_batch == 0 || pre_nms_top == 0 || post_nms_top == 0 || rpn_hidden == 0 ||
      head_hidden == 0 || roi_columns == 0 || roi_rows == 0 || strip_rows == 0) {
    throw std::invalid_argument("detector counts must be positive");
  }
  if (image_width < 32 || image_height < 32) throw std::invalid_argument("detector image extents must be at least 32");
  anchors.validate();
}

double DetectConfig::lr_at(std::size_t epoch) const {
  return lr_drop_epoch != 0 && epoch >= lr_drop_epoch ? lr * lr_drop_factor : lr;
}

struct Detector::Bound {
  std::vector<Var> conv_w, conv_b;
  Var rpn1_w, rpn1_b, rpn2_w, rpn2_b;
  Var roi1_w, roi1_b, roi2_w, roi2_b;
};

struct Detector::Forward {
  std::size_t n = 0;
  Var input;
  std::vector<Var> stages;
  Var rpn;
};

Detector::Detector(DetectConfig config, EncoderConfig encoder, std::uint64_t seed)
    : config_(std::move(config)), encoder_(std::move(encoder)) {
  config_.validate();
  encoder_.validate();
  if (encoder_.levels() < kStages) throw std::invalid_argument("detector backbone needs at least 3 encoder stages");

  std::mt19937_64 rng(seed);
  const std::size_t k = encoder_.kernel;
  std::size_t in_ch = 1;
  for (std::size_t i = 0; i < kStages; ++i) {
    const std::size_t out_ch = encoder_.widths[i];
    params_.add(conv_name(i) + ".w", nd::he_normal({out_ch, in_ch, k, k}, in_ch * k * k, rng));
    params_.add(conv_name(i) + ".b", Tensor({out_ch}, 0.0));
    in_ch = out_ch;
  }
  const std::size_t a = config_.anchors.per_cell();
  const std::size_t rpn_in = encoder_.widths[1] + encoder_.widths[2] + 1;
  params_.add("rpn.fc1.w", nd::he_normal({config_.rpn_hidden, rpn_in, 1, 1}, rpn_in, rng));
  params_.add("rpn.fc1.b", Tensor({config_.rpn_hidden}, 0.0));
  params_.add("rpn.fc2.w", small_normal({5 * a, config_.rpn_hidden, 1, 1}, 0.01, rng));
  params_.add("rpn.fc2.b", Tensor({5 * a}, 0.0));
  const std::size_t roi_in = (config_.roi_columns * config_.roi_rows + kStripColumns * config_.strip_rows) *
                                 (1 + encoder_.widths[0] + encoder_.widths[1]) +
                             kGeometry;
  params_.add("roi.fc1.w", nd::he_normal({config_.head_hidden, roi_in}, roi_in, rng));
  params_.add("roi.fc1.b", Tensor({config_.head_hidden}, 0.0));
  params_.add("roi.fc2.w", small_normal({5, config_.head_hidden}, 0.01, rng));
  params_.add("roi.fc2.b", Tensor({5}, 0.0));

  std::size_t h = config_.image_height, w = config_.image_width;
  for (std::size_t i = 0; i < 2; ++i) {
    h = conv_out(h, k);
    w = conv_out(w, k);
  }
  grid_rows_ = h;
  grid_cols_ = w;
  anchors_ = generate_anchors(grid_rows_, grid_cols_, static_cast<double>(config_.image_width),
                              static_cast<double>(config_.image_height), config_.anchors);
  for (const auto& an : anchors_) anchor_boxes_.push_back(an.box);
}

void Detector::load_backbone(const nd::ParameterStore& encoder) {
  double cumulative = 1.0;
  for (std::size_t i = 0; i < kStages; ++i) {
    for (const char* suffix : {".w", ".b"}) {
      const auto name = conv_name(i) + suffix;
      if (!encoder.contains(name)) throw CheckpointMismatchError("encoder checkpoint lacks " + name);
      const auto& src = encoder.at(name);
      auto& dst = params_.at(name);
      if (src.shape() != dst.shape()) {
        throw CheckpointMismatchError("encoder tensor " + name + " has shape " + nd::shape_string(src.shape()) +
                                      ", detector expects " + nd::shape_string(dst.shape()));
      }
      std::copy(src.values().begin(), src.values().end(), dst.values().begin());
    }
    if (!config_.rescale_backbone) continue;
    auto w = params_.at(conv_name(i) + ".w").values();
    double sq = 0.0;
    for (double v : w) sq += v * v;
    if (sq == 0.0) continue;
    const double fan_in = static_cast<double>(w.size()) / static_cast<double>(params_.at(conv_name(i) + ".b").size());
    const double s = std::sqrt(2.0 / fan_in) / std::sqrt(sq / static_cast<double>(w.size()));
    cumulative *= s;
    for (double& v : w) v *= s;
    for (double& v : params_.at(conv_name(i) + ".b").values()) v *= cumulative;
  }
}

void Detector::load(const nd::ParameterStore& checkpoint) {
  if (checkpoint.size() != params_.size()) {
    throw CheckpointMismatchError("detector checkpoint holds " + std::to_string(checkpoint.size()) +
                                  " tensors, expected " + std::to_string(params_.size()));
  }
  try {
    nd::copy_values(checkpoint, params_, true);
  } catch (const std::invalid_argument& e) {
    throw CheckpointMismatchError(std::string("detector checkpoint does not fit: ") + e.what());
  }
}

Detector::Bound Detector::bind(nd::Graph& g, bool trainable) const {
  auto get = [&](const std::string& name) {
    // Training binds the stored tensors so gradients flow back into them.
    return trainable ? g.param(const_cast<nd::ParameterStore&>(params_).at(name)) : g.constant(params_.at(name));
  };
  Bound b;
  for (std::size_t i = 0; i < kStages; ++i) {
    b.conv_w.push_back(get(conv_name(i) + ".w"));
    b.conv_b.push_back(get(conv_name(i) + ".b"));
  }
  b.rpn1_w = get("rpn.fc1.w");
  b.rpn1_b = get("rpn.fc1.b");
  b.rpn2_w = get("rpn.fc2.w");
  b.rpn2_b = get("rpn.fc2.b");
  b.roi1_w = get("roi.fc1.w");
  b.roi1_b = get("roi.fc1.b");
  b.roi2_w = get("roi.fc2.w");
  b.roi2_b = get("roi.fc2.b");
  return b;
}

Detector::Forward Detector::forward(nd::Graph& g, const Bound& p, const std::vector<const Image*>& images) const {
  for (const auto* im : images) {
    if (im->width != config_.image_width || im->height != config_.image_height) {
      throw nd::ShapeError("detector expects " + std::to_string(config_.image_width) + "x" +
                           std::to_string(config_.image_height) + " images, got " + std::to_string(im->width) + "x" +
                           std::to_string(im->height));
    }
  }
  Forward f;
  f.n = images.size();
  Tensor x = stack_images(images);
  for (auto& v : x.values()) v = (v - encoder_.input_mean) / encoder_.input_std;
  f.input = g.constant(std::move(x));
  Var h = f.input;
  for (std::size_t i = 0; i < kStages; ++i) {
    h = nd::relu(nd::conv2d(h, p.conv_w[i], p.conv_b[i], 2, encoder_.kernel / 2));
    f.stages.push_back(h);
  }
  const std::size_t rows = grid_rows_, cols = grid_cols_;
  Tensor ycoord({f.n, 1, rows, cols});
  for (std::size_t n = 0; n < f.n; ++n)
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c)
        ycoord[(n * rows + r) * cols + c] = (static_cast<double>(r) + 0.5) / static_cast<double>(rows);
  const Var up = nd::upsample_nearest(f.stages[2], 2, rows, cols);
  const Var feats = nd::concat({f.stages[1], up, g.constant(std::move(ycoord))}, 1);
  const Var hidden = nd::relu(nd::conv2d(feats, p.rpn1_w, p.rpn1_b, 1, 0));
  f.rpn = nd::conv2d(hidden, p.rpn2_w, p.rpn2_b, 1, 0);
  return f;
}

namespace {

struct RpnLayout {
  std::size_t a, rows, cols;
  std::size_t channels() const { return 5 * a; }
  std::size_t logit(std::size_t n, std::size_t anchor) const { return at(n, anchor, anchor % a); }
  std::size_t delta(std::size_t n, std::size_t anchor, std::size_t j) const {
    return at(n, anchor, a + 4 * (anchor % a) + j);
  }

 private:
  std::size_t at(std::size_t n, std::size_t anchor, std::size_t ch) const {
    const std::size_t cell = anchor / a;
    return (n * channels() + ch) * rows * cols + cell;
  }
};

}  // namespace

std::vector<Box> Detector::propose(const Forward& f, std::size_t n) const {
  const RpnLayout lay{config_.anchors.per_cell(), grid_rows_, grid_cols_};
  const auto& out = f.rpn.value();
  const double w = static_cast<double>(config_.image_width), h = static_cast<double>(config_.image_height);
  std::vector<Detection> cand;
  cand.reserve(anchors_.size());
  for (std::size_t i = 0; i < anchors_.size(); ++i) {
    const double d[4] = {out[lay.delta(n, i, 0)], out[lay.delta(n, i, 1)], out[lay.delta(n, i, 2)],
                         out[lay.delta(n, i, 3)]};
    const Box b = clip(decode_box(anchor_boxes_[i], d), w, h);
    if (b.width() < 1.0 || b.height() < 1.0) continue;
    cand.push_back({b, sigmoid(out[lay.logit(n, i)])});
  }
  std::stable_sort(cand.begin(), cand.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
  if (cand.size() > config_.pre_nms_top) cand.resize(config_.pre_nms_top);
  std::vector<Box> rois;
  for (const auto& d : nms(cand, config_.nms_iou, 0.0)) {
    if (rois.size() == config_.post_nms_top) break;
    rois.push_back(d.box);
  }
  return rois;
}

Var Detector::roi_head(nd::Graph& g, const Bound& p, const Forward& f, std::size_t n,
                       const std::vector<Box>& rois) const {
  const std::size_t nc = config_.roi_columns, nr = config_.roi_rows, ns = config_.strip_rows;
  std::vector<nd::SamplePoint> pts;
  pts.reserve(rois.size() * (nc * nr + kStripColumns * ns));
  Tensor geom({rois.size(), kGeometry});
  const double w = static_cast<double>(config_.image_width), h = static_cast<double>(config_.image_height);
  for (std::size_t r = 0; r < rois.size(); ++r) {
    const Box& b = rois[r];
    const double x0 = b.x1 - 0.5 * b.width(), span = 2.0 * b.width();
    for (std::size_t i = 0; i < nr; ++i) {
      const double y = b.y1 + (static_cast<double>(i) + 0.5) / static_cast<double>(nr) * b.height();
      for (std::size_t j = 0; j < nc; ++j) {
        pts.push_back({x0 + (static_cast<double>(j) + 0.5) / static_cast<double>(nc) * span, y});
      }
    }
    for (std::size_t i = 0; i < ns; ++i) {
      const double y = (static_cast<double>(i) + 0.5) / static_cast<double>(ns) * h;
      for (std::size_t j = 0; j < kStripColumns; ++j) {
        pts.push_back({b.cx() + (static_cast<double>(j) - 1.0) * 0.25 * b.width(), y});
      }
    }
    geom[r * kGeometry] = b.x1 / w;
    geom[r * kGeometry + 1] = b.y1 / h;
    geom[r * kGeometry + 2] = b.x2 / w;
    geom[r * kGeometry + 3] = b.y2 / h;
  }
  const Var img = nd::roi_sample(nd::slice(f.input, 0, n, n + 1), 1.0, 0.5, pts);
  const Var s1 = nd::roi_sample(nd::slice(f.stages[0], 0, n, n + 1), 2.0, 0.5, pts);
  const Var s2 = nd::roi_sample(nd::slice(f.stages[1], 0, n, n + 1), 4.0, 0.5, pts);
  const Var sampled = nd::concat({img, s1, s2}, 1);
  const std::size_t per_roi = sampled.size() / rois.size();
  const Var x = nd::concat({nd::reshape(sampled, Shape{rois.size(), per_roi}), g.constant(std::move(geom))}, 1);
  const Var hidden = nd::relu(nd::linear(x, p.roi1_w, p.roi1_b));
  return nd::linear(hidden, p.roi2_w, p.roi2_b);
}

std::vector<Detection> Detector::detect(const Image& image) const {
  nd::Graph g;
  const Bound p = bind(g, false);
  const Forward f = forward(g, p, {&image});
  auto rois = propose(f, 0);
  const double w = static_cast<double>(config_.image_width), h = static_cast<double>(config_.image_height);
  std::vector<Detection> dets;
  for (std::size_t pass = 0; pass <= config_.refine_passes; ++pass) {
    if (rois.empty()) return {};
    const auto& out = roi_head(g, p, f, 0, rois).value();
    dets.clear();
    std::vector<Box> next;
    for (std::size_t r = 0; r < rois.size(); ++r) {
      const Box b = clip(decode_box(rois[r], out.values().subspan(r * 5 + 1, 4)), w, h);
      if (b.width() < 1.0 || b.height() < 1.0) continue;
      dets.push_back({b, sigmoid(out[r * 5])});
      next.push_back(b);
    }
    rois = std::move(next);
  }
  return nms(dets, config_.nms_iou, config_.score_threshold);
}

namespace {

Box jitter_box(const Box& b, double width, double height, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> shift(-0.25, 0.25), scale(-0.2, 0.2);
  const double cx = b.cx() + shift(rng) * b.width();
  const double cy = b.cy() + 0.5 * shift(rng) * b.height();
  const double w = b.width() * std::exp(scale(rng));
  const double h = b.height() * std::exp(0.5 * scale(rng));
  return clip(Box{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h}, width, height);
}

}  // namespace

DetectStep Detector::loss_and_grad(std::span<const LabeledImage* const> batch, std::mt19937_64& rng) {
  if (batch.empty()) throw std::invalid_argument("detector step needs a non-empty batch");
  nd::Graph g;
  const Bound p = bind(g, true);
  std::vector<const Image*> images;
  for (const auto* li : batch) images.push_back(&li->image);
  const Forward f = forward(g, p, images);
  const RpnLayout lay{config_.anchors.per_cell(), grid_rows_, grid_cols_};
  const Var rpn_flat = nd::reshape(f.rpn, Shape{f.rpn.size(), 1});
  const double w = static_cast<double>(config_.image_width), h = static_cast<double>(config_.image_height);

  Var total, rpn_sum, frcnn_sum;
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const auto& gt = batch[n]->boxes;

    // Region proposal loss over a sampled anchor subset.
    const auto labels = match_anchors(anchor_boxes_, gt, config_.pos_iou, config_.neg_iou);
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i].kind == AnchorKind::kPositive) pos.push_back(i);
      if (labels[i].kind == AnchorKind::kNegative) neg.push_back(i);
    }
    std::shuffle(pos.begin(), pos.end(), rng);
    std::shuffle(neg.begin(), neg.end(), rng);
    const auto max_pos = static_cast<std::size_t>(std::floor(config_.rpn_batch * config_.rpn_pos_fraction));
    pos.resize(std::min(pos.size(), max_pos));
    neg.resize(std::min(neg.size(), config_.rpn_batch - pos.size()));
    std::vector<std::size_t> cls_rows;
    std::vector<double> cls_labels;
    for (auto i : pos) {
      cls_rows.push_back(lay.logit(n, i));
      cls_labels.push_back(1.0);
    }
    for (auto i : neg) {
      cls_rows.push_back(lay.logit(n, i));
      cls_labels.push_back(0.0);
    }
    const Var probs = nd::sigmoid(nd::gather_rows(rpn_flat, cls_rows));
    Var pred, target;
    if (!pos.empty()) {
      std::vector<std::size_t> rows;
      std::vector<Box> refs, gts;
      for (auto i : pos) {
        for (std::size_t j = 0; j < 4; ++j) rows.push_back(lay.delta(n, i, j));
        refs.push_back(anchor_boxes_[i]);
        gts.push_back(gt[*labels[i].matched_gt]);
      }
      const Var deltas = nd::reshape(nd::gather_rows(rpn_flat, rows), Shape{pos.size(), 4});
      if (config_.regression_loss == RegressionLoss::kSmoothL1) {
        Tensor t({pos.size(), 4});
        for (std::size_t k = 0; k < pos.size(); ++k) {
          const auto e = encode_box(refs[k], gts[k]);
          std::copy(e.begin(), e.end(), t.values().begin() + static_cast<std::ptrdiff_t>(4 * k));
        }
        pred = deltas;
        target = g.constant(std::move(t));
      } else {
        pred = decode_boxes(deltas, refs);
        target = g.constant(boxes_tensor(gts));
      }
    }
    const auto l_rpn = rpn_loss(probs, cls_labels, pred, target, config_.regression_loss);

    // Second stage on detached proposals plus gt-derived boxes.
    auto rois = propose(f, n);
    for (const auto& b : gt) {
      rois.push_back(b);
      for (std::size_t k = 0; k < config_.gt_jitter; ++k) {
        const Box j = jitter_box(b, w, h, rng);
        if (j.width() >= 1.0 && j.height() >= 1.0) rois.push_back(j);
      }
    }
    Var l_frcnn_total;
    if (!rois.empty()) {
      const Var head = roi_head(g, p, f, n, rois);
      std::vector<double> roi_labels(rois.size(), 0.0);
      std::vector<std::size_t> fg;
      std::vector<Box> fg_refs, fg_gts;
      for (std::size_t r = 0; r < rois.size(); ++r) {
        double best = 0.0;
        std::size_t best_g = 0;
        for (std::size_t k = 0; k < gt.size(); ++k) {
          const double v = iou(rois[r], gt[k]);
          if (v > best) {
            best = v;
            best_g = k;
          }
        }
        if (!gt.empty() && best >= config_.roi_fg_iou) {
          roi_labels[r] = 1.0;
          fg.push_back(r);
          fg_refs.push_back(rois[r]);
          fg_gts.push_back(gt[best_g]);
        }
      }
      const Var roi_probs = nd::sigmoid(nd::slice(head, 1, 0, 1));
      Var rpred, rtarget;
      if (!fg.empty()) {
        const Var deltas = nd::slice(nd::gather_rows(head, fg), 1, 1, 5);
        if (config_.regression_loss == RegressionLoss::kSmoothL1) {
          Tensor t({fg.size(), 4});
          for (std::size_t k = 0; k < fg.size(); ++k) {
            const auto e = encode_box(fg_refs[k], fg_gts[k]);
            std::copy(e.begin(), e.end(), t.values().begin() + static_cast<std::ptrdiff_t>(4 * k));
          }
          rpred = deltas;
          rtarget = g.constant(std::move(t));
        } else {
          rpred = decode_boxes(deltas, fg_refs);
          rtarget = g.constant(boxes_tensor(fg_gts));
        }
      }
      l_frcnn_total = fastrcnn_loss(roi_probs, roi_labels, rpred, rtarget, config_.regression_loss).total;
    } else {
      l_frcnn_total = g.constant(Tensor::scalar(0.0));
    }
    const Var image_loss = total_loss(l_rpn.total, l_frcnn_total, config_.lambda_rpn, config_.lambda_fastrcnn);
    total = total.valid() ? nd::add(total, image_loss) : image_loss;
    rpn_sum = rpn_sum.valid() ? nd::add(rpn_sum, l_rpn.total) : l_rpn.total;
    frcnn_sum = frcnn_sum.valid() ? nd::add(frcnn_sum, l_frcnn_total) : l_frcnn_total;
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  const Var loss = nd::scale(total, inv);
  g.backward(loss);
  DetectStep s;
  s.loss = loss.item();
  s.rpn = rpn_sum.item() * inv;
  s.fastrcnn = frcnn_sum.item() * inv;
  return s;
}

DetectStep Detector::train_step(std::span<const LabeledImage* const> batch, std::mt19937_64& rng, double lr) {
  const DetectStep s = loss_and_grad(batch, rng);
  nd::sgd_step(params_, lr);
  return s;
}

FinetuneResult finetune(std::span<const LabeledImage> train, const nd::ParameterStore* encoder,
                        const DetectConfig& config, const EncoderConfig& encoder_config, const DetectLogger& log) {
  if (train.empty()) throw std::invalid_argument("finetune needs a non-empty labelled set");
  Detector det(config, encoder_config, mix_seed(config.seed, 0x646574ULL));
  if (encoder != nullptr) det.load_backbone(*encoder);
  FinetuneResult result;
  std::mt19937_64 rng(mix_seed(config.seed, 0x66696e65ULL));
  std::vector<std::size_t> order(train.size());
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      if (config.max_steps != 0 && step >= config.max_steps) break;
      std::vector<const LabeledImage*> batch;
      for (std::size_t j = start; j < std::min(order.size(), start + config.batch_size); ++j) {
        batch.push_back(&train[order[j]]);
      }
      DetectStep s = det.train_step(batch, rng, config.lr_at(epoch + 1));
      s.step = ++step;
      s.epoch = epoch + 1;
      result.steps.push_back(s);
      if (log) log(s);
    }
  }
  result.params = det.params();
  return result;
}

}  // namespace bline
