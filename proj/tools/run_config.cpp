// SPDX-License-Identifier: Apache-2.0
#include "run_config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cstdio>
#include <sstream>

namespace bline::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::string format(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <class T>
T parse_number(const std::string& text, const std::string& what) {
  const std::string t = trim(text);
  T v{};
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
    throw ConfigError("invalid value '" + text + "' for " + what);
  }
  return v;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

template <class T>
std::string format_list(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<T>) {
      out += format(v[i]);
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out;
}

template <class T>
std::vector<T> parse_list(const std::string& text, const std::string& what) {
  std::vector<T> out;
  for (const auto& item : split_list(text)) out.push_back(parse_number<T>(item, what));
  if (out.empty()) throw ConfigError("empty list for " + what);
  return out;
}

class Table {
 public:
  explicit Table(std::vector<ConfigKey>& keys) : keys_(keys) {}

  void real(const std::string& section, const std::string& key, double& field) {
    add(section, key, [&field] { return format(field); },
        [&field, section, key](const std::string& s) { field = parse_number<double>(s, section + "." + key); });
  }
  template <class T>
  void integer(const std::string& section, const std::string& key, T& field) {
    add(section, key, [&field] { return std::to_string(field); },
        [&field, section, key](const std::string& s) { field = parse_number<T>(s, section + "." + key); });
  }
  void text(const std::string& section, const std::string& key, std::string& field) {
    add(section, key, [&field] { return field; }, [&field](const std::string& s) { field = trim(s); });
  }
  void flag(const std::string& section, const std::string& key, bool& field) {
    add(section, key, [&field] { return std::string(field ? "true" : "false"); },
        [&field, section, key](const std::string& s) {
          const auto t = trim(s);
          if (t == "true" || t == "1") {
            field = true;
          } else if (t == "false" || t == "0") {
            field = false;
          } else {
            throw ConfigError("invalid boolean '" + s + "' for " + section + "." + key);
          }
        });
  }
  template <class T>
  void list(const std::string& section, const std::string& key, std::vector<T>& field) {
    add(section, key, [&field] { return format_list(field); },
        [&field, section, key](const std::string& s) { field = parse_list<T>(s, section + "." + key); });
  }
  void add(const std::string& section, const std::string& key, std::function<std::string()> get,
           std::function<void(const std::string&)> set) {
    keys_.push_back({section, key, std::move(get), std::move(set)});
  }

 private:
  std::vector<ConfigKey>& keys_;
};

}  // namespace

void RunConfig::finalize() {
  pretrain.seed = mix_seed(seed, 1);
  detect.seed = mix_seed(seed, 2);
  detect.image_width = dataset.base.width;
  detect.image_height = dataset.base.height;
  pretrain.encoder.grid = pretrain.views.grid;
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw ConfigError("phantom.train_frac must lie in (0,1)");
  if (count < 2) throw ConfigError("phantom.count must be at least 2");
  if (init != "pretrained" && init != "scratch") throw ConfigError("finetune.init must be pretrained or scratch");
  if (detector != "model" && detector != "oracle") throw ConfigError("eval.detector must be model or oracle");
  if (dataset.blines.lo < 0 || dataset.blines.lo > dataset.blines.hi || dataset.blines.hi > 6) {
    throw ConfigError("phantom B-line counts must satisfy 0 <= blines_min <= blines_max <= 6");
  }
  if (dataset.alines.lo < 0 || dataset.alines.lo > dataset.alines.hi || dataset.alines.hi > 3) {
    throw ConfigError("phantom A-line counts must satisfy 0 <= alines_min <= alines_max <= 3");
  }
  if (dataset.confusers.lo < 0 || dataset.confusers.lo > dataset.confusers.hi || dataset.confusers.hi > 4) {
    throw ConfigError("phantom confuser counts must satisfy 0 <= confusers_min <= confusers_max <= 4");
  }
  try {
    dataset.base.validate();
    pretrain.validate();
    detect.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (!(eval.iou_threshold > 0.0 && eval.iou_threshold <= 1.0)) throw ConfigError("eval.iou_threshold must lie in (0,1]");
  if (!(eval.score_threshold >= 0.0 && eval.score_threshold <= 1.0)) {
    throw ConfigError("eval.score_threshold must lie in [0,1]");
  }
}

std::vector<ConfigKey> config_keys(RunConfig& c) {
  std::vector<ConfigKey> keys;
  Table t(keys);
  t.integer("run", "seed", c.seed);
  t.text("run", "data_dir", c.data_dir);
  t.text("run", "work_dir", c.work_dir);

  auto& p = c.dataset.base;
  t.integer("phantom", "count", c.count);
  t.real("phantom", "train_frac", c.train_frac);
  t.integer("phantom", "width", p.width);
  t.integer("phantom", "height", p.height);
  t.real("phantom", "pleural_row_frac", p.pleural_row_frac);
  t.integer("phantom", "blines_min", c.dataset.blines.lo);
  t.integer("phantom", "blines_max", c.dataset.blines.hi);
  t.integer("phantom", "alines_min", c.dataset.alines.lo);
  t.integer("phantom", "alines_max", c.dataset.alines.hi);
  t.integer("phantom", "confusers_min", c.dataset.confusers.lo);
  t.integer("phantom", "confusers_max", c.dataset.confusers.hi);
  t.integer("phantom", "bline_width_min", p.bline_width_px.lo);
  t.integer("phantom", "bline_width_max", p.bline_width_px.hi);
  t.real("phantom", "bline_intensity_min", p.bline_intensity.lo);
  t.real("phantom", "bline_intensity_max", p.bline_intensity.hi);
  t.real("phantom", "speckle_sigma", p.speckle_sigma);
  t.real("phantom", "decay", p.decay);
  t.real("phantom", "tissue_level", p.tissue_level);
  t.real("phantom", "lung_level", p.lung_level);
  t.real("phantom", "pleura_level", p.pleura_level);
  t.real("phantom", "aline_level", p.aline_level);

  auto& q = c.pretrain;
  t.real("pretrain", "tau", q.tau);
  t.list("pretrain", "level_weights", q.level_weights);
  t.real("pretrain", "momentum", q.momentum);
  t.integer("pretrain", "queue_capacity", q.queue_capacity);
  t.integer("pretrain", "batch_size", q.batch_size);
  t.integer("pretrain", "epochs", q.epochs);
  t.integer("pretrain", "max_steps", q.max_steps);
  t.real("pretrain", "lr", q.lr);
  t.integer("pretrain", "grid", q.views.grid);
  t.integer("pretrain", "view_width", q.views.view_width);
  t.integer("pretrain", "view_height", q.views.view_height);
  t.real("pretrain", "min_crop_area", q.views.min_crop_area);
  t.real("pretrain", "flip_prob", q.views.flip_prob);
  t.real("pretrain", "jitter", q.views.jitter);
  t.real("pretrain", "max_noise_sigma", q.views.max_noise_sigma);
  t.flag("pretrain", "identity_views", q.views.identity);
  t.list("pretrain", "widths", q.encoder.widths);
  t.integer("pretrain", "kernel", q.encoder.kernel);
  t.integer("pretrain", "embed_dim", q.encoder.embed_dim);
  t.integer("pretrain", "head_hidden", q.encoder.head_hidden);
  t.real("pretrain", "input_mean", q.encoder.input_mean);
  t.real("pretrain", "input_std", q.encoder.input_std);

  auto& d = c.detect;
  t.text("finetune", "init", c.init);
  t.add("finetune", "regression_loss", [&d] { return to_string(d.regression_loss); },
        [&d](const std::string& s) {
          try {
            d.regression_loss = parse_regression_loss(trim(s));
          } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
          }
        });
  t.real("finetune", "lambda_rpn", d.lambda_rpn);
  t.real("finetune", "lambda_fastrcnn", d.lambda_fastrcnn);
  t.real("finetune", "pos_iou", d.pos_iou);
  t.real("finetune", "neg_iou", d.neg_iou);
  t.real("finetune", "nms_iou", d.nms_iou);
  t.real("finetune", "score_threshold", d.score_threshold);
  t.list("finetune", "anchor_scales", d.anchors.scales);
  t.list("finetune", "anchor_ratios", d.anchors.ratios);
  t.integer("finetune", "epochs", d.epochs);
  t.integer("finetune", "batch_size", d.batch_size);
  t.integer("finetune", "max_steps", d.max_steps);
  t.real("finetune", "lr", d.lr);
  t.integer("finetune", "lr_drop_epoch", d.lr_drop_epoch);
  t.real("finetune", "lr_drop_factor", d.lr_drop_factor);
  t.integer("finetune", "rpn_batch", d.rpn_batch);
  t.real("finetune", "rpn_pos_fraction", d.rpn_pos_fraction);
  t.integer("finetune", "pre_nms_top", d.pre_nms_top);
  t.integer("finetune", "post_nms_top", d.post_nms_top);
  t.integer("finetune", "gt_jitter", d.gt_jitter);
  t.real("finetune", "roi_fg_iou", d.roi_fg_iou);
  t.integer("finetune", "rpn_hidden", d.rpn_hidden);
  t.integer("finetune", "head_hidden", d.head_hidden);
  t.integer("finetune", "roi_columns", d.roi_columns);
  t.integer("finetune", "roi_rows", d.roi_rows);
  t.integer("finetune", "strip_rows", d.strip_rows);
  t.integer("finetune", "refine_passes", d.refine_passes);
  t.flag("finetune", "rescale_backbone", d.rescale_backbone);

  t.real("eval", "iou_threshold", c.eval.iou_threshold);
  t.real("eval", "score_threshold", c.eval.score_threshold);
  t.text("eval", "detector", c.detector);
  return keys;
}

void apply_ini(RunConfig& cfg, const std::string& text) {
  boost::property_tree::ptree tree;
  try {
    std::istringstream in(text);
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("malformed config: " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  auto keys = config_keys(cfg);
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError("config key '" + section + "' lies outside a section");
    for (const auto& [key, value] : body) {
      auto it = std::find_if(keys.begin(), keys.end(),
                             [&](const ConfigKey& k) { return k.section == section && k.key == key; });
      if (it == keys.end()) throw ConfigError("unknown config key " + section + "." + key);
      it->set(value.data());
    }
  }
}

void apply_override(RunConfig& cfg, const std::string& name, const std::string& value) {
  auto keys = config_keys(cfg);
  const auto dot = name.find('.');
  std::vector<ConfigKey*> hits;
  for (auto& k : keys) {
    if (dot != std::string::npos ? k.qualified() == name : k.key == name) hits.push_back(&k);
  }
  if (hits.empty()) throw ConfigError("unknown config key " + name);
  if (hits.size() > 1) {
    std::string options;
    for (const auto* k : hits) options += " " + k->qualified();
    throw ConfigError("ambiguous key " + name + "; use one of:" + options);
  }
  hits.front()->set(value);
}

std::string render_ini(const RunConfig& cfg) {
  RunConfig copy = cfg;
  std::string out, section;
  for (const auto& k : config_keys(copy)) {
    if (k.section != section) {
      if (!section.empty()) out += '\n';
      section = k.section;
      out += "[" + section + "]\n";
    }
    out += k.key + " = " + k.get() + "\n";
  }
  return out;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash(const RunConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(render_ini(cfg))));
  return buf;
}

}  // namespace bline::cli
