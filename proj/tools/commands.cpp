// SPDX-License-Identifier: Apache-2.0
#include "commands.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "bline/detect/detector.hpp"
#include "bline/eval/metrics.hpp"
#include "bline/eval/render.hpp"
#include "bline/eval/selfcheck.hpp"
#include "bline/ndgrad/checkpoint.hpp"
#include "bline/phantom/io.hpp"
#include "bline/phantom/split.hpp"
#include "bline/pretrain/trainer.hpp"
#include "run_config.hpp"

namespace bline::cli {

namespace fs = std::filesystem;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MissingFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

constexpr std::uint64_t kDatasetStream = 3;
constexpr std::uint64_t kSplitStream = 4;
constexpr std::uint64_t kDetectorInitStream = 5;
constexpr double kGradTolerance = 1e-4;
constexpr std::size_t kGradPoints = 100;

struct Context {
  RunConfig cfg;
  std::string hash;
  std::ostream& out;
  std::ostream& err;

  fs::path data() const { return cfg.data_dir; }
  fs::path work() const { return cfg.work_dir; }
  std::string stamp() const { return "config " + hash; }
};

std::string real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void require_file(const fs::path& path, const std::string& hint) {
  if (!fs::exists(path)) throw MissingFileError("missing " + path.string() + " (" + hint + ")");
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file(path, text);
}

std::string image_path(std::size_t i) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "images/phantom_%05zu.pgm", i);
  return buf;
}

std::string sidecar(const Context& ctx, const std::string& stage, const std::vector<std::string>& facts) {
  std::string out = "# " + ctx.stamp() + "\nstage: " + stage + "\n";
  for (const auto& f : facts) out += f + "\n";
  out += "\n" + render_ini(ctx.cfg);
  return out;
}

// --- dataset -----------------------------------------------------------------

struct Splits {
  std::vector<LabeledImage> train;
  std::vector<LabeledImage> eval;
};

Splits load_splits(const Context& ctx) {
  const fs::path ann = ctx.data() / "annotations.txt";
  const fs::path manifest = ctx.data() / "split.txt";
  require_file(ann, "run gen first");
  require_file(manifest, "run gen first");
  std::map<std::string, std::vector<Box>> boxes;
  for (auto& rec : read_annotations(read_file(ann))) {
    auto& dst = boxes[rec.image_path];
    for (auto& ab : rec.boxes) dst.push_back(ab.box);
  }
  Splits s;
  std::istringstream in(read_file(manifest));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string path, part;
    if (!(fields >> path >> part) || (part != "train" && part != "eval")) {
      throw FileFormatError("malformed split line: " + line);
    }
    const fs::path file = ctx.data() / path;
    require_file(file, "listed in split.txt");
    LabeledImage item;
    item.image = load_pgm(file);
    item.source_id = path;
    if (auto it = boxes.find(path); it != boxes.end()) item.boxes = it->second;
    for (const auto& b : item.boxes) {
      if (b.x1 < 0 || b.y1 < 0 || b.x2 > static_cast<double>(item.image.width) ||
          b.y2 > static_cast<double>(item.image.height)) {
        throw FileFormatError("box " + to_string(b) + " lies outside " + path);
      }
    }
    (part == "train" ? s.train : s.eval).push_back(std::move(item));
  }
  return s;
}

int cmd_gen(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto set = generate_dataset(cfg.dataset, cfg.count, mix_seed(cfg.seed, kDatasetStream));
  std::vector<AnnotationRecord> records;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto path = image_path(i);
    write_text(ctx.data() / path, write_pgm(set[i].image, ctx.stamp()));
    AnnotationRecord rec{path, {}};
    for (const auto& b : set[i].boxes) rec.boxes.push_back({b, std::nullopt});
    records.push_back(std::move(rec));
  }
  write_text(ctx.data() / "annotations.txt", write_annotations(records, {ctx.stamp()}));

  auto [train, eval] = split_indices(set.size(), cfg.train_frac, mix_seed(cfg.seed, kSplitStream));
  std::string manifest = "# " + ctx.stamp() + "\n";
  for (auto i : train) manifest += image_path(i) + " train\n";
  for (auto i : eval) manifest += image_path(i) + " eval\n";
  write_text(ctx.data() / "split.txt", manifest);
  ctx.out << "images: " << set.size() << "\ntrain: " << train.size() << "\neval: " << eval.size() << "\n";
  return kExitOk;
}

// --- training ----------------------------------------------------------------

int cmd_pretrain(Context& ctx) {
  const auto splits = load_splits(ctx);
  std::vector<Image> images;
  for (const auto& item : splits.train) images.push_back(item.image);
  fs::create_directories(ctx.work());
  std::ofstream log(ctx.work() / "pretrain_loss.log", std::ios::trunc);
  log << "# " << ctx.stamp() << "\n# step epoch loss queue_full\n";
  const auto result = pretrain(images, ctx.cfg.pretrain, [&](const PretrainStep& s) {
    log << s.step << ' ' << s.epoch << ' ' << real(s.loss) << ' ' << (s.queue_full ? 1 : 0) << '\n';
  });
  log.close();
  const fs::path ckpt = ctx.work() / "encoder.lusb";
  nd::save_checkpoint(ckpt, result.best);
  std::vector<std::string> facts{"steps: " + std::to_string(result.steps.size())};
  if (result.best_epoch) {
    facts.push_back("best_epoch: " + std::to_string(*result.best_epoch));
    facts.push_back("best_epoch_loss: " + real(result.best_epoch_loss));
  } else {
    facts.push_back("best_epoch: none");
  }
  write_text(ckpt.string() + ".meta", sidecar(ctx, "pretrain", facts));
  ctx.out << "steps: " << result.steps.size() << "\n";
  if (!result.steps.empty()) ctx.out << "final_loss: " << real(result.steps.back().loss) << "\n";
  ctx.out << "checkpoint: " << ckpt.string() << "\n";
  return kExitOk;
}

int cmd_finetune(Context& ctx) {
  const auto splits = load_splits(ctx);
  std::optional<nd::ParameterStore> encoder;
  if (ctx.cfg.init == "pretrained") {
    const fs::path enc = ctx.work() / "encoder.lusb";
    require_file(enc, "run pretrain first or set finetune.init = scratch");
    encoder = nd::load_checkpoint(enc);
  }
  fs::create_directories(ctx.work());
  std::ofstream log(ctx.work() / "finetune_loss.log", std::ios::trunc);
  log << "# " << ctx.stamp() << "\n# step epoch loss rpn fastrcnn\n";
  const auto result = finetune(splits.train, encoder ? &*encoder : nullptr, ctx.cfg.detect, ctx.cfg.pretrain.encoder,
                               [&](const DetectStep& s) {
                                 log << s.step << ' ' << s.epoch << ' ' << real(s.loss) << ' ' << real(s.rpn) << ' '
                                     << real(s.fastrcnn) << '\n';
                               });
  log.close();
  const fs::path ckpt = ctx.work() / "detector.lusb";
  nd::save_checkpoint(ckpt, result.params);
  write_text(ckpt.string() + ".meta",
             sidecar(ctx, "finetune", {"init: " + ctx.cfg.init, "steps: " + std::to_string(result.steps.size())}));
  ctx.out << "steps: " << result.steps.size() << "\n";
  if (!result.steps.empty()) ctx.out << "final_loss: " << real(result.steps.back().loss) << "\n";
  ctx.out << "checkpoint: " << ckpt.string() << "\n";
  return kExitOk;
}

// --- evaluation --------------------------------------------------------------

DetectFn make_detector(const Context& ctx, std::shared_ptr<Detector>& holder) {
  if (ctx.cfg.detector == "oracle") return [](const LabeledImage& img) { return oracle_detections(img); };
  const fs::path ckpt = ctx.work() / "detector.lusb";
  require_file(ckpt, "run finetune first or set eval.detector = oracle");
  holder = std::make_shared<Detector>(ctx.cfg.detect, ctx.cfg.pretrain.encoder,
                                      mix_seed(ctx.cfg.seed, kDetectorInitStream));
  holder->load(nd::load_checkpoint(ckpt));
  const Detector* det = holder.get();
  return [det](const LabeledImage& img) { return det->detect(img.image); };
}

Box integer_box(const Box& b) {
  Box r{std::round(b.x1), std::round(b.y1), std::round(b.x2), std::round(b.y2)};
  if (r.x2 <= r.x1) r.x2 = r.x1 + 1;
  if (r.y2 <= r.y1) r.y2 = r.y1 + 1;
  return r;
}

int cmd_eval(Context& ctx) {
  const auto splits = load_splits(ctx);
  std::shared_ptr<Detector> holder;
  const DetectFn detect = make_detector(ctx, holder);
  std::vector<AnnotationRecord> exact, rounded;
  const double threshold = ctx.cfg.eval.score_threshold;
  const DetectFn recording = [&](const LabeledImage& img) {
    auto dets = detect(img);
    AnnotationRecord e{img.source_id, {}}, r{img.source_id, {}};
    for (const auto& d : dets) {
      if (d.score < threshold) continue;
      e.boxes.push_back({d.box, d.score});
      r.boxes.push_back({integer_box(d.box), d.score});
    }
    exact.push_back(std::move(e));
    rounded.push_back(std::move(r));
    return dets;
  };
  const auto ev = evaluate(recording, splits.eval, ctx.cfg.eval);
  const std::vector<std::string> header{ctx.stamp(), "detector " + ctx.cfg.detector};
  const auto report = format_report(ev, header);
  write_text(ctx.work() / "report.txt", report);
  write_text(ctx.work() / "breakdown.txt", format_breakdown(ev, header));
  write_text(ctx.work() / "detections.txt", write_annotations(rounded, header));
  write_text(ctx.work() / "detections.json", to_coco_results_json(exact));
  // COCO results are a bare array, so the hash and image ids go in a sidecar.
  std::string ids;
  for (const auto& h : header) ids += "# " + h + "\n";
  ids += "# image_id path\n";
  for (std::size_t i = 0; i < exact.size(); ++i) ids += std::to_string(i) + ' ' + exact[i].image_path + '\n';
  write_text(ctx.work() / "detections.json.meta", ids);
  ctx.out << report;
  return kExitOk;
}

int cmd_render(Context& ctx) {
  const auto splits = load_splits(ctx);
  std::shared_ptr<Detector> holder;
  const DetectFn detect = make_detector(ctx, holder);
  const fs::path dir = ctx.work() / "render";
  fs::create_directories(dir);
  for (const auto& item : splits.eval) {
    std::vector<Box> dets;
    for (const auto& d : detect(item)) {
      if (d.score >= ctx.cfg.eval.score_threshold) dets.push_back(d.box);
    }
    const auto name = fs::path(item.source_id).filename();
    save_pgm(dir / name, render_boxes(item.image, dets, item.boxes), ctx.stamp());
  }
  ctx.out << "rendered: " << splits.eval.size() << "\ndir: " << dir.string() << "\n";
  return kExitOk;
}

int cmd_gradcheck(Context& ctx) {
  const auto results = run_gradient_suite(kGradPoints, ctx.cfg.seed);
  double worst = 0.0;
  for (const auto& r : results) {
    ctx.out << r.name << ": points " << r.points << " rejected " << r.rejected << " worst " << real(r.worst) << "\n";
    worst = std::max(worst, r.worst);
  }
  ctx.out << "worst_relative_error: " << real(worst) << "\ntolerance: " << real(kGradTolerance) << "\n";
  if (!(worst <= kGradTolerance)) {
    ctx.err << "gradient check failed\n";
    return kExitRuntime;
  }
  return kExitOk;
}

// --- argument handling -------------------------------------------------------

void apply_extras(RunConfig& cfg, const std::vector<std::string>& extras) {
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const auto& a = extras[i];
    if (a.rfind("--", 0) != 0 || a.size() == 2) throw UsageError("unexpected argument '" + a + "'");
    const auto eq = a.find('=');
    if (eq != std::string::npos) {
      apply_override(cfg, a.substr(2, eq - 2), a.substr(eq + 1));
    } else {
      if (i + 1 >= extras.size()) throw UsageError("missing value for " + a);
      apply_override(cfg, a.substr(2), extras[++i]);
    }
  }
}

using Handler = int (*)(Context&);

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Synthetic lung-ultrasound B-line detection pipeline"};
  app.require_subcommand(1, 1);
  const std::vector<std::pair<std::string, std::pair<std::string, Handler>>> commands{
      {"gen", {"generate a phantom dataset with annotations and a train/eval split", cmd_gen}},
      {"pretrain", {"contrastive pretraining of the encoder", cmd_pretrain}},
      {"finetune", {"train the detector", cmd_finetune}},
      {"eval", {"evaluate a detector on the eval split", cmd_eval}},
      {"render", {"draw detections and ground truth over the eval images", cmd_render}},
      {"gradcheck", {"finite-difference check of every training loss", cmd_gradcheck}},
  };
  std::string config_path;
  std::map<CLI::App*, Handler> handlers;
  for (const auto& [name, entry] : commands) {
    auto* sub = app.add_subcommand(name, entry.first);
    sub->allow_extras();
    sub->add_option("--config", config_path, "INI file applied before --key value overrides");
    sub->footer("Any config key can be overridden as --key value or --section.key value.");
    handlers[sub] = entry.second;
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  CLI::App* sub = app.get_subcommands().front();

  Context ctx{RunConfig{}, {}, out, err};
  try {
    if (!config_path.empty()) {
      if (!fs::exists(config_path)) throw ConfigError("config file not found: " + config_path);
      apply_ini(ctx.cfg, read_file(config_path));
    }
    apply_extras(ctx.cfg, sub->remaining());
    ctx.cfg.finalize();
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  }
  ctx.hash = config_hash(ctx.cfg);
  err << "# " << sub->get_name() << " resolved config, hash " << ctx.hash << "\n" << render_ini(ctx.cfg) << std::flush;

  const auto start = std::chrono::steady_clock::now();
  try {
    const int code = handlers.at(sub)(ctx);
    const std::chrono::duration<double> secs = std::chrono::steady_clock::now() - start;
    err << "# " << sub->get_name() << " finished in " << real(secs.count()) << " s\n";
    return code;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace bline::cli
