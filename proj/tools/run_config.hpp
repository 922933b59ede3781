// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "bline/detect/detector.hpp"
#include "bline/eval/metrics.hpp"
#include "bline/phantom/phantom.hpp"
#include "bline/pretrain/trainer.hpp"

namespace bline::cli {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every tunable of a pipeline run, grouped by INI section.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string data_dir = "data";
  std::string work_dir = "work";

  DatasetParams dataset;
  std::size_t count = 500;
  double train_frac = 0.7;

  PretrainConfig pretrain;

  DetectConfig detect;
  /// "pretrained" loads the encoder checkpoint, "scratch" starts from random weights.
  std::string init = "pretrained";

  EvalConfig eval;
  /// "model" runs the fine-tuned detector, "oracle" replays the ground truth.
  std::string detector = "model";

  /// Derives per-stage seeds and checks cross-field constraints.
  void finalize();
};

struct ConfigKey {
  std::string section;
  std::string key;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;

  std::string qualified() const { return section + "." + key; }
};

/// Accessors for every key of `cfg`, in canonical order.
std::vector<ConfigKey> config_keys(RunConfig& cfg);

/// Applies an INI document; unknown sections or keys throw ConfigError.
void apply_ini(RunConfig& cfg, const std::string& text);
/// Applies one override. `name` is "section.key" or a bare key that is
/// unique across sections.
void apply_override(RunConfig& cfg, const std::string& name, const std::string& value);

/// Canonical INI rendering of every key.
std::string render_ini(const RunConfig& cfg);
/// FNV-1a 64 of render_ini, as 16 hex digits.
std::string config_hash(const RunConfig& cfg);
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace bline::cli
