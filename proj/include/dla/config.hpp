#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dla/augment.hpp"
#include "dla/consensus.hpp"
#include "dla/detector.hpp"
#include "dla/ema.hpp"
#include "dla/losses.hpp"

namespace dla {

struct OptimConfig {
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double clip_norm = 10.0;
  double decay_at = 2.0 / 3.0;  // fraction of all iterations
  double decay_factor = 0.1;
  int warmup_iters = 0;

  SgdConfig sgd() const { return {learning_rate, momentum, weight_decay, clip_norm}; }
  /// Multiplier on learning_rate at a zero-based iteration.
  double lr_scale(std::int64_t iteration, std::int64_t total_iterations) const;
  void validate() const;
};

enum class SelectionMode { Hard, Consensus };

struct AblationSwitches {
  SelectionMode selection_mode = SelectionMode::Consensus;
  bool use_kl = true;
  bool use_auxiliary = true;

  friend bool operator==(const AblationSwitches&, const AblationSwitches&) = default;
};

struct AdaptConfig {
  /// n_update <= 0 means max(1, samples per epoch / 10).
  TeacherSchedule schedule{0.99, 0.60, 0};
  ConsensusConfig consensus;
  double hard_threshold = 0.6;
  /// Teacher detections scoring at least this that do not become pseudo
  /// labels are excluded from negative sampling. 0 disables.
  double ignore_floor = 0.2;
  LossWeights weights;
  KlDirection kl_direction = KlDirection::PseudoToStudent;
  double temperature = 0.07;
  AugmentConfig augment;
  OptimConfig optim;
  int epochs = 8;
  int eval_every = 1;
  std::uint64_t seed = 0;
  AblationSwitches ablation;

  void validate() const;
};

struct SourceTrainConfig {
  DetectorConfig detector;
  OptimConfig optim{0.01, 0.9, 1e-4, 10.0, 2.0 / 3.0, 0.1, 100};
  int epochs = 8;
  int eval_every = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

/// One entry of a flat "section.name" configuration namespace.
template <class T>
struct ConfigKey {
  std::string key;
  std::string help;
  std::function<std::string(const T&)> get;
  std::function<void(T&, const std::string&)> set;
};

const std::vector<ConfigKey<AdaptConfig>>& adapt_config_keys();
const std::vector<ConfigKey<SourceTrainConfig>>& source_config_keys();

/// INI text with one section per key prefix. Values round-trip exactly.
std::string to_ini(const AdaptConfig& cfg);
std::string to_ini(const SourceTrainConfig& cfg);

/// Applies every key found in the INI text on top of `cfg`. Unknown keys
/// and malformed values raise ConfigError.
void apply_ini(AdaptConfig& cfg, const std::string& text);
void apply_ini(SourceTrainConfig& cfg, const std::string& text);

/// "key=value" override.
void apply_override(AdaptConfig& cfg, const std::string& assignment);
void apply_override(SourceTrainConfig& cfg, const std::string& assignment);

/// Listing of every key with its default, for --help.
std::string describe_keys(const std::vector<ConfigKey<AdaptConfig>>& keys);
std::string describe_keys(const std::vector<ConfigKey<SourceTrainConfig>>& keys);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

}  // namespace dla
