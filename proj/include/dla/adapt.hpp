#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dla/config.hpp"
#include "dla/detector.hpp"
#include "dla/eval.hpp"
#include "dla/labelspace.hpp"

namespace dla {

struct LabeledSample {
  std::string id;
  Image image;
  std::vector<Target> targets;
};

/// What the adaptation loop sees of a target page: pixels and an id.
struct UnlabeledSample {
  std::string id;
  Image image;
};

std::vector<LabeledSample> load_labeled(const Dataset& ds);
std::vector<UnlabeledSample> load_unlabeled(const UnlabeledImages& images);
std::vector<UnlabeledSample> strip_labels(const std::vector<LabeledSample>& samples);

EvalResult evaluate(const Detector& detector, const ModelParameters& params,
                    const std::vector<LabeledSample>& samples, const Taxonomy& taxonomy);

struct EpochRecord {
  int epoch = 0;  // 1-based
  std::uint64_t iterations = 0;
  std::optional<double> map50;
  std::map<std::string, double> ap;  // by category name
  std::optional<double> dynamic_map50;
  std::optional<double> static_map50;
  std::map<std::string, double> losses;  // epoch means per term, plus factor/total
  std::uint64_t pseudo_count = 0;
  std::map<std::string, std::uint64_t> pseudo_per_category;
  double consensus_fraction = 0.0;
  double mean_pseudo_score = 0.0;
};

struct RunReport {
  std::string kind;  // "source" or "adapt"
  std::vector<std::string> categories;
  std::optional<double> initial_map50;  // before the first update
  std::map<std::string, double> initial_ap;
  std::vector<EpochRecord> epochs;
  std::string checkpoint_path;

  std::optional<double> final_map50() const;
  std::string to_json() const;
  static RunReport from_json(const std::string& text);
  /// Flat (epoch, term, value) rows including mAP and pseudo-label stats.
  std::string to_csv() const;
};

struct TrainResult {
  Checkpoint checkpoint;
  RunReport report;
};

using ProgressFn = std::function<void(const std::string&)>;

/// Supervised training on ground truth only (RPN + ROI losses).
TrainResult train_source(const std::vector<LabeledSample>& data, const Taxonomy& taxonomy,
                         const SourceTrainConfig& config, const std::vector<LabeledSample>* eval = nullptr,
                         const ProgressFn& progress = {});

/// Dual-teacher adaptation from a source checkpoint on unlabeled target
/// pages. `eval` (labeled held-out target pages) is only read by the
/// evaluator between epochs.
TrainResult adapt(const Checkpoint& source, const std::vector<UnlabeledSample>& target,
                  const Taxonomy& taxonomy, const AdaptConfig& config,
                  const std::vector<LabeledSample>* eval = nullptr, const ProgressFn& progress = {});

struct AblationRow {
  std::string name;
  bool source_only = false;
  AblationSwitches switches;

  friend bool operator==(const AblationRow& a, const AblationRow& b) {
    return a.source_only == b.source_only && (a.source_only || a.switches == b.switches);
  }
};

/// The six switch combinations of the published ablation table.
std::vector<AblationRow> standard_ablation_grid();

struct AblationResult {
  AblationRow row;
  std::vector<double> maps;  // one per seed
  double map50 = 0.0;        // median over seeds
  std::vector<RunReport> reports;
};

/// Runs every distinct row for each seed. Duplicate rows are dropped and
/// reported through `warn`.
std::vector<AblationResult> ablate(const Checkpoint& source, const std::vector<UnlabeledSample>& target,
                                   const std::vector<LabeledSample>& eval, const Taxonomy& taxonomy,
                                   const AdaptConfig& base, const std::vector<AblationRow>& grid,
                                   const std::vector<std::uint64_t>& seeds, const ProgressFn& warn = {},
                                   const ProgressFn& progress = {});

/// Table with one column per switch and a final mAP column (percent).
std::string format_ablation_table(const std::vector<AblationResult>& results);
std::string ablation_csv(const std::vector<AblationResult>& results);

double median(std::vector<double> values);

}  // namespace dla
