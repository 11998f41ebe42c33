#include <gtest/gtest.h>

#include "dla/adapt.hpp"
#include "dla/synthdocs.hpp"

using namespace dla;

namespace {

std::vector<LabeledSample> pages(const char* domain, int n, std::uint64_t seed) {
  std::vector<LabeledSample> out;
  int i = 0;
  for (auto& p : synth::generate_pages(synth::preset(domain), n, seed)) {
    LabeledSample s{std::string(domain) + std::to_string(i++), std::move(p.image), {}};
    for (const auto& a : p.annotations) s.targets.push_back({a.box, a.category});
    out.push_back(std::move(s));
  }
  return out;
}

SourceTrainConfig tiny_source() {
  SourceTrainConfig c;
  c.epochs = 1;
  c.eval_every = 0;
  c.optim.warmup_iters = 0;
  return c;
}

AdaptConfig tiny_adapt() {
  AdaptConfig c;
  c.epochs = 2;
  return c;
}

const Checkpoint& source_checkpoint() {
  static const Checkpoint ckpt =
      train_source(pages("source", 3, 1), common4_taxonomy(), tiny_source()).checkpoint;
  return ckpt;
}

}  // namespace

TEST(TrainSource, DeterministicPerSeed) {
  const auto data = pages("source", 2, 5);
  const auto a = train_source(data, common4_taxonomy(), tiny_source());
  const auto b = train_source(data, common4_taxonomy(), tiny_source());
  EXPECT_EQ(a.checkpoint.params, b.checkpoint.params);
  EXPECT_EQ(a.checkpoint.meta.at("kind"), "source");
  EXPECT_THROW(train_source({}, common4_taxonomy(), tiny_source()), ConfigError);
}

TEST(Adapt, DeterministicAndRecordsEpochs) {
  const auto target = strip_labels(pages("target", 3, 9));
  const auto eval = pages("target", 2, 50);
  const auto a = adapt(source_checkpoint(), target, common4_taxonomy(), tiny_adapt(), &eval);
  const auto b = adapt(source_checkpoint(), target, common4_taxonomy(), tiny_adapt(), &eval);
  EXPECT_EQ(a.checkpoint.params, b.checkpoint.params);
  EXPECT_NE(a.checkpoint.params, source_checkpoint().params);
  ASSERT_EQ(a.report.epochs.size(), 2u);
  EXPECT_TRUE(a.report.initial_map50.has_value());
  EXPECT_TRUE(a.report.epochs.back().map50.has_value());
  EXPECT_TRUE(a.report.epochs.back().dynamic_map50.has_value());
  EXPECT_EQ(a.report.epochs.back().iterations, 6u);
}

TEST(Adapt, EvaluationLabelsDoNotInfluenceWeights) {
  const auto target = strip_labels(pages("target", 3, 9));
  auto eval = pages("target", 2, 50);
  const auto a = adapt(source_checkpoint(), target, common4_taxonomy(), tiny_adapt(), &eval);
  for (auto& s : eval)
    for (auto& t : s.targets) t.category = (t.category + 1) % 4;
  const auto b = adapt(source_checkpoint(), target, common4_taxonomy(), tiny_adapt(), &eval);
  const auto c = adapt(source_checkpoint(), target, common4_taxonomy(), tiny_adapt(), nullptr);
  EXPECT_EQ(a.checkpoint.params, b.checkpoint.params);
  EXPECT_EQ(a.checkpoint.params, c.checkpoint.params);
}

TEST(Adapt, RejectsBadInputs) {
  const auto target = strip_labels(pages("target", 1, 9));
  EXPECT_THROW(adapt(source_checkpoint(), {}, common4_taxonomy(), tiny_adapt()), ConfigError);
  EXPECT_THROW(adapt(source_checkpoint(), target, Taxonomy{"x", {"a", "b", "c", "d"}}, tiny_adapt()),
               ConfigError);
  auto cfg = tiny_adapt();
  cfg.epochs = 0;
  EXPECT_THROW(adapt(source_checkpoint(), target, common4_taxonomy(), cfg), ConfigError);
}

TEST(Ablation, StandardGridIsDistinct) {
  const auto grid = standard_ablation_grid();
  ASSERT_EQ(grid.size(), 6u);
  EXPECT_TRUE(grid[0].source_only);
  for (std::size_t i = 0; i < grid.size(); ++i)
    for (std::size_t j = i + 1; j < grid.size(); ++j) EXPECT_FALSE(grid[i] == grid[j]);
}

TEST(Ablation, DuplicateRowsDroppedWithWarning) {
  const auto target = strip_labels(pages("target", 2, 9));
  const auto eval = pages("target", 2, 50);
  auto cfg = tiny_adapt();
  cfg.epochs = 1;
  const auto grid = standard_ablation_grid();
  std::vector<AblationRow> rows{grid[0], grid[0], grid[1]};
  std::vector<std::string> warnings;
  const auto results = ablate(source_checkpoint(), target, eval, common4_taxonomy(), cfg, rows, {0},
                              [&](const std::string& w) { warnings.push_back(w); });
  EXPECT_EQ(results.size(), 2u);
  EXPECT_EQ(warnings.size(), 1u);
  EXPECT_EQ(results[0].maps.size(), 1u);
  const auto table = format_ablation_table(results);
  EXPECT_NE(table.find(grid[1].name), std::string::npos);
  EXPECT_TRUE(ablate(source_checkpoint(), target, eval, common4_taxonomy(), cfg, {}, {0}).empty());
  EXPECT_THROW(ablate(source_checkpoint(), target, eval, common4_taxonomy(), cfg, rows, {}), ConfigError);
}

TEST(RunReport, JsonRoundTrip) {
  RunReport r;
  r.kind = "adapt";
  r.categories = common4_taxonomy().categories;
  r.initial_map50 = 0.5;
  EpochRecord e;
  e.epoch = 1;
  e.iterations = 10;
  e.map50 = 0.25;
  e.ap["table"] = 0.125;
  e.losses["total"] = 1.5;
  e.pseudo_count = 3;
  e.pseudo_per_category["text"] = 3;
  e.consensus_fraction = 1.0;
  r.epochs.push_back(e);
  const auto back = RunReport::from_json(r.to_json());
  EXPECT_EQ(back.to_json(), r.to_json());
  EXPECT_THROW(RunReport::from_json("[]"), IngestionError);
}

TEST(Median, OddEvenAndEmpty) {
  EXPECT_EQ(median({3, 1, 2}), 2);
  EXPECT_EQ(median({4, 1, 2, 3}), 2.5);
  EXPECT_THROW(median({}), ContractViolation);
}
