#include <gtest/gtest.h>

#include "dla/config.hpp"

using namespace dla;

TEST(Config, IniRoundTripPreservesEveryKey) {
  AdaptConfig cfg;
  cfg.schedule.pi_static = 0.55;
  cfg.weights.w[3] = 0.125;
  cfg.ablation.selection_mode = SelectionMode::Hard;
  cfg.kl_direction = KlDirection::StudentToPseudo;
  cfg.seed = 42;
  AdaptConfig back;
  apply_ini(back, to_ini(cfg));
  EXPECT_EQ(to_ini(back), to_ini(cfg));
  EXPECT_EQ(back.seed, 42u);
  EXPECT_EQ(back.ablation.selection_mode, SelectionMode::Hard);

  SourceTrainConfig s;
  s.detector.roi_hidden = 17;
  s.optim.learning_rate = 0.1 / 3;
  SourceTrainConfig sback;
  apply_ini(sback, to_ini(s));
  EXPECT_EQ(to_ini(sback), to_ini(s));
  EXPECT_EQ(sback.optim.learning_rate, s.optim.learning_rate);
}

TEST(Config, UnknownKeysAndBadValuesRejected) {
  AdaptConfig cfg;
  EXPECT_THROW(apply_override(cfg, "schedule.pi_nope=1"), ConfigError);
  EXPECT_THROW(apply_override(cfg, "schedule.pi_dynamic"), ConfigError);
  EXPECT_THROW(apply_override(cfg, "schedule.pi_dynamic=abc"), ConfigError);
  EXPECT_THROW(apply_override(cfg, "ablation.selection_mode=soft"), ConfigError);
  EXPECT_THROW(apply_ini(cfg, "[schedule]\nbogus = 1\n"), ConfigError);
  apply_override(cfg, "schedule.pi_dynamic=0.95");
  EXPECT_EQ(cfg.schedule.pi_dynamic, 0.95);
}

TEST(Config, ValidationCatchesInvariants) {
  AdaptConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.schedule.pi_static = 0.999;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.epochs = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.temperature = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.weights.gamma_e = -1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Config, DescribeListsEveryKeyWithDefault) {
  const auto text = describe_keys(adapt_config_keys());
  const AdaptConfig defaults;
  for (const auto& k : adapt_config_keys()) {
    EXPECT_NE(text.find(k.key), std::string::npos) << k.key;
    EXPECT_NE(text.find(k.get(defaults)), std::string::npos) << k.key;
  }
  EXPECT_NE(describe_keys(source_config_keys()).find("detector.roi_hidden"), std::string::npos);
}

TEST(Config, LearningRateSchedule) {
  OptimConfig o;
  o.warmup_iters = 10;
  EXPECT_NEAR(o.lr_scale(0, 100), 0.1, 1e-12);
  EXPECT_EQ(o.lr_scale(50, 100), 1.0);
  EXPECT_NEAR(o.lr_scale(90, 100), 0.1, 1e-12);
}

TEST(Config, FormatDoubleRoundTrips) {
  for (double v : {0.1, 1.0 / 3.0, 1e-12, 0.99, 123456.789})
    EXPECT_EQ(std::stod(format_double(v)), v);
}
