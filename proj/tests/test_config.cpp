/* Copyright 2026 The A3MDA Lab Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

#include <gtest/gtest.h>

#include <sstream>

#include "a3mda/config.hpp"

using namespace a3mda;

TEST(Config, DefaultsMatchDocumentedValues) {
  const ExperimentConfig c;
  EXPECT_EQ(c.beta, 0.8);
  EXPECT_EQ(c.tau, 0.6);
  EXPECT_EQ(c.lambda2, 0.7);
  EXPECT_EQ(c.temperature, 0.15);
  EXPECT_EQ(c.theta, 10.0);
  EXPECT_EQ(c.batch_size, 32u);
  EXPECT_EQ(c.epochs, 200u);
  EXPECT_EQ(c.lr_backbone, 0.001);
  EXPECT_EQ(c.lr_heads, 0.01);
  EXPECT_EQ(c.lr_ensemble, 0.001);
  EXPECT_EQ(c.seed, 10u);
  EXPECT_EQ(c.ahm.augmentation, HardnessKind::kSmooth);
  EXPECT_EQ(c.ahm.inter, HardnessKind::kComparativeClustered);
  EXPECT_EQ(c.ahm.intra, HardnessKind::kComparative);
}

TEST(Config, ParsesSectionsAndComments) {
  std::istringstream is(
      "# comment\n[hyper]\ntau = 0.5  # trailing\nbatch_size=16\n\n[toggles]\npcm = off\n"
      "[prediction]\nmode = source-2\n");
  const ExperimentConfig c = parse_config(is);
  EXPECT_EQ(c.tau, 0.5);
  EXPECT_EQ(c.batch_size, 16u);
  EXPECT_FALSE(c.toggles.pcm);
  EXPECT_EQ(c.prediction.mode, PredictionMode::kSource);
  EXPECT_EQ(c.prediction.source, 1u);
}

TEST(Config, ErrorsNameFileAndLine) {
  std::istringstream unknown("[hyper]\ntau = 0.5\nbogus = 1\n");
  try {
    parse_config(unknown, "x.ini");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("x.ini:3"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("hyper.bogus"), std::string::npos);
  }
  std::istringstream bad_number("[hyper]\ntau = abc\n");
  EXPECT_THROW(parse_config(bad_number), ConfigError);
  std::istringstream out_of_range("[hyper]\nratio = 0\n");
  EXPECT_THROW(parse_config(out_of_range), ConfigError);
  std::istringstream bad_kind("[ahm]\ninter = Q\n");
  EXPECT_THROW(parse_config(bad_kind), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/config.ini"), ConfigError);
}

TEST(Config, OverridesAndRoundTrip) {
  ExperimentConfig c;
  apply_override(c, "hyper.lambda2", "0.25");
  apply_override(c, "ahm.intra", "Hc");
  apply_override(c, "augment.target.strong_mask_prob", "0.125");
  apply_override(c, "corruption.ratio", "0.1");
  EXPECT_THROW(apply_override(c, "nope", "1"), ConfigError);
  std::ostringstream os;
  write_config(os, c);
  std::istringstream is(os.str());
  const ExperimentConfig back = parse_config(is);
  EXPECT_EQ(config_entries(back), config_entries(c));
  EXPECT_EQ(back.lambda2, 0.25);
  EXPECT_EQ(back.augment_target.strong.mask_prob, 0.125);
}

TEST(Config, PredictionSpecParsing) {
  EXPECT_EQ(PredictionSpec::parse("average").mode, PredictionMode::kAverage);
  EXPECT_EQ(PredictionSpec::parse("source-3").str(), "source-3");
  EXPECT_THROW(PredictionSpec::parse("source-0"), ConfigError);
  EXPECT_THROW(PredictionSpec::parse("best"), ConfigError);
}
