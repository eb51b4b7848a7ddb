// Copyright 2026 The msda Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "msda/pretrain.h"

#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

#include <gtest/gtest.h>

#include "test_util.h"

namespace msda {
namespace {

using testing::RandomFeatureDataset;

constexpr int kDim = 8;

ModelConfig Small(AdversarialLoss loss = AdversarialLoss::kNll) {
  ModelConfig c = ModelConfig::Feedforward(kDim);
  c.shared.hidden_dim = 12;
  c.shared.output_dim = 6;
  c.private_.hidden_dim = 6;
  c.private_.output_dim = 3;
  c.classifier_hidden = 6;
  c.discriminator_hidden = 6;
  c.shared.dropout = 0.0;
  c.private_.dropout = 0.0;
  c.d_loss = loss;
  return c;
}

DomainDataset Unlabeled(const DomainDataset& ds) {
  std::vector<Example> out(ds.examples().begin(), ds.examples().end());
  for (auto& e : out) e.label.reset();
  return DomainDataset(ds.name(), std::move(out), false);
}

// Two sources (offsets 0 and 0.3) and a target, each with a train and dev split.
Stage1Data MakeData(int n, bool with_target, std::uint64_t seed = 1) {
  Stage1Data d;
  d.source_train = {RandomFeatureDataset("a", n, kDim, seed, true),
                    RandomFeatureDataset("b", n, kDim, seed + 1, true, 0.3)};
  d.source_dev = {RandomFeatureDataset("a", n / 2, kDim, seed + 10, true),
                  RandomFeatureDataset("b", n / 2, kDim, seed + 11, true, 0.3)};
  if (with_target) {
    d.target_unlabeled = Unlabeled(RandomFeatureDataset("t", n, kDim, seed + 2, true));
  }
  return d;
}

Stage1Config Fast() {
  Stage1Config c;
  c.learning_rate = 3e-3;
  c.epochs = 3;
  c.n_critic = 2;
  c.seed = 7;
  return c;
}

TEST(Stage1Config, RejectsOutOfRange) {
  Stage1Config c;
  EXPECT_NO_THROW(c.Validate());
  c.lambda1 = -0.1;
  EXPECT_THROW(c.Validate(), ValidationError);
  c = {};
  c.n_critic = 0;
  EXPECT_THROW(c.Validate(), ValidationError);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.Validate(), ValidationError);
  c = {};
  c.epochs = -1;
  EXPECT_THROW(c.Validate(), ValidationError);
}

TEST(BatchSampler, CoversEveryExampleOncePerPass) {
  const auto ds = RandomFeatureDataset("a", 10, 2, 1, true);
  BatchSampler s(ds, 5, 5);
  std::multiset<const Example*> seen;
  for (int i = 0; i < 2; ++i) {
    for (const Example* e : s.Next()) seen.insert(e);
  }
  EXPECT_EQ(seen.size(), 10u);
  for (const Example& e : ds.examples()) EXPECT_EQ(seen.count(&e), 1u);
}

TEST(BatchSampler, BatchesStayFullAcrossPassBoundaries) {
  const auto ds = RandomFeatureDataset("a", 10, 2, 1, true);
  BatchSampler s(ds, 3, 5);
  for (int i = 0; i < 7; ++i) EXPECT_EQ(s.Next().size(), 3u);
  // Smaller than one batch: every batch is one full pass.
  const auto tiny = RandomFeatureDataset("t", 2, 2, 1, true);
  BatchSampler t(tiny, 16, 5);
  EXPECT_EQ(t.Next().size(), 2u);
}

TEST(Stage1Trainer, DiscriminatorStepChangesOnlyD) {
  for (AdversarialLoss loss : {AdversarialLoss::kNll, AdversarialLoss::kWasserstein}) {
    auto m = InitModel(Small(loss), {"a", "b"}, std::string("t"), 3);
    const auto before = m;
    const auto data = MakeData(16, true);
    Stage1Trainer trainer(m, Fast());
    trainer.DiscriminatorStep({BatchOf(data.source_train[0]),
                               BatchOf(data.source_train[1]),
                               BatchOf(*data.target_unlabeled)});
    EXPECT_NE(m.discriminator.params().Flatten(),
              before.discriminator.params().Flatten());
    EXPECT_EQ(m.shared.params().Flatten(), before.shared.params().Flatten());
    EXPECT_EQ(m.classifier.params().Flatten(), before.classifier.params().Flatten());
    for (const auto& s : m.sources) {
      EXPECT_EQ(m.Private(s).params().Flatten(),
                before.Private(s).params().Flatten());
    }
    if (loss == AdversarialLoss::kWasserstein) {
      EXPECT_LE(m.discriminator.params().Flatten().cwiseAbs().maxCoeff(),
                m.config.clip);
    }
  }
}

TEST(Stage1Trainer, MainStepNeverChangesD) {
  auto m = InitModel(Small(), {"a", "b"}, std::string("t"), 3);
  const auto before = m;
  const auto data = MakeData(16, true);
  Stage1Trainer trainer(m, Fast());
  const MainLoss loss = trainer.MainStep(
      {BatchOf(data.source_train[0]), BatchOf(data.source_train[1])},
      BatchOf(*data.target_unlabeled));
  EXPECT_EQ(m.discriminator.params().Flatten(),
            before.discriminator.params().Flatten());
  EXPECT_NE(m.shared.params().Flatten(), before.shared.params().Flatten());
  EXPECT_NE(m.classifier.params().Flatten(), before.classifier.params().Flatten());
  EXPECT_NE(m.Private("a").params().Flatten(), before.Private("a").params().Flatten());
  EXPECT_NE(m.Private("b").params().Flatten(), before.Private("b").params().Flatten());
  EXPECT_NEAR(loss.j_1, loss.j_c - Fast().lambda1 * loss.j_d, 1e-12);
}

TEST(Stage1Trainer, MainStepRejectsMissingBatches) {
  auto m = InitModel(Small(), {"a", "b"}, std::nullopt, 3);
  const auto data = MakeData(8, false);
  Stage1Trainer trainer(m, Fast());
  EXPECT_THROW(trainer.MainStep({BatchOf(data.source_train[0])}, {}), ValidationError);
  EXPECT_THROW(trainer.DiscriminatorStep({BatchOf(data.source_train[0])}),
               ValidationError);
}

TEST(Pretrain, ZeroEpochsLeavesModelUntouched) {
  const auto m = InitModel(Small(), {"a", "b"}, std::string("t"), 3);
  Stage1Config c = Fast();
  c.epochs = 0;
  const auto r = Pretrain(m, MakeData(16, true), c);
  EXPECT_TRUE(r.log.steps.empty());
  EXPECT_TRUE(r.log.evals.empty());
  EXPECT_EQ(r.model.shared.params().Flatten(), m.shared.params().Flatten());
  EXPECT_EQ(r.model.discriminator.params().Flatten(),
            m.discriminator.params().Flatten());
}

TEST(Pretrain, WithoutAdversaryLearnsSeparableSources) {
  Stage1Config c = Fast();
  c.lambda1 = 0.0;
  c.include_target_in_D = false;
  c.epochs = 12;
  c.patience = 12;
  const auto data = MakeData(200, false);
  const auto r = Pretrain(InitModel(Small(), {"a", "b"}, std::nullopt, 5), data, c);
  for (std::size_t j = 0; j < 2; ++j) {
    const std::string& s = r.model.sources[j];
    EXPECT_GE(EvaluateAccuracy(r.model, data.source_dev[j], &r.model.Private(s)), 0.95)
        << s;
  }
}

TEST(Pretrain, SentimentLossDecreases) {
  Stage1Config c = Fast();
  c.epochs = 6;
  c.patience = 6;
  const auto r = Pretrain(InitModel(Small(), {"a", "b"}, std::string("t"), 5),
                          MakeData(96, true), c);
  ASSERT_GE(r.log.steps.size(), 20u);
  auto mean_jc = [&](std::size_t from, std::size_t to) {
    double s = 0.0;
    for (std::size_t i = from; i < to; ++i) s += r.log.steps[i].j_c;
    return s / static_cast<double>(to - from);
  };
  const std::size_t n = r.log.steps.size();
  EXPECT_LT(mean_jc(n - 6, n), mean_jc(0, 6));
}

TEST(Pretrain, IndistinguishableDomainsKeepDAtChance) {
  // Both sources and the (excluded) target share one distribution, so no D
  // can beat the uniform guess by much: J_D stays near log 2.
  Stage1Config c = Fast();
  c.include_target_in_D = false;
  c.epochs = 4;
  c.patience = 4;
  Stage1Data d;
  d.source_train = {RandomFeatureDataset("a", 200, kDim, 1, true),
                    RandomFeatureDataset("b", 200, kDim, 2, true)};
  d.source_dev = {RandomFeatureDataset("a", 50, kDim, 3, true),
                  RandomFeatureDataset("b", 50, kDim, 4, true)};
  const auto r = Pretrain(InitModel(Small(), {"a", "b"}, std::nullopt, 5), d, c);
  const std::size_t n = r.log.steps.size();
  double jd = 0.0;
  for (std::size_t i = n - 10; i < n; ++i) jd += r.log.steps[i].j_d / 10.0;
  EXPECT_NEAR(jd, std::log(2.0), 0.05);
}

TEST(Pretrain, TargetInclusionMustMatchDiscriminatorArity) {
  Stage1Config c = Fast();
  c.epochs = 1;
  const auto with_t = InitModel(Small(), {"a", "b"}, std::string("t"), 1);
  const auto without_t = InitModel(Small(), {"a", "b"}, std::nullopt, 1);
  EXPECT_NO_THROW(Pretrain(with_t, MakeData(16, true), c));
  EXPECT_THROW(Pretrain(without_t, MakeData(16, true), c), ValidationError);
  c.include_target_in_D = false;
  EXPECT_NO_THROW(Pretrain(without_t, MakeData(16, false), c));
  EXPECT_THROW(Pretrain(with_t, MakeData(16, false), c), ValidationError);
  // Labeled target data never reaches stage 1.
  c.include_target_in_D = true;
  Stage1Data labeled = MakeData(16, true);
  labeled.target_unlabeled = RandomFeatureDataset("t", 16, kDim, 3, true);
  EXPECT_THROW(Pretrain(with_t, labeled, c), ValidationError);
}

TEST(Pretrain, SameSeedIsDeterministic) {
  const auto m = InitModel(Small(), {"a", "b"}, std::string("t"), 3);
  const auto data = MakeData(40, true);
  const auto a = Pretrain(m, data, Fast());
  const auto b = Pretrain(m, data, Fast());
  EXPECT_EQ(a.model.shared.params().Flatten(), b.model.shared.params().Flatten());
  EXPECT_EQ(a.log.steps.size(), b.log.steps.size());
  EXPECT_EQ(a.log.steps.back().j_1, b.log.steps.back().j_1);
}

TEST(Pretrain, WritesCheckpointsAndLogs) {
  const auto dir = testing::TempDir();
  Stage1Config c = Fast();
  c.epochs = 2;
  c.keep_epoch_checkpoints = true;
  const auto r = Pretrain(InitModel(Small(), {"a", "b"}, std::string("t"), 3),
                          MakeData(24, true), c, dir);
  EXPECT_TRUE(std::filesystem::exists(dir / "stage1_best.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "stage1_epoch1.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "stage1_epoch2.ckpt"));
  EXPECT_EQ(r.log.evals.size(), 4u);  // two sources, two epochs

  r.log.WriteMetricsCsv(dir / "metrics.csv");
  r.log.WriteStepsCsv(dir / "steps.csv");
  std::ifstream metrics(dir / "metrics.csv"), steps(dir / "steps.csv");
  std::string line;
  std::getline(metrics, line);
  EXPECT_EQ(line, "epoch,domain,split,accuracy,J_C,J_D");
  std::getline(steps, line);
  EXPECT_EQ(line, "step,J_D,J_C,J_1");
  long rows = 0;
  while (std::getline(steps, line)) ++rows;
  EXPECT_EQ(rows, static_cast<long>(r.log.steps.size()));
}

TEST(Pretrain, NonFiniteLossIsDivergenceError) {
  Stage1Data d = MakeData(16, false);
  std::vector<Example> bad(d.source_train[0].examples().begin(),
                           d.source_train[0].examples().end());
  std::get<SparseVector>(bad[0].content).values[0] =
      std::numeric_limits<double>::infinity();
  d.source_train[0] = DomainDataset("a", std::move(bad), true);
  Stage1Config c = Fast();
  c.include_target_in_D = false;
  c.batch_size = 16;
  EXPECT_THROW(Pretrain(InitModel(Small(), {"a", "b"}, std::nullopt, 1), d, c),
               DivergenceError);
}

}  // namespace
}  // namespace msda
