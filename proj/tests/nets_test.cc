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

#include "msda/nets.h"

#include <cmath>
#include <fstream>

#include <gtest/gtest.h>

#include "test_util.h"

namespace msda {
namespace {

using testing::RandomFeatureDataset;

Example Tokens(std::vector<std::int32_t> ids) {
  Example e;
  e.content = TokenIds{std::move(ids)};
  return e;
}

ModelConfig SmallFeedforward(int input_dim) {
  ModelConfig c = ModelConfig::Feedforward(input_dim);
  c.shared.hidden_dim = 8;
  c.shared.output_dim = 6;
  c.private_.hidden_dim = 4;
  c.private_.output_dim = 3;
  c.classifier_hidden = 5;
  c.discriminator_hidden = 5;
  return c;
}

TEST(InitModel, SameSeedIsBitIdentical) {
  const ModelConfig c = SmallFeedforward(7);
  const auto a = InitModel(c, {"x", "y"}, std::string("t"), 1);
  const auto b = InitModel(c, {"x", "y"}, std::string("t"), 1);
  EXPECT_EQ(a.shared.params().Flatten(), b.shared.params().Flatten());
  EXPECT_EQ(a.Private("y").params().Flatten(), b.Private("y").params().Flatten());
  EXPECT_EQ(a.classifier.params().Flatten(), b.classifier.params().Flatten());
  EXPECT_EQ(a.discriminator.params().Flatten(),
            b.discriminator.params().Flatten());
  const auto other = InitModel(c, {"x", "y"}, std::string("t"), 2);
  EXPECT_NE(a.shared.params().Flatten(), other.shared.params().Flatten());
}

TEST(InitModel, DefaultWidthsGiveClassifierInput192) {
  const auto m = InitModel(ModelConfig::Feedforward(20), {"a", "b"}, std::nullopt, 1);
  EXPECT_EQ(m.shared_dim(), 128);
  EXPECT_EQ(m.private_dim(), 64);
  EXPECT_EQ(m.classifier.config().input_dim, 192);
  EXPECT_EQ(m.classifier.config().output_dim, 2);
}

TEST(InitModel, DiscriminatorArityFollowsTargetInclusion) {
  const ModelConfig c = SmallFeedforward(4);
  const std::vector<std::string> four = {"a", "b", "c", "d"};
  EXPECT_EQ(InitModel(c, four, std::string("t"), 1).discriminator.config().output_dim, 5);
  EXPECT_EQ(InitModel(c, four, std::nullopt, 1).discriminator.config().output_dim, 4);
  EXPECT_THROW(InitModel(c, four, std::string("a"), 1), ValidationError);
}

TEST(InitModel, InconsistentConfigsRejected) {
  ModelConfig c = SmallFeedforward(4);
  c.private_.kind = EncoderKind::kConvolutional;
  c.private_.vocab_size = 10;
  EXPECT_THROW(InitModel(c, {"a", "b"}, std::nullopt, 1), ValidationError);
  c = SmallFeedforward(0);
  EXPECT_THROW(InitModel(c, {"a", "b"}, std::nullopt, 1), ValidationError);
}

TEST(CheckCorpusMatches, FeedforwardRejectsTokenCorpus) {
  const DomainDataset tokens("t", {Tokens({2, 3})}, false);
  EXPECT_THROW(CheckCorpusMatches(SmallFeedforward(4).shared, tokens),
               ValidationError);
  const DomainDataset feats = RandomFeatureDataset("f", 3, 4, 1, false);
  EXPECT_NO_THROW(CheckCorpusMatches(SmallFeedforward(4).shared, feats));
  EXPECT_THROW(CheckCorpusMatches(SmallFeedforward(5).shared, feats),
               ValidationError);
}

TEST(Extractor, FeedforwardShapeForBatchOf16) {
  const DomainDataset ds = RandomFeatureDataset("f", 16, 30, 2, false);
  const auto m = InitModel(ModelConfig::Feedforward(30), {"a", "b"}, std::nullopt, 3);
  const Matrix out = m.shared.Forward(BatchOf(ds));
  EXPECT_EQ(out.rows(), 16);
  EXPECT_EQ(out.cols(), 128);
}

TEST(Extractor, ZeroInputGivesZeroOutput) {
  const DomainDataset ds("z", {testing::DenseFeatures({0, 0, 0, 0}, std::nullopt)},
                         false);
  Rng rng(4);
  const Extractor e(SmallFeedforward(4).shared, rng);
  EXPECT_TRUE(e.Forward(BatchOf(ds)).isZero(0.0));
}

TEST(Extractor, DropoutOnlyWithRng) {
  const DomainDataset ds = RandomFeatureDataset("f", 8, 4, 5, false);
  Rng init(1);
  EncoderConfig c = SmallFeedforward(4).shared;
  c.dropout = 0.5;
  const Extractor e(c, init);
  const auto batch = BatchOf(ds);
  EXPECT_EQ(e.Forward(batch), e.Forward(batch));
  Rng drop(9);
  EXPECT_NE(e.Forward(batch, nullptr, &drop), e.Forward(batch));
}

TEST(Extractor, ShortDocumentIsPaddedAndFinite) {
  ModelConfig c = ModelConfig::Convolutional(12);
  c.shared.embedding_dim = 4;
  c.shared.output_dim = 6;
  Rng rng(2);
  const Extractor e(c.shared, rng);
  const DomainDataset ds("t", {Tokens({5})}, false);
  const Matrix out = e.Forward(BatchOf(ds));
  EXPECT_EQ(out.cols(), 6);
  EXPECT_TRUE(out.allFinite());
}

TEST(Extractor, EmptyBatchRejected) {
  Rng rng(1);
  const Extractor e(SmallFeedforward(4).shared, rng);
  EXPECT_THROW(e.Forward(Batch{}), ValidationError);
}

TEST(Extractor, LoadEmbeddingsOverwritesKnownRows) {
  const auto dir = testing::TempDir();
  std::ofstream(dir / "emb.txt") << "good 1 2\nmissing 3 4\n";
  const Vocabulary vocab({"<pad>", "<unk>", "good", "bad"});
  ModelConfig c = ModelConfig::Convolutional(4);
  c.shared.embedding_dim = 2;
  c.shared.output_dim = 3;
  Rng rng(1);
  Extractor e(c.shared, rng);
  EXPECT_EQ(e.LoadEmbeddings(dir / "emb.txt", vocab), 1u);
  std::ofstream(dir / "bad.txt") << "good 1 2 3\n";
  EXPECT_THROW(e.LoadEmbeddings(dir / "bad.txt", vocab), ParseError);
}

TEST(Classifier, RowsAreLogDistributions) {
  Rng rng(3);
  const Head c(HeadConfig{5, 4, 2}, rng);
  const Matrix shared = Matrix::Random(7, 3);
  const Matrix priv = Matrix::Random(7, 2);
  const Matrix logp = ForwardClassifier(c, shared, priv);
  for (Eigen::Index r = 0; r < logp.rows(); ++r) {
    EXPECT_NEAR(logp.row(r).array().exp().sum(), 1.0, 1e-6);
  }
}

TEST(Classifier, ZeroWeightsGiveUniform) {
  Rng rng(3);
  Head c(HeadConfig{4, 3, 2}, rng);
  c.params().SetZero();
  const Matrix logp = ForwardClassifier(c, Matrix::Random(2, 2), Matrix::Random(2, 2));
  EXPECT_TRUE(logp.isApprox(Matrix::Constant(2, 2, std::log(0.5))));
}

TEST(Classifier, ConcatenationOrderMatters) {
  Rng rng(8);
  const Head c(HeadConfig{4, 6, 2}, rng);
  const Matrix a = Matrix::Random(3, 2), b = Matrix::Random(3, 2);
  EXPECT_FALSE(ForwardClassifier(c, a, b).isApprox(ForwardClassifier(c, b, a)));
  EXPECT_THROW(ForwardClassifier(c, a, Matrix::Random(3, 3)), ValidationError);
}

TEST(Discriminator, MultinomialNormalizesAndCriticDoesNot) {
  Rng rng(5);
  const Head d(HeadConfig{3, 4, 5}, rng);
  const Matrix x = Matrix::Random(4, 3);
  const Matrix logp = ForwardDiscriminator(d, x, DiscriminatorMode::kMultinomial);
  EXPECT_EQ(logp.cols(), 5);
  for (Eigen::Index r = 0; r < 4; ++r) {
    EXPECT_NEAR(logp.row(r).array().exp().sum(), 1.0, 1e-6);
  }
  Head critic(HeadConfig{3, 4, 1}, rng);
  for (auto& e : critic.params().entries()) e.value.setConstant(3.0);
  const Matrix s = ForwardDiscriminator(critic, Matrix::Ones(2, 3),
                                        DiscriminatorMode::kCritic);
  EXPECT_EQ(s.cols(), 1);
  EXPECT_GT(s(0, 0), 1.0);
  EXPECT_THROW(ForwardDiscriminator(d, x, DiscriminatorMode::kCritic),
               ValidationError);
  EXPECT_THROW(ForwardDiscriminator(critic, x, DiscriminatorMode::kMultinomial),
               ValidationError);
  EXPECT_THROW(ForwardDiscriminator(d, Matrix::Random(4, 2),
                                    DiscriminatorMode::kMultinomial),
               ValidationError);
}

ParameterSet Params(std::vector<double> values) {
  ParameterSet p;
  Matrix m(1, static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) {
    m(0, static_cast<Eigen::Index>(i)) = values[i];
  }
  p.Add("w", m);
  return p;
}

TEST(ClipWeights, ClampsInPlaceAndIsIdempotent) {
  ParameterSet p = Params({0.5, -0.005, -3.0});
  ClipWeights(p, 0.01);
  EXPECT_EQ(p.at("w")(0, 0), 0.01);
  EXPECT_EQ(p.at("w")(0, 1), -0.005);
  EXPECT_EQ(p.at("w")(0, 2), -0.01);
  const Vector once = p.Flatten();
  ClipWeights(p, 0.01);
  EXPECT_EQ(p.Flatten(), once);
}

TEST(CopyParameters, DeepCopy) {
  ParameterSet src = Params({1, 2, 3});
  ParameterSet copy = CopyParameters(src);
  EXPECT_EQ(copy.Flatten(), src.Flatten());
  copy.at("w")(0, 0) = 9;
  EXPECT_EQ(src.at("w")(0, 0), 1);
  EXPECT_EQ(CopyParameters(CopyParameters(src)).Flatten(), src.Flatten());
}

TEST(ParamL2Distance, Examples) {
  const ParameterSet a = Params(std::vector<double>(100, 0.0));
  const ParameterSet b = Params(std::vector<double>(100, 0.1));
  EXPECT_EQ(ParamL2Distance(a, a), 0.0);
  EXPECT_NEAR(ParamL2Distance(a, b), 1.0, 1e-12);
  EXPECT_EQ(ParamL2Distance(a, b), ParamL2Distance(b, a));
  EXPECT_THROW(ParamL2Distance(a, Params({1.0})), ValidationError);
}

TEST(ParameterSet, FlattenUnflattenIdentity) {
  Rng rng(1);
  Head h(HeadConfig{3, 4, 2}, rng);
  const Vector flat = h.params().Flatten();
  EXPECT_EQ(flat.size(), static_cast<Eigen::Index>(h.params().NumElements()));
  ParameterSet other = h.params().ZerosLike();
  other.Unflatten(flat);
  EXPECT_EQ(other.Flatten(), flat);
  EXPECT_TRUE(other.SameShape(h.params()));
  EXPECT_THROW(other.Unflatten(Vector::Zero(3)), ValidationError);
}

TEST(Adam, StepMovesAgainstGradient) {
  ParameterSet p = Params({1.0, -1.0});
  ParameterSet g = Params({1.0, -1.0});
  Adam opt(p, AdamConfig{0.1});
  opt.Step(p, g);
  EXPECT_LT(p.at("w")(0, 0), 1.0);
  EXPECT_GT(p.at("w")(0, 1), -1.0);
  EXPECT_EQ(opt.steps(), 1);
}

TEST(NllLoss, MatchesHandComputation) {
  Matrix logits(2, 2);
  logits << 0.0, 0.0, 2.0, 0.0;
  const std::vector<int> labels = {1, 0};
  const LossGrad g = NllLoss(logits, labels);
  const double expected = 0.5 * (std::log(2.0) + std::log(1.0 + std::exp(-2.0)));
  EXPECT_NEAR(g.loss, expected, 1e-12);
}

TEST(PredictProbabilities, ZeroPrivateMatchesExplicitZeros) {
  const DomainDataset ds = RandomFeatureDataset("f", 5, 4, 2, false);
  const auto m = InitModel(SmallFeedforward(4), {"a", "b"}, std::nullopt, 7);
  const auto batch = BatchOf(ds);
  const Matrix p = PredictProbabilities(m.shared, m.classifier, nullptr, 3, batch);
  const Matrix expected = ForwardClassifier(m.classifier, m.shared.Forward(batch),
                                            Matrix::Zero(5, 3))
                              .array()
                              .exp();
  EXPECT_TRUE(p.isApprox(expected, 1e-12));
}

}  // namespace
}  // namespace msda
