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

// Finite-difference checks of every analytic gradient on networks small
// enough (at most 50 parameters) for central differences to be cheap. Shared
// by the unit tests and the acceptance binary.

#ifndef MSDA_TESTS_GRADIENT_CHECKS_H_
#define MSDA_TESTS_GRADIENT_CHECKS_H_

#include <string>
#include <vector>

#include "fixtures.h"
#include "msda/pretrain.h"
#include "msda/sda.h"
#include "msda/toe.h"

namespace msda::testing {

constexpr double kGradientTolerance = 1e-4;

struct GradientCheck {
  std::string name;
  double relative_error = 0.0;
  double analytic_norm = 0.0;
  bool ok() const {
    return analytic_norm > 1e-8 && relative_error <= kGradientTolerance;
  }
};

inline GradientCheck Compare(std::string name, const Vector& analytic,
                             const Vector& numeric) {
  return {std::move(name), RelativeError(analytic, numeric), analytic.norm()};
}

inline Matrix Uniform(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.Uniform(-1.0, 1.0);
  return m;
}

// 12 + 2 * 9 + 8 + 9 = 47 parameters with the target in D.
inline ModelConfig TinyGradientConfig(AdversarialLoss d_loss = AdversarialLoss::kNll) {
  ModelConfig c = ModelConfig::Feedforward(2);
  c.shared.hidden_dim = 2;
  c.shared.output_dim = 2;
  c.private_.hidden_dim = 2;
  c.private_.output_dim = 1;
  c.classifier_hidden = 1;
  c.discriminator_hidden = 1;
  c.d_loss = d_loss;
  return c;
}

inline std::size_t CountParameters(const SharedPrivateModel& m) {
  std::size_t n = m.shared.params().NumElements() +
                  m.classifier.params().NumElements() +
                  m.discriminator.params().NumElements();
  for (const auto& [name, e] : m.privates) n += e.params().NumElements();
  return n;
}

struct GradientFixture {
  SharedPrivateModel model;
  DomainDataset s0, s1, target;
  std::vector<const Example*> b0, b1, bt;
};

// Jittered so every ReLU path carries gradient and no unit sits on a kink.
inline GradientFixture MakeGradientFixture(AdversarialLoss d_loss,
                                           std::uint64_t seed = 11) {
  GradientFixture f{
      InitModel(TinyGradientConfig(d_loss), {"s0", "s1"}, std::string("t"), seed),
      RandomFeatureDataset("s0", 6, 2, seed + 1, true, 0.3),
      RandomFeatureDataset("s1", 6, 2, seed + 2, true, -0.2),
      RandomFeatureDataset("t", 6, 2, seed + 3, false, 0.5),
      {}, {}, {}};
  Jitter(f.model.shared.params(), seed + 10);
  Jitter(f.model.classifier.params(), seed + 11);
  Jitter(f.model.discriminator.params(), seed + 12);
  for (auto& [name, e] : f.model.privates) {
    Jitter(e.params(), seed + 13 + f.model.SourceIndex(name));
  }
  f.b0 = BatchOf(f.s0);
  f.b1 = BatchOf(f.s1);
  f.bt = BatchOf(f.target);
  return f;
}

inline std::vector<GradientCheck> CheckFeedforwardModules() {
  GradientFixture f = MakeGradientFixture(AdversarialLoss::kNll);
  const Matrix weights = Uniform(6, 2, 1);
  auto loss = [&] {
    return (f.model.shared.Forward(f.b0).array() * weights.array()).sum();
  };
  ExtractorTape tape;
  f.model.shared.Forward(f.b0, &tape);
  ParameterSet grad = f.model.shared.params().ZerosLike();
  f.model.shared.Backward(tape, weights, grad);
  std::vector<GradientCheck> out;
  out.push_back(Compare("feedforward extractor", grad.Flatten(),
                        NumericGradient(loss, f.model.shared.params())));

  const Matrix x = Uniform(5, 3, 2);
  const std::vector<int> labels = {0, 1, 1, 0, 1};
  Head& c = f.model.classifier;
  auto head_loss = [&] { return NllLoss(c.Forward(x), labels).loss; };
  HeadTape htape;
  const LossGrad lg = NllLoss(c.Forward(x, &htape), labels);
  ParameterSet hgrad = c.params().ZerosLike();
  c.Backward(htape, lg.d_scores, hgrad);
  out.push_back(Compare("classifier head", hgrad.Flatten(),
                        NumericGradient(head_loss, c.params())));
  return out;
}

inline Extractor TinyConvExtractor() {
  EncoderConfig c;
  c.kind = EncoderKind::kConvolutional;
  c.vocab_size = 5;
  c.embedding_dim = 2;
  c.kernel_widths = {1, 2};
  c.output_dim = 2;
  Rng rng(3);
  Extractor e(c, rng);
  Jitter(e.params(), 4);
  return e;
}

inline std::vector<GradientCheck> CheckConvolutionalExtractor() {
  Extractor e = TinyConvExtractor();
  std::vector<Example> ex;
  for (std::vector<std::int32_t> ids :
       {std::vector<std::int32_t>{2, 3, 4}, {4}, {1, 2, 2, 3}}) {
    Example x;
    x.content = TokenIds{ids};
    ex.push_back(x);
  }
  const DomainDataset ds("t", ex, false);
  const auto batch = BatchOf(ds);
  const Matrix weights = Uniform(3, 2, 3);
  auto loss = [&] { return (e.Forward(batch).array() * weights.array()).sum(); };
  ExtractorTape tape;
  e.Forward(batch, &tape);
  ParameterSet grad = e.params().ZerosLike();
  e.Backward(tape, weights, grad);
  return {Compare("convolutional extractor", grad.Flatten(),
                  NumericGradient(loss, e.params()))};
}

// J_D with respect to D; J_1 = J_C - lambda1 J_D and plain J_C with respect
// to F_s, F_dj and C.
inline std::vector<GradientCheck> CheckStage1(AdversarialLoss d_loss) {
  const std::string tag = std::string(" [") + AdversarialLossName(d_loss) + "]";
  GradientFixture f = MakeGradientFixture(d_loss);
  std::vector<GradientCheck> out;

  const std::vector<Batch> per_domain = {f.b0, f.b1, f.bt};
  auto jd = [&] { return DiscriminatorLoss(f.model, per_domain, nullptr, nullptr); };
  ParameterSet dgrad = f.model.discriminator.params().ZerosLike();
  DiscriminatorLoss(f.model, per_domain, nullptr, &dgrad);
  out.push_back(Compare("J_D / D" + tag, dgrad.Flatten(),
                        NumericGradient(jd, f.model.discriminator.params())));

  const std::vector<Batch> labeled = {f.b0, f.b1};
  const double lambda1 = 0.3;
  auto j1 = [&] {
    return MainObjective(f.model, labeled, f.bt, lambda1, nullptr, nullptr).j_1;
  };
  MainGradients g;
  MainObjective(f.model, labeled, f.bt, lambda1, nullptr, &g);
  out.push_back(Compare("J_1 / F_s" + tag, g.shared.Flatten(),
                        NumericGradient(j1, f.model.shared.params())));
  out.push_back(Compare("J_1 / C" + tag, g.classifier.Flatten(),
                        NumericGradient(j1, f.model.classifier.params())));
  for (const std::string& s : f.model.sources) {
    out.push_back(Compare("J_1 / F_" + s + tag, g.privates.at(s).Flatten(),
                          NumericGradient(j1, f.model.Private(s).params())));
  }

  auto jc = [&] {
    return MainObjective(f.model, labeled, Batch{}, 0.0, nullptr, nullptr).j_c;
  };
  MainGradients gc;
  MainObjective(f.model, labeled, Batch{}, 0.0, nullptr, &gc);
  out.push_back(Compare("J_C / F_s" + tag, gc.shared.Flatten(),
                        NumericGradient(jc, f.model.shared.params())));
  out.push_back(Compare("J_C / C" + tag, gc.classifier.Flatten(),
                        NumericGradient(jc, f.model.classifier.params())));
  return out;
}

inline SdaState TinySda(const GradientFixture& f, AdversarialLoss da_loss) {
  SdaConfig config;
  config.da_hidden = 2;
  config.da_loss = da_loss;
  config.seed = 5;
  SdaState s = InitSda(f.model, "s0", config);
  Jitter(s.da.params(), 23);
  // Move theta_t off theta_s so J_theta has a gradient.
  Rng rng(17);
  for (auto& e : s.target.params().entries()) {
    for (Eigen::Index i = 0; i < e.value.size(); ++i) {
      e.value.data()[i] += rng.Uniform(-0.2, 0.2);
    }
  }
  return s;
}

inline std::size_t CountParameters(const SdaState& s) {
  return s.shared.params().NumElements() + s.target.params().NumElements() +
         s.classifier.params().NumElements() + s.da.params().NumElements();
}

// J_Da with respect to D_a; J_2 = J_C1 - lambda2 J_Da + lambda_theta J_theta
// with respect to F_t and C.
inline std::vector<GradientCheck> CheckSda(AdversarialLoss da_loss) {
  const std::string tag = std::string(" [") + AdversarialLossName(da_loss) + "]";
  const GradientFixture f = MakeGradientFixture(AdversarialLoss::kNll);
  SdaState s = TinySda(f, da_loss);
  std::vector<GradientCheck> out;

  auto jda = [&] { return DaLoss(s, f.b0, f.bt, nullptr, nullptr); };
  ParameterSet dgrad = s.da.params().ZerosLike();
  DaLoss(s, f.b0, f.bt, nullptr, &dgrad);
  out.push_back(Compare("J_Da / D_a" + tag, dgrad.Flatten(),
                        NumericGradient(jda, s.da.params())));

  auto j2 = [&] {
    return SdaObjective(s, f.b0, f.b0, f.bt, 0.4, 0.7, nullptr, nullptr).j_2;
  };
  SdaGradients g;
  SdaObjective(s, f.b0, f.b0, f.bt, 0.4, 0.7, nullptr, &g);
  out.push_back(Compare("J_2 / F_t" + tag, g.target.Flatten(),
                        NumericGradient(j2, s.target.params())));
  out.push_back(Compare("J_2 / C" + tag, g.classifier.Flatten(),
                        NumericGradient(j2, s.classifier.params())));
  return out;
}

// J_C1 and J_theta on their own.
inline std::vector<GradientCheck> CheckSdaTerms() {
  const GradientFixture f = MakeGradientFixture(AdversarialLoss::kNll);
  SdaState s = TinySda(f, AdversarialLoss::kWasserstein);
  std::vector<GradientCheck> out;
  auto c1 = [&] {
    return SdaObjective(s, f.b0, f.b0, f.bt, 0, 0, nullptr, nullptr).j_2;
  };
  SdaGradients g1;
  SdaObjective(s, f.b0, f.b0, f.bt, 0, 0, nullptr, &g1);
  out.push_back(Compare("J_C1 / F_t", g1.target.Flatten(),
                        NumericGradient(c1, s.target.params())));

  auto theta = [&] { return ParamL2Distance(s.source_ref, s.target.params()); };
  ParameterSet g2 = s.target.params().ZerosLike();
  AccumulateL2DistanceGrad(s.source_ref, s.target.params(), 1.0, g2);
  out.push_back(Compare("J_theta / F_t", g2.Flatten(),
                        NumericGradient(theta, s.target.params())));
  return out;
}

// J_C2 summed over heads, with respect to every selected F_dj and C.
inline std::vector<GradientCheck> CheckFinetune() {
  const GradientFixture f = MakeGradientFixture(AdversarialLoss::kNll);
  Ensemble e = MakeEnsemble(f.model, {"s1", "s0"});
  const std::vector<int> labels = {1, 0, 0, 1, 1, 0};
  auto loss = [&] { return FinetuneObjective(e, f.bt, labels, nullptr, nullptr); };
  FinetuneGradients g;
  FinetuneObjective(e, f.bt, labels, nullptr, &g);
  std::vector<GradientCheck> out;
  out.push_back(Compare("J_C2 / C", g.classifier.Flatten(),
                        NumericGradient(loss, e.classifier.params())));
  for (std::size_t h = 0; h < e.privates.size(); ++h) {
    out.push_back(Compare("J_C2 / F_" + e.sources[h], g.privates[h].Flatten(),
                          NumericGradient(loss, e.privates[h].params())));
  }
  return out;
}

inline std::vector<GradientCheck> AllGradientChecks() {
  std::vector<GradientCheck> all;
  auto add = [&](std::vector<GradientCheck> v) {
    all.insert(all.end(), v.begin(), v.end());
  };
  add(CheckFeedforwardModules());
  add(CheckConvolutionalExtractor());
  for (AdversarialLoss l : {AdversarialLoss::kNll, AdversarialLoss::kWasserstein}) {
    add(CheckStage1(l));
    add(CheckSda(l));
  }
  add(CheckSdaTerms());
  add(CheckFinetune());
  return all;
}

// Largest network any check differentiates through.
inline std::size_t LargestGradientNetwork() {
  const GradientFixture f = MakeGradientFixture(AdversarialLoss::kNll);
  return std::max({CountParameters(f.model),
                   CountParameters(TinySda(f, AdversarialLoss::kNll)),
                   TinyConvExtractor().params().NumElements()});
}

}  // namespace msda::testing

#endif  // MSDA_TESTS_GRADIENT_CHECKS_H_
