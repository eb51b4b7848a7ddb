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

#ifndef MSDA_NETS_H_
#define MSDA_NETS_H_

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "msda/common.h"
#include "msda/corpus.h"

namespace msda {

// Row-per-example activations; weights are stored (out x in).
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Batch = std::span<const Example* const>;

std::vector<const Example*> BatchOf(const DomainDataset& dataset);

// Named dense arrays. Order of insertion is the flattening order.
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Matrix value;
  };

  void Add(std::string name, Matrix value);
  bool Has(std::string_view name) const;
  Matrix& at(std::string_view name);
  const Matrix& at(std::string_view name) const;

  std::size_t NumTensors() const { return entries_.size(); }
  std::size_t NumElements() const;
  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  Vector Flatten() const;
  void Unflatten(const Vector& flat);
  ParameterSet ZerosLike() const;
  void SetZero();
  bool SameShape(const ParameterSet& other) const;

  // this += scale * other
  void AddScaled(const ParameterSet& other, double scale);

 private:
  std::vector<Entry> entries_;
};

// Deep copy; the two sets share nothing afterwards.
ParameterSet CopyParameters(const ParameterSet& src);

// Squared Euclidean distance over flattened parameters.
double ParamL2Distance(const ParameterSet& a, const ParameterSet& b);

// Gradient of ParamL2Distance(reference, b) with respect to b, scaled and
// accumulated into grad: grad += scale * 2 * (b - reference).
void AccumulateL2DistanceGrad(const ParameterSet& reference,
                              const ParameterSet& b, double scale,
                              ParameterSet& grad);

// Clamps every entry into [-c, c] in place.
void ClipWeights(ParameterSet& params, double c);

enum class EncoderKind { kFeedforward, kConvolutional };

const char* EncoderKindName(EncoderKind kind);
EncoderKind ParseEncoderKind(std::string_view name);

struct EncoderConfig {
  EncoderKind kind = EncoderKind::kFeedforward;
  // Feedforward: input_dim -> hidden_dim -> output_dim, ReLU after both.
  int input_dim = 0;
  int hidden_dim = 256;
  // Convolutional: embedding -> 1-d convolutions (ReLU) -> max over time.
  // output_dim channels are split across kernel_widths.
  int vocab_size = 0;
  int embedding_dim = 100;
  std::vector<int> kernel_widths = {3, 4, 5};
  int output_dim = 128;
  // Applied to the extractor output while training.
  double dropout = 0.4;

  void Validate() const;
  CorpusMode corpus_mode() const {
    return kind == EncoderKind::kFeedforward ? CorpusMode::kFeatures
                                             : CorpusMode::kTokens;
  }
  std::vector<int> ChannelsPerWidth() const;
  bool operator==(const EncoderConfig&) const = default;
};

// One hidden ReLU layer, then a linear output layer.
struct HeadConfig {
  int input_dim = 0;
  int hidden_dim = 64;
  int output_dim = 2;

  void Validate() const;
  bool operator==(const HeadConfig&) const = default;
};

// Intermediate values a backward pass needs.
struct ExtractorTape {
  std::vector<const Example*> batch;
  Matrix pre1, act1, pre2;  // feedforward
  // convolutional: per example, per width, window matrix and argmax.
  struct ConvExample {
    std::vector<std::int32_t> ids;  // padded
    std::vector<Matrix> windows;    // (w*emb) x positions, per width
    std::vector<std::vector<int>> argmax;
    std::vector<Vector> pooled_pre;  // pre-activation max, per width
  };
  std::vector<ConvExample> conv;
  Matrix dropout_mask;  // empty when dropout was off
};

class Extractor {
 public:
  Extractor() = default;
  // Symmetric uniform fan-in initialization, zero biases.
  Extractor(const EncoderConfig& config, Rng& rng);

  const EncoderConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  // Returns batch x output_dim. Dropout is active only when `dropout_rng`
  // is given.
  Matrix Forward(Batch batch, ExtractorTape* tape = nullptr,
                 Rng* dropout_rng = nullptr) const;
  void Backward(const ExtractorTape& tape, const Matrix& d_out,
                ParameterSet& grad) const;

  // Overwrites embedding rows from a `token v1 v2 ...` text file. Returns
  // the number of rows replaced.
  std::size_t LoadEmbeddings(const std::filesystem::path& path,
                             const Vocabulary& vocab);

 private:
  Matrix ForwardFeedforward(Batch batch, ExtractorTape* tape) const;
  Matrix ForwardConvolutional(Batch batch, ExtractorTape* tape) const;
  void BackwardFeedforward(const ExtractorTape& tape, const Matrix& d_out,
                           ParameterSet& grad) const;
  void BackwardConvolutional(const ExtractorTape& tape, const Matrix& d_out,
                             ParameterSet& grad) const;

  EncoderConfig config_;
  ParameterSet params_;
};

struct HeadTape {
  Matrix input, pre1, act1;
};

class Head {
 public:
  Head() = default;
  Head(const HeadConfig& config, Rng& rng);

  const HeadConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  // Raw output scores, batch x output_dim.
  Matrix Forward(const Matrix& input, HeadTape* tape = nullptr) const;
  // Accumulates parameter gradients; returns d(loss)/d(input).
  Matrix Backward(const HeadTape& tape, const Matrix& d_out,
                  ParameterSet& grad) const;

 private:
  HeadConfig config_;
  ParameterSet params_;
};

Matrix LogSoftmax(const Matrix& logits);

// Mean negative log-likelihood over rows with its gradient w.r.t. logits.
struct LossGrad {
  double loss = 0.0;
  Matrix d_scores;
};
LossGrad NllLoss(const Matrix& logits, std::span<const int> labels);

// Critic gap: mean(scores_a) - mean(scores_b) over single-column scores.
struct PairLossGrad {
  double loss = 0.0;
  Matrix d_a, d_b;
};
PairLossGrad CriticGapLoss(const Matrix& scores_a, const Matrix& scores_b);

// Multi-class critic: mean over rows of (mean of other-class scores minus
// the true-class score). Lower means the critic separates domains better.
LossGrad MultiCriticLoss(const Matrix& scores, std::span<const int> labels);

// Classifier C over the concatenation (shared, private). Returns log
// class probabilities.
Matrix ConcatFeatures(const Matrix& shared, const Matrix& priv);
Matrix ForwardClassifier(const Head& classifier, const Matrix& shared,
                         const Matrix& priv, HeadTape* tape = nullptr);

enum class DiscriminatorMode { kMultinomial, kCritic };

// Multinomial: log-probabilities over domains. Critic: unbounded scores.
Matrix ForwardDiscriminator(const Head& discriminator, const Matrix& features,
                            DiscriminatorMode mode, HeadTape* tape = nullptr);

// Which adversarial loss a discriminator is trained with.
enum class AdversarialLoss { kNll, kWasserstein };
const char* AdversarialLossName(AdversarialLoss loss);
AdversarialLoss ParseAdversarialLoss(std::string_view name);

struct ModelConfig {
  EncoderConfig shared;
  EncoderConfig private_;
  int classifier_hidden = 64;
  int discriminator_hidden = 64;
  AdversarialLoss d_loss = AdversarialLoss::kNll;
  double clip = 0.01;

  void Validate() const;
  bool operator==(const ModelConfig&) const = default;

  // Feature-vector corpus defaults: MLP extractors, 128-d shared and 64-d
  // private features.
  static ModelConfig Feedforward(int input_dim);
  static ModelConfig Convolutional(int vocab_size);
};

// F_s, one F_dj per source, C, and the domain discriminator D.
struct SharedPrivateModel {
  ModelConfig config;
  std::vector<std::string> sources;
  // D's classes: sources in order, then the target when it takes part.
  std::vector<std::string> discriminator_domains;
  Extractor shared;
  std::map<std::string, Extractor> privates;
  Head classifier;
  Head discriminator;

  int SourceIndex(const std::string& name) const;
  const Extractor& Private(const std::string& name) const;
  Extractor& Private(const std::string& name);
  int shared_dim() const { return config.shared.output_dim; }
  int private_dim() const { return config.private_.output_dim; }
};

// Builds a model whose discriminator covers the sources plus, when given,
// the target domain.
SharedPrivateModel InitModel(const ModelConfig& config,
                             const std::vector<std::string>& sources,
                             const std::optional<std::string>& target,
                             std::uint64_t seed);

// Rejects a dataset whose corpus mode does not match an encoder.
void CheckCorpusMatches(const EncoderConfig& config,
                        const DomainDataset& dataset);

// Class probabilities of C(F_s(x), priv(x)) with dropout off. A null
// private extractor means a zero private vector.
Matrix PredictProbabilities(const Extractor& shared, const Head& classifier,
                            const Extractor* priv, int private_dim,
                            Batch batch);

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam() = default;
  Adam(const ParameterSet& like, AdamConfig config);

  void Step(ParameterSet& params, const ParameterSet& grad);
  long steps() const { return t_; }

 private:
  AdamConfig config_;
  ParameterSet m_, v_;
  long t_ = 0;
};

}  // namespace msda

#endif  // MSDA_NETS_H_
