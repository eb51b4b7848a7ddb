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

#ifndef MSDA_PRETRAIN_H_
#define MSDA_PRETRAIN_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "msda/corpus.h"
#include "msda/nets.h"

namespace msda {

struct Stage1Config {
  double lambda1 = 0.05;
  double learning_rate = 1e-4;
  int batch_size = 16;
  int n_critic = 5;
  int epochs = 20;
  bool include_target_in_D = true;
  // Epochs without mean dev-accuracy improvement before stopping.
  int patience = 5;
  // Also write stage1_epoch<N>.ckpt after every epoch, not just the best.
  bool keep_epoch_checkpoints = false;
  std::uint64_t seed = 1;

  void Validate() const;
};

struct StepRecord {
  long step = 0;
  double j_d = 0.0;
  double j_c = 0.0;
  double j_1 = 0.0;
};

struct EvalRecord {
  int epoch = 0;
  std::string domain;
  std::string split;
  double accuracy = 0.0;
  double j_c = 0.0;
  double j_d = 0.0;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
  double wall_seconds = 0.0;

  // epoch,domain,split,accuracy,J_C,J_D
  void WriteMetricsCsv(const std::filesystem::path& path) const;
  // step,J_D,J_C,J_1
  void WriteStepsCsv(const std::filesystem::path& path) const;
};

// Cycles through a dataset in reshuffled passes.
class BatchSampler {
 public:
  BatchSampler(const DomainDataset& dataset, int batch_size, std::uint64_t seed);
  std::vector<const Example*> Next();

 private:
  const DomainDataset* dataset_;
  int batch_size_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

std::vector<int> LabelsOf(Batch batch);

// J_D: mean domain-classification loss of D over F_s features, one batch per
// entry of model.discriminator_domains (same order). NLL for the multinomial
// D, the multi-class critic gap when config.d_loss is Wasserstein.
// Accumulates dJ_D/dD into d_grad when given. dropout may be null.
double DiscriminatorLoss(const SharedPrivateModel& model,
                         const std::vector<Batch>& per_domain, Rng* dropout,
                         ParameterSet* d_grad);

struct MainGradients {
  ParameterSet shared;
  std::map<std::string, ParameterSet> privates;
  ParameterSet classifier;
};

struct MainLoss {
  double j_c = 0.0;  // mean sentiment NLL over labeled source batches
  double j_d = 0.0;  // D's loss on the same F_s features, D frozen
  double j_1 = 0.0;  // J_C - lambda1 * J_D: what F_s, F_dj and C minimize
};

// The generator-side objective. labeled[j] is a labeled batch from
// model.sources[j]; `unlabeled` (possibly empty) is a target batch that only
// enters the adversarial term. F_s is pushed to maximize D's loss.
MainLoss MainObjective(const SharedPrivateModel& model,
                       const std::vector<Batch>& labeled, Batch unlabeled,
                       double lambda1, Rng* dropout, MainGradients* grads);

class Stage1Trainer {
 public:
  Stage1Trainer(SharedPrivateModel& model, const Stage1Config& config);

  // Updates only D. Clips D after the update in Wasserstein mode.
  double DiscriminatorStep(const std::vector<Batch>& per_domain);
  // Updates F_s, the F_dj that received a batch, and C. D is untouched.
  MainLoss MainStep(const std::vector<Batch>& labeled, Batch unlabeled);

 private:
  SharedPrivateModel& model_;
  Stage1Config config_;
  Rng dropout_;
  Adam shared_opt_, classifier_opt_, discriminator_opt_;
  std::map<std::string, Adam> private_opt_;
};

struct Stage1Data {
  std::vector<DomainDataset> source_train;  // labeled, aligned with sources
  std::vector<DomainDataset> source_dev;    // labeled, aligned with sources
  std::optional<DomainDataset> target_unlabeled;
};

struct PretrainResult {
  SharedPrivateModel model;  // best mean dev accuracy
  TrainLog log;
};

// n_critic discriminator steps, then one main step, per iteration. Writes
// epoch and best checkpoints under checkpoint_dir when it is non-empty.
// Throws DivergenceError if J_C turns non-finite.
PretrainResult Pretrain(SharedPrivateModel model, const Stage1Data& data,
                        const Stage1Config& config,
                        const std::filesystem::path& checkpoint_dir = {});

// Fraction of argmax-correct predictions of C(F_s(x), priv(x)). A null
// private extractor substitutes a zero private vector.
double EvaluateAccuracy(const SharedPrivateModel& model,
                        const DomainDataset& dataset, const Extractor* priv);
double EvaluateAccuracy(const Extractor& shared, const Head& classifier,
                        const Extractor* priv, int private_dim,
                        const DomainDataset& dataset);

}  // namespace msda

#endif  // MSDA_PRETRAIN_H_
