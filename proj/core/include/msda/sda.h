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

#ifndef MSDA_SDA_H_
#define MSDA_SDA_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "msda/corpus.h"
#include "msda/divergence.h"
#include "msda/nets.h"
#include "msda/pretrain.h"

namespace msda {

struct SdaConfig {
  double lambda2 = 0.05;
  double lambda_theta = 0.1;
  int iter1 = 500;   // D_a warm-up steps
  int iter2 = 2000;  // main rounds
  int n_critic = 5;
  double learning_rate = 1e-4;
  int batch_size = 16;
  AdversarialLoss da_loss = AdversarialLoss::kWasserstein;
  double clip = 0.01;
  int da_hidden = 64;
  std::uint64_t seed = 1;

  void Validate() const;
};

struct SdaState {
  ModelConfig model_config;
  std::string selected_source;
  // Frozen Stage 1 modules.
  Extractor shared;
  Head discriminator;
  ParameterSet source_ref;  // theta_s: snapshot of F_{d_j*}
  // Trained here.
  Extractor target;  // F_t
  Head classifier;   // C, updated alongside F_t
  Head da;           // binary domain critic over private features
  AdversarialLoss da_loss = AdversarialLoss::kWasserstein;
  double clip = 0.01;
};

// F_t starts as an exact copy of F_{d_j*}; D_a is freshly initialized from
// config.seed.
SdaState InitSda(const SharedPrivateModel& model, const std::string& j_star,
                 const SdaConfig& config);

// D_a's loss on F_t(source) vs F_t(target). Critic mode: mean score(source)
// minus mean score(target). NLL mode: mean NLL with source = 0, target = 1.
// Accumulates dLoss/dD_a into da_grad when given.
double DaLoss(const SdaState& state, Batch source, Batch target, Rng* dropout,
              ParameterSet* da_grad);

struct SdaLoss {
  double j_c1 = 0.0;
  double j_da = 0.0;     // D_a's loss on this round's batches
  double j_theta = 0.0;  // ||theta_s - theta_t||^2
  double j_2 = 0.0;      // j_c1 - lambda2 * j_da + lambda_theta * j_theta
};

struct SdaGradients {
  ParameterSet target;
  ParameterSet classifier;
};

// Objective minimized by F_t and C. F_t is pushed to raise D_a's loss.
SdaLoss SdaObjective(const SdaState& state, Batch labeled_source, Batch source,
                     Batch target, double lambda2, double lambda_theta,
                     Rng* dropout, SdaGradients* grads);

class SdaTrainer {
 public:
  SdaTrainer(SdaState& state, const SdaConfig& config);

  // One update of D_a; clips it in critic mode.
  double DaStep(Batch source, Batch target);
  // One update of F_t and C.
  SdaLoss MainStep(Batch labeled_source, Batch source, Batch target);

 private:
  SdaState& state_;
  SdaConfig config_;
  Rng dropout_;
  Adam da_opt_, target_opt_, classifier_opt_;
};

struct SdaStepRecord {
  long step = 0;
  double j_da = 0.0;
  double j_c1 = 0.0;
  double j_theta = 0.0;
  double j_2 = 0.0;
};

struct SdaLog {
  std::vector<SdaStepRecord> steps;
  double wall_seconds = 0.0;

  // step,J_Da,J_C1,J_theta,J_2
  void WriteCsv(const std::filesystem::path& path) const;
};

struct SdaResult {
  SdaState state;
  SdaLog log;
};

// Runs iter1 warm-up D_a steps, then iter2 rounds of n_critic D_a steps and
// one main step, adapting from j_star.
SdaResult RunSda(const SharedPrivateModel& model,
                 const DomainDataset& source_train, const DomainDataset& target,
                 const std::string& j_star, const SdaConfig& config);

// Picks j* as the Stage 1 source closest to target_name, then runs SDA.
// source_train is aligned with model.sources.
SdaResult RunSda(const SharedPrivateModel& model,
                 const std::vector<DomainDataset>& source_train,
                 const DomainDataset& target, const DistanceMatrix& matrix,
                 const std::string& target_name, const SdaConfig& config);

struct Prediction {
  std::vector<int> labels;
  Matrix probabilities;  // rows sum to 1; column 1 is positive

  double Accuracy(Batch truth) const;
};

Prediction PredictTargetSda(const SdaState& state, Batch batch);

void SaveSdaState(const SdaState& state, const std::filesystem::path& path);
SdaState LoadSdaState(const std::filesystem::path& path);

// Batch-wise argmax over class probabilities; ties go to the negative class.
Prediction PredictionFromProbabilities(Matrix probabilities);

// Writes example_id, predicted_label, p_positive; example_id is the row.
void WritePredictionsTsv(const Prediction& prediction,
                         const std::filesystem::path& path);

}  // namespace msda

#endif  // MSDA_SDA_H_
