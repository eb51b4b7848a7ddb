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

#ifndef MSDA_TOE_H_
#define MSDA_TOE_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "msda/corpus.h"
#include "msda/divergence.h"
#include "msda/nets.h"
#include "msda/sda.h"

namespace msda {

// How per-head class probabilities turn into an accepted pseudo label.
//   average:  argmax of the mean probability, accepted if it is >= delta
//   majority: majority vote, accepted if the agreeing fraction is >= delta
//   minimum:  argmax of the mean, accepted if every head gives it >= delta
enum class LabelingRule { kAverage, kMajority, kMinimum };
const char* LabelingRuleName(LabelingRule rule);
LabelingRule ParseLabelingRule(std::string_view name);

// When the labeling loop keeps sweeping.
//   either: while the last two sweeps gained >= n_min labels or the
//           threshold is still above its floor
//   both:   only while both hold
enum class LoopGuard { kEither, kBoth };
const char* LoopGuardName(LoopGuard guard);
LoopGuard ParseLoopGuard(std::string_view name);

struct ToeConfig {
  double delta0 = 0.98;
  double eta = 0.02;
  double delta_floor = 0.5;
  int n_min = 10;
  int k_sources = 3;
  int finetune_iter = 200;
  double learning_rate = 1e-5;
  int batch_size = 16;
  int max_sweeps = 50;
  LabelingRule labeling = LabelingRule::kAverage;
  LoopGuard guard = LoopGuard::kEither;
  std::uint64_t seed = 1;

  void Validate() const;
};

// The threshold in force at a 0-based sweep index.
double DeltaAtSweep(const ToeConfig& config, int sweep);

struct LabelDecision {
  int label = 0;
  double confidence = 0.0;
};

// positive[h] is head h's probability of the positive class. Exact ties
// between the classes are never accepted.
std::optional<LabelDecision> DecideLabel(std::span<const double> positive,
                                         double delta, LabelingRule rule);

// F_s, C and the private extractors of an ensemble's sources. Stage 2
// finetunes privates and C; F_s stays fixed.
struct Ensemble {
  std::vector<std::string> sources;
  Extractor shared;
  Head classifier;
  std::vector<Extractor> privates;  // aligned with sources
  int private_dim = 0;
};

Ensemble MakeEnsemble(const SharedPrivateModel& model,
                      const std::vector<std::string>& sources);

// Per-head positive probabilities, batch x heads.
Matrix HeadPositiveProbabilities(const Ensemble& ensemble, Batch batch);

// Averages the heads' class probabilities.
Prediction PredictEnsemble(const Ensemble& ensemble, Batch batch);
double EnsembleAccuracy(const Ensemble& ensemble, const DomainDataset& dataset);

struct AcceptedLabel {
  std::size_t position = 0;  // index into the batch
  int label = 0;
  double confidence = 0.0;
};

std::vector<AcceptedLabel> EnsembleLabelBatch(const Ensemble& ensemble,
                                              Batch batch, double delta,
                                              LabelingRule rule);

struct PseudoLabel {
  std::size_t index = 0;  // into the target dataset
  int label = 0;
  double confidence = 0.0;
  int sweep = 0;
  double delta = 0.0;
};

struct PseudoLabelSet {
  std::size_t pool_size = 0;
  std::vector<PseudoLabel> entries;
  std::vector<std::size_t> remaining;
  std::vector<double> delta_trace;   // threshold used at each sweep
  std::vector<std::size_t> gained;   // labels accepted at each sweep

  bool empty() const { return entries.empty(); }
  // entries and remaining partition [0, pool_size).
  bool PartitionHolds() const;
  // example_id, sweep, delta, confidence, label
  void WriteAuditTsv(const std::filesystem::path& path) const;
};

// Sweeps the remaining pool with a decaying threshold. An optional
// observer sees the set after every sweep.
PseudoLabelSet PseudoLabelLoop(
    const Ensemble& ensemble, const DomainDataset& target,
    const ToeConfig& config,
    const std::function<void(const PseudoLabelSet&)>& observer = {});

struct FinetuneGradients {
  std::vector<ParameterSet> privates;
  ParameterSet classifier;
};

// Sum over heads of the mean NLL against the given labels.
double FinetuneObjective(const Ensemble& ensemble, Batch batch,
                         std::span<const int> labels, Rng* dropout,
                         FinetuneGradients* grads);

class ToeTrainer {
 public:
  ToeTrainer(Ensemble& ensemble, const ToeConfig& config);
  double FinetuneStep(Batch batch, std::span<const int> labels);

 private:
  Ensemble& ensemble_;
  ToeConfig config_;
  Rng dropout_;
  Adam classifier_opt_;
  std::vector<Adam> private_opt_;
};

struct ToeResult {
  Ensemble ensemble;
  PseudoLabelSet labels;
  std::vector<double> losses;  // J_C2 per finetune step
};

// Top-k closest sources, pseudo labeling, then finetune_iter steps. Throws
// ValidationError when no pseudo label was accepted.
ToeResult RunToe(const SharedPrivateModel& model, const DomainDataset& target,
                 const DistanceMatrix& matrix, const std::string& target_name,
                 const ToeConfig& config);
// Same with explicit sources.
ToeResult RunToe(const SharedPrivateModel& model, const DomainDataset& target,
                 const std::vector<std::string>& sources,
                 const ToeConfig& config);

inline Prediction PredictTargetToe(const Ensemble& ensemble, Batch batch) {
  return PredictEnsemble(ensemble, batch);
}

void SaveEnsemble(const Ensemble& ensemble, const ModelConfig& model_config,
                  const std::filesystem::path& path);

}  // namespace msda

#endif  // MSDA_TOE_H_
