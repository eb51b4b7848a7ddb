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

#include "msda/toe.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "msda/checkpoint.h"
#include "msda/pretrain.h"

namespace msda {

const char* LabelingRuleName(LabelingRule rule) {
  switch (rule) {
    case LabelingRule::kAverage: return "average";
    case LabelingRule::kMajority: return "majority";
    case LabelingRule::kMinimum: return "minimum";
  }
  return "?";
}

LabelingRule ParseLabelingRule(std::string_view name) {
  if (name == "average") return LabelingRule::kAverage;
  if (name == "majority") return LabelingRule::kMajority;
  if (name == "minimum" || name == "min") return LabelingRule::kMinimum;
  throw ValidationError("unknown labeling rule '" + std::string(name) +
                        "' (expected average, majority or minimum)");
}

const char* LoopGuardName(LoopGuard guard) {
  return guard == LoopGuard::kEither ? "either" : "both";
}

LoopGuard ParseLoopGuard(std::string_view name) {
  if (name == "either" || name == "or") return LoopGuard::kEither;
  if (name == "both" || name == "and") return LoopGuard::kBoth;
  throw ValidationError("unknown loop guard '" + std::string(name) +
                        "' (expected either or both)");
}

void ToeConfig::Validate() const {
  Require(delta0 >= 0.5 && delta0 <= 1.0, "toe.delta0 must be in [0.5, 1]");
  Require(eta > 0.0, "toe.eta must be positive");
  Require(delta_floor >= 0.5 && delta_floor <= delta0,
          "toe.delta_floor must be in [0.5, delta0]");
  Require(n_min >= 0, "toe.n_min must be >= 0");
  Require(k_sources >= 1, "toe.k_sources must be >= 1");
  Require(finetune_iter >= 0, "toe.finetune_iter must be >= 0");
  Require(learning_rate > 0.0, "toe.learning_rate must be positive");
  Require(batch_size >= 1, "toe.batch_size must be >= 1");
  Require(max_sweeps >= 1, "toe.max_sweeps must be >= 1");
}

double DeltaAtSweep(const ToeConfig& config, int sweep) {
  // Rounded to a 1e-9 grid so 0.98 - 24 * 0.02 lands on 0.5.
  const double raw = config.delta0 - sweep * config.eta;
  return std::max(config.delta_floor, std::round(raw * 1e9) / 1e9);
}

std::optional<LabelDecision> DecideLabel(std::span<const double> positive,
                                         double delta, LabelingRule rule) {
  Require(!positive.empty(), "labeling needs at least one head");
  const double n = static_cast<double>(positive.size());
  const double mean = std::accumulate(positive.begin(), positive.end(), 0.0) / n;
  switch (rule) {
    case LabelingRule::kAverage: {
      if (mean == 0.5) return std::nullopt;
      const int label = mean > 0.5 ? 1 : 0;
      const double conf = label ? mean : 1.0 - mean;
      if (conf >= delta) return LabelDecision{label, conf};
      return std::nullopt;
    }
    case LabelingRule::kMajority: {
      std::size_t pos = 0, neg = 0;
      for (double p : positive) {
        if (p > 0.5) ++pos;
        else if (p < 0.5) ++neg;
      }
      if (pos == neg) return std::nullopt;
      const int label = pos > neg ? 1 : 0;
      const double conf = static_cast<double>(std::max(pos, neg)) / n;
      if (conf >= delta) return LabelDecision{label, conf};
      return std::nullopt;
    }
    case LabelingRule::kMinimum: {
      if (mean == 0.5) return std::nullopt;
      const int label = mean > 0.5 ? 1 : 0;
      double conf = 1.0;
      for (double p : positive) conf = std::min(conf, label ? p : 1.0 - p);
      if (conf >= delta) return LabelDecision{label, conf};
      return std::nullopt;
    }
  }
  return std::nullopt;
}

Ensemble MakeEnsemble(const SharedPrivateModel& model,
                      const std::vector<std::string>& sources) {
  Require(!sources.empty(), "an ensemble needs at least one source");
  Ensemble e;
  e.sources = sources;
  e.shared = model.shared;
  e.classifier = model.classifier;
  e.private_dim = model.private_dim();
  for (const std::string& s : sources) {
    if (model.privates.find(s) == model.privates.end()) {
      throw ValidationError("'" + s + "' is not a Stage 1 source domain");
    }
    e.privates.push_back(model.Private(s));
  }
  return e;
}

namespace {

constexpr std::size_t kChunk = 256;

Matrix HeadProbabilities(const Ensemble& e, const Matrix& shared_feat,
                         std::size_t head, Batch batch) {
  const Matrix priv = e.privates[head].Forward(batch);
  return LogSoftmax(e.classifier.Forward(ConcatFeatures(shared_feat, priv)))
      .array()
      .exp()
      .matrix();
}

}  // namespace

Matrix HeadPositiveProbabilities(const Ensemble& ensemble, Batch batch) {
  const auto k = static_cast<Eigen::Index>(ensemble.privates.size());
  Matrix out(static_cast<Eigen::Index>(batch.size()), k);
  for (std::size_t start = 0; start < batch.size(); start += kChunk) {
    const Batch chunk = batch.subspan(start, std::min(kChunk, batch.size() - start));
    const Matrix shared_feat = ensemble.shared.Forward(chunk);
    for (Eigen::Index h = 0; h < k; ++h) {
      out.block(static_cast<Eigen::Index>(start), h,
                static_cast<Eigen::Index>(chunk.size()), 1) =
          HeadProbabilities(ensemble, shared_feat, static_cast<std::size_t>(h),
                            chunk)
              .col(1);
    }
  }
  return out;
}

Prediction PredictEnsemble(const Ensemble& ensemble, Batch batch) {
  const Matrix pos = HeadPositiveProbabilities(ensemble, batch);
  Matrix probs(pos.rows(), 2);
  probs.col(1) = pos.rowwise().mean();
  probs.col(0) = (1.0 - probs.col(1).array()).matrix();
  return PredictionFromProbabilities(std::move(probs));
}

double EnsembleAccuracy(const Ensemble& ensemble, const DomainDataset& dataset) {
  Require(dataset.labeled(), "ensemble accuracy needs a labeled dataset, '" +
                                 dataset.name() + "' is unlabeled");
  const auto all = BatchOf(dataset);
  return PredictEnsemble(ensemble, all).Accuracy(all);
}

std::vector<AcceptedLabel> EnsembleLabelBatch(const Ensemble& ensemble,
                                              Batch batch, double delta,
                                              LabelingRule rule) {
  Require(delta >= 0.5 && delta <= 1.0, "labeling threshold must be in [0.5, 1]");
  std::vector<AcceptedLabel> out;
  if (batch.empty()) return out;
  const Matrix pos = HeadPositiveProbabilities(ensemble, batch);
  std::vector<double> row(static_cast<std::size_t>(pos.cols()));
  for (Eigen::Index r = 0; r < pos.rows(); ++r) {
    for (Eigen::Index h = 0; h < pos.cols(); ++h) {
      row[static_cast<std::size_t>(h)] = pos(r, h);
    }
    if (auto d = DecideLabel(row, delta, rule)) {
      out.push_back(AcceptedLabel{static_cast<std::size_t>(r), d->label,
                                  d->confidence});
    }
  }
  return out;
}

bool PseudoLabelSet::PartitionHolds() const {
  if (entries.size() + remaining.size() != pool_size) return false;
  std::vector<char> seen(pool_size, 0);
  auto mark = [&](std::size_t i) {
    if (i >= pool_size || seen[i]) return false;
    seen[i] = 1;
    return true;
  };
  for (const PseudoLabel& e : entries) {
    if (!mark(e.index)) return false;
  }
  for (std::size_t i : remaining) {
    if (!mark(i)) return false;
  }
  return true;
}

void PseudoLabelSet::WriteAuditTsv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "example_id\tsweep\tdelta\tconfidence\tlabel\n";
  for (const PseudoLabel& e : entries) {
    out << e.index << '\t' << e.sweep << '\t' << FormatDouble(e.delta) << '\t'
        << FormatDouble(e.confidence) << '\t' << e.label << '\n';
  }
}

PseudoLabelSet PseudoLabelLoop(
    const Ensemble& ensemble, const DomainDataset& target,
    const ToeConfig& config,
    const std::function<void(const PseudoLabelSet&)>& observer) {
  config.Validate();
  Require(!target.labeled(), "pseudo labeling needs an unlabeled target");
  PseudoLabelSet set;
  set.pool_size = target.size();
  set.remaining.resize(target.size());
  std::iota(set.remaining.begin(), set.remaining.end(), 0);

  for (int sweep = 0; sweep < config.max_sweeps && !set.remaining.empty();
       ++sweep) {
    const double delta = DeltaAtSweep(config, sweep);
    std::vector<const Example*> pool;
    pool.reserve(set.remaining.size());
    for (std::size_t i : set.remaining) pool.push_back(&target[i]);
    const auto accepted =
        EnsembleLabelBatch(ensemble, pool, delta, config.labeling);
    std::vector<char> taken(pool.size(), 0);
    for (const AcceptedLabel& a : accepted) {
      set.entries.push_back(PseudoLabel{set.remaining[a.position], a.label,
                                        a.confidence, sweep, delta});
      taken[a.position] = 1;
    }
    std::vector<std::size_t> rest;
    rest.reserve(pool.size() - accepted.size());
    for (std::size_t p = 0; p < pool.size(); ++p) {
      if (!taken[p]) rest.push_back(set.remaining[p]);
    }
    set.remaining = std::move(rest);
    set.delta_trace.push_back(delta);
    set.gained.push_back(accepted.size());
    if (observer) observer(set);

    const std::size_t n = set.gained.size();
    const bool gaining =
        n < 2 || set.gained[n - 1] + set.gained[n - 2] >=
                     static_cast<std::size_t>(config.n_min);
    const bool above_floor = delta > config.delta_floor;
    const bool go = config.guard == LoopGuard::kEither ? (gaining || above_floor)
                                                       : (gaining && above_floor);
    if (!go) break;
  }
  return set;
}

double FinetuneObjective(const Ensemble& ensemble, Batch batch,
                         std::span<const int> labels, Rng* dropout,
                         FinetuneGradients* grads) {
  Require(!batch.empty(), "finetuning needs a non-empty batch");
  Require(labels.size() == batch.size(), "one pseudo label per example");
  const int sd = ensemble.shared.config().output_dim;
  const Matrix shared_feat = ensemble.shared.Forward(batch, nullptr, dropout);
  if (grads) {
    grads->classifier = ensemble.classifier.params().ZerosLike();
    grads->privates.clear();
  }
  double total = 0.0;
  for (std::size_t h = 0; h < ensemble.privates.size(); ++h) {
    ExtractorTape p_tape;
    const Matrix priv = ensemble.privates[h].Forward(batch, &p_tape, dropout);
    HeadTape c_tape;
    const Matrix logits =
        ensemble.classifier.Forward(ConcatFeatures(shared_feat, priv), &c_tape);
    const LossGrad lg = NllLoss(logits, labels);
    total += lg.loss;
    if (!grads) continue;
    const Matrix d_joined =
        ensemble.classifier.Backward(c_tape, lg.d_scores, grads->classifier);
    grads->privates.push_back(ensemble.privates[h].params().ZerosLike());
    ensemble.privates[h].Backward(p_tape, d_joined.rightCols(d_joined.cols() - sd),
                                  grads->privates.back());
  }
  return total;
}

ToeTrainer::ToeTrainer(Ensemble& ensemble, const ToeConfig& config)
    : ensemble_(ensemble), config_(config), dropout_(config.seed ^ 0x70E) {
  config_.Validate();
  const AdamConfig adam{config_.learning_rate};
  classifier_opt_ = Adam(ensemble_.classifier.params(), adam);
  for (const Extractor& p : ensemble_.privates) {
    private_opt_.emplace_back(p.params(), adam);
  }
}

double ToeTrainer::FinetuneStep(Batch batch, std::span<const int> labels) {
  FinetuneGradients grads;
  const double loss =
      FinetuneObjective(ensemble_, batch, labels, &dropout_, &grads);
  if (!std::isfinite(loss)) throw DivergenceError("J_C2 became non-finite");
  classifier_opt_.Step(ensemble_.classifier.params(), grads.classifier);
  for (std::size_t h = 0; h < grads.privates.size(); ++h) {
    private_opt_[h].Step(ensemble_.privates[h].params(), grads.privates[h]);
  }
  return loss;
}

ToeResult RunToe(const SharedPrivateModel& model, const DomainDataset& target,
                 const std::vector<std::string>& sources,
                 const ToeConfig& config) {
  config.Validate();
  Require(!target.labeled(), "TOE target data must be unlabeled");
  CheckCorpusMatches(model.config.private_, target);
  ToeResult result{MakeEnsemble(model, sources), {}, {}};
  result.labels = PseudoLabelLoop(result.ensemble, target, config);
  if (result.labels.empty()) {
    throw ValidationError(
        "TOE accepted no pseudo labels on '" + target.name() + "' after " +
        std::to_string(result.labels.delta_trace.size()) +
        " sweeps; nothing to finetune on");
  }
  ToeTrainer trainer(result.ensemble, config);
  Rng rng(config.seed + 1);
  std::vector<std::size_t> order(result.labels.entries.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  const std::size_t b = std::min(order.size(),
                                 static_cast<std::size_t>(config.batch_size));
  for (int it = 0; it < config.finetune_iter; ++it) {
    std::vector<const Example*> batch;
    std::vector<int> labels;
    while (batch.size() < b) {
      if (cursor == order.size()) {
        rng.Shuffle(order);
        cursor = 0;
      }
      const PseudoLabel& e = result.labels.entries[order[cursor++]];
      batch.push_back(&target[e.index]);
      labels.push_back(e.label);
    }
    result.losses.push_back(trainer.FinetuneStep(batch, labels));
  }
  return result;
}

ToeResult RunToe(const SharedPrivateModel& model, const DomainDataset& target,
                 const DistanceMatrix& matrix, const std::string& target_name,
                 const ToeConfig& config) {
  config.Validate();
  const int k = std::min<int>(config.k_sources,
                              static_cast<int>(model.sources.size()));
  return RunToe(model, target,
                SelectTopK(matrix, target_name, k, model.sources), config);
}

void SaveEnsemble(const Ensemble& ensemble, const ModelConfig& model_config,
                  const std::filesystem::path& path) {
  Checkpoint ckpt;
  ckpt.kind = "toe_ensemble";
  nlohmann::json meta;
  meta["config"] = nlohmann::json::parse(ModelConfigToJson(model_config));
  meta["sources"] = ensemble.sources;
  ckpt.metadata_json = meta.dump();
  ckpt.AddParameters("shared", ensemble.shared.params());
  ckpt.AddParameters("classifier", ensemble.classifier.params());
  for (std::size_t h = 0; h < ensemble.sources.size(); ++h) {
    ckpt.AddParameters("private/" + ensemble.sources[h],
                       ensemble.privates[h].params());
  }
  ckpt.Save(path);
}

}  // namespace msda
