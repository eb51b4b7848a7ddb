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

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "msda/checkpoint.h"

namespace msda {

void Stage1Config::Validate() const {
  Require(lambda1 >= 0.0, "stage1: lambda1 must be >= 0");
  Require(learning_rate > 0.0, "stage1: learning_rate must be positive");
  Require(batch_size >= 1, "stage1: batch_size must be >= 1");
  Require(n_critic >= 1, "stage1: n_critic must be >= 1");
  Require(epochs >= 0, "stage1: epochs must be >= 0");
  Require(patience >= 1, "stage1: patience must be >= 1");
}

void TrainLog::WriteMetricsCsv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,domain,split,accuracy,J_C,J_D\n";
  for (const EvalRecord& r : evals) {
    out << r.epoch << ',' << r.domain << ',' << r.split << ',' << r.accuracy
        << ',' << r.j_c << ',' << r.j_d << '\n';
  }
}

void TrainLog::WriteStepsCsv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "step,J_D,J_C,J_1\n";
  for (const StepRecord& r : steps) {
    out << r.step << ',' << r.j_d << ',' << r.j_c << ',' << r.j_1 << '\n';
  }
}

BatchSampler::BatchSampler(const DomainDataset& dataset, int batch_size,
                           std::uint64_t seed)
    : dataset_(&dataset), batch_size_(batch_size), rng_(seed) {
  Require(batch_size >= 1, "batch size must be >= 1");
  order_.resize(dataset.size());
  std::iota(order_.begin(), order_.end(), 0);
  rng_.Shuffle(order_);
}

std::vector<const Example*> BatchSampler::Next() {
  // A dataset smaller than the batch yields one full pass per batch.
  const std::size_t want =
      std::min(order_.size(), static_cast<std::size_t>(batch_size_));
  std::vector<const Example*> batch;
  batch.reserve(want);
  while (batch.size() < want) {
    if (cursor_ == order_.size()) {
      rng_.Shuffle(order_);
      cursor_ = 0;
    }
    batch.push_back(&(*dataset_)[order_[cursor_++]]);
  }
  return batch;
}

std::vector<int> LabelsOf(Batch batch) {
  std::vector<int> labels;
  labels.reserve(batch.size());
  for (const Example* ex : batch) {
    Require(ex->label.has_value(), "batch example lacks a sentiment label");
    labels.push_back(*ex->label);
  }
  return labels;
}

namespace {

Matrix StackRows(const std::vector<Matrix>& parts) {
  Eigen::Index rows = 0;
  for (const Matrix& m : parts) rows += m.rows();
  Matrix out(rows, parts.front().cols());
  Eigen::Index r = 0;
  for (const Matrix& m : parts) {
    out.middleRows(r, m.rows()) = m;
    r += m.rows();
  }
  return out;
}

// D's loss and d(loss)/d(scores) for stacked features.
LossGrad DomainLoss(AdversarialLoss kind, const Matrix& scores,
                    const std::vector<int>& domains) {
  return kind == AdversarialLoss::kNll ? NllLoss(scores, domains)
                                       : MultiCriticLoss(scores, domains);
}

void CheckFinite(double value, const char* what) {
  if (!std::isfinite(value)) {
    throw DivergenceError(std::string(what) + " became non-finite");
  }
}

}  // namespace

double DiscriminatorLoss(const SharedPrivateModel& model,
                         const std::vector<Batch>& per_domain, Rng* dropout,
                         ParameterSet* d_grad) {
  Require(per_domain.size() == model.discriminator_domains.size(),
          "discriminator step needs one batch per discriminator domain");
  std::vector<Matrix> feats;
  std::vector<int> domains;
  for (std::size_t d = 0; d < per_domain.size(); ++d) {
    Require(!per_domain[d].empty(), "discriminator step: empty batch for '" +
                                        model.discriminator_domains[d] + "'");
    feats.push_back(model.shared.Forward(per_domain[d], nullptr, dropout));
    domains.insert(domains.end(), per_domain[d].size(), static_cast<int>(d));
  }
  HeadTape tape;
  const Matrix scores = model.discriminator.Forward(StackRows(feats), &tape);
  const LossGrad lg = DomainLoss(model.config.d_loss, scores, domains);
  if (d_grad) model.discriminator.Backward(tape, lg.d_scores, *d_grad);
  return lg.loss;
}

MainLoss MainObjective(const SharedPrivateModel& model,
                       const std::vector<Batch>& labeled, Batch unlabeled,
                       double lambda1, Rng* dropout, MainGradients* grads) {
  Require(labeled.size() == model.sources.size(),
          "main step needs one labeled batch per source");
  const int sd = model.shared_dim();
  const int pd = model.private_dim();

  std::vector<ExtractorTape> shared_tapes(labeled.size() + 1);
  std::vector<ExtractorTape> private_tapes(labeled.size());
  std::vector<Matrix> shared_feats, joined;
  std::vector<int> labels, domains;
  for (std::size_t j = 0; j < labeled.size(); ++j) {
    Require(!labeled[j].empty(),
            "main step: empty batch for '" + model.sources[j] + "'");
    const std::vector<int> y = LabelsOf(labeled[j]);
    labels.insert(labels.end(), y.begin(), y.end());
    Matrix fs = model.shared.Forward(labeled[j], &shared_tapes[j], dropout);
    Matrix fp = model.Private(model.sources[j])
                    .Forward(labeled[j], &private_tapes[j], dropout);
    joined.push_back(ConcatFeatures(fs, fp));
    shared_feats.push_back(std::move(fs));
    domains.insert(domains.end(), labeled[j].size(), static_cast<int>(j));
  }
  const bool with_target = !unlabeled.empty();
  if (with_target) {
    Require(model.discriminator_domains.size() == model.sources.size() + 1,
            "target batch given but D was not built with a target class");
    shared_feats.push_back(
        model.shared.Forward(unlabeled, &shared_tapes.back(), dropout));
    domains.insert(domains.end(), unlabeled.size(),
                   static_cast<int>(model.sources.size()));
  }

  MainLoss out;
  HeadTape c_tape;
  const Matrix logits = model.classifier.Forward(StackRows(joined), &c_tape);
  const LossGrad c_loss = NllLoss(logits, labels);
  out.j_c = c_loss.loss;

  HeadTape d_tape;
  const Matrix scores =
      model.discriminator.Forward(StackRows(shared_feats), &d_tape);
  const LossGrad d_loss = DomainLoss(model.config.d_loss, scores, domains);
  out.j_d = d_loss.loss;
  out.j_1 = out.j_c - lambda1 * out.j_d;
  if (!grads) return out;

  grads->shared = model.shared.params().ZerosLike();
  grads->classifier = model.classifier.params().ZerosLike();
  grads->privates.clear();
  const Matrix d_joined =
      model.classifier.Backward(c_tape, c_loss.d_scores, grads->classifier);
  ParameterSet frozen_d = model.discriminator.params().ZerosLike();
  const Matrix d_adv =
      model.discriminator.Backward(d_tape, -lambda1 * d_loss.d_scores, frozen_d);

  Eigen::Index row = 0;
  for (std::size_t j = 0; j < labeled.size(); ++j) {
    const auto n = static_cast<Eigen::Index>(labeled[j].size());
    const Matrix d_fs = d_joined.block(row, 0, n, sd) + d_adv.middleRows(row, n);
    const Matrix d_fp = d_joined.block(row, sd, n, pd);
    model.shared.Backward(shared_tapes[j], d_fs, grads->shared);
    const Extractor& priv = model.Private(model.sources[j]);
    auto [it, _] =
        grads->privates.emplace(model.sources[j], priv.params().ZerosLike());
    priv.Backward(private_tapes[j], d_fp, it->second);
    row += n;
  }
  if (with_target) {
    const auto n = static_cast<Eigen::Index>(unlabeled.size());
    model.shared.Backward(shared_tapes.back(), d_adv.middleRows(row, n),
                          grads->shared);
  }
  return out;
}

Stage1Trainer::Stage1Trainer(SharedPrivateModel& model,
                             const Stage1Config& config)
    : model_(model), config_(config), dropout_(config.seed ^ 0xD50F) {
  config_.Validate();
  const AdamConfig adam{config_.learning_rate};
  shared_opt_ = Adam(model_.shared.params(), adam);
  classifier_opt_ = Adam(model_.classifier.params(), adam);
  discriminator_opt_ = Adam(model_.discriminator.params(), adam);
  for (const std::string& s : model_.sources) {
    private_opt_.emplace(s, Adam(model_.Private(s).params(), adam));
  }
}

double Stage1Trainer::DiscriminatorStep(const std::vector<Batch>& per_domain) {
  ParameterSet grad = model_.discriminator.params().ZerosLike();
  const double loss = DiscriminatorLoss(model_, per_domain, &dropout_, &grad);
  CheckFinite(loss, "J_D");
  discriminator_opt_.Step(model_.discriminator.params(), grad);
  if (model_.config.d_loss == AdversarialLoss::kWasserstein) {
    ClipWeights(model_.discriminator.params(), model_.config.clip);
  }
  return loss;
}

MainLoss Stage1Trainer::MainStep(const std::vector<Batch>& labeled,
                                 Batch unlabeled) {
  MainGradients grads;
  const MainLoss loss = MainObjective(model_, labeled, unlabeled,
                                      config_.lambda1, &dropout_, &grads);
  CheckFinite(loss.j_c, "J_C");
  shared_opt_.Step(model_.shared.params(), grads.shared);
  classifier_opt_.Step(model_.classifier.params(), grads.classifier);
  for (auto& [name, g] : grads.privates) {
    private_opt_.at(name).Step(model_.Private(name).params(), g);
  }
  return loss;
}

double EvaluateAccuracy(const Extractor& shared, const Head& classifier,
                        const Extractor* priv, int private_dim,
                        const DomainDataset& dataset) {
  Require(dataset.labeled(),
          "evaluate_accuracy needs a labeled dataset, '" + dataset.name() +
              "' is unlabeled");
  const auto all = BatchOf(dataset);
  constexpr std::size_t kChunk = 256;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < all.size(); start += kChunk) {
    const Batch chunk =
        Batch(all).subspan(start, std::min(kChunk, all.size() - start));
    const Matrix probs =
        PredictProbabilities(shared, classifier, priv, private_dim, chunk);
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
      const int predicted = probs(r, 1) > probs(r, 0) ? 1 : 0;
      if (predicted == *chunk[static_cast<std::size_t>(r)]->label) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(all.size());
}

double EvaluateAccuracy(const SharedPrivateModel& model,
                        const DomainDataset& dataset, const Extractor* priv) {
  return EvaluateAccuracy(model.shared, model.classifier, priv,
                          model.private_dim(), dataset);
}

PretrainResult Pretrain(SharedPrivateModel model, const Stage1Data& data,
                        const Stage1Config& config,
                        const std::filesystem::path& checkpoint_dir) {
  config.Validate();
  Require(model.sources.size() >= 2, "stage 1 needs at least two sources");
  Require(data.source_train.size() == model.sources.size() &&
              data.source_dev.size() == model.sources.size(),
          "stage 1 needs train and dev data for every source");
  for (std::size_t j = 0; j < model.sources.size(); ++j) {
    Require(data.source_train[j].labeled() && data.source_dev[j].labeled(),
            "source '" + model.sources[j] + "' must be labeled");
    CheckCorpusMatches(model.config.shared, data.source_train[j]);
  }
  const bool with_target = config.include_target_in_D;
  if (with_target) {
    Require(data.target_unlabeled.has_value(),
            "include_target_in_D needs unlabeled target data");
    Require(!data.target_unlabeled->labeled(),
            "target data must reach stage 1 without labels");
    Require(model.discriminator_domains.size() == model.sources.size() + 1,
            "model's discriminator has no target class");
  } else {
    Require(model.discriminator_domains.size() == model.sources.size(),
            "model's discriminator has a target class but target is excluded");
  }

  PretrainResult result{model, {}};
  if (config.epochs == 0) return result;

  const auto start = std::chrono::steady_clock::now();
  Stage1Trainer trainer(model, config);
  Rng seeds(config.seed);
  std::vector<BatchSampler> samplers;
  std::size_t total = 0;
  for (const DomainDataset& ds : data.source_train) {
    samplers.emplace_back(ds, config.batch_size, seeds.NextU64());
    total += ds.size();
  }
  if (with_target) {
    samplers.emplace_back(*data.target_unlabeled, config.batch_size,
                          seeds.NextU64());
  }
  const std::size_t n_sources = model.sources.size();
  const long iterations = std::max<long>(
      1, static_cast<long>(std::ceil(static_cast<double>(total) /
                                     static_cast<double>(n_sources) /
                                     config.batch_size)));

  double best = -1.0;
  int stale = 0;
  long step = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    double sum_jc = 0.0, sum_jd = 0.0;
    for (long it = 0; it < iterations; ++it) {
      double jd = 0.0;
      for (int c = 0; c < config.n_critic; ++c) {
        std::vector<std::vector<const Example*>> owned;
        for (auto& s : samplers) owned.push_back(s.Next());
        jd = trainer.DiscriminatorStep({owned.begin(), owned.end()});
      }
      std::vector<std::vector<const Example*>> owned;
      for (std::size_t j = 0; j < n_sources; ++j) {
        owned.push_back(samplers[j].Next());
      }
      std::vector<const Example*> target_batch;
      if (with_target) target_batch = samplers.back().Next();
      const MainLoss loss = trainer.MainStep({owned.begin(), owned.end()},
                                             target_batch);
      result.log.steps.push_back(StepRecord{++step, jd, loss.j_c, loss.j_1});
      sum_jc += loss.j_c;
      sum_jd += jd;
    }
    const double mean_jc = sum_jc / static_cast<double>(iterations);
    const double mean_jd = sum_jd / static_cast<double>(iterations);
    double mean_acc = 0.0;
    for (std::size_t j = 0; j < n_sources; ++j) {
      const std::string& name = model.sources[j];
      const double acc =
          EvaluateAccuracy(model, data.source_dev[j], &model.Private(name));
      mean_acc += acc / static_cast<double>(n_sources);
      result.log.evals.push_back(
          EvalRecord{epoch, name, "dev", acc, mean_jc, mean_jd});
    }
    if (!checkpoint_dir.empty() && config.keep_epoch_checkpoints) {
      SaveModel(model, checkpoint_dir / ("stage1_epoch" +
                                         std::to_string(epoch) + ".ckpt"));
    }
    if (mean_acc > best) {
      best = mean_acc;
      stale = 0;
      result.model = model;
      if (!checkpoint_dir.empty()) {
        SaveModel(model, checkpoint_dir / "stage1_best.ckpt");
      }
    } else if (++stale >= config.patience) {
      break;
    }
  }
  result.log.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  return result;
}

}  // namespace msda
