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

#include "msda/sda.h"

#include <chrono>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "msda/checkpoint.h"

namespace msda {

using json = nlohmann::json;

void SdaConfig::Validate() const {
  Require(lambda2 >= 0.0, "sda.lambda2 must be >= 0");
  Require(lambda_theta >= 0.0, "sda.lambda_theta must be >= 0");
  Require(iter1 >= 0 && iter2 >= 0, "sda iterations must be >= 0");
  Require(n_critic >= 0, "sda.n_critic must be >= 0");
  Require(learning_rate > 0.0, "sda.learning_rate must be positive");
  Require(batch_size >= 1, "sda.batch_size must be >= 1");
  Require(clip > 0.0, "sda.clip must be positive");
  Require(da_hidden >= 1, "sda.da_hidden must be >= 1");
}

SdaState InitSda(const SharedPrivateModel& model, const std::string& j_star,
                 const SdaConfig& config) {
  config.Validate();
  if (model.privates.find(j_star) == model.privates.end()) {
    throw ValidationError("'" + j_star + "' is not a Stage 1 source domain");
  }
  SdaState s;
  s.model_config = model.config;
  s.selected_source = j_star;
  s.shared = model.shared;
  s.discriminator = model.discriminator;
  s.source_ref = CopyParameters(model.Private(j_star).params());
  s.target = model.Private(j_star);
  s.classifier = model.classifier;
  Rng rng(config.seed);
  const int out = config.da_loss == AdversarialLoss::kWasserstein ? 1 : 2;
  s.da = Head(HeadConfig{model.private_dim(), config.da_hidden, out}, rng);
  s.da_loss = config.da_loss;
  s.clip = config.clip;
  return s;
}

namespace {

void CheckFinite(double value, const char* what) {
  if (!std::isfinite(value)) {
    throw DivergenceError(std::string(what) + " became non-finite");
  }
}

struct DaForward {
  double loss = 0.0;
  Matrix d_src, d_tgt;  // dLoss / d(F_t features)
};

// Shared by the D_a step and the F_t adversarial term.
DaForward DaLossOnFeatures(const SdaState& state, const Matrix& f_src,
                           const Matrix& f_tgt, ParameterSet* da_grad) {
  DaForward out;
  ParameterSet scratch;
  ParameterSet& grad = da_grad ? *da_grad : (scratch = state.da.params().ZerosLike());
  if (state.da_loss == AdversarialLoss::kWasserstein) {
    HeadTape ts, tt;
    const Matrix ss = state.da.Forward(f_src, &ts);
    const Matrix st = state.da.Forward(f_tgt, &tt);
    const PairLossGrad lg = CriticGapLoss(ss, st);
    out.loss = lg.loss;
    out.d_src = state.da.Backward(ts, lg.d_a, grad);
    out.d_tgt = state.da.Backward(tt, lg.d_b, grad);
  } else {
    Matrix both(f_src.rows() + f_tgt.rows(), f_src.cols());
    both << f_src, f_tgt;
    std::vector<int> domains(static_cast<std::size_t>(both.rows()), 1);
    std::fill(domains.begin(), domains.begin() + f_src.rows(), 0);
    HeadTape tape;
    const Matrix scores = state.da.Forward(both, &tape);
    const LossGrad lg = NllLoss(scores, domains);
    out.loss = lg.loss;
    const Matrix d = state.da.Backward(tape, lg.d_scores, grad);
    out.d_src = d.topRows(f_src.rows());
    out.d_tgt = d.bottomRows(f_tgt.rows());
  }
  return out;
}

}  // namespace

double DaLoss(const SdaState& state, Batch source, Batch target, Rng* dropout,
              ParameterSet* da_grad) {
  Require(!source.empty() && !target.empty(), "D_a step needs non-empty batches");
  const Matrix fs = state.target.Forward(source, nullptr, dropout);
  const Matrix ft = state.target.Forward(target, nullptr, dropout);
  return DaLossOnFeatures(state, fs, ft, da_grad).loss;
}

SdaLoss SdaObjective(const SdaState& state, Batch labeled_source, Batch source,
                     Batch target, double lambda2, double lambda_theta,
                     Rng* dropout, SdaGradients* grads) {
  Require(!labeled_source.empty(), "SDA main step needs a labeled batch");
  Require(!source.empty() && !target.empty(),
          "SDA main step needs non-empty source and target batches");
  const std::vector<int> labels = LabelsOf(labeled_source);
  const int sd = state.shared.config().output_dim;

  ExtractorTape lab_tape, src_tape, tgt_tape;
  const Matrix shared_feat = state.shared.Forward(labeled_source, nullptr, dropout);
  const Matrix priv_feat = state.target.Forward(labeled_source, &lab_tape, dropout);
  HeadTape c_tape;
  const Matrix logits =
      state.classifier.Forward(ConcatFeatures(shared_feat, priv_feat), &c_tape);
  const LossGrad c_loss = NllLoss(logits, labels);

  const Matrix f_src = state.target.Forward(source, &src_tape, dropout);
  const Matrix f_tgt = state.target.Forward(target, &tgt_tape, dropout);
  const DaForward adv = DaLossOnFeatures(state, f_src, f_tgt, nullptr);

  SdaLoss out;
  out.j_c1 = c_loss.loss;
  out.j_da = adv.loss;
  out.j_theta = ParamL2Distance(state.source_ref, state.target.params());
  out.j_2 = out.j_c1 - lambda2 * out.j_da + lambda_theta * out.j_theta;
  if (!grads) return out;

  grads->target = state.target.params().ZerosLike();
  grads->classifier = state.classifier.params().ZerosLike();
  const Matrix d_joined =
      state.classifier.Backward(c_tape, c_loss.d_scores, grads->classifier);
  state.target.Backward(lab_tape, d_joined.rightCols(d_joined.cols() - sd),
                        grads->target);
  state.target.Backward(src_tape, -lambda2 * adv.d_src, grads->target);
  state.target.Backward(tgt_tape, -lambda2 * adv.d_tgt, grads->target);
  AccumulateL2DistanceGrad(state.source_ref, state.target.params(),
                           lambda_theta, grads->target);
  return out;
}

SdaTrainer::SdaTrainer(SdaState& state, const SdaConfig& config)
    : state_(state), config_(config), dropout_(config.seed ^ 0x5DA) {
  config_.Validate();
  const AdamConfig adam{config_.learning_rate};
  da_opt_ = Adam(state_.da.params(), adam);
  target_opt_ = Adam(state_.target.params(), adam);
  classifier_opt_ = Adam(state_.classifier.params(), adam);
}

double SdaTrainer::DaStep(Batch source, Batch target) {
  ParameterSet grad = state_.da.params().ZerosLike();
  const double loss = DaLoss(state_, source, target, &dropout_, &grad);
  CheckFinite(loss, "J_Da");
  da_opt_.Step(state_.da.params(), grad);
  if (state_.da_loss == AdversarialLoss::kWasserstein) {
    ClipWeights(state_.da.params(), state_.clip);
  }
  return loss;
}

SdaLoss SdaTrainer::MainStep(Batch labeled_source, Batch source, Batch target) {
  SdaGradients grads;
  const SdaLoss loss =
      SdaObjective(state_, labeled_source, source, target, config_.lambda2,
                   config_.lambda_theta, &dropout_, &grads);
  CheckFinite(loss.j_2, "J_2");
  target_opt_.Step(state_.target.params(), grads.target);
  classifier_opt_.Step(state_.classifier.params(), grads.classifier);
  return loss;
}

void SdaLog::WriteCsv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "step,J_Da,J_C1,J_theta,J_2\n";
  for (const SdaStepRecord& r : steps) {
    out << r.step << ',' << r.j_da << ',' << r.j_c1 << ',' << r.j_theta << ','
        << r.j_2 << '\n';
  }
}

SdaResult RunSda(const SharedPrivateModel& model,
                 const DomainDataset& source_train, const DomainDataset& target,
                 const std::string& j_star, const SdaConfig& config) {
  Require(source_train.labeled(),
          "SDA source data for '" + j_star + "' must be labeled");
  Require(!target.labeled(), "SDA target data must be unlabeled");
  CheckCorpusMatches(model.config.private_, source_train);
  CheckCorpusMatches(model.config.private_, target);
  const auto start = std::chrono::steady_clock::now();
  SdaResult result{InitSda(model, j_star, config), {}};
  SdaTrainer trainer(result.state, config);
  Rng seeds(config.seed + 1);
  BatchSampler labeled(source_train, config.batch_size, seeds.NextU64());
  BatchSampler src(source_train, config.batch_size, seeds.NextU64());
  BatchSampler tgt(target, config.batch_size, seeds.NextU64());

  for (int i = 0; i < config.iter1; ++i) {
    trainer.DaStep(src.Next(), tgt.Next());
  }
  for (int i = 0; i < config.iter2; ++i) {
    double j_da = 0.0;
    for (int c = 0; c < config.n_critic; ++c) {
      j_da = trainer.DaStep(src.Next(), tgt.Next());
    }
    const SdaLoss loss = trainer.MainStep(labeled.Next(), src.Next(), tgt.Next());
    result.log.steps.push_back(SdaStepRecord{i + 1, config.n_critic ? j_da : loss.j_da,
                                             loss.j_c1, loss.j_theta, loss.j_2});
  }
  result.log.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  return result;
}

SdaResult RunSda(const SharedPrivateModel& model,
                 const std::vector<DomainDataset>& source_train,
                 const DomainDataset& target, const DistanceMatrix& matrix,
                 const std::string& target_name, const SdaConfig& config) {
  Require(source_train.size() == model.sources.size(),
          "SDA needs training data for every Stage 1 source");
  const std::string j_star = SelectClosest(matrix, target_name, model.sources);
  const int j = model.SourceIndex(j_star);
  return RunSda(model, source_train[static_cast<std::size_t>(j)], target, j_star,
                config);
}

Prediction PredictionFromProbabilities(Matrix probabilities) {
  Prediction p;
  p.labels.resize(static_cast<std::size_t>(probabilities.rows()));
  for (Eigen::Index r = 0; r < probabilities.rows(); ++r) {
    p.labels[static_cast<std::size_t>(r)] =
        probabilities(r, 1) > probabilities(r, 0) ? 1 : 0;
  }
  p.probabilities = std::move(probabilities);
  return p;
}

double Prediction::Accuracy(Batch truth) const {
  Require(truth.size() == labels.size(), "prediction and batch sizes differ");
  Require(!truth.empty(), "accuracy over an empty batch");
  const std::vector<int> y = LabelsOf(truth);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < y.size(); ++i) correct += labels[i] == y[i];
  return static_cast<double>(correct) / static_cast<double>(y.size());
}

Prediction PredictTargetSda(const SdaState& state, Batch batch) {
  return PredictionFromProbabilities(PredictProbabilities(
      state.shared, state.classifier, &state.target,
      state.target.config().output_dim, batch));
}

void WritePredictionsTsv(const Prediction& prediction,
                         const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "example_id\tpredicted_label\tp_positive\n";
  for (std::size_t i = 0; i < prediction.labels.size(); ++i) {
    out << i << '\t' << prediction.labels[i] << '\t'
        << FormatDouble(prediction.probabilities(static_cast<Eigen::Index>(i), 1))
        << '\n';
  }
}

void SaveSdaState(const SdaState& state, const std::filesystem::path& path) {
  Checkpoint ckpt;
  ckpt.kind = "sda_state";
  json meta;
  meta["config"] = json::parse(ModelConfigToJson(state.model_config));
  meta["selected_source"] = state.selected_source;
  meta["discriminator_outputs"] = state.discriminator.config().output_dim;
  meta["da_hidden"] = state.da.config().hidden_dim;
  meta["da_loss"] = AdversarialLossName(state.da_loss);
  meta["clip"] = state.clip;
  ckpt.metadata_json = meta.dump();
  ckpt.AddParameters("shared", state.shared.params());
  ckpt.AddParameters("discriminator", state.discriminator.params());
  ckpt.AddParameters("source_ref", state.source_ref);
  ckpt.AddParameters("target", state.target.params());
  ckpt.AddParameters("classifier", state.classifier.params());
  ckpt.AddParameters("da", state.da.params());
  ckpt.Save(path);
}

SdaState LoadSdaState(const std::filesystem::path& path) {
  const Checkpoint ckpt = Checkpoint::Load(path);
  if (ckpt.kind != "sda_state") {
    throw ValidationError(path.string() + " holds a '" + ckpt.kind +
                          "' checkpoint, not an SDA state");
  }
  const json meta = json::parse(ckpt.metadata_json);
  SdaState s;
  s.model_config = ModelConfigFromJson(meta.at("config").dump());
  const ModelConfig& mc = s.model_config;
  s.selected_source = meta.at("selected_source").get<std::string>();
  s.da_loss = ParseAdversarialLoss(meta.at("da_loss").get<std::string>());
  s.clip = meta.at("clip").get<double>();
  const int pd = mc.private_.output_dim;
  s.shared = RestoreExtractor(mc.shared, ckpt.ExtractParameters("shared"));
  s.discriminator = RestoreHead(
      HeadConfig{mc.shared.output_dim, mc.discriminator_hidden,
                 meta.at("discriminator_outputs").get<int>()},
      ckpt.ExtractParameters("discriminator"));
  s.source_ref =
      RestoreExtractor(mc.private_, ckpt.ExtractParameters("source_ref")).params();
  s.target = RestoreExtractor(mc.private_, ckpt.ExtractParameters("target"));
  s.classifier =
      RestoreHead(HeadConfig{mc.shared.output_dim + pd, mc.classifier_hidden, 2},
                  ckpt.ExtractParameters("classifier"));
  s.da = RestoreHead(
      HeadConfig{pd, meta.at("da_hidden").get<int>(),
                 s.da_loss == AdversarialLoss::kWasserstein ? 1 : 2},
      ckpt.ExtractParameters("da"));
  return s;
}

}  // namespace msda
