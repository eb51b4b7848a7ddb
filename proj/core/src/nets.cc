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

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace msda {

namespace {

Matrix UniformMatrix(int rows, int cols, double bound, Rng& rng) {
  Matrix m(rows, cols);
  // Column-major fill order is part of the determinism contract.
  for (int c = 0; c < cols; ++c) {
    for (int r = 0; r < rows; ++r) m(r, c) = rng.Uniform(-bound, bound);
  }
  return m;
}

Matrix Relu(const Matrix& m) { return m.cwiseMax(0.0); }

Matrix ReluMask(const Matrix& pre) {
  return (pre.array() > 0.0).cast<double>().matrix();
}

void ApplyDropout(Matrix& out, double rate, Rng& rng, Matrix& mask) {
  mask.resize(out.rows(), out.cols());
  const double keep = 1.0 - rate;
  for (Eigen::Index c = 0; c < out.cols(); ++c) {
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
      mask(r, c) = rng.Bernoulli(keep) ? 1.0 / keep : 0.0;
    }
  }
  out.array() *= mask.array();
}

std::string ConvWeightName(int width) {
  return "conv" + std::to_string(width) + ".W";
}
std::string ConvBiasName(int width) {
  return "conv" + std::to_string(width) + ".b";
}

}  // namespace

std::vector<const Example*> BatchOf(const DomainDataset& dataset) {
  std::vector<const Example*> batch;
  batch.reserve(dataset.size());
  for (const Example& ex : dataset.examples()) batch.push_back(&ex);
  return batch;
}

// ---------------------------------------------------------------------------
// ParameterSet

void ParameterSet::Add(std::string name, Matrix value) {
  Require(!Has(name), "duplicate parameter '" + name + "'");
  entries_.push_back(Entry{std::move(name), std::move(value)});
}

bool ParameterSet::Has(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const Entry& e) { return e.name == name; });
}

Matrix& ParameterSet::at(std::string_view name) {
  for (Entry& e : entries_) {
    if (e.name == name) return e.value;
  }
  throw ValidationError("no parameter named '" + std::string(name) + "'");
}

const Matrix& ParameterSet::at(std::string_view name) const {
  return const_cast<ParameterSet*>(this)->at(name);
}

std::size_t ParameterSet::NumElements() const {
  std::size_t n = 0;
  for (const Entry& e : entries_) n += static_cast<std::size_t>(e.value.size());
  return n;
}

Vector ParameterSet::Flatten() const {
  Vector flat(static_cast<Eigen::Index>(NumElements()));
  Eigen::Index offset = 0;
  for (const Entry& e : entries_) {
    flat.segment(offset, e.value.size()) =
        Eigen::Map<const Vector>(e.value.data(), e.value.size());
    offset += e.value.size();
  }
  return flat;
}

void ParameterSet::Unflatten(const Vector& flat) {
  Require(flat.size() == static_cast<Eigen::Index>(NumElements()),
          "unflatten: size mismatch");
  Eigen::Index offset = 0;
  for (Entry& e : entries_) {
    Eigen::Map<Vector>(e.value.data(), e.value.size()) =
        flat.segment(offset, e.value.size());
    offset += e.value.size();
  }
}

ParameterSet ParameterSet::ZerosLike() const {
  ParameterSet out;
  for (const Entry& e : entries_) {
    out.entries_.push_back(
        Entry{e.name, Matrix::Zero(e.value.rows(), e.value.cols())});
  }
  return out;
}

void ParameterSet::SetZero() {
  for (Entry& e : entries_) e.value.setZero();
}

bool ParameterSet::SameShape(const ParameterSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const Entry& a = entries_[i];
    const Entry& b = other.entries_[i];
    if (a.name != b.name || a.value.rows() != b.value.rows() ||
        a.value.cols() != b.value.cols()) {
      return false;
    }
  }
  return true;
}

void ParameterSet::AddScaled(const ParameterSet& other, double scale) {
  Require(SameShape(other), "AddScaled: shape mismatch");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    entries_[i].value += scale * other.entries_[i].value;
  }
}

ParameterSet CopyParameters(const ParameterSet& src) { return src; }

double ParamL2Distance(const ParameterSet& a, const ParameterSet& b) {
  Require(a.SameShape(b), "param_l2_distance: shape mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < a.entries().size(); ++i) {
    total += (a.entries()[i].value - b.entries()[i].value).squaredNorm();
  }
  return total;
}

void AccumulateL2DistanceGrad(const ParameterSet& reference,
                              const ParameterSet& b, double scale,
                              ParameterSet& grad) {
  Require(reference.SameShape(b) && grad.SameShape(b),
          "l2 gradient: shape mismatch");
  for (std::size_t i = 0; i < b.entries().size(); ++i) {
    grad.entries()[i].value +=
        (2.0 * scale) *
        (b.entries()[i].value - reference.entries()[i].value);
  }
}

void ClipWeights(ParameterSet& params, double c) {
  Require(c > 0.0, "clip constant must be positive");
  for (auto& e : params.entries()) {
    e.value = e.value.cwiseMax(-c).cwiseMin(c);
  }
}

// ---------------------------------------------------------------------------
// Configs

const char* EncoderKindName(EncoderKind kind) {
  return kind == EncoderKind::kFeedforward ? "feedforward" : "convolutional";
}

EncoderKind ParseEncoderKind(std::string_view name) {
  if (name == "feedforward" || name == "mlp") return EncoderKind::kFeedforward;
  if (name == "convolutional" || name == "cnn") {
    return EncoderKind::kConvolutional;
  }
  throw ValidationError("unknown encoder kind '" + std::string(name) + "'");
}

void EncoderConfig::Validate() const {
  Require(output_dim > 0, "encoder output_dim must be positive");
  Require(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0,1)");
  if (kind == EncoderKind::kFeedforward) {
    Require(input_dim > 0, "feedforward encoder needs input_dim > 0");
    Require(hidden_dim > 0, "feedforward encoder needs hidden_dim > 0");
  } else {
    Require(vocab_size > 2, "convolutional encoder needs vocab_size > 2");
    Require(embedding_dim > 0, "convolutional encoder needs embedding_dim > 0");
    Require(!kernel_widths.empty(), "convolutional encoder needs kernels");
    for (int w : kernel_widths) Require(w > 0, "kernel widths must be positive");
    Require(output_dim >= static_cast<int>(kernel_widths.size()),
            "convolutional output_dim must cover every kernel width");
  }
}

std::vector<int> EncoderConfig::ChannelsPerWidth() const {
  const int n = static_cast<int>(kernel_widths.size());
  std::vector<int> channels(n, output_dim / n);
  for (int i = 0; i < output_dim % n; ++i) ++channels[i];
  return channels;
}

void HeadConfig::Validate() const {
  Require(input_dim > 0 && hidden_dim > 0 && output_dim > 0,
          "head dimensions must be positive");
}

const char* AdversarialLossName(AdversarialLoss loss) {
  return loss == AdversarialLoss::kNll ? "nll" : "wasserstein";
}

AdversarialLoss ParseAdversarialLoss(std::string_view name) {
  if (name == "nll") return AdversarialLoss::kNll;
  if (name == "wasserstein" || name == "critic") {
    return AdversarialLoss::kWasserstein;
  }
  throw ValidationError("unknown adversarial loss '" + std::string(name) + "'");
}

void ModelConfig::Validate() const {
  shared.Validate();
  private_.Validate();
  Require(shared.kind == private_.kind,
          "shared and private extractors must read the same corpus mode");
  Require(classifier_hidden > 0 && discriminator_hidden > 0,
          "head hidden widths must be positive");
  Require(clip > 0.0, "clip constant must be positive");
}

ModelConfig ModelConfig::Feedforward(int input_dim) {
  ModelConfig c;
  c.shared.kind = c.private_.kind = EncoderKind::kFeedforward;
  c.shared.input_dim = c.private_.input_dim = input_dim;
  c.shared.output_dim = 128;
  c.private_.output_dim = 64;
  c.shared.hidden_dim = 256;
  c.private_.hidden_dim = 128;
  return c;
}

ModelConfig ModelConfig::Convolutional(int vocab_size) {
  ModelConfig c;
  c.shared.kind = c.private_.kind = EncoderKind::kConvolutional;
  c.shared.vocab_size = c.private_.vocab_size = vocab_size;
  c.shared.output_dim = 128;
  c.private_.output_dim = 64;
  return c;
}

// ---------------------------------------------------------------------------
// Extractor

Extractor::Extractor(const EncoderConfig& config, Rng& rng) : config_(config) {
  config_.Validate();
  if (config_.kind == EncoderKind::kFeedforward) {
    const double b1 = 1.0 / std::sqrt(static_cast<double>(config_.input_dim));
    const double b2 = 1.0 / std::sqrt(static_cast<double>(config_.hidden_dim));
    params_.Add("W1", UniformMatrix(config_.hidden_dim, config_.input_dim, b1, rng));
    params_.Add("b1", Matrix::Zero(1, config_.hidden_dim));
    params_.Add("W2", UniformMatrix(config_.output_dim, config_.hidden_dim, b2, rng));
    params_.Add("b2", Matrix::Zero(1, config_.output_dim));
  } else {
    const double be = 1.0 / std::sqrt(static_cast<double>(config_.embedding_dim));
    Matrix table = UniformMatrix(config_.embedding_dim, config_.vocab_size, be, rng);
    table.col(Vocabulary::kPad).setZero();
    params_.Add("embedding", std::move(table));
    const std::vector<int> channels = config_.ChannelsPerWidth();
    for (std::size_t k = 0; k < config_.kernel_widths.size(); ++k) {
      const int w = config_.kernel_widths[k];
      const int fan_in = w * config_.embedding_dim;
      params_.Add(ConvWeightName(w),
                  UniformMatrix(channels[k], fan_in,
                                1.0 / std::sqrt(static_cast<double>(fan_in)), rng));
      params_.Add(ConvBiasName(w), Matrix::Zero(1, channels[k]));
    }
  }
}

Matrix Extractor::Forward(Batch batch, ExtractorTape* tape,
                          Rng* dropout_rng) const {
  Require(!batch.empty(), "extractor forward: empty batch");
  for (const Example* ex : batch) {
    Require(ex->mode() == config_.corpus_mode(),
            std::string("extractor expects ") +
                CorpusModeName(config_.corpus_mode()) + " examples, got " +
                CorpusModeName(ex->mode()));
  }
  Matrix out = config_.kind == EncoderKind::kFeedforward
                   ? ForwardFeedforward(batch, tape)
                   : ForwardConvolutional(batch, tape);
  if (tape) {
    tape->batch.assign(batch.begin(), batch.end());
    tape->dropout_mask.resize(0, 0);
  }
  if (dropout_rng && config_.dropout > 0.0) {
    Matrix mask;
    ApplyDropout(out, config_.dropout, *dropout_rng, mask);
    if (tape) tape->dropout_mask = std::move(mask);
  }
  return out;
}

Matrix Extractor::ForwardFeedforward(Batch batch, ExtractorTape* tape) const {
  const Matrix& w1 = params_.at("W1");
  const Matrix& b1 = params_.at("b1");
  const Matrix& w2 = params_.at("W2");
  const Matrix& b2 = params_.at("b2");
  const auto n = static_cast<Eigen::Index>(batch.size());
  Matrix pre1 = b1.replicate(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& sv = std::get<SparseVector>(batch[i]->content);
    Require(sv.dim == static_cast<std::uint32_t>(config_.input_dim),
            "feature dimension " + std::to_string(sv.dim) +
                " does not match encoder input_dim " +
                std::to_string(config_.input_dim));
    for (std::size_t k = 0; k < sv.nnz(); ++k) {
      pre1.row(i).noalias() += sv.values[k] * w1.col(sv.indices[k]).transpose();
    }
  }
  Matrix act1 = Relu(pre1);
  Matrix pre2 = act1 * w2.transpose();
  pre2.rowwise() += b2.row(0);
  Matrix out = Relu(pre2);
  if (tape) {
    tape->pre1 = std::move(pre1);
    tape->act1 = std::move(act1);
    tape->pre2 = std::move(pre2);
  }
  return out;
}

void Extractor::Backward(const ExtractorTape& tape, const Matrix& d_out,
                         ParameterSet& grad) const {
  Require(d_out.rows() == static_cast<Eigen::Index>(tape.batch.size()) &&
              d_out.cols() == config_.output_dim,
          "extractor backward: gradient shape mismatch");
  Matrix d = d_out;
  if (tape.dropout_mask.size() > 0) d.array() *= tape.dropout_mask.array();
  if (config_.kind == EncoderKind::kFeedforward) {
    BackwardFeedforward(tape, d, grad);
  } else {
    BackwardConvolutional(tape, d, grad);
  }
}

void Extractor::BackwardFeedforward(const ExtractorTape& tape,
                                    const Matrix& d_out,
                                    ParameterSet& grad) const {
  const Matrix& w2 = params_.at("W2");
  Matrix d_pre2 = d_out.cwiseProduct(ReluMask(tape.pre2));
  grad.at("W2").noalias() += d_pre2.transpose() * tape.act1;
  grad.at("b2") += d_pre2.colwise().sum();
  Matrix d_pre1 = (d_pre2 * w2).cwiseProduct(ReluMask(tape.pre1));
  grad.at("b1") += d_pre1.colwise().sum();
  Matrix& g_w1 = grad.at("W1");
  for (std::size_t i = 0; i < tape.batch.size(); ++i) {
    const auto& sv = std::get<SparseVector>(tape.batch[i]->content);
    const auto row = static_cast<Eigen::Index>(i);
    for (std::size_t k = 0; k < sv.nnz(); ++k) {
      g_w1.col(sv.indices[k]).noalias() +=
          sv.values[k] * d_pre1.row(row).transpose();
    }
  }
}

Matrix Extractor::ForwardConvolutional(Batch batch, ExtractorTape* tape) const {
  const Matrix& table = params_.at("embedding");
  const int emb = config_.embedding_dim;
  const int max_width =
      *std::max_element(config_.kernel_widths.begin(), config_.kernel_widths.end());
  const std::vector<int> channels = config_.ChannelsPerWidth();
  Matrix out(static_cast<Eigen::Index>(batch.size()), config_.output_dim);
  if (tape) tape->conv.assign(batch.size(), {});

  for (std::size_t i = 0; i < batch.size(); ++i) {
    std::vector<std::int32_t> ids = std::get<TokenIds>(batch[i]->content).ids;
    for (std::int32_t id : ids) {
      Require(id >= 0 && id < config_.vocab_size,
              "token index " + std::to_string(id) + " outside vocabulary");
    }
    if (static_cast<int>(ids.size()) < max_width) {
      ids.resize(static_cast<std::size_t>(max_width), Vocabulary::kPad);
    }
    const int length = static_cast<int>(ids.size());
    int offset = 0;
    for (std::size_t k = 0; k < config_.kernel_widths.size(); ++k) {
      const int w = config_.kernel_widths[k];
      const int positions = length - w + 1;
      Matrix window(w * emb, positions);
      for (int p = 0; p < positions; ++p) {
        for (int j = 0; j < w; ++j) {
          // PAD reads as a fixed zero vector and never receives gradient.
          const std::int32_t id = ids[p + j];
          if (id == Vocabulary::kPad) {
            window.block(j * emb, p, emb, 1).setZero();
          } else {
            window.block(j * emb, p, emb, 1) = table.col(id);
          }
        }
      }
      Matrix z = params_.at(ConvWeightName(w)) * window;
      z.colwise() += params_.at(ConvBiasName(w)).row(0).transpose();
      Vector pooled(channels[k]);
      std::vector<int> argmax(static_cast<std::size_t>(channels[k]));
      for (int c = 0; c < channels[k]; ++c) {
        Eigen::Index best;
        pooled(c) = z.row(c).maxCoeff(&best);
        argmax[c] = static_cast<int>(best);
      }
      out.row(static_cast<Eigen::Index>(i)).segment(offset, channels[k]) =
          pooled.cwiseMax(0.0).transpose();
      offset += channels[k];
      if (tape) {
        auto& rec = tape->conv[i];
        rec.windows.push_back(std::move(window));
        rec.argmax.push_back(std::move(argmax));
        rec.pooled_pre.push_back(std::move(pooled));
      }
    }
    if (tape) tape->conv[i].ids = std::move(ids);
  }
  return out;
}

void Extractor::BackwardConvolutional(const ExtractorTape& tape,
                                      const Matrix& d_out,
                                      ParameterSet& grad) const {
  const int emb = config_.embedding_dim;
  const std::vector<int> channels = config_.ChannelsPerWidth();
  Matrix& g_table = grad.at("embedding");
  for (std::size_t i = 0; i < tape.conv.size(); ++i) {
    const auto& rec = tape.conv[i];
    int offset = 0;
    for (std::size_t k = 0; k < config_.kernel_widths.size(); ++k) {
      const int w = config_.kernel_widths[k];
      const Matrix& kernel = params_.at(ConvWeightName(w));
      Matrix& g_kernel = grad.at(ConvWeightName(w));
      Matrix& g_bias = grad.at(ConvBiasName(w));
      for (int c = 0; c < channels[k]; ++c) {
        if (rec.pooled_pre[k](c) <= 0.0) continue;
        const double g = d_out(static_cast<Eigen::Index>(i), offset + c);
        if (g == 0.0) continue;
        const int p = rec.argmax[k][static_cast<std::size_t>(c)];
        g_kernel.row(c).noalias() += g * rec.windows[k].col(p).transpose();
        g_bias(0, c) += g;
        for (int j = 0; j < w; ++j) {
          const std::int32_t id = rec.ids[static_cast<std::size_t>(p + j)];
          if (id == Vocabulary::kPad) continue;
          g_table.col(id).noalias() +=
              g * kernel.row(c).segment(j * emb, emb).transpose();
        }
      }
      offset += channels[k];
    }
  }
}

std::size_t Extractor::LoadEmbeddings(const std::filesystem::path& path,
                                      const Vocabulary& vocab) {
  Require(config_.kind == EncoderKind::kConvolutional,
          "only convolutional extractors have an embedding table");
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  Matrix& table = params_.at("embedding");
  std::string line;
  std::size_t line_no = 0;
  std::size_t replaced = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string token;
    if (!(fields >> token)) continue;
    std::vector<double> values;
    double v;
    while (fields >> v) values.push_back(v);
    if (line_no == 1 && values.size() == 1) continue;  // word2vec header
    if (static_cast<int>(values.size()) != config_.embedding_dim) {
      throw ParseError("embedding has " + std::to_string(values.size()) +
                           " values, expected " +
                           std::to_string(config_.embedding_dim),
                       line_no);
    }
    const std::int32_t idx = vocab.Index(token);
    if (idx == Vocabulary::kUnk || idx == Vocabulary::kPad ||
        idx >= config_.vocab_size) {
      continue;
    }
    for (int d = 0; d < config_.embedding_dim; ++d) table(d, idx) = values[d];
    ++replaced;
  }
  return replaced;
}

// ---------------------------------------------------------------------------
// Head

Head::Head(const HeadConfig& config, Rng& rng) : config_(config) {
  config_.Validate();
  params_.Add("W1", UniformMatrix(config_.hidden_dim, config_.input_dim,
                                  1.0 / std::sqrt(static_cast<double>(config_.input_dim)), rng));
  params_.Add("b1", Matrix::Zero(1, config_.hidden_dim));
  params_.Add("W2", UniformMatrix(config_.output_dim, config_.hidden_dim,
                                  1.0 / std::sqrt(static_cast<double>(config_.hidden_dim)), rng));
  params_.Add("b2", Matrix::Zero(1, config_.output_dim));
}

Matrix Head::Forward(const Matrix& input, HeadTape* tape) const {
  Require(input.rows() > 0, "head forward: empty batch");
  Require(input.cols() == config_.input_dim,
          "head expects input width " + std::to_string(config_.input_dim) +
              ", got " + std::to_string(input.cols()));
  Matrix pre1 = input * params_.at("W1").transpose();
  pre1.rowwise() += params_.at("b1").row(0);
  Matrix act1 = Relu(pre1);
  Matrix out = act1 * params_.at("W2").transpose();
  out.rowwise() += params_.at("b2").row(0);
  if (tape) {
    tape->input = input;
    tape->pre1 = std::move(pre1);
    tape->act1 = std::move(act1);
  }
  return out;
}

Matrix Head::Backward(const HeadTape& tape, const Matrix& d_out,
                      ParameterSet& grad) const {
  Require(d_out.rows() == tape.input.rows() &&
              d_out.cols() == config_.output_dim,
          "head backward: gradient shape mismatch");
  grad.at("W2").noalias() += d_out.transpose() * tape.act1;
  grad.at("b2") += d_out.colwise().sum();
  Matrix d_pre1 =
      (d_out * params_.at("W2")).cwiseProduct(ReluMask(tape.pre1));
  grad.at("W1").noalias() += d_pre1.transpose() * tape.input;
  grad.at("b1") += d_pre1.colwise().sum();
  return d_pre1 * params_.at("W1");
}

// ---------------------------------------------------------------------------
// Losses and forward contracts

Matrix LogSoftmax(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    const double lse =
        m + std::log((logits.row(r).array() - m).exp().sum());
    out.row(r) = logits.row(r).array() - lse;
  }
  return out;
}

LossGrad NllLoss(const Matrix& logits, std::span<const int> labels) {
  Require(logits.rows() > 0, "nll: empty batch");
  Require(static_cast<std::size_t>(logits.rows()) == labels.size(),
          "nll: label count mismatch");
  const Matrix logp = LogSoftmax(logits);
  LossGrad out;
  out.d_scores = logp.array().exp().matrix();
  const double n = static_cast<double>(logits.rows());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    Require(y >= 0 && y < logits.cols(), "nll: label out of range");
    out.loss -= logp(r, y);
    out.d_scores(r, y) -= 1.0;
  }
  out.loss /= n;
  out.d_scores /= n;
  return out;
}

PairLossGrad CriticGapLoss(const Matrix& scores_a, const Matrix& scores_b) {
  Require(scores_a.rows() > 0 && scores_b.rows() > 0, "critic: empty batch");
  Require(scores_a.cols() == 1 && scores_b.cols() == 1,
          "critic scores must be a single column");
  PairLossGrad out;
  out.loss = scores_a.mean() - scores_b.mean();
  out.d_a = Matrix::Constant(scores_a.rows(), 1,
                             1.0 / static_cast<double>(scores_a.rows()));
  out.d_b = Matrix::Constant(scores_b.rows(), 1,
                             -1.0 / static_cast<double>(scores_b.rows()));
  return out;
}

LossGrad MultiCriticLoss(const Matrix& scores, std::span<const int> labels) {
  Require(scores.rows() > 0, "critic: empty batch");
  Require(scores.cols() >= 2, "multi-class critic needs >= 2 classes");
  Require(static_cast<std::size_t>(scores.rows()) == labels.size(),
          "critic: label count mismatch");
  const double n = static_cast<double>(scores.rows());
  const double others = static_cast<double>(scores.cols() - 1);
  LossGrad out;
  out.d_scores = Matrix::Constant(scores.rows(), scores.cols(), 1.0 / (n * others));
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    Require(y >= 0 && y < scores.cols(), "critic: label out of range");
    const double rest = scores.row(r).sum() - scores(r, y);
    out.loss += rest / others - scores(r, y);
    out.d_scores(r, y) = -1.0 / n;
  }
  out.loss /= n;
  return out;
}

Matrix ConcatFeatures(const Matrix& shared, const Matrix& priv) {
  Require(shared.rows() == priv.rows(),
          "classifier: shared and private row counts differ");
  Matrix joined(shared.rows(), shared.cols() + priv.cols());
  joined << shared, priv;
  return joined;
}

Matrix ForwardClassifier(const Head& classifier, const Matrix& shared,
                         const Matrix& priv, HeadTape* tape) {
  return LogSoftmax(classifier.Forward(ConcatFeatures(shared, priv), tape));
}

Matrix ForwardDiscriminator(const Head& discriminator, const Matrix& features,
                            DiscriminatorMode mode, HeadTape* tape) {
  if (mode == DiscriminatorMode::kCritic) {
    Require(discriminator.config().output_dim == 1,
            "critic mode needs a single-output discriminator");
    return discriminator.Forward(features, tape);
  }
  Require(discriminator.config().output_dim >= 2,
          "multinomial mode needs >= 2 domain outputs");
  return LogSoftmax(discriminator.Forward(features, tape));
}

// ---------------------------------------------------------------------------
// Model

int SharedPrivateModel::SourceIndex(const std::string& name) const {
  auto it = std::find(sources.begin(), sources.end(), name);
  if (it == sources.end()) {
    throw ValidationError("unknown source domain '" + name + "'");
  }
  return static_cast<int>(it - sources.begin());
}

const Extractor& SharedPrivateModel::Private(const std::string& name) const {
  auto it = privates.find(name);
  if (it == privates.end()) {
    throw ValidationError("no private extractor for domain '" + name + "'");
  }
  return it->second;
}

Extractor& SharedPrivateModel::Private(const std::string& name) {
  return const_cast<Extractor&>(
      static_cast<const SharedPrivateModel*>(this)->Private(name));
}

SharedPrivateModel InitModel(const ModelConfig& config,
                             const std::vector<std::string>& sources,
                             const std::optional<std::string>& target,
                             std::uint64_t seed) {
  config.Validate();
  Require(!sources.empty(), "model needs at least one source domain");
  SharedPrivateModel model;
  model.config = config;
  model.sources = sources;
  model.discriminator_domains = sources;
  if (target) {
    Require(std::find(sources.begin(), sources.end(), *target) == sources.end(),
            "target '" + *target + "' is also listed as a source");
    model.discriminator_domains.push_back(*target);
  }
  Require(model.discriminator_domains.size() >= 2,
          "discriminator needs at least two domains");
  Rng rng(seed);
  model.shared = Extractor(config.shared, rng);
  for (const std::string& s : sources) {
    auto [it, inserted] = model.privates.emplace(s, Extractor(config.private_, rng));
    Require(inserted, "duplicate source domain '" + s + "'");
  }
  model.classifier = Head(
      HeadConfig{config.shared.output_dim + config.private_.output_dim,
                 config.classifier_hidden, 2},
      rng);
  model.discriminator = Head(
      HeadConfig{config.shared.output_dim, config.discriminator_hidden,
                 static_cast<int>(model.discriminator_domains.size())},
      rng);
  return model;
}

void CheckCorpusMatches(const EncoderConfig& config,
                        const DomainDataset& dataset) {
  if (dataset.mode() != config.corpus_mode()) {
    throw ValidationError(std::string(EncoderKindName(config.kind)) +
                          " extractors need " +
                          CorpusModeName(config.corpus_mode()) +
                          " corpora, but '" + dataset.name() + "' holds " +
                          CorpusModeName(dataset.mode()));
  }
  for (const Example& ex : dataset.examples()) {
    if (const auto* sv = std::get_if<SparseVector>(&ex.content)) {
      Require(sv->dim == static_cast<std::uint32_t>(config.input_dim),
              "'" + dataset.name() + "' has feature dimension " +
                  std::to_string(sv->dim) + " but the encoder expects " +
                  std::to_string(config.input_dim));
    } else if (const auto* t = std::get_if<TokenIds>(&ex.content)) {
      for (std::int32_t id : t->ids) {
        Require(id >= 0 && id < config.vocab_size,
                "'" + dataset.name() + "' has token index " + std::to_string(id) +
                    " outside the encoder vocabulary");
      }
    }
  }
}

Matrix PredictProbabilities(const Extractor& shared, const Head& classifier,
                            const Extractor* priv, int private_dim,
                            Batch batch) {
  const Matrix fs = shared.Forward(batch);
  const Matrix fp = priv ? priv->Forward(batch)
                         : Matrix::Zero(fs.rows(), private_dim);
  return ForwardClassifier(classifier, fs, fp).array().exp().matrix();
}

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(const ParameterSet& like, AdamConfig config)
    : config_(config), m_(like.ZerosLike()), v_(like.ZerosLike()) {
  Require(config_.learning_rate > 0.0, "learning rate must be positive");
}

void Adam::Step(ParameterSet& params, const ParameterSet& grad) {
  Require(params.SameShape(grad) && params.SameShape(m_),
          "adam: shape mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  const double step = config_.learning_rate * std::sqrt(c2) / c1;
  for (std::size_t i = 0; i < params.entries().size(); ++i) {
    auto& p = params.entries()[i].value;
    const auto& g = grad.entries()[i].value;
    auto& m = m_.entries()[i].value;
    auto& v = v_.entries()[i].value;
    m = config_.beta1 * m + (1.0 - config_.beta1) * g;
    v = config_.beta2 * v + (1.0 - config_.beta2) * g.cwiseAbs2();
    p.array() -= step * m.array() / (v.array().sqrt() + config_.epsilon);
  }
}

}  // namespace msda
