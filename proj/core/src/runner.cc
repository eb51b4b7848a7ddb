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

#include "msda/runner.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>

#include "json.hpp"
#include "msda/checkpoint.h"

namespace msda {

using json = nlohmann::json;

const char* MechanismName(Mechanism m) {
  switch (m) {
    case Mechanism::kSda: return "sda";
    case Mechanism::kToe: return "toe";
    case Mechanism::kBoth: return "both";
    case Mechanism::kBaselines: return "baselines";
  }
  return "?";
}

Mechanism ParseMechanism(std::string_view name) {
  if (name == "sda") return Mechanism::kSda;
  if (name == "toe") return Mechanism::kToe;
  if (name == "both") return Mechanism::kBoth;
  if (name == "baselines") return Mechanism::kBaselines;
  throw ValidationError("unknown mechanism '" + std::string(name) +
                        "' (expected sda, toe, both or baselines)");
}

const char* CorpusFormatName(CorpusFormat f) {
  switch (f) {
    case CorpusFormat::kSynthetic: return "synthetic";
    case CorpusFormat::kTsv: return "tsv";
    case CorpusFormat::kFeatures: return "features";
  }
  return "?";
}

CorpusFormat ParseCorpusFormat(std::string_view name) {
  if (name == "synthetic") return CorpusFormat::kSynthetic;
  if (name == "tsv") return CorpusFormat::kTsv;
  if (name == "features") return CorpusFormat::kFeatures;
  throw ValidationError("unknown corpus format '" + std::string(name) +
                        "' (expected synthetic, tsv or features)");
}

// ---------------------------------------------------------------------------
// Config keys

namespace {

long long ParseIntValue(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw ParseError("key '" + key + "' expects an integer, got '" + v + "'");
}

double ParseRealValue(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw ParseError("key '" + key + "' expects a real number, got '" + v + "'");
}

bool ParseBoolValue(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ParseError("key '" + key + "' expects true or false, got '" + v + "'");
}

std::vector<std::string> SplitList(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Re-labels enum parse failures as ParseErrors that name the key.
template <typename F>
auto ParseNamed(const std::string& key, const std::string& v, F parse) {
  try {
    return parse(v);
  } catch (const ValidationError& e) {
    throw ParseError("key '" + key + "': " + e.what());
  }
}

struct Field {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

using Ref = ExperimentConfig&;

template <typename T, typename Access>
Field IntField(std::string key, Access access) {
  return Field{key,
               [key, access](Ref c, const std::string& v) {
                 access(c) = static_cast<T>(ParseIntValue(key, v));
               },
               [access](const ExperimentConfig& c) {
                 return std::to_string(access(const_cast<Ref>(c)));
               }};
}

template <typename Access>
Field RealField(std::string key, Access access) {
  return Field{key,
               [key, access](Ref c, const std::string& v) {
                 access(c) = ParseRealValue(key, v);
               },
               [access](const ExperimentConfig& c) {
                 return FormatDouble(access(const_cast<Ref>(c)));
               }};
}

template <typename Access>
Field BoolField(std::string key, Access access) {
  return Field{key,
               [key, access](Ref c, const std::string& v) {
                 access(c) = ParseBoolValue(key, v);
               },
               [access](const ExperimentConfig& c) {
                 return std::string(access(const_cast<Ref>(c)) ? "true" : "false");
               }};
}

const std::vector<Field>& Fields() {
  static const std::vector<Field> fields = [] {
    std::vector<Field> f;
    f.push_back(IntField<std::uint64_t>("seed", [](Ref c) -> auto& { return c.seed; }));
    f.push_back(Field{"target",
                      [](Ref c, const std::string& v) { c.target = v; },
                      [](const ExperimentConfig& c) { return c.target; }});
    f.push_back(Field{
        "mechanism",
        [](Ref c, const std::string& v) {
          c.mechanism = ParseNamed("mechanism", v, ParseMechanism);
        },
        [](const ExperimentConfig& c) {
          return std::string(MechanismName(c.mechanism));
        }});
    f.push_back(Field{
        "output_dir",
        [](Ref c, const std::string& v) { c.output_dir = v; },
        [](const ExperimentConfig& c) { return c.output_dir.string(); }});

    f.push_back(Field{
        "corpus.format",
        [](Ref c, const std::string& v) {
          c.corpus.format = ParseNamed("corpus.format", v, ParseCorpusFormat);
        },
        [](const ExperimentConfig& c) {
          return std::string(CorpusFormatName(c.corpus.format));
        }});
    f.push_back(Field{
        "corpus.domains",
        [](Ref c, const std::string& v) {
          c.corpus.domains.clear();
          for (const std::string& item : SplitList(v)) {
            const auto colon = item.find(':');
            if (colon == std::string::npos || colon == 0) {
              throw ParseError("key 'corpus.domains' expects name:path items, got '" +
                               item + "'");
            }
            c.corpus.domains.emplace_back(item.substr(0, colon),
                                          item.substr(colon + 1));
          }
        },
        [](const ExperimentConfig& c) {
          std::string out;
          for (const auto& [name, path] : c.corpus.domains) {
            if (!out.empty()) out += ',';
            out += name + ":" + path.string();
          }
          return out;
        }});
    f.push_back(IntField<std::uint32_t>(
        "corpus.feature_dim", [](Ref c) -> auto& { return c.corpus.feature_dim; }));
    f.push_back(Field{
        "corpus.embeddings",
        [](Ref c, const std::string& v) { c.corpus.embeddings = v; },
        [](const ExperimentConfig& c) { return c.corpus.embeddings.string(); }});

    f.push_back(RealField("split.train", [](Ref c) -> auto& { return c.split.train; }));
    f.push_back(RealField("split.dev", [](Ref c) -> auto& { return c.split.dev; }));
    f.push_back(RealField("split.test", [](Ref c) -> auto& { return c.split.test; }));

    f.push_back(Field{
        "model.encoder",
        [](Ref c, const std::string& v) {
          const EncoderKind k = ParseNamed("model.encoder", v, ParseEncoderKind);
          c.model.shared.kind = c.model.private_.kind = k;
        },
        [](const ExperimentConfig& c) {
          return std::string(EncoderKindName(c.model.shared.kind));
        }});
    f.push_back(IntField<int>("model.shared_dim",
                              [](Ref c) -> auto& { return c.model.shared.output_dim; }));
    f.push_back(IntField<int>("model.shared_hidden",
                              [](Ref c) -> auto& { return c.model.shared.hidden_dim; }));
    f.push_back(IntField<int>("model.private_dim",
                              [](Ref c) -> auto& { return c.model.private_.output_dim; }));
    f.push_back(IntField<int>("model.private_hidden",
                              [](Ref c) -> auto& { return c.model.private_.hidden_dim; }));
    f.push_back(IntField<int>("model.classifier_hidden",
                              [](Ref c) -> auto& { return c.model.classifier_hidden; }));
    f.push_back(IntField<int>("model.discriminator_hidden",
                              [](Ref c) -> auto& { return c.model.discriminator_hidden; }));
    f.push_back(Field{
        "model.dropout",
        [](Ref c, const std::string& v) {
          c.model.shared.dropout = c.model.private_.dropout =
              ParseRealValue("model.dropout", v);
        },
        [](const ExperimentConfig& c) { return FormatDouble(c.model.shared.dropout); }});
    f.push_back(Field{
        "model.embedding_dim",
        [](Ref c, const std::string& v) {
          c.model.shared.embedding_dim = c.model.private_.embedding_dim =
              static_cast<int>(ParseIntValue("model.embedding_dim", v));
        },
        [](const ExperimentConfig& c) {
          return std::to_string(c.model.shared.embedding_dim);
        }});
    f.push_back(Field{
        "model.kernel_widths",
        [](Ref c, const std::string& v) {
          std::vector<int> widths;
          for (const std::string& w : SplitList(v)) {
            widths.push_back(static_cast<int>(ParseIntValue("model.kernel_widths", w)));
          }
          c.model.shared.kernel_widths = c.model.private_.kernel_widths = widths;
        },
        [](const ExperimentConfig& c) {
          std::string out;
          for (int w : c.model.shared.kernel_widths) {
            if (!out.empty()) out += ',';
            out += std::to_string(w);
          }
          return out;
        }});
    f.push_back(Field{
        "model.d_loss",
        [](Ref c, const std::string& v) {
          c.model.d_loss = ParseNamed("model.d_loss", v, ParseAdversarialLoss);
        },
        [](const ExperimentConfig& c) {
          return std::string(AdversarialLossName(c.model.d_loss));
        }});
    f.push_back(RealField("model.clip", [](Ref c) -> auto& { return c.model.clip; }));

    f.push_back(RealField("stage1.lambda1", [](Ref c) -> auto& { return c.stage1.lambda1; }));
    f.push_back(RealField("stage1.learning_rate",
                          [](Ref c) -> auto& { return c.stage1.learning_rate; }));
    f.push_back(IntField<int>("stage1.batch_size",
                              [](Ref c) -> auto& { return c.stage1.batch_size; }));
    f.push_back(IntField<int>("stage1.n_critic", [](Ref c) -> auto& { return c.stage1.n_critic; }));
    f.push_back(IntField<int>("stage1.epochs", [](Ref c) -> auto& { return c.stage1.epochs; }));
    f.push_back(BoolField("stage1.include_target_in_D",
                          [](Ref c) -> auto& { return c.stage1.include_target_in_D; }));
    f.push_back(IntField<int>("stage1.patience", [](Ref c) -> auto& { return c.stage1.patience; }));
    f.push_back(BoolField("stage1.keep_epoch_checkpoints",
                          [](Ref c) -> auto& { return c.stage1.keep_epoch_checkpoints; }));

    f.push_back(RealField("sda.lambda2", [](Ref c) -> auto& { return c.sda.lambda2; }));
    f.push_back(RealField("sda.lambda_theta", [](Ref c) -> auto& { return c.sda.lambda_theta; }));
    f.push_back(IntField<int>("sda.iter1", [](Ref c) -> auto& { return c.sda.iter1; }));
    f.push_back(IntField<int>("sda.iter2", [](Ref c) -> auto& { return c.sda.iter2; }));
    f.push_back(IntField<int>("sda.n_critic", [](Ref c) -> auto& { return c.sda.n_critic; }));
    f.push_back(RealField("sda.learning_rate", [](Ref c) -> auto& { return c.sda.learning_rate; }));
    f.push_back(IntField<int>("sda.batch_size", [](Ref c) -> auto& { return c.sda.batch_size; }));
    f.push_back(Field{
        "sda.da_loss",
        [](Ref c, const std::string& v) {
          c.sda.da_loss = ParseNamed("sda.da_loss", v, ParseAdversarialLoss);
        },
        [](const ExperimentConfig& c) {
          return std::string(AdversarialLossName(c.sda.da_loss));
        }});
    f.push_back(RealField("sda.clip", [](Ref c) -> auto& { return c.sda.clip; }));
    f.push_back(IntField<int>("sda.da_hidden", [](Ref c) -> auto& { return c.sda.da_hidden; }));

    f.push_back(RealField("toe.delta0", [](Ref c) -> auto& { return c.toe.delta0; }));
    f.push_back(RealField("toe.eta", [](Ref c) -> auto& { return c.toe.eta; }));
    f.push_back(RealField("toe.delta_floor", [](Ref c) -> auto& { return c.toe.delta_floor; }));
    f.push_back(IntField<int>("toe.n_min", [](Ref c) -> auto& { return c.toe.n_min; }));
    f.push_back(IntField<int>("toe.k_sources", [](Ref c) -> auto& { return c.toe.k_sources; }));
    f.push_back(IntField<int>("toe.finetune_iter",
                              [](Ref c) -> auto& { return c.toe.finetune_iter; }));
    f.push_back(RealField("toe.learning_rate", [](Ref c) -> auto& { return c.toe.learning_rate; }));
    f.push_back(IntField<int>("toe.batch_size", [](Ref c) -> auto& { return c.toe.batch_size; }));
    f.push_back(IntField<int>("toe.max_sweeps", [](Ref c) -> auto& { return c.toe.max_sweeps; }));
    f.push_back(Field{
        "toe.labeling",
        [](Ref c, const std::string& v) {
          c.toe.labeling = ParseNamed("toe.labeling", v, ParseLabelingRule);
        },
        [](const ExperimentConfig& c) {
          return std::string(LabelingRuleName(c.toe.labeling));
        }});
    f.push_back(Field{
        "toe.guard",
        [](Ref c, const std::string& v) {
          c.toe.guard = ParseNamed("toe.guard", v, ParseLoopGuard);
        },
        [](const ExperimentConfig& c) { return std::string(LoopGuardName(c.toe.guard)); }});

    f.push_back(RealField("proxy.regularization",
                          [](Ref c) -> auto& { return c.proxy.regularization; }));
    f.push_back(IntField<int>("proxy.max_epochs", [](Ref c) -> auto& { return c.proxy.max_epochs; }));
    f.push_back(RealField("proxy.tolerance", [](Ref c) -> auto& { return c.proxy.tolerance; }));
    f.push_back(RealField("proxy.heldout_fraction",
                          [](Ref c) -> auto& { return c.proxy.heldout_fraction; }));
    return f;
  }();
  return fields;
}

const std::set<std::string>& SyntheticKeys() {
  static const std::set<std::string> keys = [] {
    std::set<std::string> k;
    SyntheticSuiteSpec spec;
    spec.shift = {0.0, 1.0};
    spec.num_domains = 2;
    for (const auto& [key, _] : spec.ToKeyValues()) k.insert(key);
    k.insert("names");
    k.insert("position");
    return k;
  }();
  return keys;
}

constexpr std::string_view kSyntheticPrefix = "synthetic.";

}  // namespace

void ExperimentConfig::Set(const std::string& key, const std::string& value) {
  if (key.rfind(kSyntheticPrefix, 0) == 0) {
    const std::string sub = key.substr(kSyntheticPrefix.size());
    if (!SyntheticKeys().count(sub)) {
      throw ParseError("unknown config key '" + key + "'");
    }
    std::map<std::string, std::string> probe = corpus.synthetic;
    probe[sub] = value;
    try {
      SyntheticSuiteSpec::FromKeyValues(probe);
    } catch (const ParseError& e) {
      throw ParseError("key '" + key + "': " + e.what());
    } catch (const ValidationError&) {
      // Other synthetic keys may still be on their way; Validate decides.
    }
    corpus.synthetic[sub] = value;
    return;
  }
  for (const Field& f : Fields()) {
    if (f.key == key) {
      f.set(*this, value);
      return;
    }
  }
  throw ParseError("unknown config key '" + key + "'");
}

SyntheticSuiteSpec ExperimentConfig::Synthetic() const {
  std::map<std::string, std::string> values = corpus.synthetic;
  if (!values.count("seed")) {
    values["seed"] = std::to_string(StageSeed(seed, SeedStage::kCorpus));
  }
  return SyntheticSuiteSpec::FromKeyValues(values);
}

Stage1Config ExperimentConfig::Stage1() const {
  Stage1Config c = stage1;
  c.seed = StageSeed(seed, SeedStage::kStage1);
  return c;
}

SdaConfig ExperimentConfig::Sda() const {
  SdaConfig c = sda;
  c.seed = StageSeed(seed, SeedStage::kSda);
  return c;
}

ToeConfig ExperimentConfig::Toe() const {
  ToeConfig c = toe;
  c.seed = StageSeed(seed, SeedStage::kToe);
  return c;
}

ProxyClassifierConfig ExperimentConfig::Proxy() const {
  ProxyClassifierConfig c = proxy;
  c.seed = StageSeed(seed, SeedStage::kDivergence);
  return c;
}

void ExperimentConfig::Validate() const {
  std::vector<std::string> names;
  if (corpus.format == CorpusFormat::kSynthetic) {
    const SyntheticSuiteSpec spec = Synthetic();
    for (int i = 0; i < spec.num_domains; ++i) names.push_back(spec.DomainName(i));
  } else {
    Require(corpus.domains.size() >= 2,
            "corpus.domains must list at least two name:path entries");
    for (const auto& [name, path] : corpus.domains) {
      if (!std::filesystem::exists(path)) {
        throw IoError("corpus file for '" + name + "' not found: " + path.string());
      }
      names.push_back(name);
    }
    if (corpus.format == CorpusFormat::kFeatures) {
      Require(model.shared.kind == EncoderKind::kFeedforward,
              "feature-vector corpora need model.encoder=feedforward");
    }
  }
  std::set<std::string> unique(names.begin(), names.end());
  Require(unique.size() == names.size(), "domain names must be unique");
  Require(corpus.feature_dim >= 1, "corpus.feature_dim must be >= 1");
  if (!corpus.embeddings.empty() && !std::filesystem::exists(corpus.embeddings)) {
    throw IoError("embeddings file not found: " + corpus.embeddings.string());
  }
  if (target == "rotate") {
    Require(names.size() >= 3, "target=rotate needs at least three domains");
  } else {
    Require(unique.count(target) == 1,
            "target '" + target + "' is not one of the corpus domains");
    Require(names.size() >= 3,
            "a held-out target needs at least two source domains");
  }
  Require(split.train > 0 && split.dev > 0 && split.test > 0 &&
              std::abs(split.train + split.dev + split.test - 1.0) < 1e-9,
          "split fractions must be positive and sum to 1");
  ModelConfig probe = model;
  probe.shared.input_dim = probe.private_.input_dim = 1;
  probe.shared.vocab_size = probe.private_.vocab_size = 3;
  probe.Validate();
  Stage1().Validate();
  Sda().Validate();
  Toe().Validate();
  Proxy().Validate();
  Require(!output_dir.empty(), "output_dir must not be empty");
}

std::vector<std::pair<std::string, std::string>> ExperimentConfig::ToKeyValues()
    const {
  std::vector<std::pair<std::string, std::string>> kv;
  for (const Field& f : Fields()) kv.emplace_back(f.key, f.get(*this));
  if (corpus.format == CorpusFormat::kSynthetic) {
    for (const auto& [k, v] : Synthetic().ToKeyValues()) {
      kv.emplace_back(std::string(kSyntheticPrefix) + k, v);
    }
  }
  return kv;
}

void ExperimentConfig::WriteResolved(const std::filesystem::path& path) const {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "# resolved experiment configuration\n";
  for (const auto& [k, v] : ToKeyValues()) out << k << '=' << v << '\n';
}

ExperimentConfig ConfigFromKeyValues(
    const std::vector<std::pair<std::string, std::string>>& values) {
  ExperimentConfig c;
  for (const auto& [k, v] : values) c.Set(k, v);
  c.Validate();
  return c;
}

ExperimentConfig ParseConfig(const std::filesystem::path& path) {
  auto values = ReadKeyValueFile(path);
  // Relative corpus paths are read against the config file's directory.
  const std::filesystem::path base = path.parent_path();
  ExperimentConfig c;
  for (const auto& [k, v] : values) c.Set(k, v);
  for (auto& [name, file] : c.corpus.domains) {
    if (file.is_relative() && !base.empty()) file = base / file;
  }
  if (!c.corpus.embeddings.empty() && c.corpus.embeddings.is_relative() &&
      !base.empty()) {
    c.corpus.embeddings = base / c.corpus.embeddings;
  }
  c.Validate();
  return c;
}

std::filesystem::path ResolveOutputDir(const ExperimentConfig& config) {
  if (config.output_dir.is_absolute()) return config.output_dir;
  if (const char* root = std::getenv("MSDA_OUTPUT_ROOT"); root && *root) {
    return std::filesystem::path(root) / config.output_dir;
  }
  return config.output_dir;
}

// ---------------------------------------------------------------------------
// Data

int PreparedCorpus::Index(const std::string& name) const {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) {
    throw ValidationError("unknown domain '" + name + "'");
  }
  return static_cast<int>(it - names.begin());
}

PreparedCorpus PrepareCorpus(const ExperimentConfig& config) {
  config.Validate();
  std::vector<DomainDataset> raw;
  if (config.corpus.format == CorpusFormat::kSynthetic) {
    raw = GenerateSyntheticSuite(config.Synthetic());
  } else {
    for (const auto& [name, path] : config.corpus.domains) {
      raw.push_back(config.corpus.format == CorpusFormat::kTsv
                        ? LoadLabeledTsv(path, name, true)
                        : LoadSparseFeatures(path, name, true,
                                             config.corpus.feature_dim));
    }
  }
  PreparedCorpus out;
  out.model = config.model;
  const std::uint64_t split_seed = StageSeed(config.seed, SeedStage::kSplit);
  std::vector<DatasetSplit> splits;
  for (std::size_t d = 0; d < raw.size(); ++d) {
    out.names.push_back(raw[d].name());
    splits.push_back(
        SplitDataset(raw[d].WithDomainId(static_cast<int>(d)), config.split,
                     split_seed + d));
  }
  if (raw.front().mode() == CorpusMode::kFeatures) {
    Require(config.model.shared.kind == EncoderKind::kFeedforward,
            "feature-vector corpora need a feedforward encoder");
    out.model.shared.input_dim = out.model.private_.input_dim =
        static_cast<int>(config.corpus.feature_dim);
    out.splits = std::move(splits);
    return out;
  }
  // Vocabulary from training text only.
  std::vector<DomainDataset> train;
  for (const DatasetSplit& s : splits) train.push_back(s.train);
  const bool ff = config.model.shared.kind == EncoderKind::kFeedforward;
  const Vocabulary vocab = BuildVocabulary(train, config.corpus.feature_dim + 2);
  auto convert = [&](const DomainDataset& ds) {
    return ff ? FeaturizeBow(ds, vocab, vocab.size() - 2) : ToTokenIds(ds, vocab);
  };
  for (const DatasetSplit& s : splits) {
    out.splits.push_back(
        DatasetSplit{convert(s.train), convert(s.dev), convert(s.test)});
  }
  if (ff) {
    out.model.shared.input_dim = out.model.private_.input_dim =
        static_cast<int>(vocab.size() - 2);
  } else {
    out.model.shared.vocab_size = out.model.private_.vocab_size =
        static_cast<int>(vocab.size());
  }
  out.vocab = vocab;
  return out;
}

DistanceMatrix ComputeCorpusDistances(const ExperimentConfig& config,
                                      const PreparedCorpus& corpus) {
  std::vector<DomainDataset> unlabeled;
  for (const DatasetSplit& s : corpus.splits) {
    unlabeled.push_back(s.train.WithoutLabels());
  }
  return ComputeDistanceMatrix(unlabeled, config.Proxy());
}

PretrainResult PretrainForTarget(const ExperimentConfig& config,
                                 const PreparedCorpus& corpus,
                                 const std::string& target,
                                 const std::filesystem::path& out_dir) {
  const int t = corpus.Index(target);
  const Stage1Config s1 = config.Stage1();
  std::vector<std::string> sources;
  Stage1Data data;
  for (std::size_t d = 0; d < corpus.names.size(); ++d) {
    if (static_cast<int>(d) == t) continue;
    sources.push_back(corpus.names[d]);
    data.source_train.push_back(corpus.splits[d].train);
    data.source_dev.push_back(corpus.splits[d].dev);
  }
  const DomainDataset target_unlabeled =
      corpus.splits[static_cast<std::size_t>(t)].train.WithoutLabels();
  if (s1.include_target_in_D) data.target_unlabeled = target_unlabeled;
  SharedPrivateModel model = InitModel(
      corpus.model, sources,
      s1.include_target_in_D ? std::optional<std::string>(target) : std::nullopt,
      s1.seed);
  if (!config.corpus.embeddings.empty() && corpus.vocab &&
      corpus.model.shared.kind == EncoderKind::kConvolutional) {
    model.shared.LoadEmbeddings(config.corpus.embeddings, *corpus.vocab);
    for (auto& [name, priv] : model.privates) {
      priv.LoadEmbeddings(config.corpus.embeddings, *corpus.vocab);
    }
  }
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  PretrainResult result = Pretrain(std::move(model), data, s1, out_dir);
  if (!out_dir.empty()) {
    result.log.WriteMetricsCsv(out_dir / "metrics.csv");
    result.log.WriteStepsCsv(out_dir / "steps.csv");
    if (!std::filesystem::exists(out_dir / "stage1_best.ckpt")) {
      SaveModel(result.model, out_dir / "stage1_best.ckpt");
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Results

std::vector<std::string> ResultsTable::DefaultMethods() {
  return {"ZERO", "SDA", "A-Ens", "L-Ens", "T-Ens", "TOE"};
}

void ResultsTable::AddRow(const std::string& target,
                          const std::map<std::string, double>& accuracy) {
  if (methods.empty()) methods = DefaultMethods();
  std::vector<double> row(methods.size(),
                          std::numeric_limits<double>::quiet_NaN());
  for (const auto& [method, value] : accuracy) {
    auto it = std::find(methods.begin(), methods.end(), method);
    Require(it != methods.end(), "unknown results column '" + method + "'");
    row[static_cast<std::size_t>(it - methods.begin())] = value;
  }
  targets.push_back(target);
  cells.push_back(std::move(row));
}

double ResultsTable::Average(std::size_t column) const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& row : cells) {
    if (std::isfinite(row.at(column))) {
      sum += row[column];
      ++n;
    }
  }
  return n ? sum / static_cast<double>(n)
           : std::numeric_limits<double>::quiet_NaN();
}

bool ResultsTable::operator==(const ResultsTable& other) const {
  if (methods != other.methods || targets != other.targets ||
      cells.size() != other.cells.size()) {
    return false;
  }
  for (std::size_t r = 0; r < cells.size(); ++r) {
    if (cells[r].size() != other.cells[r].size()) return false;
    for (std::size_t c = 0; c < cells[r].size(); ++c) {
      const double a = cells[r][c], b = other.cells[r][c];
      if (std::isnan(a) != std::isnan(b)) return false;
      if (!std::isnan(a) && a != b) return false;
    }
  }
  return true;
}

namespace {

std::ofstream OpenForWrite(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

std::vector<std::string> SplitCsvLine(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string Percent(double v) {
  if (!std::isfinite(v)) return "-";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", 100.0 * v);
  return buf;
}

}  // namespace

void ResultsTable::SaveRaw(const std::filesystem::path& path) const {
  std::ofstream out = OpenForWrite(path);
  out << "target";
  for (const auto& m : methods) out << ',' << m;
  out << '\n';
  for (std::size_t r = 0; r < cells.size(); ++r) {
    out << targets[r];
    for (double v : cells[r]) {
      out << ',';
      if (std::isfinite(v)) out << FormatDouble(v);
    }
    out << '\n';
  }
}

ResultsTable ResultsTable::LoadRaw(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty results file");
  auto header = SplitCsvLine(line);
  if (header.empty() || header.front() != "target") {
    throw ParseError("results file must start with a 'target' column", 1);
  }
  ResultsTable t;
  t.methods.assign(header.begin() + 1, header.end());
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto cells = SplitCsvLine(line);
    if (cells.size() != header.size()) {
      throw ParseError("expected " + std::to_string(header.size()) + " cells",
                       line_no);
    }
    std::vector<double> row;
    for (std::size_t c = 1; c < cells.size(); ++c) {
      if (cells[c].empty()) {
        row.push_back(std::numeric_limits<double>::quiet_NaN());
        continue;
      }
      try {
        row.push_back(std::stod(cells[c]));
      } catch (const std::exception&) {
        throw ParseError("bad number '" + cells[c] + "'", line_no);
      }
    }
    t.targets.push_back(cells[0]);
    t.cells.push_back(std::move(row));
  }
  return t;
}

ReportFormat ParseReportFormat(std::string_view name) {
  if (name == "csv") return ReportFormat::kCsv;
  if (name == "markdown" || name == "md") return ReportFormat::kMarkdown;
  throw ValidationError("unknown report format '" + std::string(name) +
                        "' (expected csv or markdown)");
}

std::string RenderReport(const ResultsTable& table, ReportFormat format) {
  Require(!table.cells.empty(), "cannot report an empty results table");
  std::vector<std::pair<std::string, std::vector<double>>> rows;
  for (std::size_t r = 0; r < table.cells.size(); ++r) {
    rows.emplace_back(table.targets[r], table.cells[r]);
  }
  std::vector<double> avg;
  for (std::size_t c = 0; c < table.methods.size(); ++c) {
    avg.push_back(table.Average(c));
  }
  rows.emplace_back("average", avg);

  std::ostringstream out;
  if (format == ReportFormat::kCsv) {
    out << "target";
    for (const auto& m : table.methods) out << ',' << m;
    out << '\n';
    for (const auto& [name, values] : rows) {
      out << name;
      for (double v : values) out << ',' << (std::isfinite(v) ? Percent(v) : "");
      out << '\n';
    }
    return out.str();
  }
  out << "| target |";
  for (const auto& m : table.methods) out << ' ' << m << " |";
  out << "\n|---|";
  for (std::size_t c = 0; c < table.methods.size(); ++c) out << "---:|";
  out << '\n';
  for (const auto& [name, values] : rows) {
    // Compare at displayed precision so equal-looking cells tie.
    double best = -1.0;
    for (double v : values) {
      if (std::isfinite(v)) best = std::max(best, std::round(1000.0 * v));
    }
    out << "| " << name << " |";
    for (double v : values) {
      const bool is_best = std::isfinite(v) && std::round(1000.0 * v) == best;
      out << ' ' << (is_best ? "**" + Percent(v) + "**" : Percent(v)) << " |";
    }
    out << '\n';
  }
  return out.str();
}

void EmitReport(const ResultsTable& table, ReportFormat format,
                const std::filesystem::path& path) {
  const std::string text = RenderReport(table, format);
  std::ofstream out = OpenForWrite(path);
  out << text;
}

// ---------------------------------------------------------------------------
// Protocol

std::map<std::string, double> RunTarget(const ExperimentConfig& config,
                                        const PreparedCorpus& corpus,
                                        const DistanceMatrix& matrix,
                                        const std::string& target,
                                        const std::filesystem::path& out_dir) {
  const int t = corpus.Index(target);
  const DatasetSplit& split = corpus.splits[static_cast<std::size_t>(t)];
  const std::filesystem::path dir = out_dir / target;
  const PretrainResult pre = PretrainForTarget(config, corpus, target, dir / "stage1");
  const SharedPrivateModel& model = pre.model;
  const DomainDataset target_unlabeled = split.train.WithoutLabels();
  const DomainDataset& test = split.test;
  const auto test_batch = BatchOf(test);

  std::map<std::string, double> acc;
  acc["ZERO"] = EvaluateAccuracy(model, test, nullptr);

  const Mechanism m = config.mechanism;
  const ToeConfig toe = config.Toe();
  const int k = std::min<int>(toe.k_sources, static_cast<int>(model.sources.size()));
  const std::vector<std::string> top =
      SelectTopK(matrix, target, k, model.sources);
  if (m != Mechanism::kSda) {
    const std::vector<std::string> last =
        SelectTopK(matrix, target, k, model.sources, RankOrder::kFarthest);
    acc["A-Ens"] = EnsembleAccuracy(MakeEnsemble(model, model.sources), test);
    acc["L-Ens"] = EnsembleAccuracy(MakeEnsemble(model, last), test);
    acc["T-Ens"] = EnsembleAccuracy(MakeEnsemble(model, top), test);
  }
  if (m == Mechanism::kSda || m == Mechanism::kBoth) {
    std::vector<DomainDataset> source_train;
    for (const std::string& s : model.sources) {
      source_train.push_back(corpus.splits[static_cast<std::size_t>(corpus.Index(s))].train);
    }
    const SdaResult sda =
        RunSda(model, source_train, target_unlabeled, matrix, target, config.Sda());
    const Prediction pred = PredictTargetSda(sda.state, test_batch);
    acc["SDA"] = pred.Accuracy(test_batch);
    SaveSdaState(sda.state, dir / "sda" / "sda_state.ckpt");
    sda.log.WriteCsv(dir / "sda" / "metrics.csv");
    WritePredictionsTsv(pred, dir / "sda" / "predictions.tsv");
    std::ofstream(dir / "sda" / "selected_source.txt") << sda.state.selected_source << '\n';
  }
  if (m == Mechanism::kToe || m == Mechanism::kBoth) {
    const ToeResult r = RunToe(model, target_unlabeled, top, toe);
    const Prediction pred = PredictTargetToe(r.ensemble, test_batch);
    acc["TOE"] = pred.Accuracy(test_batch);
    r.labels.WriteAuditTsv(dir / "toe" / "pseudo_labels.tsv");
    WritePredictionsTsv(pred, dir / "toe" / "predictions.tsv");
    SaveEnsemble(r.ensemble, model.config, dir / "toe" / "ensemble.ckpt");
    std::ofstream losses = OpenForWrite(dir / "toe" / "finetune.csv");
    losses << "step,J_C2\n";
    for (std::size_t i = 0; i < r.losses.size(); ++i) {
      losses << i + 1 << ',' << r.losses[i] << '\n';
    }
  }
  {
    std::ofstream out = OpenForWrite(dir / "accuracy.csv");
    out << "method,accuracy\n";
    for (const auto& [method, value] : acc) {
      out << method << ',' << FormatDouble(value) << '\n';
    }
  }
  return acc;
}

void WriteManifest(const std::filesystem::path& dir, const std::string& status,
                   const std::string& error) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), dir);
    if (rel == "manifest.json") continue;
    files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  json artifacts = json::array();
  for (const auto& rel : files) {
    char crc[16];
    std::snprintf(crc, sizeof(crc), "%08x", FileCrc32(dir / rel));
    artifacts.push_back({{"path", rel.generic_string()},
                         {"bytes", std::filesystem::file_size(dir / rel)},
                         {"crc32", crc}});
  }
  json manifest = {{"status", status}, {"artifacts", artifacts}};
  if (!error.empty()) manifest["error"] = error;
  std::ofstream out = OpenForWrite(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
}

ExperimentResult RunExperiment(const ExperimentConfig& config) {
  config.Validate();
  ExperimentResult result;
  result.output_dir = ResolveOutputDir(config);
  const auto& out = result.output_dir;
  std::filesystem::create_directories(out);
  WriteManifest(out, "running");
  try {
    config.WriteResolved(out / "config.resolved");
    const PreparedCorpus corpus = PrepareCorpus(config);
    const DistanceMatrix matrix = ComputeCorpusDistances(config, corpus);
    matrix.WriteCsv(out / "adist.csv");
    matrix.WriteLongCsv(out / "adist_long.csv");
    const std::vector<std::string> targets =
        config.target == "rotate" ? corpus.names
                                  : std::vector<std::string>{config.target};
    result.table.methods = ResultsTable::DefaultMethods();
    for (const std::string& t : targets) {
      result.table.AddRow(t, RunTarget(config, corpus, matrix, t, out));
      result.table.SaveRaw(out / "results_raw.csv");
    }
    EmitReport(result.table, ReportFormat::kCsv, out / "results.csv");
    EmitReport(result.table, ReportFormat::kMarkdown, out / "results.md");
  } catch (const std::exception& e) {
    WriteManifest(out, "failed", e.what());
    throw;
  }
  WriteManifest(out, "complete");
  return result;
}

}  // namespace msda
