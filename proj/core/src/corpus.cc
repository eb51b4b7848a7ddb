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

#include "msda/corpus.h"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace msda {

namespace {

std::ifstream OpenForRead(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

std::ofstream OpenForWrite(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

std::string_view Trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) {
    s.remove_prefix(1);
  }
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) {
    s.remove_suffix(1);
  }
  return s;
}

int ParseLabel(std::string_view token, std::size_t line) {
  token = Trim(token);
  if (token == "0") return 0;
  if (token == "1") return 1;
  throw ParseError("bad label '" + std::string(token) + "', expected 0 or 1",
                   line);
}

std::string JoinWords(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

}  // namespace

const char* CorpusModeName(CorpusMode mode) {
  switch (mode) {
    case CorpusMode::kRawText:
      return "raw-text";
    case CorpusMode::kTokens:
      return "tokens";
    case CorpusMode::kFeatures:
      return "features";
  }
  return "unknown";
}

DomainDataset::DomainDataset(std::string name, std::vector<Example> examples,
                             bool labeled)
    : name_(std::move(name)), examples_(std::move(examples)), labeled_(labeled) {
  Require(!examples_.empty(), "dataset '" + name_ + "' is empty");
  const CorpusMode mode = examples_.front().mode();
  for (std::size_t i = 0; i < examples_.size(); ++i) {
    const Example& ex = examples_[i];
    Require(ex.mode() == mode, "dataset '" + name_ + "' mixes corpus modes");
    if (labeled_) {
      Require(ex.label.has_value(), "dataset '" + name_ + "' example " +
                                        std::to_string(i) + " lacks a label");
      Require(*ex.label == 0 || *ex.label == 1,
              "dataset '" + name_ + "' has a label outside {0,1}");
    } else {
      Require(!ex.label.has_value(),
              "unlabeled dataset '" + name_ + "' carries a label");
    }
  }
}

DomainDataset DomainDataset::WithoutLabels() const {
  std::vector<Example> out = examples_;
  for (Example& ex : out) ex.label.reset();
  return DomainDataset(name_, std::move(out), false);
}

DomainDataset DomainDataset::WithDomainId(int domain_id) const {
  std::vector<Example> out = examples_;
  for (Example& ex : out) ex.domain_id = domain_id;
  return DomainDataset(name_, std::move(out), labeled_);
}

DomainDataset DomainDataset::Renamed(std::string name) const {
  return DomainDataset(std::move(name), examples_, labeled_);
}

DomainDataset DomainDataset::Subset(std::span<const std::size_t> indices) const {
  std::vector<Example> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    Require(i < examples_.size(), "subset index out of range");
    out.push_back(examples_[i]);
  }
  return DomainDataset(name_, std::move(out), labeled_);
}

std::vector<int> DomainDataset::Labels() const {
  Require(labeled_, "dataset '" + name_ + "' is unlabeled");
  std::vector<int> labels;
  labels.reserve(examples_.size());
  for (const Example& ex : examples_) labels.push_back(*ex.label);
  return labels;
}

std::vector<std::string> Tokenize(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      words.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

Vocabulary::Vocabulary(std::vector<std::string> words)
    : words_(std::move(words)) {
  Require(words_.size() >= 2, "vocabulary needs PAD and UNK");
  Require(words_[kPad] == PadToken() && words_[kUnk] == UnkToken(),
          "vocabulary must start with PAD and UNK");
  for (std::size_t i = 0; i < words_.size(); ++i) {
    auto [it, inserted] =
        index_.emplace(words_[i], static_cast<std::int32_t>(i));
    Require(inserted, "duplicate vocabulary entry '" + words_[i] + "'");
  }
}

std::int32_t Vocabulary::Index(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnk : it->second;
}

void Vocabulary::Save(const std::filesystem::path& path) const {
  auto out = OpenForWrite(path);
  for (const std::string& w : words_) out << w << '\n';
}

Vocabulary Vocabulary::Load(const std::filesystem::path& path) {
  auto in = OpenForRead(path);
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) words.push_back(line);
  return Vocabulary(std::move(words));
}

DomainDataset LoadLabeledTsv(const std::filesystem::path& path,
                             const std::string& domain_name, bool labeled) {
  auto in = OpenForRead(path);
  std::vector<Example> examples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    Example ex;
    std::string_view text = line;
    if (labeled) {
      const auto tab = line.find('\t');
      if (tab == std::string::npos) {
        throw ParseError("missing label column", line_no);
      }
      ex.label = ParseLabel(std::string_view(line).substr(0, tab), line_no);
      text = std::string_view(line).substr(tab + 1);
    }
    RawText raw{Tokenize(text)};
    if (raw.words.empty()) throw ParseError("empty text", line_no);
    ex.content = std::move(raw);
    examples.push_back(std::move(ex));
  }
  if (examples.empty()) {
    throw ValidationError("corpus file " + path.string() + " is empty");
  }
  return DomainDataset(domain_name, std::move(examples), labeled);
}

void SaveLabeledTsv(const DomainDataset& dataset,
                    const std::filesystem::path& path) {
  Require(dataset.mode() == CorpusMode::kRawText,
          "TSV export needs raw-text examples");
  auto out = OpenForWrite(path);
  for (const Example& ex : dataset.examples()) {
    if (dataset.labeled()) out << *ex.label << '\t';
    out << JoinWords(std::get<RawText>(ex.content).words) << '\n';
  }
}

DomainDataset LoadSparseFeatures(const std::filesystem::path& path,
                                 const std::string& domain_name, bool labeled,
                                 std::uint32_t dim) {
  Require(dim > 0, "feature dimension must be positive");
  auto in = OpenForRead(path);
  std::vector<Example> examples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    Example ex;
    std::string_view body = line;
    if (labeled) {
      const auto tab = line.find('\t');
      if (tab == std::string::npos) {
        throw ParseError("missing label column", line_no);
      }
      ex.label = ParseLabel(body.substr(0, tab), line_no);
      body = body.substr(tab + 1);
    }
    std::map<std::uint32_t, double> entries;
    std::istringstream items{std::string(body)};
    std::string item;
    while (items >> item) {
      const auto colon = item.find(':');
      if (colon == std::string::npos) {
        throw ParseError("expected idx:count, got '" + item + "'", line_no);
      }
      std::uint32_t idx = 0;
      const char* first = item.data();
      auto [p, ec] = std::from_chars(first, first + colon, idx);
      if (ec != std::errc() || p != first + colon) {
        throw ParseError("bad feature index in '" + item + "'", line_no);
      }
      if (idx >= dim) {
        throw ParseError("feature index " + std::to_string(idx) +
                             " exceeds dimension " + std::to_string(dim),
                         line_no);
      }
      double value = 0.0;
      try {
        std::size_t used = 0;
        value = std::stod(item.substr(colon + 1), &used);
        if (used != item.size() - colon - 1) throw std::invalid_argument("");
      } catch (const std::exception&) {
        throw ParseError("bad feature value in '" + item + "'", line_no);
      }
      entries[idx] += value;
    }
    SparseVector sv;
    sv.dim = dim;
    for (auto [idx, value] : entries) {
      sv.indices.push_back(idx);
      sv.values.push_back(value);
    }
    ex.content = std::move(sv);
    examples.push_back(std::move(ex));
  }
  if (examples.empty()) {
    throw ValidationError("feature file " + path.string() + " is empty");
  }
  return DomainDataset(domain_name, std::move(examples), labeled);
}

void SaveSparseFeatures(const DomainDataset& dataset,
                        const std::filesystem::path& path) {
  Require(dataset.mode() == CorpusMode::kFeatures,
          "sparse export needs feature examples");
  auto out = OpenForWrite(path);
  for (const Example& ex : dataset.examples()) {
    if (dataset.labeled()) out << *ex.label << '\t';
    const auto& sv = std::get<SparseVector>(ex.content);
    for (std::size_t k = 0; k < sv.nnz(); ++k) {
      if (k) out << ' ';
      out << sv.indices[k] << ':' << sv.values[k];
    }
    out << '\n';
  }
}

Vocabulary BuildVocabulary(std::span<const DomainDataset> datasets,
                           std::size_t max_size) {
  Require(max_size >= 2, "vocabulary max_size must be at least 2");
  std::unordered_map<std::string, std::size_t> counts;
  for (const DomainDataset& ds : datasets) {
    Require(ds.mode() == CorpusMode::kRawText,
            "vocabulary building needs raw-text datasets");
    for (const Example& ex : ds.examples()) {
      for (const std::string& w : std::get<RawText>(ex.content).words) {
        ++counts[w];
      }
    }
  }
  counts.erase(Vocabulary::PadToken());
  counts.erase(Vocabulary::UnkToken());
  Require(!counts.empty(), "no tokens to build a vocabulary from");

  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(),
                                                          counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> words = {Vocabulary::PadToken(),
                                    Vocabulary::UnkToken()};
  for (const auto& [w, c] : ranked) {
    if (words.size() >= max_size) break;
    words.push_back(w);
  }
  return Vocabulary(std::move(words));
}

DomainDataset FeaturizeBow(const DomainDataset& dataset,
                           const Vocabulary& vocab, std::size_t feature_dim) {
  Require(dataset.mode() == CorpusMode::kRawText,
          "featurize_bow needs raw-text examples");
  Require(feature_dim > 0, "feature_dim must be positive");
  Require(feature_dim <= vocab.size(),
          "feature_dim " + std::to_string(feature_dim) +
              " exceeds vocabulary size " + std::to_string(vocab.size()));
  std::vector<Example> out;
  out.reserve(dataset.size());
  for (const Example& ex : dataset.examples()) {
    std::map<std::uint32_t, double> counts;
    for (const std::string& w : std::get<RawText>(ex.content).words) {
      const std::int32_t idx = vocab.Index(w);
      if (idx < 2) continue;
      const auto column = static_cast<std::uint32_t>(idx - 2);
      if (column < feature_dim) counts[column] += 1.0;
    }
    SparseVector sv;
    sv.dim = static_cast<std::uint32_t>(feature_dim);
    for (auto [c, v] : counts) {
      sv.indices.push_back(c);
      sv.values.push_back(v);
    }
    Example fe;
    fe.content = std::move(sv);
    fe.label = ex.label;
    fe.domain_id = ex.domain_id;
    out.push_back(std::move(fe));
  }
  return DomainDataset(dataset.name(), std::move(out), dataset.labeled());
}

DomainDataset ToTokenIds(const DomainDataset& dataset,
                         const Vocabulary& vocab) {
  Require(dataset.mode() == CorpusMode::kRawText,
          "token conversion needs raw-text examples");
  std::vector<Example> out;
  out.reserve(dataset.size());
  for (const Example& ex : dataset.examples()) {
    TokenIds ids;
    for (const std::string& w : std::get<RawText>(ex.content).words) {
      ids.ids.push_back(vocab.Index(w));
    }
    Example te;
    te.content = std::move(ids);
    te.label = ex.label;
    te.domain_id = ex.domain_id;
    out.push_back(std::move(te));
  }
  return DomainDataset(dataset.name(), std::move(out), dataset.labeled());
}

// ---------------------------------------------------------------------------
// Synthetic suite.

void SyntheticSuiteSpec::Validate() const {
  Require(num_domains >= 2, "synthetic: num_domains must be >= 2");
  Require(static_cast<int>(shift.size()) == num_domains,
          "synthetic: need one shift per domain");
  for (double s : shift) {
    Require(s >= 0.0 && s <= 1.0, "synthetic: shift values must be in [0,1]");
  }
  Require(position.empty() || static_cast<int>(position.size()) == num_domains,
          "synthetic: need one position per domain");
  for (double p : position) {
    Require(p >= 0.0 && p <= 1.0, "synthetic: positions must be in [0,1]");
  }
  Require(examples_per_domain >= 2,
          "synthetic: examples_per_domain must be >= 2");
  Require(vocab_size >= 40, "synthetic: vocab_size must be >= 40");
  Require(polarity_flip_fraction >= 0.0 && polarity_flip_fraction <= 0.5,
          "synthetic: polarity_flip_fraction must be in [0,0.5]");
  Require(names.empty() || static_cast<int>(names.size()) == num_domains,
          "synthetic: names must match num_domains");
  Require(min_length >= 1 && max_length >= min_length,
          "synthetic: bad document length range");
  Require(sentiment_density > 0.0 && sentiment_density <= 1.0,
          "synthetic: sentiment_density must be in (0,1]");
  Require(private_token_fraction >= 0.0 && private_token_fraction <= 1.0,
          "synthetic: private_token_fraction must be in [0,1]");
  Require(label_noise >= 0.0 && label_noise < 0.5,
          "synthetic: label_noise must be in [0,0.5)");
}

std::string SyntheticSuiteSpec::DomainName(int i) const {
  return names.empty() ? "d" + std::to_string(i) : names.at(i);
}

namespace {

double ParseDouble(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ParseError("key '" + key + "' expects a real number, got '" + v +
                     "'");
  }
}

long long ParseInt(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    long long d = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ParseError("key '" + key + "' expects an integer, got '" + v + "'");
  }
}

std::vector<std::string> SplitComma(const std::string& v) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(v);
  while (std::getline(in, item, ',')) {
    out.emplace_back(Trim(item));
  }
  return out;
}

}  // namespace

SyntheticSuiteSpec SyntheticSuiteSpec::FromKeyValues(
    const std::map<std::string, std::string>& values) {
  SyntheticSuiteSpec spec;
  for (const auto& [key, v] : values) {
    if (key == "num_domains") {
      spec.num_domains = static_cast<int>(ParseInt(key, v));
    } else if (key == "shift") {
      spec.shift.clear();
      for (const auto& item : SplitComma(v)) {
        spec.shift.push_back(ParseDouble(key, item));
      }
    } else if (key == "position") {
      spec.position.clear();
      for (const auto& item : SplitComma(v)) {
        spec.position.push_back(ParseDouble(key, item));
      }
    } else if (key == "examples_per_domain") {
      spec.examples_per_domain = static_cast<int>(ParseInt(key, v));
    } else if (key == "vocab_size") {
      spec.vocab_size = static_cast<int>(ParseInt(key, v));
    } else if (key == "polarity_flip_fraction") {
      spec.polarity_flip_fraction = ParseDouble(key, v);
    } else if (key == "seed") {
      spec.seed = static_cast<std::uint64_t>(ParseInt(key, v));
    } else if (key == "names") {
      spec.names = SplitComma(v);
    } else if (key == "min_length") {
      spec.min_length = static_cast<int>(ParseInt(key, v));
    } else if (key == "max_length") {
      spec.max_length = static_cast<int>(ParseInt(key, v));
    } else if (key == "sentiment_density") {
      spec.sentiment_density = ParseDouble(key, v);
    } else if (key == "private_token_fraction") {
      spec.private_token_fraction = ParseDouble(key, v);
    } else if (key == "label_noise") {
      spec.label_noise = ParseDouble(key, v);
    } else {
      throw ParseError("unknown synthetic-suite key '" + key + "'");
    }
  }
  if (spec.shift.empty() && spec.num_domains >= 2) {
    for (int i = 0; i < spec.num_domains; ++i) {
      spec.shift.push_back(static_cast<double>(i) / (spec.num_domains - 1));
    }
  }
  spec.Validate();
  return spec;
}

std::vector<std::pair<std::string, std::string>> SyntheticSuiteSpec::ToKeyValues()
    const {
  auto join = [](const auto& items, auto fmt) {
    std::string out;
    for (const auto& x : items) {
      if (!out.empty()) out += ',';
      out += fmt(x);
    }
    return out;
  };
  auto real = [](double d) { return FormatDouble(d); };
  auto text = [](const std::string& s) { return s; };
  std::vector<std::pair<std::string, std::string>> kv = {
      {"num_domains", std::to_string(num_domains)},
      {"shift", join(shift, real)},
      {"examples_per_domain", std::to_string(examples_per_domain)},
      {"vocab_size", std::to_string(vocab_size)},
      {"polarity_flip_fraction", FormatDouble(polarity_flip_fraction)},
      {"seed", std::to_string(seed)},
      {"min_length", std::to_string(min_length)},
      {"max_length", std::to_string(max_length)},
      {"sentiment_density", FormatDouble(sentiment_density)},
      {"private_token_fraction", FormatDouble(private_token_fraction)},
      {"label_noise", FormatDouble(label_noise)},
  };
  if (!names.empty()) kv.emplace_back("names", join(names, text));
  if (!position.empty()) kv.emplace_back("position", join(position, real));
  return kv;
}

std::vector<std::pair<std::string, std::string>> ReadKeyValueFile(
    const std::filesystem::path& path) {
  auto in = OpenForRead(path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = line;
    if (auto hash = view.find('#'); hash != std::string_view::npos) {
      view = view.substr(0, hash);
    }
    view = Trim(view);
    if (view.empty()) continue;
    const auto eq = view.find('=');
    if (eq == std::string_view::npos) {
      throw ParseError("expected key=value", line_no);
    }
    std::string key(Trim(view.substr(0, eq)));
    if (key.empty()) throw ParseError("empty key", line_no);
    out.emplace_back(std::move(key), std::string(Trim(view.substr(eq + 1))));
  }
  return out;
}

SyntheticSuiteSpec SyntheticSuiteSpec::Load(const std::filesystem::path& path) {
  std::map<std::string, std::string> values;
  for (auto& [k, v] : ReadKeyValueFile(path)) values[k] = v;
  return FromKeyValues(values);
}

namespace {

// Token inventory derived from vocab_size: 15% shared sentiment, 35% shared
// neutral, 50% private pool. Even pool slots are sentiment words, with
// global polarity alternating every other slot.
struct Lexicon {
  std::vector<std::string> shared_pos, shared_neg, shared_neutral;
  int pool_size = 0;
  int window = 0;

  std::vector<double> flip_key;  // per pool slot, uniform in [0, 1)

  static Lexicon Build(int vocab_size, Rng& rng) {
    Lexicon lex;
    const int sentiment = std::max(4, vocab_size * 15 / 100) / 2 * 2;
    const int neutral = std::max(2, vocab_size * 35 / 100);
    lex.pool_size = std::max(8, vocab_size - sentiment - neutral) / 4 * 4;
    lex.window = lex.pool_size / 2;
    for (int i = 0; i < sentiment / 2; ++i) {
      lex.shared_pos.push_back("pos" + std::to_string(i));
      lex.shared_neg.push_back("neg" + std::to_string(i));
    }
    for (int i = 0; i < neutral; ++i) {
      lex.shared_neutral.push_back("w" + std::to_string(i));
    }
    lex.flip_key.resize(static_cast<std::size_t>(lex.pool_size));
    for (double& k : lex.flip_key) k = rng.Uniform();
    return lex;
  }

  static std::string PoolWord(int slot) { return "p" + std::to_string(slot); }
  static bool PoolIsSentiment(int slot) { return slot % 2 == 0; }
  static int PoolGlobalPolarity(int slot) { return (slot / 2) % 2 == 0; }
};

struct DomainLexicon {
  std::vector<std::string> pos, neg, neutral;
};

// A sentiment slot flips for a domain when its suite-wide key falls in a
// length-f interval that slides with the domain's position, so nearby domains
// flip mostly the same words and distant ones flip different words.
DomainLexicon BuildDomainLexicon(const Lexicon& lex, double position,
                                 double flip_fraction) {
  const int start = static_cast<int>(
      std::lround(position * static_cast<double>(lex.pool_size - lex.window)));
  const double lo = position * (1.0 - flip_fraction);
  const double hi = lo + flip_fraction;
  DomainLexicon out;
  for (int slot = start; slot < start + lex.window; ++slot) {
    if (!Lexicon::PoolIsSentiment(slot)) {
      out.neutral.push_back(Lexicon::PoolWord(slot));
      continue;
    }
    const double key = lex.flip_key[static_cast<std::size_t>(slot)];
    const bool flipped = key >= lo && key < hi;
    const int polarity = Lexicon::PoolGlobalPolarity(slot) ^ (flipped ? 1 : 0);
    (polarity ? out.pos : out.neg).push_back(Lexicon::PoolWord(slot));
  }
  return out;
}

const std::string& Pick(const std::vector<std::string>& words, Rng& rng) {
  return words[static_cast<std::size_t>(rng.Below(words.size()))];
}

}  // namespace

std::vector<DomainDataset> GenerateSyntheticSuite(
    const SyntheticSuiteSpec& spec) {
  spec.Validate();
  Rng master(spec.seed);
  Rng lexicon_rng = master.Fork(0);
  const Lexicon lex = Lexicon::Build(spec.vocab_size, lexicon_rng);
  std::vector<DomainDataset> suite;
  for (int d = 0; d < spec.num_domains; ++d) {
    Rng rng = master.Fork(static_cast<std::uint64_t>(d) + 1);
    const double shift = spec.shift[d];
    const DomainLexicon priv =
        BuildDomainLexicon(lex, spec.Position(d), spec.polarity_flip_fraction);

    std::vector<int> labels(spec.examples_per_domain);
    for (int i = 0; i < spec.examples_per_domain; ++i) labels[i] = i % 2;
    rng.Shuffle(labels);

    std::vector<Example> examples;
    examples.reserve(labels.size());
    for (int y : labels) {
      const bool private_doc = rng.Bernoulli(shift);
      const int length = rng.UniformInt(spec.min_length, spec.max_length);
      RawText text;
      text.words.reserve(static_cast<std::size_t>(length));
      for (int t = 0; t < length; ++t) {
        const bool from_private =
            private_doc && rng.Bernoulli(spec.private_token_fraction);
        const bool sentiment = rng.Bernoulli(spec.sentiment_density);
        if (sentiment) {
          const int polarity = rng.Bernoulli(spec.label_noise) ? 1 - y : y;
          if (from_private && !(polarity ? priv.pos : priv.neg).empty()) {
            text.words.push_back(Pick(polarity ? priv.pos : priv.neg, rng));
          } else {
            text.words.push_back(
                Pick(polarity ? lex.shared_pos : lex.shared_neg, rng));
          }
        } else {
          text.words.push_back(
              Pick(from_private ? priv.neutral : lex.shared_neutral, rng));
        }
      }
      Example ex;
      ex.content = std::move(text);
      ex.label = y;
      ex.domain_id = d;
      examples.push_back(std::move(ex));
    }
    suite.emplace_back(spec.DomainName(d), std::move(examples), true);
  }
  return suite;
}

DatasetSplit SplitDataset(const DomainDataset& dataset,
                          const SplitFractions& fractions, std::uint64_t seed) {
  Require(fractions.train > 0 && fractions.dev > 0 && fractions.test > 0,
          "split fractions must be positive");
  Require(std::abs(fractions.train + fractions.dev + fractions.test - 1.0) <
              1e-9,
          "split fractions must sum to 1");
  const auto n = static_cast<double>(dataset.size());
  const auto n_train = static_cast<std::size_t>(std::lround(n * fractions.train));
  const auto n_dev = static_cast<std::size_t>(std::lround(n * fractions.dev));
  if (n_train == 0 || n_dev == 0 || n_train + n_dev >= dataset.size()) {
    throw ValidationError("split of '" + dataset.name() + "' (" +
                          std::to_string(dataset.size()) +
                          " examples) leaves an empty part");
  }
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.Shuffle(order);
  std::span<const std::size_t> all(order);
  return DatasetSplit{dataset.Subset(all.subspan(0, n_train)),
                      dataset.Subset(all.subspan(n_train, n_dev)),
                      dataset.Subset(all.subspan(n_train + n_dev))};
}

}  // namespace msda
