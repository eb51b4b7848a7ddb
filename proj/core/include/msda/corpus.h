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

#ifndef MSDA_CORPUS_H_
#define MSDA_CORPUS_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "msda/common.h"

namespace msda {

// Raw tokenized text, before a vocabulary exists.
struct RawText {
  std::vector<std::string> words;
};

// Vocabulary indices; the input of convolutional extractors.
struct TokenIds {
  std::vector<std::int32_t> ids;
};

// Sparse real vector with sorted unique indices; the input of feedforward
// extractors.
struct SparseVector {
  std::uint32_t dim = 0;
  std::vector<std::uint32_t> indices;
  std::vector<double> values;

  std::size_t nnz() const { return indices.size(); }
};

enum class CorpusMode { kRawText, kTokens, kFeatures };

const char* CorpusModeName(CorpusMode mode);

struct Example {
  std::variant<RawText, TokenIds, SparseVector> content;
  std::optional<int> label;
  int domain_id = 0;

  CorpusMode mode() const { return static_cast<CorpusMode>(content.index()); }
};

// A named domain's examples. Immutable after construction; the constructor
// enforces the labeling and mode invariants.
class DomainDataset {
 public:
  DomainDataset(std::string name, std::vector<Example> examples, bool labeled);

  const std::string& name() const { return name_; }
  const std::vector<Example>& examples() const { return examples_; }
  const Example& operator[](std::size_t i) const { return examples_[i]; }
  std::size_t size() const { return examples_.size(); }
  bool labeled() const { return labeled_; }
  CorpusMode mode() const { return examples_.front().mode(); }

  // Copy with every label removed. This is how target data reaches training.
  DomainDataset WithoutLabels() const;
  DomainDataset WithDomainId(int domain_id) const;
  DomainDataset Renamed(std::string name) const;
  DomainDataset Subset(std::span<const std::size_t> indices) const;
  std::vector<int> Labels() const;

 private:
  std::string name_;
  std::vector<Example> examples_;
  bool labeled_;
};

// Lowercase and split on runs of non-alphanumeric characters.
std::vector<std::string> Tokenize(std::string_view text);

class Vocabulary {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnk = 1;

  // words[0] and words[1] must be the PAD and UNK spellings.
  explicit Vocabulary(std::vector<std::string> words);

  std::int32_t Index(std::string_view word) const;
  const std::string& Word(std::int32_t index) const { return words_.at(index); }
  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  static const char* PadToken() { return "<pad>"; }
  static const char* UnkToken() { return "<unk>"; }

  void Save(const std::filesystem::path& path) const;
  static Vocabulary Load(const std::filesystem::path& path);

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::int32_t> index_;
};

// Reads `label<TAB>text` lines (or `text` lines when unlabeled).
DomainDataset LoadLabeledTsv(const std::filesystem::path& path,
                             const std::string& domain_name, bool labeled);
void SaveLabeledTsv(const DomainDataset& dataset,
                    const std::filesystem::path& path);

// Reads `label<TAB>idx:count idx:count ...` lines. Unlabeled files omit the
// label column. Indices are 0-based and must be < dim.
DomainDataset LoadSparseFeatures(const std::filesystem::path& path,
                                 const std::string& domain_name, bool labeled,
                                 std::uint32_t dim);
void SaveSparseFeatures(const DomainDataset& dataset,
                        const std::filesystem::path& path);

// PAD, UNK, then the max_size-2 most frequent words over all datasets.
// Frequency ties are broken lexicographically.
Vocabulary BuildVocabulary(std::span<const DomainDataset> datasets,
                           std::size_t max_size);

// Bag-of-words term counts. Feature column j counts vocabulary entry j+2,
// so PAD and UNK never become features.
DomainDataset FeaturizeBow(const DomainDataset& dataset,
                           const Vocabulary& vocab, std::size_t feature_dim);

// Maps raw words to vocabulary indices (UNK for unknown words).
DomainDataset ToTokenIds(const DomainDataset& dataset, const Vocabulary& vocab);

// Parameters of the synthetic multi-domain sentiment generator.
//
// Vocabulary layout: a shared lexicon (global-polarity sentiment words plus
// neutral filler) and a private pool laid out on a line. A domain's private
// lexicon is a window of the pool placed by its position (its shift unless
// given), so positions 0 and 1 are disjoint and nearby positions overlap.
// Inside its window a domain flips the polarity of about
// polarity_flip_fraction of the sentiment words. Which words flip drifts
// with the position: every pool word has a fixed random key and a domain
// flips the keys inside an interval of width polarity_flip_fraction that
// slides from [0, f) at position 0 to [1 - f, 1) at position 1. Close
// domains therefore mostly agree on polarity and no single word-level rule fits distant domains at once.
//
// Each document draws from its domain's private lexicon with probability
// `shift`; such documents take private_token_fraction of their tokens from
// the window and the rest from the shared lexicon. The remaining documents
// use only the shared lexicon. The expected share of private-lexicon text in
// a domain grows with its shift, and for a pair (0, s) the proxy A-distance
// tends to 2*s, so larger shift gaps give larger distances.
struct SyntheticSuiteSpec {
  int num_domains = 4;
  std::vector<double> shift;
  int examples_per_domain = 1000;
  int vocab_size = 800;
  double polarity_flip_fraction = 0.1;
  std::uint64_t seed = 1;

  std::vector<std::string> names;  // Optional; defaults to d0, d1, ...
  // Optional placement of each private window; defaults to the shift.
  std::vector<double> position;
  int min_length = 20;
  int max_length = 60;
  double sentiment_density = 0.25;
  double private_token_fraction = 0.7;
  double label_noise = 0.2;

  void Validate() const;
  std::string DomainName(int i) const;
  double Position(int i) const {
    return position.empty() ? shift.at(i) : position.at(i);
  }

  // Flat key=value text; `shift` is a comma-separated list.
  static SyntheticSuiteSpec FromKeyValues(
      const std::map<std::string, std::string>& values);
  static SyntheticSuiteSpec Load(const std::filesystem::path& path);
  // Every field, in the form FromKeyValues reads.
  std::vector<std::pair<std::string, std::string>> ToKeyValues() const;
};

std::vector<DomainDataset> GenerateSyntheticSuite(
    const SyntheticSuiteSpec& spec);

struct SplitFractions {
  double train = 0.8;
  double dev = 0.1;
  double test = 0.1;
};

struct DatasetSplit {
  DomainDataset train;
  DomainDataset dev;
  DomainDataset test;
};

DatasetSplit SplitDataset(const DomainDataset& dataset,
                          const SplitFractions& fractions, std::uint64_t seed);

// Parses `key=value` lines, skipping blanks and `#` comments. Shared by the
// synthetic-suite file and the experiment config.
std::vector<std::pair<std::string, std::string>> ReadKeyValueFile(
    const std::filesystem::path& path);

}  // namespace msda

#endif  // MSDA_CORPUS_H_
