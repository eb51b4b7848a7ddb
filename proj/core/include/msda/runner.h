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

#ifndef MSDA_RUNNER_H_
#define MSDA_RUNNER_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "msda/corpus.h"
#include "msda/divergence.h"
#include "msda/nets.h"
#include "msda/pretrain.h"
#include "msda/sda.h"
#include "msda/toe.h"

namespace msda {

enum class Mechanism { kSda, kToe, kBoth, kBaselines };
const char* MechanismName(Mechanism m);
Mechanism ParseMechanism(std::string_view name);

enum class CorpusFormat { kSynthetic, kTsv, kFeatures };
const char* CorpusFormatName(CorpusFormat f);
CorpusFormat ParseCorpusFormat(std::string_view name);

struct CorpusConfig {
  CorpusFormat format = CorpusFormat::kSynthetic;
  // synthetic.* keys as given; see ExperimentConfig::Synthetic.
  std::map<std::string, std::string> synthetic;
  // Named files for kTsv and kFeatures.
  std::vector<std::pair<std::string, std::filesystem::path>> domains;
  // Bag-of-words width for raw text; also the width of feature files.
  std::uint32_t feature_dim = 5000;
  // Optional `word v1 v2 ...` file for the convolutional embedding.
  std::filesystem::path embeddings;
};

// Everything one experiment needs. The seeds inside the stage configs are
// ignored: every stage seed is derived from `seed` by a fixed offset.
struct ExperimentConfig {
  CorpusConfig corpus;
  SplitFractions split;
  std::string target = "rotate";
  Mechanism mechanism = Mechanism::kBoth;
  // Input sizes are filled in once the corpus is loaded.
  ModelConfig model = ModelConfig::Feedforward(1);
  Stage1Config stage1;
  SdaConfig sda;
  ToeConfig toe;
  ProxyClassifierConfig proxy;
  std::filesystem::path output_dir = "msda_out";
  std::uint64_t seed = 1;

  // Assigns one key. Unknown keys and malformed values throw ParseError
  // naming the key.
  void Set(const std::string& key, const std::string& value);
  // Ranges, and that referenced files exist (IoError otherwise).
  void Validate() const;
  // The synthetic suite; its seed follows the master seed unless
  // synthetic.seed is given.
  SyntheticSuiteSpec Synthetic() const;
  // Stage configs with their derived seeds filled in.
  Stage1Config Stage1() const;
  SdaConfig Sda() const;
  ToeConfig Toe() const;
  ProxyClassifierConfig Proxy() const;
  // Every setting as dotted key=value pairs, in a fixed order.
  std::vector<std::pair<std::string, std::string>> ToKeyValues() const;
  void WriteResolved(const std::filesystem::path& path) const;
};

// Applies pairs in order over the defaults, then validates.
ExperimentConfig ConfigFromKeyValues(
    const std::vector<std::pair<std::string, std::string>>& values);
ExperimentConfig ParseConfig(const std::filesystem::path& path);

// Output directory after applying the MSDA_OUTPUT_ROOT environment variable
// to relative paths.
std::filesystem::path ResolveOutputDir(const ExperimentConfig& config);

// Loaded, featurized and split domains plus the model shape they imply.
struct PreparedCorpus {
  std::vector<std::string> names;
  std::vector<DatasetSplit> splits;
  ModelConfig model;
  std::optional<Vocabulary> vocab;

  int Index(const std::string& name) const;
};

PreparedCorpus PrepareCorpus(const ExperimentConfig& config);

// Proxy A-distances between the domains' training splits (labels dropped).
DistanceMatrix ComputeCorpusDistances(const ExperimentConfig& config,
                                      const PreparedCorpus& corpus);

// Stage 1 with `target` held out; the target's training split enters only
// without labels. Writes checkpoints and metrics under out_dir when given.
PretrainResult PretrainForTarget(const ExperimentConfig& config,
                                 const PreparedCorpus& corpus,
                                 const std::string& target,
                                 const std::filesystem::path& out_dir = {});

struct ResultsTable {
  std::vector<std::string> methods;
  std::vector<std::string> targets;
  // NaN marks a method that did not run for that target.
  std::vector<std::vector<double>> cells;

  static std::vector<std::string> DefaultMethods();

  void AddRow(const std::string& target,
              const std::map<std::string, double>& accuracy);
  // Mean of the column's finite cells; NaN when there are none.
  double Average(std::size_t column) const;
  bool operator==(const ResultsTable& other) const;

  // Full-precision CSV that LoadRaw reads back.
  void SaveRaw(const std::filesystem::path& path) const;
  static ResultsTable LoadRaw(const std::filesystem::path& path);
};

enum class ReportFormat { kCsv, kMarkdown };
ReportFormat ParseReportFormat(std::string_view name);

// Percentages with one decimal and a final average row. Markdown marks the
// best cell of each row in bold.
std::string RenderReport(const ResultsTable& table, ReportFormat format);
void EmitReport(const ResultsTable& table, ReportFormat format,
                const std::filesystem::path& path);

// Accuracy of every method for one target. Artifacts go under out_dir.
std::map<std::string, double> RunTarget(const ExperimentConfig& config,
                                        const PreparedCorpus& corpus,
                                        const DistanceMatrix& matrix,
                                        const std::string& target,
                                        const std::filesystem::path& out_dir);

struct ExperimentResult {
  ResultsTable table;
  std::filesystem::path output_dir;
};

// Leave-one-out (or single target) protocol. Writes the resolved config,
// distance matrix, per-target artifacts, reports and manifest.json. On
// failure the manifest records status "failed" and the error is rethrown.
ExperimentResult RunExperiment(const ExperimentConfig& config);

// Lists every file under dir (except manifest.json) with size and CRC-32.
void WriteManifest(const std::filesystem::path& dir, const std::string& status,
                   const std::string& error = {});

}  // namespace msda

#endif  // MSDA_RUNNER_H_
