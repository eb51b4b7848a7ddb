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

// Command-line front end: pretrain, adist, sda, toe, run and report.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "msda/checkpoint.h"
#include "msda/runner.h"

namespace fs = std::filesystem;

namespace {

// Exit codes: 0 success, 1 runtime failure, 2 bad usage or configuration.
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct CommonOptions {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  // Flag values that map straight onto config keys.
  std::map<std::string, std::string> keyed;
};

void AddCommon(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("-c,--config", o.config, "key=value experiment config file")
      ->check(CLI::ExistingFile);
  cmd->add_option("--set", o.sets, "override one config key (key=value)");
  cmd->add_option("-o,--out", o.out, "output directory (overrides output_dir)");
}

// Registers a flag that sets `key` when given.
void AddKeyed(CLI::App* cmd, CommonOptions& o, const std::string& flag,
              const std::string& key, const std::string& help) {
  cmd->add_option_function<std::string>(
      flag, [&o, key](const std::string& v) { o.keyed[key] = v; }, help);
}

msda::ExperimentConfig BuildConfig(const CommonOptions& o) {
  std::vector<std::pair<std::string, std::string>> values;
  fs::path base;
  if (!o.config.empty()) {
    values = msda::ReadKeyValueFile(o.config);
    base = fs::path(o.config).parent_path();
  }
  for (const auto& [k, v] : o.keyed) values.emplace_back(k, v);
  for (const std::string& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw msda::ParseError("--set expects key=value, got '" + s + "'");
    }
    values.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  if (!o.out.empty()) values.emplace_back("output_dir", o.out);
  msda::ExperimentConfig c;
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

std::string SingleTarget(const msda::ExperimentConfig& c) {
  if (c.target == "rotate") {
    throw msda::ValidationError("this command needs a single --target domain");
  }
  return c.target;
}

msda::DistanceMatrix LoadOrComputeMatrix(const msda::ExperimentConfig& c,
                                         const msda::PreparedCorpus& corpus,
                                         const std::string& matrix_path) {
  if (!matrix_path.empty()) return msda::DistanceMatrix::ReadCsv(matrix_path);
  return msda::ComputeCorpusDistances(c, corpus);
}

// Stage 1 model from a checkpoint, or trained now when none is given.
msda::SharedPrivateModel LoadOrPretrain(const msda::ExperimentConfig& c,
                                        const msda::PreparedCorpus& corpus,
                                        const std::string& target,
                                        const std::string& checkpoint,
                                        const fs::path& out) {
  if (!checkpoint.empty()) {
    msda::SharedPrivateModel model = msda::LoadModel(checkpoint);
    for (const std::string& s : model.sources) corpus.Index(s);
    if (std::find(model.sources.begin(), model.sources.end(), target) !=
        model.sources.end()) {
      throw msda::ValidationError("checkpoint was trained with '" + target +
                                  "' as a labeled source");
    }
    msda::CheckCorpusMatches(
        model.config.shared,
        corpus.splits[static_cast<std::size_t>(corpus.Index(target))].train);
    return model;
  }
  return msda::PretrainForTarget(c, corpus, target, out / target / "stage1")
      .model;
}

std::vector<msda::DomainDataset> SourceTrain(const msda::PreparedCorpus& corpus,
                                             const msda::SharedPrivateModel& m) {
  std::vector<msda::DomainDataset> out;
  for (const std::string& s : m.sources) {
    out.push_back(corpus.splits[static_cast<std::size_t>(corpus.Index(s))].train);
  }
  return out;
}

int CmdPretrain(const CommonOptions& o) {
  const msda::ExperimentConfig c = BuildConfig(o);
  const std::string target = SingleTarget(c);
  const fs::path out = msda::ResolveOutputDir(c);
  const msda::PreparedCorpus corpus = msda::PrepareCorpus(c);
  const fs::path dir = out / target / "stage1";
  const msda::PretrainResult r = msda::PretrainForTarget(c, corpus, target, dir);
  std::cout << "stage1 checkpoint: " << (dir / "stage1_best.ckpt").string() << '\n';
  std::cout << "zero-private accuracy on " << target << " test: "
            << msda::FormatDouble(msda::EvaluateAccuracy(
                   r.model,
                   corpus.splits[static_cast<std::size_t>(corpus.Index(target))].test,
                   nullptr))
            << '\n';
  return 0;
}

int CmdAdist(const CommonOptions& o, bool long_format) {
  const msda::ExperimentConfig c = BuildConfig(o);
  const fs::path out = msda::ResolveOutputDir(c);
  const msda::PreparedCorpus corpus = msda::PrepareCorpus(c);
  const msda::DistanceMatrix m = msda::ComputeCorpusDistances(c, corpus);
  m.WriteCsv(out / "adist.csv");
  if (long_format) m.WriteLongCsv(out / "adist_long.csv");
  std::ifstream in(out / "adist.csv");
  std::cout << in.rdbuf();
  return 0;
}

int CmdSda(const CommonOptions& o, const std::string& checkpoint_in,
           const std::string& checkpoint_out, const std::string& matrix_path) {
  const msda::ExperimentConfig c = BuildConfig(o);
  const std::string target = SingleTarget(c);
  const fs::path out = msda::ResolveOutputDir(c);
  const msda::PreparedCorpus corpus = msda::PrepareCorpus(c);
  const msda::DatasetSplit& split =
      corpus.splits[static_cast<std::size_t>(corpus.Index(target))];
  const msda::DistanceMatrix matrix = LoadOrComputeMatrix(c, corpus, matrix_path);
  const msda::SharedPrivateModel model =
      LoadOrPretrain(c, corpus, target, checkpoint_in, out);
  const msda::SdaResult r = msda::RunSda(model, SourceTrain(corpus, model),
                                         split.train.WithoutLabels(), matrix,
                                         target, c.Sda());
  const fs::path dir = out / target / "sda";
  const auto test = msda::BatchOf(split.test);
  const msda::Prediction pred = msda::PredictTargetSda(r.state, test);
  msda::SaveSdaState(r.state, checkpoint_out.empty() ? dir / "sda_state.ckpt"
                                                     : fs::path(checkpoint_out));
  r.log.WriteCsv(dir / "metrics.csv");
  msda::WritePredictionsTsv(pred, dir / "predictions.tsv");
  std::cout << "selected source: " << r.state.selected_source << '\n'
            << "SDA accuracy on " << target << " test: "
            << msda::FormatDouble(pred.Accuracy(test)) << '\n';
  return 0;
}

int CmdToe(const CommonOptions& o, const std::string& checkpoint_in,
           const std::string& checkpoint_out, const std::string& matrix_path) {
  const msda::ExperimentConfig c = BuildConfig(o);
  const std::string target = SingleTarget(c);
  const fs::path out = msda::ResolveOutputDir(c);
  const msda::PreparedCorpus corpus = msda::PrepareCorpus(c);
  const msda::DatasetSplit& split =
      corpus.splits[static_cast<std::size_t>(corpus.Index(target))];
  const msda::DistanceMatrix matrix = LoadOrComputeMatrix(c, corpus, matrix_path);
  const msda::SharedPrivateModel model =
      LoadOrPretrain(c, corpus, target, checkpoint_in, out);
  const msda::ToeConfig toe = c.Toe();
  const int k = std::min<int>(toe.k_sources, static_cast<int>(model.sources.size()));
  const auto top = msda::SelectTopK(matrix, target, k, model.sources);
  const msda::ToeResult r =
      msda::RunToe(model, split.train.WithoutLabels(), top, toe);
  const fs::path dir = out / target / "toe";
  const auto test = msda::BatchOf(split.test);
  const msda::Prediction pred = msda::PredictTargetToe(r.ensemble, test);
  r.labels.WriteAuditTsv(dir / "pseudo_labels.tsv");
  msda::WritePredictionsTsv(pred, dir / "predictions.tsv");
  msda::SaveEnsemble(r.ensemble, model.config,
                     checkpoint_out.empty() ? dir / "ensemble.ckpt"
                                            : fs::path(checkpoint_out));
  std::cout << "ensemble sources:";
  for (const auto& s : top) std::cout << ' ' << s;
  std::cout << "\npseudo labels: " << r.labels.entries.size() << " of "
            << r.labels.pool_size << " over " << r.labels.delta_trace.size()
            << " sweeps\nTOE accuracy on " << target << " test: "
            << msda::FormatDouble(pred.Accuracy(test)) << '\n';
  return 0;
}

int CmdRun(const CommonOptions& o) {
  const msda::ExperimentConfig c = BuildConfig(o);
  const msda::ExperimentResult r = msda::RunExperiment(c);
  std::cout << msda::RenderReport(r.table, msda::ReportFormat::kMarkdown)
            << "artifacts: " << r.output_dir.string() << '\n';
  return 0;
}

int CmdReport(const std::string& results, const std::string& format,
              const std::string& out) {
  const msda::ResultsTable t = msda::ResultsTable::LoadRaw(results);
  const msda::ReportFormat f = msda::ParseReportFormat(format);
  if (out.empty()) {
    std::cout << msda::RenderReport(t, f);
  } else {
    msda::EmitReport(t, f, out);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage multi-source domain adaptation for sentiment"};
  app.require_subcommand(1);

  CommonOptions pretrain_o, adist_o, sda_o, toe_o, run_o;

  CLI::App* pretrain = app.add_subcommand("pretrain", "Stage 1 with one held-out target");
  AddCommon(pretrain, pretrain_o);
  AddKeyed(pretrain, pretrain_o, "-t,--target", "target", "held-out target domain");
  AddKeyed(pretrain, pretrain_o, "--epochs", "stage1.epochs", "training epochs");
  AddKeyed(pretrain, pretrain_o, "--lambda1", "stage1.lambda1", "adversarial weight");

  bool long_format = false;
  CLI::App* adist = app.add_subcommand("adist", "proxy A-distance matrix");
  AddCommon(adist, adist_o);
  adist->add_flag("--long", long_format, "also write adist_long.csv");

  std::string sda_ckpt_in, sda_ckpt_out, sda_matrix;
  CLI::App* sda = app.add_subcommand("sda", "selective domain adaptation");
  AddCommon(sda, sda_o);
  AddKeyed(sda, sda_o, "-t,--target", "target", "target domain");
  AddKeyed(sda, sda_o, "--lambda2", "sda.lambda2", "alignment weight");
  AddKeyed(sda, sda_o, "--lambda-theta", "sda.lambda_theta", "parameter tie weight");
  AddKeyed(sda, sda_o, "--iter1", "sda.iter1", "alignment warm-up iterations");
  AddKeyed(sda, sda_o, "--iter2", "sda.iter2", "joint iterations");
  sda->add_option("--checkpoint-in", sda_ckpt_in, "Stage 1 checkpoint")
      ->check(CLI::ExistingFile);
  sda->add_option("--checkpoint-out", sda_ckpt_out, "where to save the SDA state");
  sda->add_option("--matrix", sda_matrix, "distance matrix CSV from adist")
      ->check(CLI::ExistingFile);

  std::string toe_ckpt_in, toe_ckpt_out, toe_matrix;
  CLI::App* toe = app.add_subcommand("toe", "target-oriented ensemble");
  AddCommon(toe, toe_o);
  AddKeyed(toe, toe_o, "-t,--target", "target", "target domain");
  AddKeyed(toe, toe_o, "--delta0", "toe.delta0", "initial threshold");
  AddKeyed(toe, toe_o, "--eta", "toe.eta", "threshold decay per sweep");
  AddKeyed(toe, toe_o, "--n-min", "toe.n_min", "minimum gain over two sweeps");
  AddKeyed(toe, toe_o, "-k,--k-sources", "toe.k_sources", "ensemble size");
  AddKeyed(toe, toe_o, "--iter", "toe.finetune_iter", "finetune iterations");
  toe->add_option("--checkpoint-in", toe_ckpt_in, "Stage 1 checkpoint")
      ->check(CLI::ExistingFile);
  toe->add_option("--checkpoint-out", toe_ckpt_out, "where to save the ensemble");
  toe->add_option("--matrix", toe_matrix, "distance matrix CSV from adist")
      ->check(CLI::ExistingFile);

  CLI::App* run = app.add_subcommand("run", "full leave-one-out protocol");
  AddCommon(run, run_o);
  AddKeyed(run, run_o, "-t,--target", "target", "single target or rotate");
  AddKeyed(run, run_o, "-m,--mechanism", "mechanism", "sda, toe, both or baselines");

  std::string report_in, report_format = "markdown", report_out;
  CLI::App* report = app.add_subcommand("report", "render a results table");
  report->add_option("results", report_in, "results_raw.csv from run")
      ->required()
      ->check(CLI::ExistingFile);
  report->add_option("-f,--format", report_format, "csv or markdown");
  report->add_option("-o,--out", report_out, "output file (stdout if absent)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitUsage;
  }

  try {
    if (*pretrain) return CmdPretrain(pretrain_o);
    if (*adist) return CmdAdist(adist_o, long_format);
    if (*sda) return CmdSda(sda_o, sda_ckpt_in, sda_ckpt_out, sda_matrix);
    if (*toe) return CmdToe(toe_o, toe_ckpt_in, toe_ckpt_out, toe_matrix);
    if (*run) return CmdRun(run_o);
    if (*report) return CmdReport(report_in, report_format, report_out);
  } catch (const msda::ParseError& e) {
    std::fprintf(stderr, "msda: config error: %s\n", e.what());
    return kExitUsage;
  } catch (const msda::ValidationError& e) {
    std::fprintf(stderr, "msda: invalid input: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "msda: %s\n", e.what());
    return kExitFailure;
  }
  return kExitUsage;
}
