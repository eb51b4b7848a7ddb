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

// End-to-end acceptance checks. Prints one PASS, FAIL or SKIP line per
// criterion and exits non-zero when any criterion fails. Thresholds are fixed
// here; nothing is read from the environment except the optional real-data
// directory.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "gradient_checks.h"
#include "msda/checkpoint.h"
#include "msda/runner.h"

namespace msda {
namespace {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

int failures = 0;

void Report(bool pass, const std::string& name, const std::string& detail) {
  std::printf("%s  %s: %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

void Skip(const std::string& name, const std::string& reason) {
  std::printf("SKIP  %s: %s\n", name.c_str(), reason.c_str());
  std::fflush(stdout);
}

std::string Fmt(const char* format, double a, double b = 0.0, double c = 0.0,
                double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), format, a, b, c, d);
  return buf;
}

double Seconds(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
      .count();
}

// Tolerances.
constexpr double kIdenticalMaxDistance = 0.2;
constexpr double kDisjointMinDistance = 1.6;
constexpr double kSourceDevMin = 0.90;
constexpr double kZeroTargetMin = 0.75;
constexpr double kGradientSeconds = 60.0;
constexpr double kSelectivityPoints = 2.0;
constexpr double kSdaOverZeroPoints = 1.0;
constexpr double kPrecisionMin = 0.90;
constexpr double kToeOverAEnsPoints = 0.5;
constexpr double kAmazonSdaAverage = 83.08;
constexpr double kAmazonTolerance = 1.5;
const std::vector<std::uint64_t> kSeeds = {1, 2, 3};

// ---------------------------------------------------------------------------
// Proxy A-distance

// Two halves of one synthetic domain share a distribution; renaming every
// word of the second half gives a pair with disjoint lexicons.
void ADistanceOracle() {
  SyntheticSuiteSpec spec;
  spec.num_domains = 2;
  spec.shift = {0.0, 0.0};
  spec.examples_per_domain = 6000;
  spec.seed = 11;
  const DomainDataset all = GenerateSyntheticSuite(spec).front();
  std::vector<Example> first(all.examples().begin(), all.examples().begin() + 3000);
  std::vector<Example> second(all.examples().begin() + 3000, all.examples().end());
  std::vector<Example> renamed = second;
  for (Example& e : renamed) {
    for (std::string& w : std::get<RawText>(e.content).words) w = "x_" + w;
  }
  const DomainDataset a("a", std::move(first), true);
  const DomainDataset b("b", std::move(second), true);
  const DomainDataset c("c", std::move(renamed), true);
  ProxyClassifierConfig proxy;
  const double same = std::clamp(ADistance(EstimateProxyError(a, b, proxy)), 0.0, 2.0);
  const double apart = std::clamp(ADistance(EstimateProxyError(a, c, proxy)), 0.0, 2.0);
  const bool formula =
      ADistance(0.5) == 0.0 && ADistance(0.0) == 2.0 && ADistance(0.25) == 1.0;
  Report(same <= kIdenticalMaxDistance && apart >= kDisjointMinDistance && formula,
         "A-distance oracle",
         Fmt("identical %.3f (<= %.1f), disjoint %.3f (>= %.1f), ", same,
             kIdenticalMaxDistance, apart, kDisjointMinDistance) +
             "formula " + (formula ? "exact" : "WRONG"));
}

void DistanceOrdering() {
  int ok = 0;
  std::string detail;
  for (std::uint64_t seed : kSeeds) {
    const ExperimentConfig config = ConfigFromKeyValues(
        {{"seed", std::to_string(seed)},
         {"synthetic.num_domains", "3"},
         {"synthetic.shift", "0,0.4,0.9"},
         {"split.train", "0.8"}, {"split.dev", "0.1"}, {"split.test", "0.1"}});
    const PreparedCorpus corpus = PrepareCorpus(config);
    const DistanceMatrix m = ComputeCorpusDistances(config, corpus);
    const double d01 = m.at("d0", "d1"), d02 = m.at("d0", "d2");
    if (d01 < d02) ++ok;
    detail += Fmt("[seed %.0f: %.3f < %.3f] ", static_cast<double>(seed), d01, d02);
  }
  Report(ok == static_cast<int>(kSeeds.size()), "Distance-ordering fidelity",
         std::to_string(ok) + "/" + std::to_string(kSeeds.size()) + " seeds " + detail);
}

// ---------------------------------------------------------------------------
// Stage 1

void Stage1Competence() {
  const ExperimentConfig config = ConfigFromKeyValues(
      {{"seed", "1"}, {"target", "d0"}, {"stage1.learning_rate", "1e-3"},
       {"stage1.epochs", "10"}});
  const PreparedCorpus corpus = PrepareCorpus(config);
  const PretrainResult r = PretrainForTarget(config, corpus, "d0");
  double worst = 1.0;
  std::string detail;
  for (const std::string& s : r.model.sources) {
    const double acc = EvaluateAccuracy(
        r.model, corpus.splits[static_cast<std::size_t>(corpus.Index(s))].dev,
        &r.model.Private(s));
    worst = std::min(worst, acc);
    detail += s + Fmt(" %.3f, ", acc);
  }
  const double zero =
      EvaluateAccuracy(r.model, corpus.splits[0].test, nullptr);
  Report(worst >= kSourceDevMin && zero >= kZeroTargetMin &&
             config.stage1.epochs <= 20,
         "Stage-1 competence",
         "dev " + detail + Fmt("min %.3f (>= %.2f); ZERO target %.3f (>= %.2f)", worst,
                               kSourceDevMin, zero, kZeroTargetMin));
}

void GradientCorrectness() {
  const auto start = std::chrono::steady_clock::now();
  const auto checks = testing::AllGradientChecks();
  const double secs = Seconds(start);
  double worst = 0.0;
  std::string failed;
  for (const auto& c : checks) {
    worst = std::max(worst, c.relative_error);
    if (!c.ok()) failed += " " + c.name;
  }
  const std::size_t params = testing::LargestGradientNetwork();
  Report(failed.empty() && params <= 50 && secs < kGradientSeconds,
         "Gradient correctness",
         std::to_string(checks.size()) + " checks, max rel err " + Fmt("%.2e", worst) +
             Fmt(" (<= %.0e), largest net %.0f params, %.2fs", testing::kGradientTolerance,
                 static_cast<double>(params), secs) +
             (failed.empty() ? "" : "; failed:" + failed));
}

// ---------------------------------------------------------------------------
// Adaptation on the synthetic suite: target d0, one remote domain (d4).

KeyValues SuiteConfig(std::uint64_t seed) {
  return {{"seed", std::to_string(seed)},
          {"target", "d0"},
          {"synthetic.num_domains", "5"},
          {"synthetic.shift", "0.6,0.6,0.6,0.6,0.9"},
          {"synthetic.position", "0.5,0.6,0.75,0.3,1.0"},
          {"synthetic.polarity_flip_fraction", "0.5"},
          {"synthetic.examples_per_domain", "2000"},
          {"split.train", "0.5"},
          {"split.dev", "0.1"},
          {"split.test", "0.4"},
          {"stage1.learning_rate", "1e-3"},
          {"stage1.epochs", "10"},
          {"sda.learning_rate", "1e-4"},
          {"sda.iter1", "500"},
          {"sda.iter2", "2000"},
          {"toe.learning_rate", "1e-3"},
          {"toe.finetune_iter", "500"}};
}

struct SeedOutcome {
  std::map<std::string, double> acc;  // ZERO, SDA-closest, SDA-farthest, ensembles
  std::size_t accepted_at_top = 0;
  std::size_t correct_at_top = 0;
  bool partition_every_sweep = true;
  bool trace_exact = true;
  std::size_t sweeps = 0;
};

SeedOutcome RunSuiteSeed(std::uint64_t seed) {
  const ExperimentConfig config = ConfigFromKeyValues(SuiteConfig(seed));
  const PreparedCorpus corpus = PrepareCorpus(config);
  const DistanceMatrix matrix = ComputeCorpusDistances(config, corpus);
  const std::string target = "d0";
  const DatasetSplit& split = corpus.splits[static_cast<std::size_t>(corpus.Index(target))];
  const DomainDataset unlabeled = split.train.WithoutLabels();
  const auto test = BatchOf(split.test);
  const SharedPrivateModel model = PretrainForTarget(config, corpus, target).model;

  SeedOutcome out;
  out.acc["ZERO"] = EvaluateAccuracy(model, split.test, nullptr);

  const ToeConfig toe = config.Toe();
  const int k = std::min<int>(toe.k_sources, static_cast<int>(model.sources.size()));
  const auto top = SelectTopK(matrix, target, k, model.sources);
  const auto last = SelectTopK(matrix, target, k, model.sources, RankOrder::kFarthest);
  out.acc["A-Ens"] = EnsembleAccuracy(MakeEnsemble(model, model.sources), split.test);
  out.acc["T-Ens"] = EnsembleAccuracy(MakeEnsemble(model, top), split.test);
  out.acc["L-Ens"] = EnsembleAccuracy(MakeEnsemble(model, last), split.test);

  const std::string closest = SelectClosest(matrix, target, model.sources);
  const std::string farthest =
      SelectTopK(matrix, target, 1, model.sources, RankOrder::kFarthest).front();
  for (const auto& [label, source] :
       {std::pair<std::string, std::string>{"SDA", closest}, {"SDA-farthest", farthest}}) {
    const SdaResult r = RunSda(
        model, corpus.splits[static_cast<std::size_t>(corpus.Index(source))].train,
        unlabeled, source, config.Sda());
    out.acc[label] = PredictTargetSda(r.state, test).Accuracy(test);
  }

  // The labeling loop exactly as TOE runs it, observed sweep by sweep.
  PseudoLabelLoop(MakeEnsemble(model, top), unlabeled, toe,
                  [&](const PseudoLabelSet& s) {
                    out.partition_every_sweep &= s.PartitionHolds();
                    const std::size_t i = s.delta_trace.size() - 1;
                    // Independent oracle: hundredths, floored at one half.
                    const double expected =
                        std::max(0.5, (98.0 - 2.0 * static_cast<double>(i)) / 100.0);
                    out.trace_exact &= s.delta_trace.back() == expected;
                  });
  const ToeResult r = RunToe(model, unlabeled, top, toe);
  out.sweeps = r.labels.delta_trace.size();
  for (const PseudoLabel& p : r.labels.entries) {
    if (p.delta != 0.98) continue;
    ++out.accepted_at_top;
    if (p.label == *split.train[p.index].label) ++out.correct_at_top;
  }
  out.acc["TOE"] = PredictTargetToe(r.ensemble, test).Accuracy(test);
  return out;
}

void AdaptationCriteria() {
  std::vector<SeedOutcome> runs;
  for (std::uint64_t seed : kSeeds) {
    const auto start = std::chrono::steady_clock::now();
    runs.push_back(RunSuiteSeed(seed));
    std::printf("      seed %llu (%.0fs):", static_cast<unsigned long long>(seed),
                Seconds(start));
    for (const auto& [m, v] : runs.back().acc) std::printf(" %s %.1f", m.c_str(), 100.0 * v);
    std::printf("\n");
  }
  auto mean = [&](const std::string& m) {
    double s = 0.0;
    for (const auto& r : runs) s += r.acc.at(m);
    return 100.0 * s / static_cast<double>(runs.size());
  };
  const double zero = mean("ZERO"), sda = mean("SDA"), far = mean("SDA-farthest");
  const double a = mean("A-Ens"), t = mean("T-Ens"), l = mean("L-Ens"), toe = mean("TOE");

  Report(sda - far >= kSelectivityPoints, "SDA selectivity",
         Fmt("closest %.2f vs farthest %.2f: %+.2f points (>= %.1f)", sda, far, sda - far,
             kSelectivityPoints));
  Report(sda - zero >= kSdaOverZeroPoints, "SDA over baseline",
         Fmt("SDA %.2f vs ZERO %.2f: %+.2f points (>= %.1f)", sda, zero, sda - zero,
             kSdaOverZeroPoints));

  std::size_t accepted = 0, correct = 0, max_sweeps = 0;
  bool partition = true, trace = true;
  for (const auto& r : runs) {
    accepted += r.accepted_at_top;
    correct += r.correct_at_top;
    partition &= r.partition_every_sweep;
    trace &= r.trace_exact;
    max_sweeps = std::max(max_sweeps, r.sweeps);
  }
  // The full schedule down to the floor, beyond what the runs reached.
  const ToeConfig defaults;
  for (int i = 0; i < 60; ++i) {
    trace &= DeltaAtSweep(defaults, i) == std::max(0.5, (98.0 - 2.0 * i) / 100.0);
  }
  const double precision =
      accepted ? static_cast<double>(correct) / static_cast<double>(accepted) : 0.0;
  Report(partition && trace && accepted > 0 && precision >= kPrecisionMin,
         "TOE loop invariants",
         std::string("partition ") + (partition ? "held" : "BROKEN") + " every sweep, " +
             "delta trace " + (trace ? "exact" : "WRONG") +
             Fmt(", precision at 0.98 = %.3f over %.0f labels (>= %.2f)", precision,
                 static_cast<double>(accepted), kPrecisionMin));

  Report(toe >= t && t >= a && a >= l && toe - a >= kToeOverAEnsPoints,
         "Ensemble ordering",
         Fmt("TOE %.2f >= T-Ens %.2f >= A-Ens %.2f", toe, t, a) +
             Fmt(" >= L-Ens %.2f; TOE - A-Ens %+.2f (>= %.1f)", l, toe - a,
                 kToeOverAEnsPoints));
}

// ---------------------------------------------------------------------------
// Determinism and persistence

void Determinism() {
  const auto root = std::filesystem::temp_directory_path() / "msda_acceptance";
  std::filesystem::remove_all(root);
  auto tiny = [&](const std::string& sub) {
    return KeyValues{{"output_dir", (root / sub).string()},
                     {"split.train", "0.6"}, {"split.dev", "0.2"}, {"split.test", "0.2"},
                     {"synthetic.examples_per_domain", "150"},
                     {"model.shared_dim", "16"}, {"model.shared_hidden", "32"},
                     {"model.private_dim", "8"}, {"model.private_hidden", "16"},
                     {"stage1.epochs", "2"}, {"stage1.learning_rate", "1e-3"},
                     {"sda.iter1", "10"}, {"sda.iter2", "20"},
                     {"toe.finetune_iter", "10"}, {"toe.learning_rate", "1e-3"}};
  };
  const ExperimentResult a = RunExperiment(ConfigFromKeyValues(tiny("a")));
  const ExperimentResult b = RunExperiment(ConfigFromKeyValues(tiny("b")));
  const bool same_table = a.table == b.table;

  // Round-trip every Stage 1 checkpoint the run wrote.
  bool bit_exact = true;
  int checked = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(a.output_dir)) {
    if (e.path().filename() != "stage1_best.ckpt") continue;
    const SharedPrivateModel m = LoadModel(e.path());
    const auto copy = root / "copy.ckpt";
    SaveModel(m, copy);
    const SharedPrivateModel back = LoadModel(copy);
    bit_exact &= m.shared.params().Flatten() == back.shared.params().Flatten() &&
                 m.classifier.params().Flatten() == back.classifier.params().Flatten() &&
                 m.discriminator.params().Flatten() == back.discriminator.params().Flatten();
    for (const auto& s : m.sources) {
      bit_exact &= m.Private(s).params().Flatten() == back.Private(s).params().Flatten();
    }
    bit_exact &= FileCrc32(copy) == FileCrc32(e.path());
    ++checked;
  }
  Report(same_table && bit_exact && checked > 0, "Determinism & persistence",
         std::string("results table ") + (same_table ? "identical" : "DIFFERS") +
             " across two runs; " + std::to_string(checked) + " checkpoints round-trip " +
             (bit_exact ? "bit-exact" : "NOT bit-exact"));
  std::filesystem::remove_all(root);
}

// ---------------------------------------------------------------------------
// Real data

void AmazonReplication() {
  const std::string name = "Amazon leave-one-out SDA";
  const char* dir = std::getenv("MSDA_AMAZON_DIR");
  if (dir == nullptr || *dir == '\0') {
    Skip(name, "set MSDA_AMAZON_DIR to a directory with books.tsv, dvd.tsv, "
               "electronics.tsv and kitchen.tsv (multi-hour run)");
    return;
  }
  const std::filesystem::path root(dir);
  std::string domains;
  for (const char* d : {"books", "dvd", "electronics", "kitchen"}) {
    if (!domains.empty()) domains += ",";
    domains += std::string(d) + ":" + (root / (std::string(d) + ".tsv")).string();
  }
  const ExperimentConfig config = ConfigFromKeyValues(
      {{"corpus.format", "tsv"},
       {"corpus.domains", domains},
       {"mechanism", "sda"},
       {"output_dir", (std::filesystem::temp_directory_path() / "msda_amazon").string()}});
  const ExperimentResult r = RunExperiment(config);
  const double avg = 100.0 * r.table.Average(1);  // SDA column
  Report(std::abs(avg - kAmazonSdaAverage) <= kAmazonTolerance, name,
         Fmt("average %.2f vs %.2f (+/- %.1f)", avg, kAmazonSdaAverage, kAmazonTolerance));
}

}  // namespace
}  // namespace msda

int main() {
  using namespace msda;
  const auto start = std::chrono::steady_clock::now();
  auto guarded = [](const char* name, void (*fn)()) {
    try {
      fn();
    } catch (const std::exception& e) {
      Report(false, name, std::string("threw: ") + e.what());
    }
  };
  guarded("A-distance oracle", ADistanceOracle);
  guarded("Distance-ordering fidelity", DistanceOrdering);
  guarded("Stage-1 competence", Stage1Competence);
  guarded("Gradient correctness", GradientCorrectness);
  guarded("SDA / TOE on the synthetic suite", AdaptationCriteria);
  guarded("Determinism & persistence", Determinism);
  guarded("Amazon leave-one-out SDA", AmazonReplication);
  std::printf("%s in %.0fs\n", failures ? "FAILED" : "ALL PASSED", Seconds(start));
  return failures ? 1 : 0;
}
