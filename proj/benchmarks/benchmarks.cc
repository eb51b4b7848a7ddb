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

// Micro benchmarks for the hot loops: extractor passes, the proxy
// classifier and the pseudo-labeling sweep.

#include <benchmark/benchmark.h>

#include "msda/divergence.h"
#include "msda/runner.h"
#include "msda/toe.h"

namespace msda {
namespace {

const PreparedCorpus& Corpus() {
  static const PreparedCorpus corpus = PrepareCorpus(ConfigFromKeyValues(
      {{"synthetic.examples_per_domain", "1000"}}));
  return corpus;
}

SharedPrivateModel Model() {
  return InitModel(Corpus().model, {"d1", "d2", "d3"}, std::string("d0"), 7);
}

std::vector<const Example*> FirstN(const DomainDataset& d, std::size_t n) {
  std::vector<const Example*> all = BatchOf(d);
  all.resize(std::min(n, all.size()));
  return all;
}

void BM_ExtractorForward(benchmark::State& state) {
  const SharedPrivateModel model = Model();
  const auto batch = FirstN(Corpus().splits[0].train, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(model.shared.Forward(batch));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ExtractorForward)->Arg(16)->Arg(64)->Arg(256);

void BM_ExtractorForwardBackward(benchmark::State& state) {
  const SharedPrivateModel model = Model();
  const auto batch = FirstN(Corpus().splits[0].train, static_cast<std::size_t>(state.range(0)));
  ParameterSet grad = model.shared.params();
  for (auto _ : state) {
    ExtractorTape tape;
    const Matrix out = model.shared.Forward(batch, &tape);
    grad.SetZero();
    model.shared.Backward(tape, Matrix::Ones(out.rows(), out.cols()), grad);
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ExtractorForwardBackward)->Arg(16)->Arg(64);

void BM_ProxyError(benchmark::State& state) {
  const PreparedCorpus& corpus = Corpus();
  const ProxyClassifierConfig config;
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        EstimateProxyError(corpus.splits[0].train, corpus.splits[1].train, config));
  }
}
BENCHMARK(BM_ProxyError)->Unit(benchmark::kMillisecond);

void BM_PseudoLabelLoop(benchmark::State& state) {
  const SharedPrivateModel model = Model();
  const Ensemble ensemble = MakeEnsemble(model, model.sources);
  const DomainDataset target = Corpus().splits[0].train.WithoutLabels();
  const ToeConfig config;
  for (auto _ : state) benchmark::DoNotOptimize(PseudoLabelLoop(ensemble, target, config));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(target.size()));
}
BENCHMARK(BM_PseudoLabelLoop)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace msda

BENCHMARK_MAIN();
