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

#ifndef MSDA_DIVERGENCE_H_
#define MSDA_DIVERGENCE_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "msda/corpus.h"
#include "msda/nets.h"

namespace msda {

// Linear bag-of-words SVM used as the domain proxy classifier.
struct ProxyClassifierConfig {
  double regularization = 1.0;  // SVM C
  int max_epochs = 50;
  double tolerance = 0.1;       // projected-gradient stopping threshold
  double heldout_fraction = 0.2;
  std::uint64_t seed = 1;

  void Validate() const;
};

// Held-out misclassification rate of a classifier trained to tell `a` from
// `b`. Sentiment labels are ignored. The larger domain is subsampled to the
// smaller one's size. Raw-text inputs are counted over a joint vocabulary;
// feature inputs must share a dimension.
double EstimateProxyError(const DomainDataset& a, const DomainDataset& b,
                          const ProxyClassifierConfig& config);

// 2 (1 - 2 error).
double ADistance(double error);

struct DistanceMatrix {
  std::vector<std::string> domains;
  Matrix distance;      // clamped to [0, 2]; diagonal left at 0
  Matrix raw_distance;  // unclamped estimate
  Matrix error;         // held-out proxy error per pair

  int Index(const std::string& name) const;
  double at(const std::string& a, const std::string& b) const;

  // Square CSV with domain names as header row and first column.
  void WriteCsv(const std::filesystem::path& path) const;
  // domain_a,domain_b,distance for every unordered pair.
  void WriteLongCsv(const std::filesystem::path& path) const;
  // Reads what WriteCsv wrote; raw distances equal the stored ones.
  static DistanceMatrix ReadCsv(const std::filesystem::path& path);

  // Builds a matrix from known distances (raw == clamped == given).
  static DistanceMatrix FromDistances(std::vector<std::string> domains,
                                      const Matrix& distance);
};

DistanceMatrix ComputeDistanceMatrix(std::span<const DomainDataset> datasets,
                                     const ProxyClassifierConfig& config);

// Source with the smallest distance to target; ties go to the earlier
// domain. Candidates default to every other domain in the matrix.
std::string SelectClosest(const DistanceMatrix& matrix,
                          const std::string& target,
                          const std::vector<std::string>& candidates = {});

enum class RankOrder { kClosest, kFarthest };

// k candidates ordered by distance (ascending for kClosest, descending for
// kFarthest); ties go to the earlier domain.
std::vector<std::string> SelectTopK(const DistanceMatrix& matrix,
                                    const std::string& target, int k,
                                    const std::vector<std::string>& candidates = {},
                                    RankOrder order = RankOrder::kClosest);

}  // namespace msda

#endif  // MSDA_DIVERGENCE_H_
