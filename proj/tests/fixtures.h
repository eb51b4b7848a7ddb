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

#ifndef MSDA_TESTS_FIXTURES_H_
#define MSDA_TESTS_FIXTURES_H_

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "msda/corpus.h"
#include "msda/nets.h"

namespace msda::testing {

inline Example DenseFeatures(const std::vector<double>& row,
                             std::optional<int> label) {
  SparseVector v;
  v.dim = static_cast<std::uint32_t>(row.size());
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (row[i] != 0.0) {
      v.indices.push_back(static_cast<std::uint32_t>(i));
      v.values.push_back(row[i]);
    }
  }
  Example e;
  e.content = v;
  e.label = label;
  return e;
}

// Gaussian-ish dense features; labels follow the sign of the first
// coordinate when labeled.
inline DomainDataset RandomFeatureDataset(const std::string& name, int n,
                                          int dim, std::uint64_t seed,
                                          bool labeled, double offset = 0.0) {
  Rng rng(seed);
  std::vector<Example> out;
  for (int i = 0; i < n; ++i) {
    std::vector<double> row(static_cast<std::size_t>(dim));
    for (double& x : row) x = rng.Uniform(-1.0, 1.0) + offset;
    std::optional<int> label;
    if (labeled) label = row[0] > offset ? 1 : 0;
    out.push_back(DenseFeatures(row, label));
  }
  return DomainDataset(name, std::move(out), labeled);
}

// Moves parameters off ReLU kinks: noise on weights, small positive biases
// so hidden units stay active on most inputs.
inline void Jitter(ParameterSet& params, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& e : params.entries()) {
    const bool bias = (!e.name.empty() && e.name[0] == 'b') ||
                      (e.name.size() > 2 && e.name.ends_with(".b"));
    for (Eigen::Index i = 0; i < e.value.size(); ++i) {
      e.value.data()[i] += bias ? rng.Uniform(0.05, 0.3) : rng.Uniform(-0.3, 0.3);
    }
  }
}

// Central differences of f with respect to every entry of params.
inline Vector NumericGradient(const std::function<double()>& f,
                              ParameterSet& params, double h = 1e-6) {
  Vector flat = params.Flatten();
  Vector grad(flat.size());
  for (Eigen::Index i = 0; i < flat.size(); ++i) {
    const double x = flat(i);
    flat(i) = x + h;
    params.Unflatten(flat);
    const double up = f();
    flat(i) = x - h;
    params.Unflatten(flat);
    const double down = f();
    flat(i) = x;
    grad(i) = (up - down) / (2.0 * h);
  }
  params.Unflatten(flat);
  return grad;
}

// ||a - n|| / max(||a|| + ||n||, tiny): scale-free and defined at zero.
inline double RelativeError(const Vector& analytic, const Vector& numeric) {
  const double denom = std::max(analytic.norm() + numeric.norm(), 1e-12);
  return (analytic - numeric).norm() / denom;
}

}  // namespace msda::testing

#endif  // MSDA_TESTS_FIXTURES_H_
