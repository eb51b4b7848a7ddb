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

#include "msda/divergence.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <numeric>

namespace msda {

void ProxyClassifierConfig::Validate() const {
  Require(regularization > 0.0, "proxy: regularization must be positive");
  Require(max_epochs >= 1, "proxy: max_epochs must be >= 1");
  Require(tolerance > 0.0, "proxy: tolerance must be positive");
  Require(heldout_fraction > 0.0 && heldout_fraction < 1.0,
          "proxy: held-out fraction must be in (0,1)");
}

namespace {

// Brings both datasets into one sparse count space.
std::pair<std::vector<SparseVector>, std::vector<SparseVector>> ToCommonBow(
    const DomainDataset& a, const DomainDataset& b) {
  Require(a.mode() == b.mode(),
          "proxy error needs both domains in the same corpus mode");
  std::vector<SparseVector> xa, xb;
  auto collect = [](const DomainDataset& ds, std::vector<SparseVector>& out) {
    for (const Example& ex : ds.examples()) {
      out.push_back(std::get<SparseVector>(ex.content));
    }
  };
  switch (a.mode()) {
    case CorpusMode::kFeatures: {
      collect(a, xa);
      collect(b, xb);
      Require(xa.front().dim == xb.front().dim,
              "proxy error needs a shared feature dimension");
      break;
    }
    case CorpusMode::kRawText: {
      const DomainDataset both[] = {a, b};
      const Vocabulary vocab = BuildVocabulary(both, 5002);
      const std::size_t dim = std::max<std::size_t>(1, vocab.size() - 2);
      collect(FeaturizeBow(a, vocab, dim), xa);
      collect(FeaturizeBow(b, vocab, dim), xb);
      break;
    }
    case CorpusMode::kTokens: {
      std::int32_t max_id = 0;
      for (const DomainDataset* ds : {&a, &b}) {
        for (const Example& ex : ds->examples()) {
          for (std::int32_t id : std::get<TokenIds>(ex.content).ids) {
            max_id = std::max(max_id, id);
          }
        }
      }
      auto count = [&](const DomainDataset& ds, std::vector<SparseVector>& out) {
        for (const Example& ex : ds.examples()) {
          std::map<std::uint32_t, double> c;
          for (std::int32_t id : std::get<TokenIds>(ex.content).ids) {
            if (id >= 2) c[static_cast<std::uint32_t>(id)] += 1.0;
          }
          SparseVector sv;
          sv.dim = static_cast<std::uint32_t>(max_id + 1);
          for (auto [i, v] : c) {
            sv.indices.push_back(i);
            sv.values.push_back(v);
          }
          out.push_back(std::move(sv));
        }
      };
      count(a, xa);
      count(b, xb);
      break;
    }
  }
  return {std::move(xa), std::move(xb)};
}

double Dot(const std::vector<double>& w, const SparseVector& x) {
  double s = w.back();  // bias feature
  for (std::size_t k = 0; k < x.nnz(); ++k) s += w[x.indices[k]] * x.values[k];
  return s;
}

// L2-regularized hinge-loss SVM solved by dual coordinate descent. The bias
// is an extra constant feature.
std::vector<double> TrainLinearSvm(const std::vector<const SparseVector*>& xs,
                                   const std::vector<int>& ys,
                                   const ProxyClassifierConfig& config,
                                   Rng& rng) {
  const std::uint32_t dim = xs.front()->dim;
  std::vector<double> w(dim + 1, 0.0);
  const std::size_t n = xs.size();
  std::vector<double> alpha(n, 0.0), q(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 1.0;
    for (double v : xs[i]->values) s += v * v;
    q[i] = s;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const double c = config.regularization;
  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    rng.Shuffle(order);
    double max_pg = -1e300, min_pg = 1e300;
    for (std::size_t i : order) {
      const double y = ys[i] ? 1.0 : -1.0;
      const double g = y * Dot(w, *xs[i]) - 1.0;
      double pg = g;
      if (alpha[i] == 0.0) {
        pg = std::min(g, 0.0);
      } else if (alpha[i] == c) {
        pg = std::max(g, 0.0);
      }
      max_pg = std::max(max_pg, pg);
      min_pg = std::min(min_pg, pg);
      if (pg == 0.0) continue;
      const double old = alpha[i];
      alpha[i] = std::clamp(old - g / q[i], 0.0, c);
      const double delta = (alpha[i] - old) * y;
      if (delta == 0.0) continue;
      const SparseVector& x = *xs[i];
      for (std::size_t k = 0; k < x.nnz(); ++k) {
        w[x.indices[k]] += delta * x.values[k];
      }
      w.back() += delta;
    }
    if (max_pg - min_pg < config.tolerance) break;
  }
  return w;
}

}  // namespace

double EstimateProxyError(const DomainDataset& a, const DomainDataset& b,
                          const ProxyClassifierConfig& config) {
  config.Validate();
  auto [xa, xb] = ToCommonBow(a, b);
  const std::size_t per_side = std::min(xa.size(), xb.size());
  const auto test_side = static_cast<std::size_t>(
      std::lround(config.heldout_fraction * static_cast<double>(per_side)));
  if (test_side < 10 || per_side - test_side < 10) {
    throw ValidationError(
        "proxy error needs at least 10 held-out and 10 training examples per "
        "domain; '" + a.name() + "'/'" + b.name() + "' give " +
        std::to_string(per_side) + " per side");
  }
  Rng rng(config.seed);
  std::vector<const SparseVector*> train_x, test_x;
  std::vector<int> train_y, test_y;
  int side = 0;
  for (auto* xs : {&xa, &xb}) {
    std::vector<std::size_t> idx(xs->size());
    std::iota(idx.begin(), idx.end(), 0);
    rng.Shuffle(idx);
    for (std::size_t k = 0; k < per_side; ++k) {
      const SparseVector* x = &(*xs)[idx[k]];
      if (k < test_side) {
        test_x.push_back(x);
        test_y.push_back(side);
      } else {
        train_x.push_back(x);
        train_y.push_back(side);
      }
    }
    ++side;
  }
  const std::vector<double> w = TrainLinearSvm(train_x, train_y, config, rng);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < test_x.size(); ++i) {
    const int predicted = Dot(w, *test_x[i]) > 0.0 ? 1 : 0;
    if (predicted != test_y[i]) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(test_x.size());
}

double ADistance(double error) {
  Require(std::isfinite(error) && error >= 0.0 && error <= 1.0,
          "a_distance: error must be in [0,1]");
  return 2.0 * (1.0 - 2.0 * error);
}

int DistanceMatrix::Index(const std::string& name) const {
  auto it = std::find(domains.begin(), domains.end(), name);
  if (it == domains.end()) {
    throw ValidationError("domain '" + name + "' is not in the distance matrix");
  }
  return static_cast<int>(it - domains.begin());
}

double DistanceMatrix::at(const std::string& a, const std::string& b) const {
  return distance(Index(a), Index(b));
}

void DistanceMatrix::WriteCsv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "domain";
  for (const auto& d : domains) out << ',' << d;
  out << '\n';
  for (std::size_t i = 0; i < domains.size(); ++i) {
    out << domains[i];
    for (std::size_t j = 0; j < domains.size(); ++j) {
      out << ',' << FormatDouble(distance(static_cast<Eigen::Index>(i),
                                          static_cast<Eigen::Index>(j)));
    }
    out << '\n';
  }
}

DistanceMatrix DistanceMatrix::ReadCsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    return cells;
  };
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty distance matrix file");
  std::vector<std::string> header = split(line);
  if (header.size() < 3 || header.front() != "domain") {
    throw ParseError("distance matrix must start with a 'domain' column", 1);
  }
  std::vector<std::string> names(header.begin() + 1, header.end());
  const auto n = static_cast<Eigen::Index>(names.size());
  Matrix d = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::size_t line_no = static_cast<std::size_t>(i) + 2;
    if (!std::getline(in, line)) throw ParseError("missing row", line_no);
    std::vector<std::string> cells = split(line);
    if (cells.size() != header.size() ||
        cells.front() != names[static_cast<std::size_t>(i)]) {
      throw ParseError("row does not match the header", line_no);
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      try {
        d(i, j) = std::stod(cells[static_cast<std::size_t>(j) + 1]);
      } catch (const std::exception&) {
        throw ParseError("bad distance value", line_no);
      }
    }
  }
  return FromDistances(std::move(names), d);
}

void DistanceMatrix::WriteLongCsv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "domain_a,domain_b,distance,raw_distance,proxy_error\n";
  for (std::size_t i = 0; i < domains.size(); ++i) {
    for (std::size_t j = i + 1; j < domains.size(); ++j) {
      const auto r = static_cast<Eigen::Index>(i);
      const auto c = static_cast<Eigen::Index>(j);
      out << domains[i] << ',' << domains[j] << ',' << distance(r, c) << ','
          << raw_distance(r, c) << ',' << error(r, c) << '\n';
    }
  }
}

DistanceMatrix DistanceMatrix::FromDistances(std::vector<std::string> domains,
                                             const Matrix& distance) {
  Require(distance.rows() == static_cast<Eigen::Index>(domains.size()) &&
              distance.cols() == distance.rows(),
          "distance matrix shape does not match domain list");
  DistanceMatrix m;
  m.domains = std::move(domains);
  m.distance = distance;
  m.raw_distance = distance;
  m.error = ((2.0 - distance.array()) / 4.0).matrix();
  return m;
}

DistanceMatrix ComputeDistanceMatrix(std::span<const DomainDataset> datasets,
                                     const ProxyClassifierConfig& config) {
  Require(datasets.size() >= 2, "distance matrix needs at least two domains");
  const auto n = static_cast<Eigen::Index>(datasets.size());
  DistanceMatrix m;
  for (const DomainDataset& ds : datasets) m.domains.push_back(ds.name());
  m.distance = Matrix::Zero(n, n);
  m.raw_distance = Matrix::Zero(n, n);
  m.error = Matrix::Zero(n, n);
  std::uint64_t pair = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      ProxyClassifierConfig pair_config = config;
      pair_config.seed = config.seed * 7919 + (++pair);
      const double err =
          EstimateProxyError(datasets[static_cast<std::size_t>(i)],
                             datasets[static_cast<std::size_t>(j)], pair_config);
      const double raw = ADistance(err);
      const double clamped = std::clamp(raw, 0.0, 2.0);
      m.error(i, j) = m.error(j, i) = err;
      m.raw_distance(i, j) = m.raw_distance(j, i) = raw;
      m.distance(i, j) = m.distance(j, i) = clamped;
    }
  }
  return m;
}

std::vector<std::string> SelectTopK(const DistanceMatrix& matrix,
                                    const std::string& target, int k,
                                    const std::vector<std::string>& candidates,
                                    RankOrder order) {
  const int t = matrix.Index(target);
  std::vector<int> pool;
  if (candidates.empty()) {
    for (int i = 0; i < static_cast<int>(matrix.domains.size()); ++i) {
      if (i != t) pool.push_back(i);
    }
  } else {
    for (const std::string& c : candidates) {
      const int i = matrix.Index(c);
      Require(i != t, "target '" + target + "' cannot be its own source");
      pool.push_back(i);
    }
  }
  Require(k >= 1, "k must be >= 1");
  Require(k <= static_cast<int>(pool.size()),
          "k=" + std::to_string(k) + " exceeds the " +
              std::to_string(pool.size()) + " available sources");
  std::stable_sort(pool.begin(), pool.end(), [&](int a, int b) {
    const double da = matrix.distance(t, a);
    const double db = matrix.distance(t, b);
    if (da != db) return order == RankOrder::kClosest ? da < db : da > db;
    return a < b;
  });
  std::vector<std::string> out;
  for (int i = 0; i < k; ++i) out.push_back(matrix.domains[pool[i]]);
  return out;
}

std::string SelectClosest(const DistanceMatrix& matrix,
                          const std::string& target,
                          const std::vector<std::string>& candidates) {
  return SelectTopK(matrix, target, 1, candidates).front();
}

}  // namespace msda
