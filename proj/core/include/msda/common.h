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

#ifndef MSDA_COMMON_H_
#define MSDA_COMMON_H_

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace msda {

// Error hierarchy. Every failure surfaced by the library derives from Error
// so callers can catch one type at the boundary (the CLI does).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Missing or unreadable files.
class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed input text. Carries the offending 1-based line when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line > 0 ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Contract violations on arguments or data.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Checkpoint files that are truncated or fail their checksum.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

class VersionError : public Error {
 public:
  using Error::Error;
};

// Raised when a training loss becomes non-finite.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// Shortest text that parses back to the same double.
std::string FormatDouble(double value);

inline void Require(bool ok, const std::string& message) {
  if (!ok) throw ValidationError(message);
}

// Deterministic generator. Uses mt19937_64 bits but does its own
// floating-point and range mapping so streams are identical across
// standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t NextU64() { return engine_(); }
  // Uniform in [0, 1).
  double Uniform();
  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }
  // Uniform integer in [0, n). n must be positive.
  std::uint64_t Below(std::uint64_t n);
  // Inclusive integer range.
  int UniformInt(int lo, int hi);
  bool Bernoulli(double p) { return Uniform() < p; }

  template <typename T>
  void Shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(Below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derives an independent stream; used for per-stage seeding.
  Rng Fork(std::uint64_t salt);

 private:
  std::mt19937_64 engine_;
};

// Fixed offsets for deriving per-stage seeds from one master seed.
enum class SeedStage : std::uint64_t {
  kCorpus = 101,
  kSplit = 202,
  kStage1 = 303,
  kDivergence = 404,
  kSda = 505,
  kToe = 606,
};

inline std::uint64_t StageSeed(std::uint64_t master, SeedStage stage) {
  return master * 1000003ULL + static_cast<std::uint64_t>(stage);
}

}  // namespace msda

#endif  // MSDA_COMMON_H_
