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

#ifndef MSDA_CHECKPOINT_H_
#define MSDA_CHECKPOINT_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "msda/nets.h"

namespace msda {

enum class PayloadType : std::uint32_t { kFloat32 = 0, kFloat64 = 1 };

// Self-describing tensor container.
//
//   "MSDACKPT" | u32 version | u32 payload type | u64 header bytes |
//   header (JSON: kind, metadata, tensor names and shapes) |
//   u64 payload bytes | payload (little-endian, column-major) | u32 CRC-32
//
// The CRC covers every preceding byte. kFloat64 payloads round-trip
// bit-exactly; kFloat32 is a lossy compact export.
struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  std::string kind;
  // JSON object text; callers store configs and names here.
  std::string metadata_json = "{}";
  std::vector<std::pair<std::string, Matrix>> tensors;
  PayloadType payload = PayloadType::kFloat64;

  void AddParameters(const std::string& prefix, const ParameterSet& params);
  // Tensors named prefix + "/" + name, in stored order.
  ParameterSet ExtractParameters(const std::string& prefix) const;

  void Save(const std::filesystem::path& path) const;
  static Checkpoint Load(const std::filesystem::path& path);
};

// JSON text for a ModelConfig, and back.
std::string ModelConfigToJson(const ModelConfig& config);
ModelConfig ModelConfigFromJson(const std::string& json);

void SaveModel(const SharedPrivateModel& model,
               const std::filesystem::path& path,
               PayloadType payload = PayloadType::kFloat64);
SharedPrivateModel LoadModel(const std::filesystem::path& path);
// Fails with ValidationError when the stored configuration differs.
SharedPrivateModel LoadModel(const std::filesystem::path& path,
                             const ModelConfig& expected);

// Rebuilds an extractor or head around stored parameters, checking shapes
// against a freshly initialized network of the same configuration.
Extractor RestoreExtractor(const EncoderConfig& config, ParameterSet params);
Head RestoreHead(const HeadConfig& config, ParameterSet params);

std::uint32_t Crc32(const void* data, std::size_t size);
std::uint32_t FileCrc32(const std::filesystem::path& path);

}  // namespace msda

#endif  // MSDA_CHECKPOINT_H_
