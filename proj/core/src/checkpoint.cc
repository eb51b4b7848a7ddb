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

#include "msda/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "json.hpp"

namespace msda {

namespace {

using json = nlohmann::json;

constexpr char kMagic[8] = {'M', 'S', 'D', 'A', 'C', 'K', 'P', 'T'};

class ByteWriter {
 public:
  void Raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  template <typename T>
  void Le(T value) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
    const U bits = std::bit_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      bytes_.push_back(static_cast<unsigned char>((bits >> (8 * i)) & 0xFF));
    }
  }
  std::vector<unsigned char>& bytes() { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<unsigned char>& bytes) : bytes_(bytes) {}
  void Raw(void* out, std::size_t n) {
    Need(n);
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T Le() {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
    Need(sizeof(U));
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      bits |= static_cast<U>(bytes_[pos_ + i]) << (8 * i);
    }
    pos_ += sizeof(U);
    return std::bit_cast<T>(bits);
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void Need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw IntegrityError("checkpoint truncated");
    }
  }
  const std::vector<unsigned char>& bytes_;
  std::size_t pos_ = 0;
};

json EncoderToJson(const EncoderConfig& c) {
  return json{{"kind", EncoderKindName(c.kind)},
              {"input_dim", c.input_dim},
              {"hidden_dim", c.hidden_dim},
              {"vocab_size", c.vocab_size},
              {"embedding_dim", c.embedding_dim},
              {"kernel_widths", c.kernel_widths},
              {"output_dim", c.output_dim},
              {"dropout", c.dropout}};
}

EncoderConfig EncoderFromJson(const json& j) {
  EncoderConfig c;
  c.kind = ParseEncoderKind(j.at("kind").get<std::string>());
  c.input_dim = j.at("input_dim").get<int>();
  c.hidden_dim = j.at("hidden_dim").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.embedding_dim = j.at("embedding_dim").get<int>();
  c.kernel_widths = j.at("kernel_widths").get<std::vector<int>>();
  c.output_dim = j.at("output_dim").get<int>();
  c.dropout = j.at("dropout").get<double>();
  return c;
}

json ModelConfigJson(const ModelConfig& c) {
  return json{{"shared", EncoderToJson(c.shared)},
              {"private", EncoderToJson(c.private_)},
              {"classifier_hidden", c.classifier_hidden},
              {"discriminator_hidden", c.discriminator_hidden},
              {"d_loss", AdversarialLossName(c.d_loss)},
              {"clip", c.clip}};
}

ModelConfig ModelConfigFrom(const json& j) {
  ModelConfig c;
  c.shared = EncoderFromJson(j.at("shared"));
  c.private_ = EncoderFromJson(j.at("private"));
  c.classifier_hidden = j.at("classifier_hidden").get<int>();
  c.discriminator_hidden = j.at("discriminator_hidden").get<int>();
  c.d_loss = ParseAdversarialLoss(j.at("d_loss").get<std::string>());
  c.clip = j.at("clip").get<double>();
  return c;
}

std::vector<unsigned char> ReadAll(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

std::uint32_t Crc32(const void* data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  const auto* p = static_cast<const Bytef*>(data);
  while (size > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    crc = crc32(crc, p, chunk);
    p += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::uint32_t FileCrc32(const std::filesystem::path& path) {
  const auto bytes = ReadAll(path);
  return Crc32(bytes.data(), bytes.size());
}

void Checkpoint::AddParameters(const std::string& prefix,
                               const ParameterSet& params) {
  for (const auto& e : params.entries()) {
    tensors.emplace_back(prefix + "/" + e.name, e.value);
  }
}

ParameterSet Checkpoint::ExtractParameters(const std::string& prefix) const {
  ParameterSet out;
  const std::string lead = prefix + "/";
  for (const auto& [name, value] : tensors) {
    if (name.rfind(lead, 0) == 0 &&
        name.find('/', lead.size()) == std::string::npos) {
      out.Add(name.substr(lead.size()), value);
    }
  }
  Require(out.NumTensors() > 0,
          "checkpoint has no tensors under '" + prefix + "'");
  return out;
}

void Checkpoint::Save(const std::filesystem::path& path) const {
  json header;
  header["kind"] = kind;
  header["metadata"] = json::parse(metadata_json);
  header["order"] = "column-major";
  json list = json::array();
  std::uint64_t payload_bytes = 0;
  const std::uint64_t elem = payload == PayloadType::kFloat32 ? 4 : 8;
  for (const auto& [name, m] : tensors) {
    list.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
    payload_bytes += elem * static_cast<std::uint64_t>(m.size());
  }
  header["tensors"] = std::move(list);
  const std::string header_text = header.dump();

  ByteWriter w;
  w.Raw(kMagic, sizeof(kMagic));
  w.Le<std::uint32_t>(kFormatVersion);
  w.Le<std::uint32_t>(static_cast<std::uint32_t>(payload));
  w.Le<std::uint64_t>(header_text.size());
  w.Raw(header_text.data(), header_text.size());
  w.Le<std::uint64_t>(payload_bytes);
  for (const auto& [name, m] : tensors) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      if (payload == PayloadType::kFloat32) {
        w.Le<float>(static_cast<float>(m.data()[i]));
      } else {
        w.Le<double>(m.data()[i]);
      }
    }
  }
  const std::uint32_t crc = Crc32(w.bytes().data(), w.bytes().size());
  w.Le<std::uint32_t>(crc);

  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(w.bytes().data()),
            static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw IoError("failed writing " + path.string());
}

Checkpoint Checkpoint::Load(const std::filesystem::path& path) {
  const std::vector<unsigned char> bytes = ReadAll(path);
  ByteReader r(bytes);
  char magic[sizeof(kMagic)];
  r.Raw(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IntegrityError(path.string() + " is not a checkpoint");
  }
  const auto version = r.Le<std::uint32_t>();
  if (version != kFormatVersion) {
    throw VersionError("checkpoint format version " + std::to_string(version) +
                       ", expected " + std::to_string(kFormatVersion));
  }
  if (bytes.size() < sizeof(std::uint32_t)) {
    throw IntegrityError("checkpoint truncated");
  }
  const std::size_t body = bytes.size() - sizeof(std::uint32_t);
  std::uint32_t stored_crc = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    stored_crc |= static_cast<std::uint32_t>(bytes[body + i]) << (8 * i);
  }

  Checkpoint ckpt;
  const auto payload_type = r.Le<std::uint32_t>();
  if (payload_type > 1) throw IntegrityError("unknown payload type");
  ckpt.payload = static_cast<PayloadType>(payload_type);
  const auto header_len = r.Le<std::uint64_t>();
  if (header_len > r.remaining()) throw IntegrityError("checkpoint truncated");
  std::string header_text(header_len, '\0');
  r.Raw(header_text.data(), header_len);
  const auto payload_bytes = r.Le<std::uint64_t>();
  if (payload_bytes + sizeof(std::uint32_t) != r.remaining()) {
    throw IntegrityError("checkpoint payload length mismatch (truncated?)");
  }
  if (Crc32(bytes.data(), body) != stored_crc) {
    throw IntegrityError("checkpoint checksum mismatch");
  }

  json header;
  try {
    header = json::parse(header_text);
    ckpt.kind = header.at("kind").get<std::string>();
    ckpt.metadata_json = header.at("metadata").dump();
    const std::uint64_t elem = ckpt.payload == PayloadType::kFloat32 ? 4 : 8;
    std::uint64_t expected = 0;
    for (const auto& t : header.at("tensors")) {
      const auto rows = t.at("rows").get<Eigen::Index>();
      const auto cols = t.at("cols").get<Eigen::Index>();
      expected += elem * static_cast<std::uint64_t>(rows * cols);
      if (expected > payload_bytes) {
        throw IntegrityError("checkpoint tensor table exceeds payload");
      }
      Matrix m(rows, cols);
      for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = ckpt.payload == PayloadType::kFloat32
                          ? static_cast<double>(r.Le<float>())
                          : r.Le<double>();
      }
      ckpt.tensors.emplace_back(t.at("name").get<std::string>(), std::move(m));
    }
    if (expected != payload_bytes) {
      throw IntegrityError("checkpoint payload has trailing bytes");
    }
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("bad checkpoint header: ") + e.what());
  }
  return ckpt;
}

std::string ModelConfigToJson(const ModelConfig& config) {
  return ModelConfigJson(config).dump();
}

ModelConfig ModelConfigFromJson(const std::string& text) {
  try {
    return ModelConfigFrom(json::parse(text));
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad model config: ") + e.what());
  }
}

Extractor RestoreExtractor(const EncoderConfig& config, ParameterSet params) {
  Rng rng(0);
  Extractor e(config, rng);
  Require(e.params().SameShape(params),
          "stored extractor parameters do not match the encoder config");
  e.params() = std::move(params);
  return e;
}

Head RestoreHead(const HeadConfig& config, ParameterSet params) {
  Rng rng(0);
  Head h(config, rng);
  Require(h.params().SameShape(params),
          "stored head parameters do not match the head config");
  h.params() = std::move(params);
  return h;
}

void SaveModel(const SharedPrivateModel& model,
               const std::filesystem::path& path, PayloadType payload) {
  Checkpoint ckpt;
  ckpt.kind = "shared_private_model";
  ckpt.payload = payload;
  json meta;
  meta["config"] = ModelConfigJson(model.config);
  meta["sources"] = model.sources;
  meta["discriminator_domains"] = model.discriminator_domains;
  ckpt.metadata_json = meta.dump();
  ckpt.AddParameters("shared", model.shared.params());
  for (const std::string& s : model.sources) {
    ckpt.AddParameters("private/" + s, model.Private(s).params());
  }
  ckpt.AddParameters("classifier", model.classifier.params());
  ckpt.AddParameters("discriminator", model.discriminator.params());
  ckpt.Save(path);
}

SharedPrivateModel LoadModel(const std::filesystem::path& path) {
  const Checkpoint ckpt = Checkpoint::Load(path);
  if (ckpt.kind != "shared_private_model") {
    throw ValidationError(path.string() + " holds a '" + ckpt.kind +
                          "' checkpoint, not a model");
  }
  const json meta = json::parse(ckpt.metadata_json);
  SharedPrivateModel model;
  model.config = ModelConfigFrom(meta.at("config"));
  model.sources = meta.at("sources").get<std::vector<std::string>>();
  model.discriminator_domains =
      meta.at("discriminator_domains").get<std::vector<std::string>>();
  model.shared =
      RestoreExtractor(model.config.shared, ckpt.ExtractParameters("shared"));
  for (const std::string& s : model.sources) {
    model.privates.emplace(
        s, RestoreExtractor(model.config.private_,
                            ckpt.ExtractParameters("private/" + s)));
  }
  model.classifier = RestoreHead(
      HeadConfig{model.shared_dim() + model.private_dim(),
                 model.config.classifier_hidden, 2},
      ckpt.ExtractParameters("classifier"));
  model.discriminator = RestoreHead(
      HeadConfig{model.shared_dim(), model.config.discriminator_hidden,
                 static_cast<int>(model.discriminator_domains.size())},
      ckpt.ExtractParameters("discriminator"));
  return model;
}

SharedPrivateModel LoadModel(const std::filesystem::path& path,
                             const ModelConfig& expected) {
  SharedPrivateModel model = LoadModel(path);
  if (!(model.config == expected)) {
    throw ValidationError("checkpoint " + path.string() +
                          " was written for a different model configuration");
  }
  return model;
}

}  // namespace msda
