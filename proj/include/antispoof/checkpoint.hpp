#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "antispoof/common.hpp"
#include "antispoof/model.hpp"
#include "antispoof/tensor.hpp"

// Checkpoint container: magic + version, embedded config JSON, metadata
// JSON, then one entry per tensor (params first, then running-stat buffers)
// as (kind, name, shape, float32 payload), closed by a CRC32 over all
// payload bytes. Everything little-endian.

namespace antispoof {

inline constexpr char kCheckpointMagic[8] = {'A', 'S', 'P', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  int epoch = -1;
  double dev_loss = 0.0;
  std::uint64_t seed = 0;
};

struct CheckpointData {
  ModelConfig config;
  CheckpointMeta meta;
  std::vector<std::pair<std::string, Tensor<float>>> params;
  std::vector<std::pair<std::string, Tensor<float>>> buffers;
};

namespace detail {

inline void write_string(std::ostream& os, const std::string& s) {
  io::write_u32(os, static_cast<std::uint32_t>(s.size()));
  io::write_bytes(os, s.data(), s.size());
}

inline std::string read_string(std::istream& is, const char* what) {
  const std::uint32_t len = io::read_u32(is, what);
  std::string s(len, '\0');
  io::read_bytes(is, s.data(), len, what);
  return s;
}

template <typename T>
void write_entry(std::ostream& os, std::uint8_t kind, const std::string& name,
                 const Tensor<T>& t, Crc32& crc) {
  io::write_bytes(os, &kind, 1);
  write_string(os, name);
  const std::uint8_t rank = static_cast<std::uint8_t>(t.rank());
  io::write_bytes(os, &rank, 1);
  for (int i = 0; i < t.rank(); ++i)
    io::write_u32(os, static_cast<std::uint32_t>(t.shape()[static_cast<std::size_t>(i)]));
  static_assert(sizeof(float) == 4);
  for (std::int64_t i = 0; i < t.size(); ++i) {
    const float v = static_cast<float>(t.data()[i]);
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    const unsigned char b[4] = {static_cast<unsigned char>(u & 0xff),
                                static_cast<unsigned char>((u >> 8) & 0xff),
                                static_cast<unsigned char>((u >> 16) & 0xff),
                                static_cast<unsigned char>((u >> 24) & 0xff)};
    crc.update(b, 4);
    io::write_bytes(os, b, 4);
  }
}

}  // namespace detail

template <typename T>
void save_checkpoint(Model<T>& model, const std::string& path, const CheckpointMeta& meta = {}) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("save_checkpoint: cannot open " + path + " for writing");

  io::write_bytes(f, kCheckpointMagic, sizeof(kCheckpointMagic));
  io::write_u32(f, kCheckpointVersion);
  nlohmann::json cfg_json;
  to_json(cfg_json, model.config());
  detail::write_string(f, cfg_json.dump());
  nlohmann::json meta_json = {
      {"epoch", meta.epoch}, {"dev_loss", meta.dev_loss}, {"seed", meta.seed}};
  detail::write_string(f, meta_json.dump());

  auto params = model.parameters();
  auto buffers = model.buffers();
  io::write_u32(f, static_cast<std::uint32_t>(params.size() + buffers.size()));
  Crc32 crc;
  for (const auto& p : params) detail::write_entry(f, 0, p.name, *p.tensor, crc);
  for (const auto& b : buffers) detail::write_entry(f, 1, b.name, *b.tensor, crc);
  io::write_u32(f, crc.value());
  if (!f) throw IoError("save_checkpoint: write failed for " + path);
}

inline CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_checkpoint: cannot open " + path);
  try {
    char magic[8];
    io::read_bytes(f, magic, sizeof(magic), "checkpoint magic");
    for (std::size_t i = 0; i < sizeof(magic); ++i)
      if (magic[i] != kCheckpointMagic[i])
        throw CheckpointError("read_checkpoint: bad magic in " + path);
    const std::uint32_t version = io::read_u32(f, "checkpoint version");
    if (version != kCheckpointVersion)
      throw CheckpointError("read_checkpoint: unsupported version " + std::to_string(version));

    CheckpointData data;
    const std::string cfg_text = detail::read_string(f, "checkpoint config");
    try {
      data.config = model_config_from_json(nlohmann::json::parse(cfg_text));
    } catch (const nlohmann::json::exception& e) {
      throw CheckpointError(std::string("read_checkpoint: embedded config unparsable: ") +
                            e.what());
    }
    const std::string meta_text = detail::read_string(f, "checkpoint metadata");
    try {
      const auto meta_json = nlohmann::json::parse(meta_text);
      data.meta.epoch = meta_json.value("epoch", -1);
      data.meta.dev_loss = meta_json.value("dev_loss", 0.0);
      data.meta.seed = meta_json.value("seed", std::uint64_t{0});
    } catch (const nlohmann::json::exception& e) {
      throw CheckpointError(std::string("read_checkpoint: metadata unparsable: ") + e.what());
    }

    const std::uint32_t entries = io::read_u32(f, "checkpoint entry count");
    Crc32 crc;
    for (std::uint32_t e = 0; e < entries; ++e) {
      std::uint8_t kind;
      io::read_bytes(f, &kind, 1, "entry kind");
      if (kind > 1) throw CheckpointError("read_checkpoint: unknown entry kind");
      const std::string name = detail::read_string(f, "entry name");
      std::uint8_t rank;
      io::read_bytes(f, &rank, 1, "entry rank");
      Shape shape(rank);
      for (int i = 0; i < rank; ++i) {
        shape[static_cast<std::size_t>(i)] = static_cast<int>(io::read_u32(f, "entry dim"));
        if (shape[static_cast<std::size_t>(i)] < 1)
          throw CheckpointError("read_checkpoint: bad dim in entry " + name);
      }
      Tensor<float> t(shape);
      for (std::int64_t i = 0; i < t.size(); ++i) {
        unsigned char b[4];
        io::read_bytes(f, b, 4, "entry payload");
        crc.update(b, 4);
        std::uint32_t u = static_cast<std::uint32_t>(b[0]) |
                          (static_cast<std::uint32_t>(b[1]) << 8) |
                          (static_cast<std::uint32_t>(b[2]) << 16) |
                          (static_cast<std::uint32_t>(b[3]) << 24);
        float v;
        std::memcpy(&v, &u, 4);
        t.data()[i] = v;
      }
      auto& dst = kind == 0 ? data.params : data.buffers;
      dst.emplace_back(name, std::move(t));
    }
    const std::uint32_t stored_crc = io::read_u32(f, "checkpoint checksum");
    if (stored_crc != crc.value())
      throw CheckpointError("read_checkpoint: payload checksum mismatch in " + path);
    return data;
  } catch (const FormatError& e) {
    throw CheckpointError(std::string("read_checkpoint: ") + e.what());
  }
}

// Copies the stored tensors into an already-built model. Every tensor the
// model expects must be present with the exact shape; the first missing or
// mismatched name is reported.
template <typename T>
void apply_checkpoint(Model<T>& model, const CheckpointData& data) {
  auto apply = [](const std::vector<ParamRef<T>>& refs,
                  const std::vector<std::pair<std::string, Tensor<float>>>& stored,
                  const char* what) {
    for (const auto& ref : refs) {
      const Tensor<float>* found = nullptr;
      for (const auto& [name, tensor] : stored)
        if (name == ref.name) {
          found = &tensor;
          break;
        }
      if (!found)
        throw CheckpointError(std::string("apply_checkpoint: missing ") + what + " '" + ref.name +
                              "'");
      if (found->shape() != ref.tensor->shape())
        throw CheckpointError("apply_checkpoint: shape mismatch for '" + ref.name + "': stored " +
                              shape_to_string(found->shape()) + ", model needs " +
                              shape_to_string(ref.tensor->shape()));
      for (std::int64_t i = 0; i < found->size(); ++i)
        ref.tensor->data()[i] = static_cast<T>(found->data()[i]);
    }
  };
  apply(model.parameters(), data.params, "parameter");
  apply(model.buffers(), data.buffers, "buffer");
}

template <typename T>
Model<T> load_checkpoint(const std::string& path) {
  CheckpointData data = read_checkpoint(path);
  Model<T> model(data.config, /*seed=*/0);
  apply_checkpoint(model, data);
  return model;
}

}  // namespace antispoof
