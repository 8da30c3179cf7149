#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "capforge/model/caption_model.hpp"

namespace capforge {

// Layout (all integers little-endian):
//   "CGRU" | u32 version | u64 json length | json {dims, vocab}
//   u32 tensor count | per tensor: u32 name length, name, u32 rank, u64 dims..., f64 values...
inline constexpr char kCheckpointMagic[4] = {'C', 'G', 'R', 'U'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace checkpoint_detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& is, const char* what) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw CheckpointError(std::string("truncated checkpoint reading ") + what);
  return v;
}

inline nlohmann::json dims_json(const ModelDims& d) {
  return {{"grid", d.grid},
          {"conv1_channels", d.conv1_channels},
          {"conv2_channels", d.conv2_channels},
          {"feature_dim", d.feature_dim},
          {"attribute_dim", d.attribute_dim},
          {"vocab_size", d.vocab_size},
          {"embed_dim", d.embed_dim},
          {"hidden_dim", d.hidden_dim},
          {"cell", to_string(d.cell)},
          {"pooling", to_string(d.pooling)}};
}

inline ModelDims dims_from_json(const nlohmann::json& j) {
  ModelDims d;
  try {
    d.grid = j.at("grid");
    d.conv1_channels = j.at("conv1_channels");
    d.conv2_channels = j.at("conv2_channels");
    d.feature_dim = j.at("feature_dim");
    d.attribute_dim = j.at("attribute_dim");
    d.vocab_size = j.at("vocab_size");
    d.embed_dim = j.at("embed_dim");
    d.hidden_dim = j.at("hidden_dim");
    d.cell = parse_cell_kind(j.at("cell"));
    d.pooling = parse_pooling(j.at("pooling"));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint dims are malformed: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint dims are malformed: ") + e.what());
  }
  return d;
}

}  // namespace checkpoint_detail

/// `extra` is stored verbatim in the header (e.g. the training config).
inline void save_checkpoint(const CaptionModel& m, std::ostream& os, const nlohmann::json& extra = nullptr) {
  using namespace checkpoint_detail;
  nlohmann::json header{{"dims", dims_json(m.dims)}, {"vocab", m.vocab.tokens()}, {"min_count", m.vocab.min_count()}};
  if (!extra.is_null()) header["extra"] = extra;
  const std::string blob = header.dump();
  os.write(kCheckpointMagic, 4);
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint64_t>(os, blob.size());
  os.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  const auto params = m.parameters();
  put<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p->value.rank()));
    for (std::size_t d : p->value.shape()) put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(p->value.storage().data()),
             static_cast<std::streamsize>(p->value.size() * sizeof(double)));
  }
  if (!os) throw CheckpointError("failed writing checkpoint");
}

inline void save_checkpoint(const CaptionModel& m, const std::string& path, const nlohmann::json& extra = nullptr) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open '" + path + "' for writing");
  save_checkpoint(m, os, extra);
}

struct LoadedCheckpoint {
  CaptionModel model;
  nlohmann::json extra;
};

/// Reads into a fresh model; nothing is returned unless every check passes.
inline LoadedCheckpoint read_checkpoint(std::istream& is) {
  using namespace checkpoint_detail;
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw CheckpointError("not a checkpoint: bad magic bytes");
  const auto version = get<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  const auto len = get<std::uint64_t>(is, "header length");
  if (len > (std::uint64_t{1} << 30)) throw CheckpointError("checkpoint header length is implausible");
  std::string blob(len, '\0');
  if (!is.read(blob.data(), static_cast<std::streamsize>(len))) throw CheckpointError("truncated checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(blob);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  if (!header.is_object() || !header.contains("dims") || !header.contains("vocab"))
    throw CheckpointError("checkpoint header lacks dims or vocab");
  ModelDims dims = dims_from_json(header["dims"]);
  Vocabulary vocab;
  try {
    vocab = Vocabulary::from_tokens(header["vocab"].get<std::vector<std::string>>(), header.value("min_count", 1));
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint vocabulary is invalid: ") + e.what());
  }
  if (vocab.size() != dims.vocab_size) throw CheckpointError("checkpoint vocab size disagrees with its dims");
  try {
    dims.validate();
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint dims are invalid: ") + e.what());
  }

  LoadedCheckpoint out{CaptionModel::create(dims, std::move(vocab), 0), header.value("extra", nlohmann::json())};
  auto params = out.model.parameters();
  const auto count = get<std::uint32_t>(is, "tensor count");
  if (count != params.size())
    throw CheckpointError("checkpoint has " + std::to_string(count) + " tensors, model expects " +
                         std::to_string(params.size()));
  for (Parameter* p : params) {
    const auto nlen = get<std::uint32_t>(is, "tensor name length");
    if (nlen > 4096) throw CheckpointError("checkpoint tensor name length is implausible");
    std::string name(nlen, '\0');
    if (!is.read(name.data(), nlen)) throw CheckpointError("truncated checkpoint tensor name");
    if (name != p->name) throw CheckpointError("checkpoint tensor '" + name + "' found where '" + p->name + "' expected");
    const auto rank = get<std::uint32_t>(is, "tensor rank");
    if (rank > 8) throw CheckpointError("tensor '" + name + "' has implausible rank");
    Shape shape(rank);
    for (auto& d : shape) d = get<std::uint64_t>(is, "tensor dims");
    if (shape != p->value.shape())
      throw CheckpointError("shape mismatch for tensor '" + name + "': checkpoint " + shape_str(shape) + ", model " +
                            shape_str(p->value.shape()));
    auto& dst = p->value.storage();
    if (!is.read(reinterpret_cast<char*>(dst.data()), static_cast<std::streamsize>(dst.size() * sizeof(double))))
      throw CheckpointError("truncated data for tensor '" + name + "'");
    if (!p->value.all_finite()) throw CheckpointError("tensor '" + name + "' contains non-finite values");
  }
  if (is.peek() != std::char_traits<char>::eof()) throw CheckpointError("trailing bytes after checkpoint");
  return out;
}

inline LoadedCheckpoint read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint '" + path + "'");
  return read_checkpoint(is);
}

inline CaptionModel load_checkpoint(const std::string& path) { return read_checkpoint(path).model; }
inline CaptionModel load_checkpoint(std::istream& is) { return read_checkpoint(is).model; }

}  // namespace capforge
