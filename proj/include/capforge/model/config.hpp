#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "capforge/numerics/errors.hpp"

namespace capforge {

enum class CellKind { gru, lstm };
enum class PoolingTag { mean, max, last };

inline std::string to_string(CellKind k) { return k == CellKind::gru ? "gru" : "lstm"; }
inline std::string to_string(PoolingTag p) {
  switch (p) {
    case PoolingTag::mean: return "mean";
    case PoolingTag::max: return "max";
    case PoolingTag::last: return "last";
  }
  return "?";
}

inline CellKind parse_cell_kind(const std::string& s) {
  if (s == "gru") return CellKind::gru;
  if (s == "lstm") return CellKind::lstm;
  throw ConfigError("unknown cell '" + s + "' (expected gru or lstm)");
}

inline PoolingTag parse_pooling(const std::string& s) {
  if (s == "mean") return PoolingTag::mean;
  if (s == "max") return PoolingTag::max;
  if (s == "last") return PoolingTag::last;
  throw ConfigError("unknown pooling '" + s + "' (expected mean, max or last)");
}

/// Architecture dimensions. Desk-scale defaults.
struct ModelDims {
  std::size_t grid = 16;            // image height == width, divisible by 4
  std::size_t conv1_channels = 8;
  std::size_t conv2_channels = 16;
  std::size_t feature_dim = 64;     // D_v
  std::size_t attribute_dim = 8;    // D_a
  std::size_t vocab_size = 0;       // filled from the vocabulary
  std::size_t embed_dim = 32;       // d_e
  std::size_t hidden_dim = 64;      // d_h
  CellKind cell = CellKind::gru;
  PoolingTag pooling = PoolingTag::mean;

  std::size_t pooled_size() const {
    return conv2_channels * (grid / 4) * (grid / 4);
  }

  void validate() const {
    require(grid >= 4 && grid % 4 == 0, "grid must be a positive multiple of 4");
    require(conv1_channels > 0 && conv2_channels > 0, "conv channels must be positive");
    require(feature_dim > 0 && attribute_dim > 0, "feature/attribute dims must be positive");
    require(vocab_size > 4, "vocabulary must contain at least one word besides the reserved tokens");
    require(embed_dim > 0 && hidden_dim > 0, "embed/hidden dims must be positive");
  }

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

}  // namespace capforge
