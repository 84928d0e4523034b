#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace ebr {

/// A named, shaped array of doubles.
struct Tensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> data;
};

/// Versioned model container shared by every model kind.
///
/// Layout (little-endian):
///   8 bytes   magic "EBRCKPT1"
///   u64       header length H
///   H bytes   JSON header {version, model_kind, vocab_ref, hyperparams,
///                          tensors: [{name, shape}]}
///   per tensor, in header order: u64 byte length L, then L bytes of doubles
///
/// Doubles are stored verbatim, so a reload is bit-exact.
struct Checkpoint {
  static constexpr int kVersion = 1;

  std::string model_kind;
  std::string vocab_ref;
  nlohmann::json hyperparams = nlohmann::json::object();
  std::vector<Tensor> tensors;

  const Tensor& tensor(std::string_view name) const;
  bool has_tensor(std::string_view name) const;

  std::string serialize() const;
  static Checkpoint deserialize(std::string_view bytes);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  /// Reads only the header's model_kind, for dispatch.
  static std::string peek_kind(const std::filesystem::path& path);
};

}  // namespace ebr
