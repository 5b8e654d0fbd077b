#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sotc/model.hpp"
#include "sotc/tensor.hpp"

namespace sotc {

// Versioned container: magic "SOTC", textual key=value metadata (which
// carries the named-tensor directory), little-endian float64 payload,
// trailing CRC-32 over everything before it.
struct Checkpoint {
  static constexpr uint32_t kVersion = 1;

  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Tensor>> tensors;  // directory order

  void add(const std::string& name, const Tensor& t) { tensors.emplace_back(name, t); }
  const Tensor* find(const std::string& name) const;
  const Tensor& require(const std::string& name) const;
  const std::string& require_meta(const std::string& key) const;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

Checkpoint model_to_checkpoint(const Model& m);
Model model_from_checkpoint(const Checkpoint& ckpt);

// CRC-32 of a whole file; used as the cross-artifact fingerprint.
uint32_t file_crc32(const std::string& path);

}  // namespace sotc
