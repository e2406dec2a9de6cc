#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vcwn/autodiff.hpp"

namespace vcwn {

// "VCRM" model checkpoint.
//
// Layout (all integers little-endian):
//   "VCRM" | u32 version | u32 n_meta | n_meta x (str key, str value)
//   | u32 n_tensors | n_tensors x (str name, u32 rank, rank x u64 extent,
//   f64 payload)
// where str = u32 byte length + UTF-8 bytes. Metadata is written in key
// order, so identical checkpoints serialize to identical bytes.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  void add_parameters(const ParameterSet& params, const std::string& prefix = "");
  // Copies stored values into matching parameters; every parameter must be
  // present with the same shape.
  void load_parameters(ParameterSet& params, const std::string& prefix = "") const;

  const Tensor& tensor(const std::string& name) const;
  const std::string& get_meta(const std::string& key) const;

  std::vector<char> serialize() const;
  static Checkpoint deserialize(const std::vector<char>& bytes);

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

}  // namespace vcwn
