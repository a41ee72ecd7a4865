#pragma once

#include <map>
#include <string>
#include <vector>

#include "mmpred/layers.hpp"
#include "mmpred/tensor.hpp"

namespace mmpred::num {

// Self-describing binary parameter file: magic "MMCK", format version, then a
// named tensor table (name, rows, cols, float64 payload). Little-endian.
struct Checkpoint {
  std::map<std::string, Tensor> entries;

  void put(const std::string& name, const Tensor& t) { entries[name] = t.detach(); }
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const { return entries.count(name) > 0; }

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  // Copies stored values into live parameter tensors by name (shapes must match).
  void restore(const std::vector<NamedParam>& params) const;
  static Checkpoint capture(const std::vector<NamedParam>& params);
};

}  // namespace mmpred::num
