#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "anyreid/repr.hpp"

namespace anyreid {

// Named parameter arrays in insertion order. Insertion order is the canonical order
// used by checkpoints, optimizers and flat (finite-difference) indexing.
class ParamSet {
 public:
  void add(std::string name, Matrix value);

  bool contains(const std::string& name) const { return index_.contains(name); }
  Matrix& at(const std::string& name);
  const Matrix& at(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  const std::string& name(std::size_t i) const { return entries_[i].first; }
  Matrix& value(std::size_t i) { return entries_[i].second; }
  const Matrix& value(std::size_t i) const { return entries_[i].second; }

  // Total number of scalars, and flat access in canonical order.
  std::size_t scalar_count() const;
  double& scalar(std::size_t flat);
  double scalar(std::size_t flat) const;

  // Same names and shapes, all zeros.
  ParamSet zeros_like() const;
  bool same_layout(const ParamSet& other) const;
  bool all_finite() const;

  void add_scaled(const ParamSet& other, double scale);

  friend bool operator==(const ParamSet& a, const ParamSet& b);

 private:
  std::pair<std::size_t, Eigen::Index> locate(std::size_t flat) const;

  std::vector<std::pair<std::string, Matrix>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace anyreid
