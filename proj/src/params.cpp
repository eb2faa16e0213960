#include "anyreid/params.hpp"

#include "anyreid/error.hpp"

namespace anyreid {

void ParamSet::add(std::string name, Matrix value) {
  if (index_.contains(name)) throw Error("duplicate parameter " + name);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(value));
}

Matrix& ParamSet::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("unknown parameter " + name);
  return entries_[it->second].second;
}

const Matrix& ParamSet::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("unknown parameter " + name);
  return entries_[it->second].second;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, m] : entries_) n += static_cast<std::size_t>(m.size());
  return n;
}

std::pair<std::size_t, Eigen::Index> ParamSet::locate(std::size_t flat) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto n = static_cast<std::size_t>(entries_[i].second.size());
    if (flat < n) return {i, static_cast<Eigen::Index>(flat)};
    flat -= n;
  }
  throw Error("flat parameter index out of range");
}

double& ParamSet::scalar(std::size_t flat) {
  auto [i, k] = locate(flat);
  return entries_[i].second.data()[k];
}

double ParamSet::scalar(std::size_t flat) const {
  auto [i, k] = locate(flat);
  return entries_[i].second.data()[k];
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  for (const auto& [name, m] : entries_) out.add(name, Matrix::Zero(m.rows(), m.cols()));
  return out;
}

bool ParamSet::same_layout(const ParamSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& [na, a] = entries_[i];
    const auto& [nb, b] = other.entries_[i];
    if (na != nb || a.rows() != b.rows() || a.cols() != b.cols()) return false;
  }
  return true;
}

bool ParamSet::all_finite() const {
  for (const auto& [_, m] : entries_)
    if (!m.allFinite()) return false;
  return true;
}

void ParamSet::add_scaled(const ParamSet& other, double scale) {
  if (!same_layout(other)) throw Error("parameter layout mismatch");
  for (std::size_t i = 0; i < entries_.size(); ++i)
    entries_[i].second += scale * other.entries_[i].second;
}

bool operator==(const ParamSet& a, const ParamSet& b) {
  if (!a.same_layout(b)) return false;
  for (std::size_t i = 0; i < a.entries_.size(); ++i)
    if (a.entries_[i].second != b.entries_[i].second) return false;
  return true;
}

}  // namespace anyreid
