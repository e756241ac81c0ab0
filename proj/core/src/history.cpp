#include "affectgen/history.hpp"

#include <cmath>

#include "affectgen/error.hpp"

namespace affectgen {

HistoryState::HistoryState(std::size_t num_layers, std::size_t embed_dim)
    : layers_(num_layers), embed_dim_(embed_dim) {
  for (auto& l : layers_) {
    l.keys.resize(0, static_cast<Eigen::Index>(embed_dim));
    l.values.resize(0, static_cast<Eigen::Index>(embed_dim));
  }
}

bool HistoryState::same_shape(const HistoryState& other) const {
  return layers_.size() == other.layers_.size() && length_ == other.length_ &&
         embed_dim_ == other.embed_dim_;
}

HistoryState HistoryState::zeros_like() const {
  HistoryState out = *this;
  for (auto& l : out.layers_) {
    l.keys.setZero();
    l.values.setZero();
  }
  return out;
}

void HistoryState::push_position(const std::vector<Eigen::VectorXd>& keys,
                                 const std::vector<Eigen::VectorXd>& values) {
  if (keys.size() != layers_.size() || values.size() != layers_.size()) {
    throw Error("push_position: layer count mismatch");
  }
  const auto rows = static_cast<Eigen::Index>(length_);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    auto& l = layers_[i];
    l.keys.conservativeResize(rows + 1, Eigen::NoChange);
    l.values.conservativeResize(rows + 1, Eigen::NoChange);
    l.keys.row(rows) = keys[i].transpose();
    l.values.row(rows) = values[i].transpose();
  }
  ++length_;
}

double& HistoryState::coeff(std::size_t flat_index) {
  if (flat_index >= size()) throw Error("history coefficient index out of range");
  const std::size_t per_matrix = length_ * embed_dim_;
  const std::size_t matrix = flat_index / per_matrix;
  const std::size_t offset = flat_index % per_matrix;
  auto& l = layers_[matrix / 2];
  return (matrix % 2 == 0 ? l.keys : l.values).data()[offset];
}

double HistoryState::coeff(std::size_t flat_index) const {
  return const_cast<HistoryState*>(this)->coeff(flat_index);
}

double HistoryState::squared_norm() const {
  double total = 0.0;
  for (const auto& l : layers_) total += l.keys.squaredNorm() + l.values.squaredNorm();
  return total;
}

bool HistoryState::all_finite() const {
  for (const auto& l : layers_) {
    if (!l.keys.allFinite() || !l.values.allFinite()) return false;
  }
  return true;
}

HistoryState& HistoryState::operator+=(const HistoryState& other) {
  if (!same_shape(other)) throw Error("history shapes differ");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i].keys += other.layers_[i].keys;
    layers_[i].values += other.layers_[i].values;
  }
  return *this;
}

HistoryState& HistoryState::operator-=(const HistoryState& other) {
  if (!same_shape(other)) throw Error("history shapes differ");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i].keys -= other.layers_[i].keys;
    layers_[i].values -= other.layers_[i].values;
  }
  return *this;
}

HistoryState& HistoryState::operator*=(double scale) {
  for (auto& l : layers_) {
    l.keys *= scale;
    l.values *= scale;
  }
  return *this;
}

bool HistoryState::operator==(const HistoryState& other) const {
  if (!same_shape(other)) return false;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].keys != other.layers_[i].keys || layers_[i].values != other.layers_[i].values) {
      return false;
    }
  }
  return true;
}

}  // namespace affectgen
