#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Core>

namespace affectgen {

// Cached attention keys and values of every consumed position, per layer.
// This is the state a steering step perturbs: a perturbation is itself a
// HistoryState of identical shape that gets added elementwise.
class HistoryState {
 public:
  using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  struct Layer {
    Matrix keys;    // length x embed_dim
    Matrix values;  // length x embed_dim
  };

  HistoryState() = default;
  HistoryState(std::size_t num_layers, std::size_t embed_dim);

  std::size_t length() const { return length_; }
  std::size_t num_layers() const { return layers_.size(); }
  std::size_t embed_dim() const { return embed_dim_; }
  // Number of scalars (2 * layers * length * embed_dim).
  std::size_t size() const { return 2 * layers_.size() * length_ * embed_dim_; }

  const Layer& layer(std::size_t i) const { return layers_.at(i); }
  Layer& layer(std::size_t i) { return layers_.at(i); }

  bool same_shape(const HistoryState& other) const;
  HistoryState zeros_like() const;

  // Appends one position; keys[l] / values[l] are the layer-l vectors.
  void push_position(const std::vector<Eigen::VectorXd>& keys, const std::vector<Eigen::VectorXd>& values);

  // Flat view over all scalars in a fixed order (layer, keys then values,
  // row-major). Used by finite-difference checks and gradient scaling.
  double& coeff(std::size_t flat_index);
  double coeff(std::size_t flat_index) const;

  double squared_norm() const;
  bool all_finite() const;

  // Throw Error on shape mismatch.
  HistoryState& operator+=(const HistoryState& other);
  HistoryState& operator-=(const HistoryState& other);
  HistoryState& operator*=(double scale);
  friend HistoryState operator+(HistoryState a, const HistoryState& b) { return a += b; }

  bool operator==(const HistoryState& other) const;

 private:
  std::vector<Layer> layers_;
  std::size_t length_ = 0;
  std::size_t embed_dim_ = 0;
};

}  // namespace affectgen
