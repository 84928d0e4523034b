#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ebr/checkpoint.hpp"

namespace ebr {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Ordered collection of named dense parameter blocks. Also used for
/// gradients, which share the layout of the parameters they belong to.
class ParamStore {
 public:
  std::size_t add(std::string name, Matrix value);

  std::size_t size() const { return blocks_.size(); }
  Matrix& operator[](std::size_t i) { return blocks_[i]; }
  const Matrix& operator[](std::size_t i) const { return blocks_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }
  std::size_t index(const std::string& name) const;

  /// Total number of scalars across blocks.
  std::size_t num_scalars() const;
  /// Flat coordinate view (block order, column-major within a block).
  double& coord(std::size_t flat);
  double coord(std::size_t flat) const;

  ParamStore zeros_like() const;
  void set_zero();
  ParamStore& operator+=(const ParamStore& other);
  ParamStore& operator*=(double s);
  double squared_norm() const;
  bool all_finite() const;

  /// Bit-level equality of every block.
  bool identical(const ParamStore& other) const;

  void to_checkpoint(Checkpoint& ck) const;
  /// Loads blocks by name; shapes must match the current layout.
  void from_checkpoint(const Checkpoint& ck);

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> blocks_;
};

struct AdamConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(const ParamStore& layout, AdamConfig cfg);

  void step(ParamStore& params, const ParamStore& grads);
  long steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  ParamStore m_;
  ParamStore v_;
  long t_ = 0;
};

/// Rescales grads in place so their global L2 norm is at most max_norm.
void clip_grad_norm(ParamStore& grads, double max_norm);

}  // namespace ebr
