#pragma once

// Tape-based reverse-mode differentiation over dense matrices. Every op
// records its output value and, when any input needs gradients, a closure
// that pushes the output gradient back into its inputs. Nodes are created in
// topological order, so backward() is a single reverse sweep.

#include <Eigen/Core>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace lm2d {
class Skeleton;
}

namespace lm2d::ag {

using Matrix = Eigen::MatrixXd;

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var variable(Matrix value);

  /// Seeds d(output)/d(output) = seed (output must be 1x1) and sweeps backwards.
  void backward(Var output, double seed = 1.0);

  const Matrix& value(int id) const { return nodes_[id].value; }
  /// Gradient accumulated at a node; a zero matrix if nothing flowed into it.
  Matrix grad(Var v) const;
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  // Op implementation hooks.
  Var push(Matrix value, bool requires_grad, Backward backward);
  bool any_requires_grad(std::initializer_list<Var> inputs) const;
  Matrix& grad_ref(int id);
  const Matrix& grad_at(int id) const { return nodes_[id].grad; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
  bool grad_enabled_;
};

Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Adds a 1 x C row to every row of a.
Var add_row(Var a, Var row);
/// Elementwise product.
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var silu(Var a);
Var softmax_rows(Var a);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var concat_cols(std::span<const Var> parts);
/// out.row(i) = a.row(i - k), zero outside the range.
Var shift_rows(Var a, int k);
/// out.row(i) = a.row(i + 1) - a.row(i); N-1 rows.
Var row_diff(Var a);
/// 1 x C column means.
Var mean_rows(Var a);
/// Scales every row to unit L2 norm.
Var normalize_rows(Var a, double eps = 1e-12);
/// 1 x 1 sum of squared entries.
Var sum_squares(Var a);
/// 1 x 1 mean of squared entries.
Var mean_squares(Var a);
/// Mean over rows of -log softmax(logits.row(i))[targets[i]].
Var cross_entropy_rows(Var logits, std::span<const int> targets);
/// Per-row forward kinematics: N x 147 poses to N x 72 joint positions.
Var forward_kinematics(Var poses, const Skeleton& skeleton);

/// Named blocks of a flat parameter vector.
class ParameterSet {
 public:
  struct Block {
    std::string name;
    Eigen::Index rows;
    Eigen::Index cols;
    Eigen::Index offset;
  };

  int add(std::string name, Eigen::Index rows, Eigen::Index cols);
  const std::vector<Block>& blocks() const { return blocks_; }
  Eigen::Index size() const { return values_.size(); }
  Eigen::VectorXd& values() { return values_; }
  const Eigen::VectorXd& values() const { return values_; }
  Eigen::Map<const Matrix> block(int index) const;
  Eigen::Map<Matrix> block(int index);

 private:
  std::vector<Block> blocks_;
  Eigen::VectorXd values_;
};

/// Binds parameter blocks into one tape as leaves, created on first use.
class ParamBinding {
 public:
  ParamBinding(Tape& tape, const ParameterSet& params, bool trainable);
  /// Uses `values` (laid out like params.values()) instead of the stored values.
  ParamBinding(Tape& tape, const ParameterSet& params, const Eigen::VectorXd& values, bool trainable);
  Var operator[](int index);
  Tape& tape() { return *tape_; }
  /// Flat gradient vector laid out like ParameterSet::values().
  Eigen::VectorXd gradient() const;

 private:
  Tape* tape_;
  const ParameterSet* params_;
  const Eigen::VectorXd* values_;
  bool trainable_;
  std::vector<Var> leaves_;
};

}  // namespace lm2d::ag
