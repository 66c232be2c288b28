#include "lm2d/autograd.hpp"

#include <cmath>
#include <fmt/format.h>

#include "lm2d/error.hpp"
#include "lm2d/skeleton.hpp"

namespace lm2d::ag {

const Matrix& Var::value() const { return tape_->value(id_); }

Var Tape::push(Matrix value, bool requires_grad, Backward backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad && grad_enabled_;
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }
Var Tape::variable(Matrix value) { return push(std::move(value), true, nullptr); }

bool Tape::any_requires_grad(std::initializer_list<Var> inputs) const {
  if (!grad_enabled_) return false;
  for (const Var& v : inputs)
    if (nodes_[v.id()].requires_grad) return true;
  return false;
}

Matrix& Tape::grad_ref(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var output, double seed) {
  if (output.tape() != this) throw std::logic_error("backward: variable belongs to another tape");
  if (nodes_[output.id()].value.size() != 1) throw std::logic_error("backward: output must be a scalar");
  grad_ref(output.id())(0, 0) += seed;
  for (int id = output.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.backward && n.grad.size() != 0) n.backward(*this, id);
  }
}

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(fmt::format("{}: shape mismatch {}x{} vs {}x{}", op, a.rows(), a.cols(), b.rows(), b.cols()));
}

Tape& tape_of(const Var& a) { return *a.tape(); }

}  // namespace

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows())
    throw std::invalid_argument(fmt::format("matmul: {}x{} * {}x{}", a.rows(), a.cols(), b.rows(), b.cols()));
  Tape& t = tape_of(a);
  const int ia = a.id(), ib = b.id();
  Matrix out = a.value() * b.value();
  return t.push(std::move(out), t.any_requires_grad({a, b}), [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.grad_at(self);
    if (tp.requires_grad(ia)) tp.grad_ref(ia).noalias() += g * tp.value(ib).transpose();
    if (tp.requires_grad(ib)) tp.grad_ref(ib).noalias() += tp.value(ia).transpose() * g;
  });
}

Var matmul_nt(Var a, Var b) {
  if (a.cols() != b.cols())
    throw std::invalid_argument(fmt::format("matmul_nt: {}x{} * ({}x{})^T", a.rows(), a.cols(), b.rows(), b.cols()));
  Tape& t = tape_of(a);
  const int ia = a.id(), ib = b.id();
  Matrix out = a.value() * b.value().transpose();
  return t.push(std::move(out), t.any_requires_grad({a, b}), [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.grad_at(self);
    if (tp.requires_grad(ia)) tp.grad_ref(ia).noalias() += g * tp.value(ib);
    if (tp.requires_grad(ib)) tp.grad_ref(ib).noalias() += g.transpose() * tp.value(ia);
  });
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.push(a.value().transpose(), t.any_requires_grad({a}), [ia](Tape& tp, int self) {
    tp.grad_ref(ia) += tp.grad_at(self).transpose();
  });
}

Var add(Var a, Var b) {
  check_same_shape(a, b, "add");
  Tape& t = tape_of(a);
  const int ia = a.id(), ib = b.id();
  return t.push(a.value() + b.value(), t.any_requires_grad({a, b}), [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.grad_at(self);
    if (tp.requires_grad(ia)) tp.grad_ref(ia) += g;
    if (tp.requires_grad(ib)) tp.grad_ref(ib) += g;
  });
}

Var sub(Var a, Var b) {
  check_same_shape(a, b, "sub");
  Tape& t = tape_of(a);
  const int ia = a.id(), ib = b.id();
  return t.push(a.value() - b.value(), t.any_requires_grad({a, b}), [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.grad_at(self);
    if (tp.requires_grad(ia)) tp.grad_ref(ia) += g;
    if (tp.requires_grad(ib)) tp.grad_ref(ib) -= g;
  });
}

Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols())
    throw std::invalid_argument(fmt::format("add_row: row {}x{} vs matrix {}x{}", row.rows(), row.cols(), a.rows(), a.cols()));
  Tape& t = tape_of(a);
  const int ia = a.id(), ir = row.id();
  Matrix out = a.value().rowwise() + row.value().row(0);
  return t.push(std::move(out), t.any_requires_grad({a, row}), [ia, ir](Tape& tp, int self) {
    const Matrix& g = tp.grad_at(self);
    if (tp.requires_grad(ia)) tp.grad_ref(ia) += g;
    if (tp.requires_grad(ir)) tp.grad_ref(ir) += g.colwise().sum();
  });
}

Var mul(Var a, Var b) {
  check_same_shape(a, b, "mul");
  Tape& t = tape_of(a);
  const int ia = a.id(), ib = b.id();
  Matrix out = a.value().cwiseProduct(b.value());
  return t.push(std::move(out), t.any_requires_grad({a, b}), [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.grad_at(self);
    if (tp.requires_grad(ia)) tp.grad_ref(ia) += g.cwiseProduct(tp.value(ib));
    if (tp.requires_grad(ib)) tp.grad_ref(ib) += g.cwiseProduct(tp.value(ia));
  });
}

Var scale(Var a, double s) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.push(a.value() * s, t.any_requires_grad({a}), [ia, s](Tape& tp, int self) {
    tp.grad_ref(ia) += s * tp.grad_at(self);
  });
}

Var silu(Var a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  const Matrix sig = (1.0 + (-a.value().array()).exp()).inverse().matrix();
  Matrix out = a.value().cwiseProduct(sig);
  return t.push(std::move(out), t.any_requires_grad({a}), [ia, sig](Tape& tp, int self) {
    const auto x = tp.value(ia).array();
    const auto s = sig.array();
    tp.grad_ref(ia).array() += tp.grad_at(self).array() * (s * (1.0 + x * (1.0 - s)));
  });
}

Var softmax_rows(Var a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  Matrix out = a.value();
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double m = out.row(i).maxCoeff();
    out.row(i) = (out.row(i).array() - m).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return t.push(std::move(out), t.any_requires_grad({a}), [ia](Tape& tp, int self) {
    const Matrix& y = tp.value(self);
    const Matrix& g = tp.grad_at(self);
    const Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
    tp.grad_ref(ia) += y.cwiseProduct(g - dot.replicate(1, g.cols()));
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const Eigen::Index c = x.cols();
  if (gain.rows() != 1 || gain.cols() != c || bias.rows() != 1 || bias.cols() != c)
    throw std::invalid_argument("layer_norm: gain/bias must be 1 x C");
  Tape& t = tape_of(x);
  const int ix = x.id(), ig = gain.id(), ib = bias.id();
  const Matrix& xv = x.value();
  const Eigen::VectorXd mean = xv.rowwise().mean();
  Matrix xhat = xv.colwise() - mean;
  const Eigen::VectorXd inv_std =
      ((xhat.array().square().rowwise().sum() / static_cast<double>(c)) + eps).rsqrt().matrix();
  xhat = inv_std.asDiagonal() * xhat;
  Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix().rowwise() + bias.value().row(0);
  return t.push(std::move(out), t.any_requires_grad({x, gain, bias}),
                [ix, ig, ib, xhat, inv_std, c](Tape& tp, int self) {
                  const Matrix& g = tp.grad_at(self);
                  if (tp.requires_grad(ig)) tp.grad_ref(ig) += g.cwiseProduct(xhat).colwise().sum();
                  if (tp.requires_grad(ib)) tp.grad_ref(ib) += g.colwise().sum();
                  if (tp.requires_grad(ix)) {
                    const Matrix gh = (g.array().rowwise() * tp.value(ig).row(0).array()).matrix();
                    const Eigen::VectorXd m1 = gh.rowwise().mean();
                    const Eigen::VectorXd m2 = gh.cwiseProduct(xhat).rowwise().mean();
                    Matrix gx = gh.colwise() - m1;
                    gx -= m2.asDiagonal() * xhat;
                    tp.grad_ref(ix) += inv_std.asDiagonal() * gx;
                  }
                  (void)c;
                });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw std::invalid_argument("slice_cols: out of range");
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.push(a.value().middleCols(start, count), t.any_requires_grad({a}), [ia, start, count](Tape& tp, int self) {
    tp.grad_ref(ia).middleCols(start, count) += tp.grad_at(self);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  Tape& t = tape_of(parts[0]);
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  bool needs = false;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += p.cols();
    needs = needs || t.any_requires_grad({p});
  }
  Matrix out(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> pieces;
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    pieces.emplace_back(p.id(), at);
    at += p.cols();
  }
  return t.push(std::move(out), needs, [pieces](Tape& tp, int self) {
    const Matrix& g = tp.grad_at(self);
    for (const auto& [id, off] : pieces)
      if (tp.requires_grad(id)) tp.grad_ref(id) += g.middleCols(off, tp.value(id).cols());
  });
}

Var shift_rows(Var a, int k) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  const Eigen::Index n = a.rows();
  Matrix out = Matrix::Zero(n, a.cols());
  const Eigen::Index len = n - std::abs(k);
  if (len > 0) {
    if (k >= 0)
      out.bottomRows(len) = a.value().topRows(len);
    else
      out.topRows(len) = a.value().bottomRows(len);
  }
  return t.push(std::move(out), t.any_requires_grad({a}), [ia, k, len](Tape& tp, int self) {
    if (len <= 0) return;
    const Matrix& g = tp.grad_at(self);
    if (k >= 0)
      tp.grad_ref(ia).topRows(len) += g.bottomRows(len);
    else
      tp.grad_ref(ia).bottomRows(len) += g.topRows(len);
  });
}

Var row_diff(Var a) {
  if (a.rows() < 2) throw std::invalid_argument("row_diff: need at least 2 rows");
  Tape& t = tape_of(a);
  const int ia = a.id();
  const Eigen::Index n = a.rows();
  Matrix out = a.value().bottomRows(n - 1) - a.value().topRows(n - 1);
  return t.push(std::move(out), t.any_requires_grad({a}), [ia, n](Tape& tp, int self) {
    const Matrix& g = tp.grad_at(self);
    Matrix& ga = tp.grad_ref(ia);
    ga.bottomRows(n - 1) += g;
    ga.topRows(n - 1) -= g;
  });
}

Var mean_rows(Var a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  const double n = static_cast<double>(a.rows());
  return t.push(a.value().colwise().mean(), t.any_requires_grad({a}), [ia, n](Tape& tp, int self) {
    Matrix& ga = tp.grad_ref(ia);
    ga.rowwise() += tp.grad_at(self).row(0) / n;
  });
}

Var normalize_rows(Var a, double eps) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  const Eigen::VectorXd norms = a.value().rowwise().norm().array().max(eps).matrix();
  Matrix out = norms.cwiseInverse().asDiagonal() * a.value();
  return t.push(std::move(out), t.any_requires_grad({a}), [ia, norms](Tape& tp, int self) {
    const Matrix& y = tp.value(self);
    const Matrix& g = tp.grad_at(self);
    const Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
    Matrix gx = g - dot.asDiagonal() * y;
    tp.grad_ref(ia) += norms.cwiseInverse().asDiagonal() * gx;
  });
}

Var sum_squares(Var a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  Matrix out(1, 1);
  out(0, 0) = a.value().squaredNorm();
  return t.push(std::move(out), t.any_requires_grad({a}), [ia](Tape& tp, int self) {
    tp.grad_ref(ia) += (2.0 * tp.grad_at(self)(0, 0)) * tp.value(ia);
  });
}

Var mean_squares(Var a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  const double n = static_cast<double>(a.value().size());
  Matrix out(1, 1);
  out(0, 0) = a.value().squaredNorm() / n;
  return t.push(std::move(out), t.any_requires_grad({a}), [ia, n](Tape& tp, int self) {
    tp.grad_ref(ia) += (2.0 * tp.grad_at(self)(0, 0) / n) * tp.value(ia);
  });
}

Var cross_entropy_rows(Var logits, std::span<const int> targets) {
  if (static_cast<Eigen::Index>(targets.size()) != logits.rows())
    throw std::invalid_argument("cross_entropy_rows: one target per row required");
  Tape& t = tape_of(logits);
  const int il = logits.id();
  const Matrix& z = logits.value();
  Matrix prob(z.rows(), z.cols());
  double loss = 0.0;
  std::vector<int> tg(targets.begin(), targets.end());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    if (tg[i] < 0 || tg[i] >= z.cols()) throw std::invalid_argument("cross_entropy_rows: target out of range");
    const double m = z.row(i).maxCoeff();
    prob.row(i) = (z.row(i).array() - m).exp().matrix();
    const double s = prob.row(i).sum();
    prob.row(i) /= s;
    loss += -(z(i, tg[i]) - m - std::log(s));
  }
  const double n = static_cast<double>(z.rows());
  Matrix out(1, 1);
  out(0, 0) = loss / n;
  return t.push(std::move(out), t.any_requires_grad({logits}), [il, prob, tg, n](Tape& tp, int self) {
    Matrix g = prob;
    for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, tg[i]) -= 1.0;
    tp.grad_ref(il) += (tp.grad_at(self)(0, 0) / n) * g;
  });
}

Var forward_kinematics(Var poses, const Skeleton& skeleton) {
  if (poses.cols() != kPoseDim)
    throw std::invalid_argument(fmt::format("forward_kinematics: expected {} columns, got {}", kPoseDim, poses.cols()));
  Tape& t = tape_of(poses);
  const int ip = poses.id();
  Matrix out = motion_positions(skeleton, poses.value());
  const Skeleton* sk = &skeleton;
  return t.push(std::move(out), t.any_requires_grad({poses}), [ip, sk](Tape& tp, int self) {
    const Matrix& p = tp.value(ip);
    const Matrix& g = tp.grad_at(self);
    Matrix& gp = tp.grad_ref(ip);
    std::array<double, kPoseDim> row;
    std::array<double, kPositionDim> grow;
    std::array<double, kPoseDim> gout;
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      for (int k = 0; k < kPoseDim; ++k) row[k] = p(i, k);
      for (int k = 0; k < kPositionDim; ++k) grow[k] = g(i, k);
      gout.fill(0.0);
      forward_kinematics_vjp(*sk, row, grow, gout);
      for (int k = 0; k < kPoseDim; ++k) gp(i, k) += gout[k];
    }
  });
}

int ParameterSet::add(std::string name, Eigen::Index rows, Eigen::Index cols) {
  const Eigen::Index offset = values_.size();
  blocks_.push_back({std::move(name), rows, cols, offset});
  Eigen::VectorXd grown = Eigen::VectorXd::Zero(offset + rows * cols);
  grown.head(offset) = values_;
  values_ = std::move(grown);
  return static_cast<int>(blocks_.size()) - 1;
}

Eigen::Map<const Matrix> ParameterSet::block(int index) const {
  const Block& b = blocks_[index];
  return Eigen::Map<const Matrix>(values_.data() + b.offset, b.rows, b.cols);
}

Eigen::Map<Matrix> ParameterSet::block(int index) {
  const Block& b = blocks_[index];
  return Eigen::Map<Matrix>(values_.data() + b.offset, b.rows, b.cols);
}

ParamBinding::ParamBinding(Tape& tape, const ParameterSet& params, bool trainable)
    : ParamBinding(tape, params, params.values(), trainable) {}

ParamBinding::ParamBinding(Tape& tape, const ParameterSet& params, const Eigen::VectorXd& values, bool trainable)
    : tape_(&tape), params_(&params), values_(&values), trainable_(trainable), leaves_(params.blocks().size()) {
  if (values.size() != params.size()) throw std::invalid_argument("ParamBinding: parameter vector size mismatch");
}

Var ParamBinding::operator[](int index) {
  Var& leaf = leaves_[index];
  if (!leaf.valid()) {
    const auto& b = params_->blocks()[index];
    Matrix m = Eigen::Map<const Matrix>(values_->data() + b.offset, b.rows, b.cols);
    leaf = trainable_ ? tape_->variable(std::move(m)) : tape_->constant(std::move(m));
  }
  return leaf;
}

Eigen::VectorXd ParamBinding::gradient() const {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(params_->size());
  for (std::size_t i = 0; i < leaves_.size(); ++i) {
    if (!leaves_[i].valid()) continue;
    const auto& b = params_->blocks()[i];
    const Matrix& gm = tape_->grad_at(leaves_[i].id());
    if (gm.size() == 0) continue;
    g.segment(b.offset, b.rows * b.cols) = Eigen::Map<const Eigen::VectorXd>(gm.data(), gm.size());
  }
  return g;
}

}  // namespace lm2d::ag
