#pragma once

// Reverse-mode differentiation over dense matrices.
//
// Every value on a tape is a matrix. Batched quantities are laid out with one
// sample per column, so an affine layer is W * X + b. Nodes are appended in
// evaluation order, which is already a topological order; backward() walks
// them in reverse and accumulates adjoints.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "srl4h/errors.hpp"

namespace srl4h::diff {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

using Index = Eigen::Index;

struct Var {
  std::int32_t id = -1;
  bool valid() const { return id >= 0; }
};

enum class TapeMode {
  kSingleUse,  // backward() may be called once
  kReusable,   // backward() zeroes adjoints and may be replayed
};

template <typename T>
class Tape {
 public:
  using Mat = Matrix<T>;

  explicit Tape(TapeMode mode = TapeMode::kSingleUse) : mode_(mode) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  Var leaf(Mat value) { return push(std::move(value), true, nullptr); }
  Var constant(Mat value) { return push(std::move(value), false, nullptr); }

  const Mat& value(Var v) const { return node(v).value; }
  bool requires_grad(Var v) const { return node(v).needs_grad; }
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  // Adjoint of v after backward(); zeros when nothing flowed into v.
  Mat grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  T scalar(Var v) const {
    const Mat& m = value(v);
    if (m.size() != 1) throw UsageError("tape: scalar() on a non-scalar node");
    return m(0, 0);
  }

  void backward(Var root) {
    const Mat& v = value(root);
    if (v.size() != 1) throw UsageError("tape: backward() without seed requires a scalar root");
    backward(root, Mat::Ones(1, 1));
  }

  void backward(Var root, const Mat& seed) {
    if (consumed_ && mode_ == TapeMode::kSingleUse) {
      throw UsageError("tape: already consumed (single-use mode)");
    }
    const Node& r = node(root);
    if (seed.rows() != r.value.rows() || seed.cols() != r.value.cols()) {
      throw ConfigError("tape: backward seed shape " + shape_str(seed) + " does not match root " +
                        shape_str(r.value));
    }
    for (auto& n : nodes_) n.grad.resize(0, 0);
    consumed_ = true;
    if (!r.needs_grad) return;
    nodes_[root.id].grad = seed;
    for (std::int32_t i = root.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.size() == 0) continue;
      n.backward(*this, n.grad);
    }
  }

  // ---- operations -------------------------------------------------------

  // w: [out x in], b: [out x 1], x: [in x batch] -> [out x batch]
  Var affine(Var w, Var b, Var x) {
    const Mat& W = value(w);
    const Mat& B = value(b);
    const Mat& X = value(x);
    if (W.cols() != X.rows() || B.rows() != W.rows() || B.cols() != 1) {
      throw ConfigError("affine: weight " + shape_str(W) + ", bias " + shape_str(B) + ", input " +
                        shape_str(X));
    }
    Mat y = W * X;
    y.colwise() += B.col(0);
    return push_op(std::move(y), {w, b, x}, [w, b, x](Tape& t, const Mat& g) {
      if (t.requires_grad(w)) t.accumulate(w, g * t.value(x).transpose());
      if (t.requires_grad(b)) t.accumulate(b, g.rowwise().sum());
      if (t.requires_grad(x)) t.accumulate(x, t.value(w).transpose() * g);
    });
  }

  // ELU with alpha = 1.
  Var elu(Var x) {
    Mat y = elu_values(value(x));
    Var out = push_op(std::move(y), {x}, nullptr);
    set_backward(out, [x, out](Tape& t, const Mat& g) {
      // d/dx = 1 for x > 0, exp(x) = y + 1 otherwise
      const Mat& yv = t.value(out);
      t.accumulate(x, (g.array() * (yv.array().min(T(0)) + T(1))).matrix());
    });
    return out;
  }

  // Branch-free form vectorizes; identical values to x > 0 ? x : exp(x) - 1.
  static Mat elu_values(const Mat& x) {
    return (x.array().max(T(0)) + (x.array().min(T(0)).exp() - T(1))).matrix();
  }

  Var add(Var a, Var b) {
    check_same(a, b, "add");
    return push_op(value(a) + value(b), {a, b}, [a, b](Tape& t, const Mat& g) {
      if (t.requires_grad(a)) t.accumulate(a, g);
      if (t.requires_grad(b)) t.accumulate(b, g);
    });
  }

  Var sub(Var a, Var b) {
    check_same(a, b, "sub");
    return push_op(value(a) - value(b), {a, b}, [a, b](Tape& t, const Mat& g) {
      if (t.requires_grad(a)) t.accumulate(a, g);
      if (t.requires_grad(b)) t.accumulate(b, -g);
    });
  }

  // Elementwise product.
  Var mul(Var a, Var b) {
    check_same(a, b, "mul");
    Mat y = value(a).cwiseProduct(value(b));
    return push_op(std::move(y), {a, b}, [a, b](Tape& t, const Mat& g) {
      if (t.requires_grad(a)) t.accumulate(a, g.cwiseProduct(t.value(b)));
      if (t.requires_grad(b)) t.accumulate(b, g.cwiseProduct(t.value(a)));
    });
  }

  Var scale(Var a, T c) {
    return push_op(value(a) * c, {a}, [a, c](Tape& t, const Mat& g) { t.accumulate(a, g * c); });
  }

  Var add_scalar(Var a, T c) {
    Mat y = value(a).array() + c;
    return push_op(std::move(y), {a}, [a](Tape& t, const Mat& g) { t.accumulate(a, g); });
  }

  Var exp(Var a) {
    Mat y = value(a).array().exp();
    Var out = push_op(std::move(y), {a}, nullptr);
    set_backward(out, [a, out](Tape& t, const Mat& g) {
      t.accumulate(a, g.cwiseProduct(t.value(out)));
    });
    return out;
  }

  Var square(Var a) {
    Mat y = value(a).array().square();
    return push_op(std::move(y), {a}, [a](Tape& t, const Mat& g) {
      t.accumulate(a, (T(2) * g.array() * t.value(a).array()).matrix());
    });
  }

  // Sum of all entries -> [1 x 1].
  Var sum(Var a) {
    Mat y(1, 1);
    y(0, 0) = value(a).sum();
    return push_op(std::move(y), {a}, [a](Tape& t, const Mat& g) {
      const Mat& av = t.value(a);
      t.accumulate(a, Mat::Constant(av.rows(), av.cols(), g(0, 0)));
    });
  }

  Var mean(Var a) {
    const Index n = value(a).size();
    if (n == 0) throw ConfigError("mean: empty input");
    return scale(sum(a), T(1) / static_cast<T>(n));
  }

  // Column sums: [r x c] -> [1 x c].
  Var col_sum(Var a) {
    Mat y = value(a).colwise().sum();
    return push_op(std::move(y), {a}, [a](Tape& t, const Mat& g) {
      const Index r = t.value(a).rows();
      t.accumulate(a, g.replicate(r, 1));
    });
  }

  // Per-column dot products: [r x c], [r x c] -> [1 x c].
  Var col_dot(Var a, Var b) {
    check_same(a, b, "col_dot");
    Mat y = value(a).cwiseProduct(value(b)).colwise().sum();
    return push_op(std::move(y), {a, b}, [a, b](Tape& t, const Mat& g) {
      const Index r = t.value(a).rows();
      if (t.requires_grad(a)) t.accumulate(a, t.value(b).cwiseProduct(g.replicate(r, 1)));
      if (t.requires_grad(b)) t.accumulate(b, t.value(a).cwiseProduct(g.replicate(r, 1)));
    });
  }

  // Each column divided by max(||col||_2, eps).
  Var col_normalize(Var a, T eps) {
    const Mat& av = value(a);
    Vector<T> norms = av.colwise().norm().transpose();
    Vector<T> denom = norms.cwiseMax(eps);
    Mat y = av;
    for (Index j = 0; j < y.cols(); ++j) y.col(j) /= denom(j);
    Var out = push_op(std::move(y), {a}, nullptr);
    set_backward(out, [a, out, norms, denom, eps](Tape& t, const Mat& g) {
      const Mat& yv = t.value(out);
      Mat d(g.rows(), g.cols());
      for (Index j = 0; j < g.cols(); ++j) {
        if (norms(j) > eps) {
          const T proj = yv.col(j).dot(g.col(j));
          d.col(j) = (g.col(j) - yv.col(j) * proj) / denom(j);
        } else {
          d.col(j) = g.col(j) / denom(j);
        }
      }
      t.accumulate(a, d);
    });
    return out;
  }

  // [r x 1] -> [r x cols] by repeating the column.
  Var broadcast_cols(Var v, Index cols) {
    const Mat& vv = value(v);
    if (vv.cols() != 1) throw ConfigError("broadcast_cols: expected a column, got " + shape_str(vv));
    return push_op(vv.replicate(1, cols), {v}, [v](Tape& t, const Mat& g) {
      t.accumulate(v, g.rowwise().sum());
    });
  }

  // Vertical concatenation of two blocks with equal column counts.
  Var concat_rows(Var a, Var b) {
    const Mat& av = value(a);
    const Mat& bv = value(b);
    if (av.cols() != bv.cols()) {
      throw ConfigError("concat_rows: " + shape_str(av) + " vs " + shape_str(bv));
    }
    Mat y(av.rows() + bv.rows(), av.cols());
    y.topRows(av.rows()) = av;
    y.bottomRows(bv.rows()) = bv;
    const Index ra = av.rows();
    const Index rb = bv.rows();
    return push_op(std::move(y), {a, b}, [a, b, ra, rb](Tape& t, const Mat& g) {
      if (t.requires_grad(a)) t.accumulate(a, g.topRows(ra));
      if (t.requires_grad(b)) t.accumulate(b, g.bottomRows(rb));
    });
  }

  // Gradient passes only where lo < x < hi (strictly inside or on the boundary from inside).
  Var clamp(Var a, T lo, T hi) {
    Mat y = value(a).cwiseMax(lo).cwiseMin(hi);
    return push_op(std::move(y), {a}, [a, lo, hi](Tape& t, const Mat& g) {
      const Mat& av = t.value(a);
      Mat d = ((av.array() >= lo) && (av.array() <= hi)).select(g, Mat::Zero(g.rows(), g.cols()));
      t.accumulate(a, d);
    });
  }

  // Elementwise min; ties route the gradient to `a`.
  Var minimum(Var a, Var b) { return select_op(a, b, true); }
  Var maximum(Var a, Var b) { return select_op(a, b, false); }

  // Identity on the forward pass; the result carries no adjoint back to `a`.
  Var stop_gradient(Var a) { return push(value(a), false, nullptr); }

 private:
  using BackwardFn = std::function<void(Tape&, const Mat&)>;

  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    BackwardFn backward;
  };

  const Node& node(Var v) const {
    if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
      throw UsageError("tape: invalid variable handle");
    }
    return nodes_[v.id];
  }

  static std::string shape_str(const Mat& m) {
    return "[" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + "]";
  }

  void check_same(Var a, Var b, const char* op) const {
    const Mat& av = value(a);
    const Mat& bv = value(b);
    if (av.rows() != bv.rows() || av.cols() != bv.cols()) {
      throw ConfigError(std::string(op) + ": shape mismatch " + shape_str(av) + " vs " + shape_str(bv));
    }
  }

  Var push(Mat value, bool needs_grad, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
  }

  Var push_op(Mat value, std::initializer_list<Var> parents, BackwardFn fn) {
    bool needs = false;
    for (Var p : parents) needs = needs || node(p).needs_grad;
    return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{});
  }

  void set_backward(Var v, BackwardFn fn) {
    Node& n = nodes_[v.id];
    if (n.needs_grad) n.backward = std::move(fn);
  }

  void accumulate(Var v, const Mat& g) {
    Node& n = nodes_[v.id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  Var select_op(Var a, Var b, bool take_min) {
    check_same(a, b, take_min ? "minimum" : "maximum");
    const Mat& av = value(a);
    const Mat& bv = value(b);
    Mat y = take_min ? Mat(av.cwiseMin(bv)) : Mat(av.cwiseMax(bv));
    return push_op(std::move(y), {a, b}, [a, b, take_min](Tape& t, const Mat& g) {
      const Mat& av2 = t.value(a);
      const Mat& bv2 = t.value(b);
      const Mat zero = Mat::Zero(g.rows(), g.cols());
      auto pick_a = take_min ? (av2.array() <= bv2.array()).eval() : (av2.array() >= bv2.array()).eval();
      if (t.requires_grad(a)) t.accumulate(a, pick_a.select(g, zero));
      if (t.requires_grad(b)) t.accumulate(b, pick_a.select(zero, g));
    });
  }

  std::vector<Node> nodes_;
  TapeMode mode_;
  bool consumed_ = false;
};

}  // namespace srl4h::diff
