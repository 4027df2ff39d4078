#pragma once

#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "dmcf/geometry.hpp"
#include "dmcf/matrix.hpp"

/// Minimal matrix-valued reverse-mode differentiation. Every operation appends
/// a node holding its value and a closure that pushes the node's cotangent to
/// its inputs. A tape created with recording disabled only evaluates values.
namespace dmcf::ad {

struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
  bool valid() const noexcept { return id != std::numeric_limits<std::size_t>::max(); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix&)>;

  explicit Tape(bool record_gradients = true) : recording_(record_gradients) {}

  bool recording() const noexcept { return recording_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var constant(Matrix value);
  Var variable(Matrix value);
  /// Appends an operation result. `fn` is dropped unless some input requires
  /// a gradient and the tape records.
  Var record(Matrix value, bool requires_grad, Backward fn);

  const Matrix& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  bool has_grad(Var v) const { return !nodes_.at(v.id).grad.empty(); }
  /// Gradient storage, allocated as zeros on first access.
  Matrix& grad(Var v);

  /// Seeds d(root) = seed and propagates to every recorded input.
  void backward(Var root, const Matrix& seed);
  /// Convenience for scalar roots.
  void backward(Var root);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };
  bool recording_;
  std::vector<Node> nodes_;
};

bool any_requires_grad(const Tape& t, std::initializer_list<Var> vars);

Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);
/// alpha * a + beta * b
Var axpby(Tape& t, double alpha, Var a, double beta, Var b);
/// Adds the constant row vector `row` to every row of a.
Var add_row_constant(Tape& t, Var a, std::span<const double> row);
Var add_n(Tape& t, std::span<const Var> terms);
Var relu(Tape& t, Var a);
Var concat_cols(Tape& t, Var a, Var b);
Var concat_rows(Tape& t, Var a, Var b);
/// out.row(i) = a.row(index[i])
Var gather_rows(Tape& t, Var a, std::vector<std::size_t> index);
/// Rotates each row into (or out of) the canonical gravity frame.
Var rotate_rows(Tape& t, Var a, const GravityFrame& frame, bool to_canonical);
/// Copies rows [begin, begin + count).
Var slice_rows(Tape& t, Var a, std::size_t begin, std::size_t count);

}  // namespace dmcf::ad
