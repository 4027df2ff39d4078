#include "dmcf/autodiff.hpp"

#include <algorithm>

namespace dmcf::ad {

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return Var{nodes_.size() - 1};
}

Var Tape::variable(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, recording_, {}});
  return Var{nodes_.size() - 1};
}

Var Tape::record(Matrix value, bool requires_grad, Backward fn) {
  const bool keep = recording_ && requires_grad;
  nodes_.push_back(Node{std::move(value), {}, keep, keep ? std::move(fn) : Backward{}});
  return Var{nodes_.size() - 1};
}

Matrix& Tape::grad(Var v) {
  Node& n = nodes_.at(v.id);
  if (n.grad.empty() && !n.value.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var root, const Matrix& seed) {
  if (!recording_) throw ContractViolation("backward on a tape that does not record");
  Matrix& g = grad(root);
  if (!seed.same_shape(g)) throw ContractViolation("seed shape differs from the root value");
  for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] += seed.data()[i];
  for (std::size_t id = root.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(*this, n.grad);
  }
}

void Tape::backward(Var root) {
  const Matrix& v = value(root);
  if (v.size() != 1) throw ContractViolation("implicit seed needs a scalar root");
  backward(root, Matrix(1, 1, 1.0));
}

bool any_requires_grad(const Tape& t, std::initializer_list<Var> vars) {
  return std::any_of(vars.begin(), vars.end(), [&](Var v) { return t.requires_grad(v); });
}

namespace {

void accumulate(Tape& t, Var v, const Matrix& g, double s = 1.0) {
  if (!t.requires_grad(v)) return;
  Matrix& dst = t.grad(v);
  for (std::size_t i = 0; i < g.size(); ++i) dst.data()[i] += s * g.data()[i];
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) throw InputError(std::string(op) + ": operand shapes differ");
}

}  // namespace

Var axpby(Tape& t, double alpha, Var a, double beta, Var b) {
  const Matrix& va = t.value(a);
  const Matrix& vb = t.value(b);
  require_same_shape(va, vb, "axpby");
  Matrix out(va.rows(), va.cols());
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data()[i] = alpha * va.data()[i] + beta * vb.data()[i];
  return t.record(std::move(out), any_requires_grad(t, {a, b}),
                  [a, b, alpha, beta](Tape& tp, const Matrix& g) {
                    accumulate(tp, a, g, alpha);
                    accumulate(tp, b, g, beta);
                  });
}

Var add(Tape& t, Var a, Var b) { return axpby(t, 1.0, a, 1.0, b); }
Var sub(Tape& t, Var a, Var b) { return axpby(t, 1.0, a, -1.0, b); }

Var scale(Tape& t, Var a, double s) {
  const Matrix& va = t.value(a);
  Matrix out(va.rows(), va.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = s * va.data()[i];
  return t.record(std::move(out), t.requires_grad(a),
                  [a, s](Tape& tp, const Matrix& g) { accumulate(tp, a, g, s); });
}

Var add_row_constant(Tape& t, Var a, std::span<const double> row) {
  const Matrix& va = t.value(a);
  if (va.rows() > 0 && row.size() != va.cols())
    throw InputError("add_row_constant: row length differs from column count");
  Matrix out = va;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += row[c];
  return t.record(std::move(out), t.requires_grad(a),
                  [a](Tape& tp, const Matrix& g) { accumulate(tp, a, g); });
}

Var add_n(Tape& t, std::span<const Var> terms) {
  if (terms.empty()) throw InputError("add_n needs at least one term");
  Matrix out = t.value(terms[0]);
  bool req = t.requires_grad(terms[0]);
  for (std::size_t k = 1; k < terms.size(); ++k) {
    const Matrix& v = t.value(terms[k]);
    require_same_shape(out, v, "add_n");
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += v.data()[i];
    req = req || t.requires_grad(terms[k]);
  }
  std::vector<Var> inputs(terms.begin(), terms.end());
  return t.record(std::move(out), req, [inputs](Tape& tp, const Matrix& g) {
    for (Var v : inputs) accumulate(tp, v, g);
  });
}

Var relu(Tape& t, Var a) {
  const Matrix& va = t.value(a);
  Matrix out(va.rows(), va.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::max(0.0, va.data()[i]);
  return t.record(std::move(out), t.requires_grad(a), [a](Tape& tp, const Matrix& g) {
    const Matrix& x = tp.value(a);
    Matrix& dst = tp.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x.data()[i] > 0.0) dst.data()[i] += g.data()[i];
  });
}

Var concat_cols(Tape& t, Var a, Var b) {
  const Matrix& va = t.value(a);
  const Matrix& vb = t.value(b);
  if (va.rows() != vb.rows()) throw InputError("concat_cols: row counts differ");
  const std::size_t ca = va.cols(), cb = vb.cols();
  Matrix out(va.rows(), ca + cb);
  for (std::size_t r = 0; r < va.rows(); ++r) {
    std::copy_n(va.row(r).data(), ca, out.row(r).data());
    std::copy_n(vb.row(r).data(), cb, out.row(r).data() + ca);
  }
  return t.record(std::move(out), any_requires_grad(t, {a, b}),
                  [a, b, ca, cb](Tape& tp, const Matrix& g) {
                    for (std::size_t r = 0; r < g.rows(); ++r) {
                      if (tp.requires_grad(a)) {
                        auto dst = tp.grad(a).row(r);
                        for (std::size_t c = 0; c < ca; ++c) dst[c] += g(r, c);
                      }
                      if (tp.requires_grad(b)) {
                        auto dst = tp.grad(b).row(r);
                        for (std::size_t c = 0; c < cb; ++c) dst[c] += g(r, ca + c);
                      }
                    }
                  });
}

Var concat_rows(Tape& t, Var a, Var b) {
  const Matrix& va = t.value(a);
  const Matrix& vb = t.value(b);
  const std::size_t cols = va.rows() > 0 ? va.cols() : vb.cols();
  if (va.rows() > 0 && vb.rows() > 0 && va.cols() != vb.cols())
    throw InputError("concat_rows: column counts differ");
  const std::size_t ra = va.rows();
  Matrix out(ra + vb.rows(), cols);
  std::copy_n(va.data(), va.size(), out.data());
  std::copy_n(vb.data(), vb.size(), out.data() + va.size());
  return t.record(std::move(out), any_requires_grad(t, {a, b}),
                  [a, b, ra, cols](Tape& tp, const Matrix& g) {
                    if (tp.requires_grad(a)) {
                      Matrix& dst = tp.grad(a);
                      for (std::size_t i = 0; i < dst.size(); ++i) dst.data()[i] += g.data()[i];
                    }
                    if (tp.requires_grad(b)) {
                      Matrix& dst = tp.grad(b);
                      for (std::size_t i = 0; i < dst.size(); ++i)
                        dst.data()[i] += g.data()[ra * cols + i];
                    }
                  });
}

Var gather_rows(Tape& t, Var a, std::vector<std::size_t> index) {
  const Matrix& va = t.value(a);
  Matrix out(index.size(), va.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= va.rows()) throw InputError("gather_rows: index out of range");
    std::copy_n(va.row(index[i]).data(), va.cols(), out.row(i).data());
  }
  return t.record(std::move(out), t.requires_grad(a),
                  [a, index = std::move(index)](Tape& tp, const Matrix& g) {
                    Matrix& dst = tp.grad(a);
                    for (std::size_t i = 0; i < index.size(); ++i) {
                      auto d = dst.row(index[i]);
                      auto s = g.row(i);
                      for (std::size_t c = 0; c < d.size(); ++c) d[c] += s[c];
                    }
                  });
}

Var slice_rows(Tape& t, Var a, std::size_t begin, std::size_t count) {
  const Matrix& va = t.value(a);
  if (begin + count > va.rows()) throw InputError("slice_rows: range out of bounds");
  std::vector<std::size_t> index(count);
  for (std::size_t i = 0; i < count; ++i) index[i] = begin + i;
  return gather_rows(t, a, std::move(index));
}

Var rotate_rows(Tape& t, Var a, const GravityFrame& frame, bool to_canonical) {
  const Matrix& va = t.value(a);
  Matrix out = to_canonical ? frame.to_canonical(va) : frame.from_canonical(va);
  return t.record(std::move(out), t.requires_grad(a),
                  [a, frame, to_canonical](Tape& tp, const Matrix& g) {
                    // Transpose of an orthogonal map is its inverse.
                    accumulate(tp, a, to_canonical ? frame.from_canonical(g) : frame.to_canonical(g));
                  });
}

}  // namespace dmcf::ad
