// Copyright 2026 The moelink Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "moelink/autodiff.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <utility>

#include "moelink/error.hpp"

namespace moelink::ad {

namespace {

std::string ShapeOf(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

Tape& SameTape(Var a, Var b) {
  if (!a.valid() || !b.valid() || a.tape() != b.tape()) {
    throw ArgumentError("autodiff: operands live on different tapes");
  }
  return *a.tape();
}

void RequireSameShape(const char* op, const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + ShapeOf(a) +
                     " vs " + ShapeOf(b));
  }
}

}  // namespace

const Matrix& Var::value() const { return tape_->Value(id_); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw ShapeError("scalar(): node is " + ShapeOf(v));
  return v(0, 0);
}

Var Tape::Constant(Matrix value) { return Push(std::move(value), nullptr); }

Var Tape::Parameter(const Matrix& value, Matrix* grad_sink) {
  Var v = Push(value, nullptr);
  if (recording_) nodes_[v.id_].sink = grad_sink;
  return v;
}

Var Tape::Push(Matrix value, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  if (recording_) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::AddGrad(int id, const Matrix& g) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::Backward(Var out) {
  if (!recording_) throw ArgumentError("Backward() on a forward-only tape");
  if (out.tape() != this) throw ArgumentError("Backward(): foreign node");
  if (out.value().size() != 1) {
    throw ShapeError("Backward(): output must be 1x1, got " +
                     ShapeOf(out.value()));
  }
  for (Node& n : nodes_) n.grad.resize(0, 0);
  nodes_[out.id()].grad = Matrix::Ones(1, 1);
  for (int i = out.id(); i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0) continue;
    if (n.backward) {
      // Copy: the callback may touch other nodes' storage.
      const Matrix g = n.grad;
      n.backward(*this, g);
    }
    if (n.sink != nullptr) *n.sink += nodes_[i].grad;
  }
}

void Tape::Rewind(std::size_t mark) {
  if (mark < nodes_.size()) nodes_.resize(mark);
}

// ---- Ops -------------------------------------------------------------------

Var MatMul(Var a, Var b) {
  Tape& t = SameTape(a, b);
  if (a.cols() != b.rows()) {
    throw ShapeError("MatMul: " + ShapeOf(a.value()) + " * " +
                     ShapeOf(b.value()));
  }
  const int ia = a.id(), ib = b.id();
  return t.Push(a.value() * b.value(), [ia, ib](Tape& t, const Matrix& g) {
    t.AddGrad(ia, g * t.Value(ib).transpose());
    t.AddGrad(ib, t.Value(ia).transpose() * g);
  });
}

Var Add(Var a, Var b) {
  Tape& t = SameTape(a, b);
  RequireSameShape("Add", a.value(), b.value());
  const int ia = a.id(), ib = b.id();
  return t.Push(a.value() + b.value(), [ia, ib](Tape& t, const Matrix& g) {
    t.AddGrad(ia, g);
    t.AddGrad(ib, g);
  });
}

Var Sub(Var a, Var b) {
  Tape& t = SameTape(a, b);
  RequireSameShape("Sub", a.value(), b.value());
  const int ia = a.id(), ib = b.id();
  return t.Push(a.value() - b.value(), [ia, ib](Tape& t, const Matrix& g) {
    t.AddGrad(ia, g);
    t.AddGrad(ib, -g);
  });
}

Var AddRow(Var a, Var row) {
  Tape& t = SameTape(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError("AddRow: " + ShapeOf(a.value()) + " + " +
                     ShapeOf(row.value()));
  }
  const int ia = a.id(), ir = row.id();
  Matrix out = a.value().rowwise() + row.value().row(0);
  return t.Push(std::move(out), [ia, ir](Tape& t, const Matrix& g) {
    t.AddGrad(ia, g);
    t.AddGrad(ir, g.colwise().sum());
  });
}

Var Mul(Var a, Var b) {
  Tape& t = SameTape(a, b);
  RequireSameShape("Mul", a.value(), b.value());
  const int ia = a.id(), ib = b.id();
  return t.Push(a.value().cwiseProduct(b.value()),
                [ia, ib](Tape& t, const Matrix& g) {
                  t.AddGrad(ia, g.cwiseProduct(t.Value(ib)));
                  t.AddGrad(ib, g.cwiseProduct(t.Value(ia)));
                });
}

Var Scale(Var a, double s) {
  const int ia = a.id();
  return a.tape()->Push(a.value() * s, [ia, s](Tape& t, const Matrix& g) {
    t.AddGrad(ia, g * s);
  });
}

Var Tanh(Var a) {
  const int ia = a.id();
  Matrix y = a.value().array().tanh().matrix();
  Matrix dy = (1.0 - y.array().square()).matrix();
  return a.tape()->Push(std::move(y), [ia, dy = std::move(dy)](
                                          Tape& t, const Matrix& g) {
    t.AddGrad(ia, g.cwiseProduct(dy));
  });
}

Var Gelu(Var a) {
  constexpr double kC = 0.044715;
  const double k = std::sqrt(2.0 / std::numbers::pi);
  const int ia = a.id();
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  Matrix dy(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    const double th = std::tanh(k * (v + kC * v * v * v));
    y.data()[i] = 0.5 * v * (1.0 + th);
    dy.data()[i] = 0.5 * (1.0 + th) +
                   0.5 * v * (1.0 - th * th) * k * (1.0 + 3.0 * kC * v * v);
  }
  return a.tape()->Push(std::move(y), [ia, dy = std::move(dy)](
                                          Tape& t, const Matrix& g) {
    t.AddGrad(ia, g.cwiseProduct(dy));
  });
}

Var Transpose(Var a) {
  const int ia = a.id();
  return a.tape()->Push(a.value().transpose(),
                        [ia](Tape& t, const Matrix& g) {
                          t.AddGrad(ia, g.transpose());
                        });
}

Var SliceRows(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw ShapeError("SliceRows: [" + std::to_string(start) + ", +" +
                     std::to_string(count) + ") out of " +
                     ShapeOf(a.value()));
  }
  const int ia = a.id();
  return a.tape()->Push(a.value().middleRows(start, count),
                        [ia, start, count](Tape& t, const Matrix& g) {
                          t.UpdateGrad(ia, [&](Matrix& ga) {
                            ga.middleRows(start, count) += g;
                          });
                        });
}

Var ConcatRows(Var top, Var bottom) {
  Tape& t = SameTape(top, bottom);
  if (top.cols() != bottom.cols()) {
    throw ShapeError("ConcatRows: " + ShapeOf(top.value()) + " over " +
                     ShapeOf(bottom.value()));
  }
  const int it = top.id(), ib = bottom.id();
  const Eigen::Index nt = top.rows(), nb = bottom.rows();
  Matrix out(nt + nb, top.cols());
  out.topRows(nt) = top.value();
  out.bottomRows(nb) = bottom.value();
  return t.Push(std::move(out), [it, ib, nt, nb](Tape& t, const Matrix& g) {
    t.AddGrad(it, g.topRows(nt));
    t.AddGrad(ib, g.bottomRows(nb));
  });
}

Var GatherRows(Var a, const std::vector<int>& rows) {
  const Matrix& v = a.value();
  Matrix out(static_cast<Eigen::Index>(rows.size()), v.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= v.rows()) {
      throw ShapeError("GatherRows: row index out of range");
    }
    out.row(static_cast<Eigen::Index>(i)) = v.row(rows[i]);
  }
  const int ia = a.id();
  return a.tape()->Push(std::move(out), [ia, rows](Tape& t, const Matrix& g) {
    t.UpdateGrad(ia, [&](Matrix& ga) {
      for (std::size_t i = 0; i < rows.size(); ++i) {
        ga.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
      }
    });
  });
}

Var ScatterRows(Var a, const std::vector<int>& rows, Eigen::Index n) {
  const Matrix& v = a.value();
  if (static_cast<Eigen::Index>(rows.size()) != v.rows()) {
    throw ShapeError("ScatterRows: index count does not match rows");
  }
  Matrix out = Matrix::Zero(n, v.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= n) {
      throw ShapeError("ScatterRows: row index out of range");
    }
    out.row(rows[i]) += v.row(static_cast<Eigen::Index>(i));
  }
  const int ia = a.id();
  return a.tape()->Push(std::move(out), [ia, rows](Tape& t, const Matrix& g) {
    Matrix ga(static_cast<Eigen::Index>(rows.size()), g.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      ga.row(static_cast<Eigen::Index>(i)) = g.row(rows[i]);
    }
    t.AddGrad(ia, ga);
  });
}

Var Column(Var a, Eigen::Index j) {
  if (j < 0 || j >= a.cols()) throw ShapeError("Column: index out of range");
  const int ia = a.id();
  return a.tape()->Push(a.value().col(j), [ia, j](Tape& t, const Matrix& g) {
    t.UpdateGrad(ia, [&](Matrix& ga) { ga.col(j) += g.col(0); });
  });
}

Var MulColumn(Var a, Var w) {
  Tape& t = SameTape(a, w);
  if (w.cols() != 1 || w.rows() != a.rows()) {
    throw ShapeError("MulColumn: " + ShapeOf(a.value()) + " by " +
                     ShapeOf(w.value()));
  }
  const int ia = a.id(), iw = w.id();
  Matrix out = a.value().array().colwise() * w.value().col(0).array();
  return t.Push(std::move(out), [ia, iw](Tape& t, const Matrix& g) {
    const Matrix& av = t.Value(ia);
    const Matrix& wv = t.Value(iw);
    t.AddGrad(ia, (g.array().colwise() * wv.col(0).array()).matrix());
    t.AddGrad(iw, g.cwiseProduct(av).rowwise().sum());
  });
}

Var Sum(Var a) {
  const int ia = a.id();
  const Eigen::Index r = a.rows(), c = a.cols();
  return a.tape()->Push(Matrix::Constant(1, 1, a.value().sum()),
                        [ia, r, c](Tape& t, const Matrix& g) {
                          t.AddGrad(ia, Matrix::Constant(r, c, g(0, 0)));
                        });
}

Var AddN(const std::vector<Var>& terms) {
  if (terms.empty()) throw ArgumentError("AddN: empty term list");
  Tape* t = terms.front().tape();
  Matrix out = terms.front().value();
  std::vector<int> ids{terms.front().id()};
  for (std::size_t i = 1; i < terms.size(); ++i) {
    if (terms[i].tape() != t) {
      throw ArgumentError("AddN: operands live on different tapes");
    }
    RequireSameShape("AddN", out, terms[i].value());
    out += terms[i].value();
    ids.push_back(terms[i].id());
  }
  return t->Push(std::move(out), [ids](Tape& t, const Matrix& g) {
    for (int id : ids) t.AddGrad(id, g);
  });
}

Var Dot(Var a, Var b) {
  Tape& t = SameTape(a, b);
  RequireSameShape("Dot", a.value(), b.value());
  const int ia = a.id(), ib = b.id();
  const double v = a.value().cwiseProduct(b.value()).sum();
  return t.Push(Matrix::Constant(1, 1, v), [ia, ib](Tape& t, const Matrix& g) {
    t.AddGrad(ia, t.Value(ib) * g(0, 0));
    t.AddGrad(ib, t.Value(ia) * g(0, 0));
  });
}

Var MaskedSoftmaxRows(Var a, const Mask& column_mask) {
  const Matrix& x = a.value();
  if (static_cast<Eigen::Index>(column_mask.size()) != x.cols()) {
    throw ShapeError("MaskedSoftmaxRows: mask length " +
                     std::to_string(column_mask.size()) + " vs " +
                     ShapeOf(x));
  }
  Matrix y = Matrix::Zero(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      if (column_mask[j]) mx = std::max(mx, x(i, j));
    }
    if (!std::isfinite(mx)) continue;
    double total = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      if (!column_mask[j]) continue;
      y(i, j) = std::exp(x(i, j) - mx);
      total += y(i, j);
    }
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      if (column_mask[j]) y(i, j) /= total;
    }
  }
  const int ia = a.id();
  const int iy = static_cast<int>(a.tape()->size());
  return a.tape()->Push(std::move(y), [ia, iy](Tape& t, const Matrix& g) {
    const Matrix& yv = t.Value(iy);
    // Masked entries of y are 0, so they drop out of both terms.
    Eigen::VectorXd s = g.cwiseProduct(yv).rowwise().sum();
    Matrix ga = yv.cwiseProduct(g.colwise() - s);
    t.AddGrad(ia, ga);
  });
}

Var MaskedMeanRows(Var a, const Mask& row_mask) {
  const Matrix& x = a.value();
  if (static_cast<Eigen::Index>(row_mask.size()) != x.rows()) {
    throw ShapeError("MaskedMeanRows: mask length " +
                     std::to_string(row_mask.size()) + " vs " + ShapeOf(x));
  }
  Matrix out = Matrix::Zero(1, x.cols());
  int count = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    if (!row_mask[i]) continue;
    out.row(0) += x.row(i);
    ++count;
  }
  if (count > 0) out /= count;
  const int ia = a.id();
  return a.tape()->Push(std::move(out), [ia, row_mask, count](
                                            Tape& t, const Matrix& g) {
    if (count == 0) return;
    t.UpdateGrad(ia, [&](Matrix& ga) {
      for (std::size_t i = 0; i < row_mask.size(); ++i) {
        if (row_mask[i]) ga.row(static_cast<Eigen::Index>(i)) += g.row(0) / count;
      }
    });
  });
}

Var LayerNormRows(Var a, Var gamma, Var beta, double eps) {
  Tape& t = SameTape(a, gamma);
  SameTape(a, beta);
  const Matrix& x = a.value();
  const Eigen::Index m = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != m || beta.rows() != 1 ||
      beta.cols() != m) {
    throw ShapeError("LayerNormRows: affine params must be 1x" +
                     std::to_string(m));
  }
  Matrix xhat(x.rows(), m);
  Eigen::VectorXd inv_std(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x.row(i).array() - mu) * inv_std(i);
  }
  Matrix y = (xhat.array().rowwise() * gamma.value().row(0).array())
                 .rowwise() +
             beta.value().row(0).array();
  const int ia = a.id(), ig = gamma.id(), ib = beta.id();
  return t.Push(std::move(y), [ia, ig, ib, xhat = std::move(xhat),
                               inv_std = std::move(inv_std)](
                                  Tape& t, const Matrix& g) {
    const Eigen::Index m = g.cols();
    t.AddGrad(ig, g.cwiseProduct(xhat).colwise().sum());
    t.AddGrad(ib, g.colwise().sum());
    Matrix dxhat = g.array().rowwise() * t.Value(ig).row(0).array();
    Matrix ga(g.rows(), m);
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      const double mean_d = dxhat.row(i).mean();
      const double mean_dx = dxhat.row(i).cwiseProduct(xhat.row(i)).mean();
      ga.row(i) = inv_std(i) * (dxhat.row(i).array() - mean_d -
                                xhat.row(i).array() * mean_dx);
    }
    t.AddGrad(ia, ga);
  });
}

Var TopKRenormalize(Var gates, const Eigen::MatrixXi& selected) {
  const Matrix& r = gates.value();
  if (selected.rows() != r.rows() || selected.cols() != r.cols()) {
    throw ShapeError("TopKRenormalize: selection shape mismatch");
  }
  Matrix w = Matrix::Zero(r.rows(), r.cols());
  Eigen::VectorXd mass(r.rows());
  for (Eigen::Index i = 0; i < r.rows(); ++i) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < r.cols(); ++j) {
      if (selected(i, j)) s += r(i, j);
    }
    if (s <= 0.0) throw NumericError("TopKRenormalize: zero selected mass");
    mass(i) = s;
    for (Eigen::Index j = 0; j < r.cols(); ++j) {
      if (selected(i, j)) w(i, j) = r(i, j) / s;
    }
  }
  const int ia = gates.id();
  const int iw = static_cast<int>(gates.tape()->size());
  return gates.tape()->Push(std::move(w), [ia, iw, selected, mass](
                                              Tape& t, const Matrix& g) {
    const Matrix& wv = t.Value(iw);
    Matrix ga = Matrix::Zero(g.rows(), g.cols());
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      const double s = g.row(i).cwiseProduct(wv.row(i)).sum();
      for (Eigen::Index j = 0; j < g.cols(); ++j) {
        if (selected(i, j)) ga(i, j) = (g(i, j) - s) / mass(i);
      }
    }
    t.AddGrad(ia, ga);
  });
}

Var Stack(const std::vector<Var>& scalars, Eigen::Index rows,
          Eigen::Index cols) {
  if (static_cast<Eigen::Index>(scalars.size()) != rows * cols ||
      scalars.empty()) {
    throw ShapeError("Stack: expected " + std::to_string(rows * cols) +
                     " scalars, got " + std::to_string(scalars.size()));
  }
  Tape* t = scalars.front().tape();
  Matrix out(rows, cols);
  std::vector<int> ids;
  ids.reserve(scalars.size());
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      const Var& s = scalars[static_cast<std::size_t>(i * cols + j)];
      if (s.tape() != t) throw ArgumentError("Stack: mixed tapes");
      out(i, j) = s.scalar();
      ids.push_back(s.id());
    }
  }
  return t->Push(std::move(out), [ids, cols](Tape& t, const Matrix& g) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const auto i = static_cast<Eigen::Index>(k) / cols;
      const auto j = static_cast<Eigen::Index>(k) % cols;
      t.AddGrad(ids[k], Matrix::Constant(1, 1, g(i, j)));
    }
  });
}

Var CrossEntropyRow(Var row, Eigen::Index target) {
  const Matrix& x = row.value();
  if (x.rows() != 1) throw ShapeError("CrossEntropyRow: expects 1 x B");
  if (target < 0 || target >= x.cols()) {
    throw ArgumentError("CrossEntropyRow: target out of range");
  }
  if (!x.allFinite()) throw NumericError("CrossEntropyRow: non-finite score");
  const double mx = x.maxCoeff();
  const Eigen::RowVectorXd e = (x.row(0).array() - mx).exp().matrix();
  const double total = e.sum();
  const double value = (mx - x(0, target)) + std::log(total);
  Matrix grad_local = e / total;
  grad_local(0, target) -= 1.0;
  const int ia = row.id();
  return row.tape()->Push(
      Matrix::Constant(1, 1, std::max(0.0, value)),
      [ia, grad_local = std::move(grad_local)](Tape& t, const Matrix& g) {
        t.AddGrad(ia, grad_local * g(0, 0));
      });
}

}  // namespace moelink::ad
