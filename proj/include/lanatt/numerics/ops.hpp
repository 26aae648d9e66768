#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "lanatt/numerics/tape.hpp"

namespace lanatt::numerics {

/// Inputs to exp and sigmoid are clamped to this magnitude.
inline constexpr double kExpClamp = 30.0;

enum class Activation { kSigmoid, kTanh, kRelu, kExp };

namespace detail {

inline Tape& tape_of(const Var& a) {
  if (!a.valid()) throw DomainError("operation on an unbound Var");
  return *a.tape();
}

inline Tape& tape_of(const Var& a, const Var& b) {
  Tape& t = tape_of(a);
  if (b.tape() != &t) throw DomainError("operands live on different tapes");
  return t;
}

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.value().shape() != b.value().shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.value().shape()) + " vs " +
                     shape_string(b.value().shape()));
}

inline double clamp_exp_arg(double x) { return std::clamp(x, -kExpClamp, kExpClamp); }

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-clamp_exp_arg(x))); }

}  // namespace detail

/// a [m x k] times b [k x n] (or b [k], giving [m]).
inline Var matmul(const Var& a, const Var& b) {
  Tape& tape = detail::tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() < 1 || bv.rank() > 2 || av.cols() != bv.rows())
    throw ShapeError("matmul: cannot multiply " + shape_string(av.shape()) + " by " + shape_string(bv.shape()));
  const bool vector_rhs = bv.rank() == 1;
  Tensor out(vector_rhs ? Shape{av.rows()} : Shape{av.rows(), bv.cols()});
  out.mat().noalias() = av.mat() * bv.mat();
  const std::size_t ia = a.index(), ib = b.index();
  return tape.record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_buffer(self);
    if (t.requires_grad(ia)) {
      if (t.is_parameter(ia)) {
        t.defer_outer(ia, self, ib);
      } else {
        t.grad_buffer(ia).mat().noalias() += g.mat() * t.value(ib).mat().transpose();
      }
    }
    if (t.requires_grad(ib)) t.grad_buffer(ib).mat().noalias() += t.value(ia).mat().transpose() * g.mat();
  });
}

/// sum_k weights[k] * inputs[k] + bias as one node. Inputs are either all
/// vectors or all matrices with a common column count; the bias vector is
/// broadcast across columns.
inline Var affine(const std::vector<Var>& weights, const std::vector<Var>& inputs, const Var& bias) {
  Tape& tape = detail::tape_of(bias);
  if (weights.size() != inputs.size() || weights.empty()) throw ShapeError("affine: need one input per weight");
  const Tensor& bv = bias.value();
  if (bv.rank() != 1) throw ShapeError("affine: bias must be a vector");
  const Tensor& first = inputs.front().value();
  const bool batched = first.rank() == 2;
  const std::size_t cols = first.cols();
  Tensor out(batched ? Shape{bv.size(), cols} : Shape{bv.size()});
  out.mat().colwise() = bv.vec();
  std::vector<Var> all;
  std::vector<std::size_t> idx;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    const Tensor& w = weights[k].value();
    const Tensor& x = inputs[k].value();
    if (weights[k].tape() != &tape || inputs[k].tape() != &tape)
      throw DomainError("affine: operands live on different tapes");
    if (w.rank() != 2 || x.rank() != first.rank() || x.cols() != cols || w.cols() != x.rows() ||
        w.rows() != bv.size())
      throw ShapeError("affine: cannot apply " + shape_string(w.shape()) + " to " + shape_string(x.shape()) +
                       " with bias " + shape_string(bv.shape()));
    out.mat().noalias() += w.mat() * x.mat();
    all.push_back(weights[k]);
    all.push_back(inputs[k]);
    idx.push_back(weights[k].index());
    idx.push_back(inputs[k].index());
  }
  all.push_back(bias);
  const std::size_t ib = bias.index();
  return tape.record(std::move(out), all, [idx, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_buffer(self);
    for (std::size_t k = 0; k + 1 < idx.size(); k += 2) {
      const std::size_t iw = idx[k], ix = idx[k + 1];
      if (t.requires_grad(iw)) {
        if (t.is_parameter(iw)) {
          t.defer_outer(iw, self, ix);
        } else {
          t.grad_buffer(iw).mat().noalias() += g.mat() * t.value(ix).mat().transpose();
        }
      }
      if (t.requires_grad(ix)) t.grad_buffer(ix).mat().noalias() += t.value(iw).mat().transpose() * g.mat();
    }
    if (t.requires_grad(ib)) t.grad_buffer(ib).vec() += g.mat().rowwise().sum();
  });
}

/// Vectors of equal length as the columns of a matrix.
inline Var stack_columns(const std::vector<Var>& columns) {
  if (columns.empty()) throw DomainError("stack_columns: no inputs");
  Tape& tape = detail::tape_of(columns.front());
  const std::size_t n = columns.front().value().size();
  Tensor out(Shape{n, columns.size()});
  std::vector<std::size_t> idx;
  for (std::size_t j = 0; j < columns.size(); ++j) {
    if (columns[j].tape() != &tape) throw DomainError("stack_columns: operands live on different tapes");
    if (columns[j].value().rank() != 1 || columns[j].value().size() != n)
      throw ShapeError("stack_columns: columns must be vectors of equal length");
    out.mat().col(static_cast<Eigen::Index>(j)) = columns[j].value().vec();
    idx.push_back(columns[j].index());
  }
  return tape.record(std::move(out), columns, [idx](Tape& t, std::size_t self) {
    const auto g = t.grad_buffer(self).mat();
    for (std::size_t j = 0; j < idx.size(); ++j)
      if (t.requires_grad(idx[j])) t.grad_buffer(idx[j]).vec() += g.col(static_cast<Eigen::Index>(j));
  });
}

/// Column j of a matrix, as a vector.
inline Var column(const Var& m, std::size_t j) {
  Tape& tape = detail::tape_of(m);
  const Tensor& mv = m.value();
  if (mv.rank() != 2 || j >= mv.cols()) throw ShapeError("column: index out of range");
  Tensor out(Shape{mv.rows()});
  out.vec() = mv.mat().col(static_cast<Eigen::Index>(j));
  const std::size_t im = m.index();
  return tape.record(std::move(out), {m}, [im, j](Tape& t, std::size_t self) {
    t.grad_buffer(im).mat().col(static_cast<Eigen::Index>(j)) += t.grad_buffer(self).vec();
  });
}

/// Rows [begin, begin + count) of a matrix ([count x cols]) or a vector ([count]).
inline Var row_block(const Var& m, std::size_t begin, std::size_t count) {
  Tape& tape = detail::tape_of(m);
  const Tensor& mv = m.value();
  if (mv.rank() < 1 || mv.rank() > 2 || begin + count > mv.rows())
    throw ShapeError("row_block: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for " + shape_string(mv.shape()));
  const std::size_t cols = mv.cols();
  const auto src = mv.data().subspan(begin * cols, count * cols);
  Tensor out(mv.rank() == 2 ? Shape{count, cols} : Shape{count}, std::vector<double>(src.begin(), src.end()));
  const std::size_t im = m.index(), offset = begin * cols, n = count * cols;
  return tape.record(std::move(out), {m}, [im, offset, n](Tape& t, std::size_t self) {
    const auto g = t.grad_buffer(self).data();
    auto gm = t.grad_buffer(im).data();
    for (std::size_t k = 0; k < n; ++k) gm[offset + k] += g[k];
  });
}

/// Matrices with a common column count stacked vertically.
inline Var stack_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DomainError("stack_rows: no inputs");
  Tape& tape = detail::tape_of(parts.front());
  const std::size_t cols = parts.front().value().cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.tape() != &tape) throw DomainError("stack_rows: operands live on different tapes");
    if (p.value().rank() != 2 || p.value().cols() != cols)
      throw ShapeError("stack_rows: parts must be matrices with equal column counts");
    rows += p.value().rows();
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  std::vector<std::size_t> idx;
  for (const Var& p : parts) {
    data.insert(data.end(), p.value().data().begin(), p.value().data().end());
    idx.push_back(p.index());
  }
  return tape.record(Tensor(Shape{rows, cols}, std::move(data)), parts, [idx](Tape& t, std::size_t self) {
    const auto g = t.grad_buffer(self).data();
    std::size_t off = 0;
    for (std::size_t i : idx) {
      const std::size_t n = t.value(i).size();
      if (t.requires_grad(i)) {
        auto gi = t.grad_buffer(i).data();
        for (std::size_t k = 0; k < n; ++k) gi[k] += g[off + k];
      }
      off += n;
    }
  });
}

inline Var affine(const Var& weight, const Var& input, const Var& bias) {
  return affine(std::vector<Var>{weight}, std::vector<Var>{input}, bias);
}

inline Var add(const Var& a, const Var& b) {
  Tape& tape = detail::tape_of(a, b);
  detail::require_same_shape(a, b, "add");
  Tensor out = a.value();
  out.vec() += b.value().vec();
  const std::size_t ia = a.index(), ib = b.index();
  return tape.record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_buffer(self);
    if (t.requires_grad(ia)) t.grad_buffer(ia).vec() += g.vec();
    if (t.requires_grad(ib)) t.grad_buffer(ib).vec() += g.vec();
  });
}

inline Var sub(const Var& a, const Var& b) {
  Tape& tape = detail::tape_of(a, b);
  detail::require_same_shape(a, b, "sub");
  Tensor out = a.value();
  out.vec() -= b.value().vec();
  const std::size_t ia = a.index(), ib = b.index();
  return tape.record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_buffer(self);
    if (t.requires_grad(ia)) t.grad_buffer(ia).vec() += g.vec();
    if (t.requires_grad(ib)) t.grad_buffer(ib).vec() -= g.vec();
  });
}

/// Elementwise (Hadamard) product.
inline Var mul(const Var& a, const Var& b) {
  Tape& tape = detail::tape_of(a, b);
  detail::require_same_shape(a, b, "mul");
  Tensor out = a.value();
  out.vec().array() *= b.value().vec().array();
  const std::size_t ia = a.index(), ib = b.index();
  return tape.record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_buffer(self);
    if (t.requires_grad(ia)) t.grad_buffer(ia).vec().array() += g.vec().array() * t.value(ib).vec().array();
    if (t.requires_grad(ib)) t.grad_buffer(ib).vec().array() += g.vec().array() * t.value(ia).vec().array();
  });
}

inline Var scale(const Var& a, double c) {
  Tape& tape = detail::tape_of(a);
  Tensor out = a.value();
  out.vec() *= c;
  const std::size_t ia = a.index();
  return tape.record(std::move(out), {a}, [ia, c](Tape& t, std::size_t self) {
    t.grad_buffer(ia).vec() += c * t.grad_buffer(self).vec();
  });
}

inline Var elementwise(const Var& x, Activation f) {
  Tape& tape = detail::tape_of(x);
  Tensor out = x.value();
  for (double& v : out.data()) {
    switch (f) {
      case Activation::kSigmoid: v = detail::sigmoid(v); break;
      case Activation::kTanh: v = std::tanh(v); break;
      case Activation::kRelu: v = v > 0.0 ? v : 0.0; break;
      case Activation::kExp: v = std::exp(detail::clamp_exp_arg(v)); break;
    }
  }
  const std::size_t ix = x.index();
  return tape.record(std::move(out), {x}, [ix, f](Tape& t, std::size_t self) {
    const auto g = t.grad_buffer(self).data();
    const auto y = t.value(self).data();
    const auto in = t.value(ix).data();
    auto gx = t.grad_buffer(ix).data();
    for (std::size_t k = 0; k < g.size(); ++k) {
      double d = 0.0;
      switch (f) {
        case Activation::kSigmoid: d = std::abs(in[k]) > kExpClamp ? 0.0 : y[k] * (1.0 - y[k]); break;
        case Activation::kTanh: d = 1.0 - y[k] * y[k]; break;
        case Activation::kRelu: d = in[k] > 0.0 ? 1.0 : 0.0; break;
        case Activation::kExp: d = std::abs(in[k]) > kExpClamp ? 0.0 : y[k]; break;
      }
      gx[k] += g[k] * d;
    }
  });
}

inline Var sigmoid(const Var& x) { return elementwise(x, Activation::kSigmoid); }
inline Var tanh(const Var& x) { return elementwise(x, Activation::kTanh); }
inline Var relu(const Var& x) { return elementwise(x, Activation::kRelu); }
inline Var exp(const Var& x) { return elementwise(x, Activation::kExp); }

/// Plain softmax with max subtraction, usable without a tape.
inline std::vector<double> softmax_values(std::span<const double> scores) {
  if (scores.empty()) throw DomainError("softmax: empty input");
  const double m = *std::max_element(scores.begin(), scores.end());
  std::vector<double> out(scores.size());
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp(scores[i] - m);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

/// Softmax over all elements; the result is a vector.
inline Var softmax(const Var& scores) {
  Tape& tape = detail::tape_of(scores);
  Tensor out = Tensor::vector(softmax_values(scores.value().data()));
  const std::size_t is = scores.index();
  return tape.record(std::move(out), {scores}, [is](Tape& t, std::size_t self) {
    const auto y = t.value(self).vec();
    const auto g = t.grad_buffer(self).vec();
    const double dot = g.dot(y);
    t.grad_buffer(is).vec().array() += y.array() * (g.array() - dot);
  });
}

/// Sum of all elements, as a scalar.
inline Var sum(const Var& x) {
  Tape& tape = detail::tape_of(x);
  Tensor out = Tensor::scalar(x.value().vec().sum());
  const std::size_t ix = x.index();
  return tape.record(std::move(out), {x}, [ix](Tape& t, std::size_t self) {
    t.grad_buffer(ix).vec().array() += t.grad_buffer(self)[0];
  });
}

/// Flattened concatenation into a vector.
inline Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw DomainError("concat: no inputs");
  Tape& tape = detail::tape_of(parts.front());
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.tape() != &tape) throw DomainError("concat: operands live on different tapes");
    total += p.value().size();
  }
  std::vector<double> data;
  data.reserve(total);
  std::vector<std::size_t> idx;
  idx.reserve(parts.size());
  for (const Var& p : parts) {
    data.insert(data.end(), p.value().data().begin(), p.value().data().end());
    idx.push_back(p.index());
  }
  return tape.record(Tensor::vector(std::move(data)), parts, [idx](Tape& t, std::size_t self) {
    const auto g = t.grad_buffer(self).data();
    std::size_t off = 0;
    for (std::size_t i : idx) {
      const std::size_t n = t.value(i).size();
      if (t.requires_grad(i)) {
        auto gi = t.grad_buffer(i).data();
        for (std::size_t k = 0; k < n; ++k) gi[k] += g[off + k];
      }
      off += n;
    }
  });
}

/// Contiguous range [offset, offset + length) of the flattened input.
inline Var slice(const Var& x, std::size_t offset, std::size_t length) {
  Tape& tape = detail::tape_of(x);
  const auto src = x.value().data();
  if (offset + length > src.size())
    throw ShapeError("slice: range [" + std::to_string(offset) + ", " + std::to_string(offset + length) +
                     ") exceeds size " + std::to_string(src.size()));
  Tensor out = Tensor::vector(std::vector<double>(src.begin() + offset, src.begin() + offset + length));
  const std::size_t ix = x.index();
  return tape.record(std::move(out), {x}, [ix, offset, length](Tape& t, std::size_t self) {
    const auto g = t.grad_buffer(self).data();
    auto gx = t.grad_buffer(ix).data();
    for (std::size_t k = 0; k < length; ++k) gx[offset + k] += g[k];
  });
}

/// sum_i weights[i] * items[i]; all items share one shape.
inline Var weighted_sum(const Var& weights, const std::vector<Var>& items) {
  Tape& tape = detail::tape_of(weights);
  const Tensor& w = weights.value();
  if (w.rank() != 1 || w.size() != items.size() || items.empty())
    throw ShapeError("weighted_sum: need one weight per item");
  Tensor out = Tensor::zeros_like(items.front().value());
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].tape() != &tape) throw DomainError("weighted_sum: operands live on different tapes");
    if (items[i].value().shape() != out.shape()) throw ShapeError("weighted_sum: item shapes differ");
    out.vec() += w[i] * items[i].value().vec();
  }
  std::vector<Var> inputs{weights};
  inputs.insert(inputs.end(), items.begin(), items.end());
  std::vector<std::size_t> idx;
  for (const Var& v : items) idx.push_back(v.index());
  const std::size_t iw = weights.index();
  return tape.record(std::move(out), inputs, [iw, idx](Tape& t, std::size_t self) {
    const auto g = t.grad_buffer(self).vec();
    const Tensor& wv = t.value(iw);
    const bool need_w = t.requires_grad(iw);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (need_w) t.grad_buffer(iw)[i] += g.dot(t.value(idx[i]).vec());
      if (t.requires_grad(idx[i])) t.grad_buffer(idx[i]).vec() += wv[i] * g;
    }
  });
}

/// Node whose value is computed outside the tape and whose local
/// derivative with respect to `x` is the given Jacobian [out x in].
inline Var linearized(const Var& x, Tensor value, Tensor jacobian) {
  Tape& tape = detail::tape_of(x);
  if (jacobian.rank() != 2 || jacobian.rows() != value.size() || jacobian.cols() != x.value().size())
    throw ShapeError("linearized: jacobian " + shape_string(jacobian.shape()) + " does not map " +
                     std::to_string(x.value().size()) + " inputs to " + std::to_string(value.size()) + " outputs");
  const std::size_t ix = x.index();
  return tape.record(std::move(value), {x}, [ix, jac = std::move(jacobian)](Tape& t, std::size_t self) {
    t.grad_buffer(ix).vec().noalias() += jac.mat().transpose() * t.grad_buffer(self).vec();
  });
}

}  // namespace lanatt::numerics
