#include "bssm/ops.hpp"

#include <cmath>

#include "bssm/error.hpp"

namespace bssm {

namespace {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<RowMat<S>>;
template <typename S>
using CMatMap = Eigen::Map<const RowMat<S>>;
template <typename S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

/// `a` viewed as (rows x cols) and `b` as one row of `cols` values.
struct Broadcast {
  Index rows;
  Index cols;
};

Broadcast broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  if (!is_suffix(b, a))
    throw ShapeError(std::string(op) + ": cannot broadcast " + shape_string(b) + " onto " + shape_string(a));
  const Index cols = shape_numel(b);
  const Index n = shape_numel(a);
  return {cols == 0 ? 0 : n / cols, cols};
}

template <typename S>
MatMap<S> as_matrix(Tensor<S>& t, Index rows, Index cols) {
  return MatMap<S>(t.data(), rows, cols);
}
template <typename S>
CMatMap<S> as_matrix(const Tensor<S>& t, Index rows, Index cols) {
  return CMatMap<S>(t.data(), rows, cols);
}

template <typename S>
Node<S>& input(Node<S>& self, std::size_t i) {
  return *self.inputs[i];
}

template <typename S>
bool wants(Node<S>& self, std::size_t i) {
  return self.inputs[i]->requires_grad;
}

template <typename S>
S stable_softplus(S x) {
  return x > S(20) ? x : std::log1p(std::exp(x));
}

template <typename S>
S logistic(S x) {
  return x >= 0 ? S(1) / (S(1) + std::exp(-x)) : std::exp(x) / (S(1) + std::exp(x));
}

}  // namespace

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  if (!is_suffix(b.shape(), a.shape()) && is_suffix(a.shape(), b.shape())) return add(b, a);
  const auto bc = broadcast_shape(a.shape(), b.shape(), "add");
  Tensor<S> out = a.value();
  as_matrix(out, bc.rows, bc.cols).rowwise() += as_matrix(b.value(), 1, bc.cols).row(0);
  return make_result<S>(std::move(out), {a, b}, [bc](Node<S>& self) {
    const auto g = as_matrix(std::as_const(self.grad), bc.rows, bc.cols);
    if (wants(self, 0)) as_matrix(input(self, 0).grad_buffer(), bc.rows, bc.cols) += g;
    if (wants(self, 1)) as_matrix(input(self, 1).grad_buffer(), 1, bc.cols) += g.colwise().sum();
  });
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  const auto bc = broadcast_shape(a.shape(), b.shape(), "sub");
  Tensor<S> out = a.value();
  as_matrix(out, bc.rows, bc.cols).rowwise() -= as_matrix(b.value(), 1, bc.cols).row(0);
  return make_result<S>(std::move(out), {a, b}, [bc](Node<S>& self) {
    const auto g = as_matrix(std::as_const(self.grad), bc.rows, bc.cols);
    if (wants(self, 0)) as_matrix(input(self, 0).grad_buffer(), bc.rows, bc.cols) += g;
    if (wants(self, 1)) as_matrix(input(self, 1).grad_buffer(), 1, bc.cols) -= g.colwise().sum();
  });
}

template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  if (!is_suffix(b.shape(), a.shape()) && is_suffix(a.shape(), b.shape())) return mul(b, a);
  const auto bc = broadcast_shape(a.shape(), b.shape(), "mul");
  Tensor<S> out = a.value();
  as_matrix(out, bc.rows, bc.cols).array().rowwise() *= as_matrix(b.value(), 1, bc.cols).row(0).array();
  return make_result<S>(std::move(out), {a, b}, [bc](Node<S>& self) {
    const auto g = as_matrix(std::as_const(self.grad), bc.rows, bc.cols).array();
    const auto av = as_matrix(input(self, 0).value, bc.rows, bc.cols).array();
    const auto bv = as_matrix(input(self, 1).value, 1, bc.cols).row(0).array();
    if (wants(self, 0)) as_matrix(input(self, 0).grad_buffer(), bc.rows, bc.cols).array() += g.rowwise() * bv;
    if (wants(self, 1)) as_matrix(input(self, 1).grad_buffer(), 1, bc.cols).array() += (g * av).colwise().sum();
  });
}

template <typename S>
Var<S> div(const Var<S>& a, const Var<S>& b) {
  const auto bc = broadcast_shape(a.shape(), b.shape(), "div");
  if ((b.value().values().array() == S(0)).any()) throw DomainError("div: division by zero");
  Tensor<S> out = a.value();
  as_matrix(out, bc.rows, bc.cols).array().rowwise() /= as_matrix(b.value(), 1, bc.cols).row(0).array();
  return make_result<S>(std::move(out), {a, b}, [bc](Node<S>& self) {
    const auto g = as_matrix(std::as_const(self.grad), bc.rows, bc.cols).array();
    const auto av = as_matrix(input(self, 0).value, bc.rows, bc.cols).array();
    const auto bv = as_matrix(input(self, 1).value, 1, bc.cols).row(0).array();
    if (wants(self, 0)) as_matrix(input(self, 0).grad_buffer(), bc.rows, bc.cols).array() += g.rowwise() / bv;
    if (wants(self, 1)) {
      const RowVec<S> inv_sq = (bv * bv).inverse().matrix();
      as_matrix(input(self, 1).grad_buffer(), 1, bc.cols).array() -=
          (g * av).colwise().sum() * inv_sq.array();
    }
  });
}

template <typename S>
Var<S> scale(const Var<S>& a, S factor) {
  Tensor<S> out = a.value();
  out.values() *= factor;
  return make_result<S>(std::move(out), {a}, [factor](Node<S>& self) {
    input(self, 0).grad_buffer().values() += factor * self.grad.values();
  });
}

template <typename S>
Var<S> add_scalar(const Var<S>& a, S value) {
  Tensor<S> out = a.value();
  out.values().array() += value;
  return make_result<S>(std::move(out), {a},
                        [](Node<S>& self) { input(self, 0).grad_buffer().values() += self.grad.values(); });
}

template <typename S>
Var<S> neg(const Var<S>& a) {
  return scale(a, S(-1));
}

template <typename S>
Var<S> exp(const Var<S>& a) {
  Tensor<S> out(a.shape(), a.value().values().array().exp().matrix());
  return make_result<S>(std::move(out), {a}, [](Node<S>& self) {
    input(self, 0).grad_buffer().values().array() += self.grad.values().array() * self.value.values().array();
  });
}

template <typename S>
Var<S> log(const Var<S>& a) {
  if ((a.value().values().array() <= S(0)).any()) throw DomainError("log: non-positive argument");
  Tensor<S> out(a.shape(), a.value().values().array().log().matrix());
  return make_result<S>(std::move(out), {a}, [](Node<S>& self) {
    input(self, 0).grad_buffer().values().array() +=
        self.grad.values().array() / input(self, 0).value.values().array();
  });
}

template <typename S>
Var<S> square(const Var<S>& a) {
  Tensor<S> out(a.shape(), a.value().values().array().square().matrix());
  return make_result<S>(std::move(out), {a}, [](Node<S>& self) {
    input(self, 0).grad_buffer().values().array() +=
        S(2) * self.grad.values().array() * input(self, 0).value.values().array();
  });
}

template <typename S>
Var<S> sigmoid(const Var<S>& a) {
  Tensor<S> out(a.shape(), a.value().values().unaryExpr([](S x) { return logistic(x); }));
  return make_result<S>(std::move(out), {a}, [](Node<S>& self) {
    const auto y = self.value.values().array();
    input(self, 0).grad_buffer().values().array() += self.grad.values().array() * y * (S(1) - y);
  });
}

template <typename S>
Var<S> softplus(const Var<S>& a) {
  Tensor<S> out(a.shape(), a.value().values().unaryExpr([](S x) { return stable_softplus(x); }));
  return make_result<S>(std::move(out), {a}, [](Node<S>& self) {
    auto& x = input(self, 0);
    x.grad_buffer().values().array() +=
        self.grad.values().array() * x.value.values().unaryExpr([](S v) { return logistic(v); }).array();
  });
}

template <typename S>
Var<S> silu(const Var<S>& a) {
  Tensor<S> out(a.shape(), a.value().values().unaryExpr([](S x) { return x * logistic(x); }));
  return make_result<S>(std::move(out), {a}, [](Node<S>& self) {
    auto& x = input(self, 0);
    x.grad_buffer().values().array() += self.grad.values().array() * x.value.values().unaryExpr([](S v) {
      const S s = logistic(v);
      return s * (S(1) + v * (S(1) - s));
    }).array();
  });
}

template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
  if (b.value().rank() != 2 || a.value().rank() < 1 || a.value().cols() != b.value().dim(0))
    throw ShapeError("matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  const Index rows = a.value().rows();
  const Index k = a.value().cols();
  const Index n = b.value().dim(1);
  Shape shape = a.shape();
  shape.back() = n;
  Tensor<S> out(shape);
  as_matrix(out, rows, n).noalias() = as_matrix(a.value(), rows, k) * b.value().matrix();
  return make_result<S>(std::move(out), {a, b}, [rows, k, n](Node<S>& self) {
    const auto g = as_matrix(std::as_const(self.grad), rows, n);
    if (wants(self, 0))
      as_matrix(input(self, 0).grad_buffer(), rows, k).noalias() += g * input(self, 1).value.matrix().transpose();
    if (wants(self, 1))
      as_matrix(input(self, 1).grad_buffer(), k, n).noalias() +=
          as_matrix(input(self, 0).value, rows, k).transpose() * g;
  });
}

template <typename S>
Var<S> transpose(const Var<S>& a) {
  if (a.value().rank() != 2) throw ShapeError("transpose: expected a matrix, got " + shape_string(a.shape()));
  const Index r = a.value().dim(0), c = a.value().dim(1);
  Tensor<S> out(Shape{c, r});
  out.matrix() = a.value().matrix().transpose();
  return make_result<S>(std::move(out), {a}, [](Node<S>& self) {
    input(self, 0).grad_buffer().matrix() += self.grad.matrix().transpose();
  });
}

template <typename S>
Var<S> reshape(const Var<S>& a, Shape shape) {
  Tensor<S> out = a.value().reshaped(std::move(shape));
  return make_result<S>(std::move(out), {a},
                        [](Node<S>& self) { input(self, 0).grad_buffer().values() += self.grad.values(); });
}

template <typename S>
Var<S> concat(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape shape = parts[0].shape();
  Index total = 0;
  for (const auto& p : parts) {
    Shape lead = p.shape(), lead0 = shape;
    lead.pop_back();
    lead0.pop_back();
    if (lead != lead0) throw ShapeError("concat: leading dimensions differ: " + shape_string(p.shape()));
    total += p.value().cols();
  }
  shape.back() = total;
  Tensor<S> out(shape);
  std::vector<Index> offsets;
  Index off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    out.matrix().middleCols(off, p.value().cols()) = p.value().matrix();
    off += p.value().cols();
  }
  return make_result<S>(std::move(out), parts, [offsets](Node<S>& self) {
    for (std::size_t i = 0; i < self.inputs.size(); ++i) {
      if (!wants(self, i)) continue;
      auto& in = input(self, i);
      in.grad_buffer().matrix() += std::as_const(self.grad).matrix().middleCols(offsets[i], in.value.cols());
    }
  });
}

template <typename S>
Var<S> slice(const Var<S>& a, Index start, Index length) {
  if (start < 0 || length < 0 || start + length > a.value().cols())
    throw ShapeError("slice: columns [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of " + shape_string(a.shape()));
  Shape shape = a.shape();
  shape.back() = length;
  Tensor<S> out(shape);
  out.matrix() = a.value().matrix().middleCols(start, length);
  return make_result<S>(std::move(out), {a}, [start, length](Node<S>& self) {
    input(self, 0).grad_buffer().matrix().middleCols(start, length) += self.grad.matrix();
  });
}

template <typename S>
Var<S> sum(const Var<S>& a) {
  return make_result<S>(Tensor<S>::scalar(a.value().values().sum()), {a}, [](Node<S>& self) {
    input(self, 0).grad_buffer().values().array() += self.grad[0];
  });
}

template <typename S>
Var<S> mean(const Var<S>& a) {
  const Index n = a.value().numel();
  if (n == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), S(1) / static_cast<S>(n));
}

template <typename S>
Var<S> softmax(const Var<S>& a, int axis) {
  const int rank = static_cast<int>(a.value().rank());
  if (axis < 0) axis += rank;
  if (rank == 2 && axis == 0) return transpose(softmax(transpose(a), 1));
  if (axis != rank - 1) throw ShapeError("softmax: unsupported axis for shape " + shape_string(a.shape()));
  Tensor<S> out = a.value();
  auto y = out.matrix();
  for (Index i = 0; i < y.rows(); ++i) {
    y.row(i).array() -= y.row(i).maxCoeff();
    y.row(i) = y.row(i).array().exp().matrix();
    y.row(i) /= y.row(i).sum();
  }
  return make_result<S>(std::move(out), {a}, [](Node<S>& self) {
    const auto y = self.value.matrix();
    const auto g = std::as_const(self.grad).matrix();
    const Eigen::Matrix<S, Eigen::Dynamic, 1> dot = (g.array() * y.array()).rowwise().sum().matrix();
    input(self, 0).grad_buffer().matrix().array() += y.array() * (g.colwise() - dot).array();
  });
}

template <typename S>
Var<S> log_softmax(const Var<S>& a) {
  Tensor<S> out = a.value();
  auto y = out.matrix();
  for (Index i = 0; i < y.rows(); ++i) {
    const S m = y.row(i).maxCoeff();
    const S lse = m + std::log((y.row(i).array() - m).exp().sum());
    y.row(i).array() -= lse;
  }
  return make_result<S>(std::move(out), {a}, [](Node<S>& self) {
    const auto g = std::as_const(self.grad).matrix();
    const Eigen::Matrix<S, Eigen::Dynamic, 1> total = g.rowwise().sum();
    input(self, 0).grad_buffer().matrix().array() +=
        g.array() - self.value.matrix().array().exp().colwise() * total.array();
  });
}

template <typename S>
Var<S> layer_norm(const Var<S>& x, const Var<S>& gain, const Var<S>& bias, S eps) {
  if (!(eps > 0)) throw DomainError("layer_norm: eps must be positive");
  const Index d = x.value().cols();
  if (gain.value().numel() != d || bias.value().numel() != d)
    throw ShapeError("layer_norm: gain/bias " + shape_string(gain.shape()) + " for input " + shape_string(x.shape()));
  const Index rows = x.value().rows();
  auto xhat = std::make_shared<RowMat<S>>(rows, d);
  auto inv = std::make_shared<Eigen::Matrix<S, Eigen::Dynamic, 1>>(rows);
  const auto xv = x.value().matrix();
  for (Index i = 0; i < rows; ++i) {
    const S mu = xv.row(i).mean();
    const S var = (xv.row(i).array() - mu).square().mean();
    (*inv)(i) = S(1) / std::sqrt(var + eps);
    xhat->row(i) = (xv.row(i).array() - mu) * (*inv)(i);
  }
  Tensor<S> out(x.shape());
  const auto gv = as_matrix(gain.value(), 1, d).row(0).array();
  const auto bv = as_matrix(bias.value(), 1, d).row(0).array();
  out.matrix().array() = (xhat->array().rowwise() * gv).rowwise() + bv;
  return make_result<S>(std::move(out), {x, gain, bias}, [xhat, inv, rows, d](Node<S>& self) {
    const auto g = std::as_const(self.grad).matrix();
    if (wants(self, 0)) {
      const auto gv = as_matrix(input(self, 1).value, 1, d).row(0).array();
      const RowMat<S> gx = (g.array().rowwise() * gv).matrix();
      auto dst = input(self, 0).grad_buffer().matrix();
      for (Index i = 0; i < rows; ++i) {
        const S m1 = gx.row(i).mean();
        const S m2 = gx.row(i).dot(xhat->row(i)) / static_cast<S>(d);
        dst.row(i).array() += (*inv)(i) * (gx.row(i).array() - m1 - xhat->row(i).array() * m2);
      }
    }
    if (wants(self, 1))
      as_matrix(input(self, 1).grad_buffer(), 1, d) += (g.array() * xhat->array()).colwise().sum().matrix();
    if (wants(self, 2)) as_matrix(input(self, 2).grad_buffer(), 1, d) += g.colwise().sum();
  });
}

template <typename S>
Var<S> embedding_lookup(const Var<S>& table, std::span<const int> ids) {
  if (table.value().rank() != 2) throw ShapeError("embedding_lookup: table must be a matrix");
  const Index vocab = table.value().dim(0), d = table.value().dim(1);
  Tensor<S> out(Shape{static_cast<Index>(ids.size()), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= vocab)
      throw LookupError("embedding_lookup: id " + std::to_string(ids[i]) + " outside vocabulary of " +
                        std::to_string(vocab));
    out.matrix().row(static_cast<Index>(i)) = table.value().matrix().row(ids[i]);
  }
  std::vector<int> saved(ids.begin(), ids.end());
  return make_result<S>(std::move(out), {table}, [saved = std::move(saved)](Node<S>& self) {
    auto dst = input(self, 0).grad_buffer().matrix();
    const auto g = std::as_const(self.grad).matrix();
    for (std::size_t i = 0; i < saved.size(); ++i) dst.row(saved[i]) += g.row(static_cast<Index>(i));
  });
}

template <typename S>
Var<S> causal_depthwise_conv(const Var<S>& x, const Var<S>& kernel, const Var<S>& bias, Index seq_len) {
  const Index rows = x.value().rows(), ch = x.value().cols();
  if (kernel.value().rank() != 2 || kernel.value().dim(1) != ch || bias.value().numel() != ch)
    throw ShapeError("causal_depthwise_conv: kernel " + shape_string(kernel.shape()) + " for input " +
                     shape_string(x.shape()));
  if (seq_len <= 0 || rows % seq_len != 0)
    throw ShapeError("causal_depthwise_conv: " + std::to_string(rows) + " rows are not a multiple of seq_len " +
                     std::to_string(seq_len));
  const Index width = kernel.value().dim(0);
  const Index batch = rows / seq_len;
  Tensor<S> out(x.shape());
  auto y = out.matrix();
  const auto xv = x.value().matrix();
  const auto w = kernel.value().matrix();
  const auto bv = as_matrix(bias.value(), 1, ch).row(0);
  for (Index b = 0; b < batch; ++b) {
    for (Index t = 0; t < seq_len; ++t) {
      const Index row = b * seq_len + t;
      y.row(row) = bv;
      for (Index j = 0; j < width; ++j) {
        const Index src = t - (width - 1) + j;
        if (src < 0) continue;
        y.row(row).array() += w.row(j).array() * xv.row(b * seq_len + src).array();
      }
    }
  }
  return make_result<S>(std::move(out), {x, kernel, bias}, [batch, seq_len, width, ch](Node<S>& self) {
    const auto g = std::as_const(self.grad).matrix();
    const auto xv = input(self, 0).value.matrix();
    const auto w = input(self, 1).value.matrix();
    Tensor<S>* gx = wants(self, 0) ? &input(self, 0).grad_buffer() : nullptr;
    Tensor<S>* gw = wants(self, 1) ? &input(self, 1).grad_buffer() : nullptr;
    for (Index b = 0; b < batch; ++b) {
      for (Index t = 0; t < seq_len; ++t) {
        const Index row = b * seq_len + t;
        for (Index j = 0; j < width; ++j) {
          const Index src = t - (width - 1) + j;
          if (src < 0) continue;
          if (gx) gx->matrix().row(b * seq_len + src).array() += g.row(row).array() * w.row(j).array();
          if (gw) gw->matrix().row(j).array() += g.row(row).array() * xv.row(b * seq_len + src).array();
        }
      }
    }
    if (wants(self, 2)) as_matrix(input(self, 2).grad_buffer(), 1, ch) += g.colwise().sum();
  });
}

template <typename S>
Var<S> mask_rows(const Var<S>& x, std::span<const S> mask) {
  const Index rows = x.value().rows();
  if (static_cast<Index>(mask.size()) != rows)
    throw ShapeError("mask_rows: " + std::to_string(mask.size()) + " mask entries for " + std::to_string(rows) + " rows");
  Eigen::Matrix<S, Eigen::Dynamic, 1> m = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>(mask.data(), rows);
  Tensor<S> out = x.value();
  out.matrix().array().colwise() *= m.array();
  return make_result<S>(std::move(out), {x}, [m](Node<S>& self) {
    input(self, 0).grad_buffer().matrix().array() += std::as_const(self.grad).matrix().array().colwise() * m.array();
  });
}

template <typename S>
Var<S> masked_mean_pool(const Var<S>& x, std::span<const S> mask, Index seq_len) {
  const Index rows = x.value().rows(), d = x.value().cols();
  if (seq_len <= 0 || rows % seq_len != 0 || static_cast<Index>(mask.size()) != rows)
    throw ShapeError("masked_mean_pool: inconsistent rows/seq_len/mask");
  const Index batch = rows / seq_len;
  std::vector<S> weight(mask.begin(), mask.end());
  Tensor<S> out(Shape{batch, d});
  const auto xv = x.value().matrix();
  for (Index b = 0; b < batch; ++b) {
    S count = 0;
    for (Index t = 0; t < seq_len; ++t) count += mask[static_cast<std::size_t>(b * seq_len + t)];
    if (count <= 0) throw ContractError("masked_mean_pool: sequence " + std::to_string(b) + " has no valid positions");
    for (Index t = 0; t < seq_len; ++t) {
      auto& wgt = weight[static_cast<std::size_t>(b * seq_len + t)];
      wgt /= count;
      if (wgt != S(0)) out.matrix().row(b) += wgt * xv.row(b * seq_len + t);
    }
  }
  return make_result<S>(std::move(out), {x}, [weight = std::move(weight), seq_len](Node<S>& self) {
    auto dst = input(self, 0).grad_buffer().matrix();
    const auto g = std::as_const(self.grad).matrix();
    for (std::size_t r = 0; r < weight.size(); ++r)
      if (weight[r] != S(0)) dst.row(static_cast<Index>(r)) += weight[r] * g.row(static_cast<Index>(r) / seq_len);
  });
}

template <typename S>
Var<S> sparse_cross_entropy(const Var<S>& logits, std::span<const int> targets, std::span<const S> weights) {
  const Index rows = logits.value().rows(), k = logits.value().cols();
  if (static_cast<Index>(targets.size()) != rows || static_cast<Index>(weights.size()) != rows)
    throw ShapeError("sparse_cross_entropy: targets/weights do not match " + std::to_string(rows) + " rows");
  const auto z = logits.value().matrix();
  auto probs = std::make_shared<RowMat<S>>(RowMat<S>::Zero(rows, k));
  S total = 0;
  for (Index i = 0; i < rows; ++i) {
    const S w = weights[static_cast<std::size_t>(i)];
    if (w == S(0)) continue;
    const int t = targets[static_cast<std::size_t>(i)];
    if (t < 0 || t >= k) throw LookupError("sparse_cross_entropy: target " + std::to_string(t) + " out of range");
    const S m = z.row(i).maxCoeff();
    probs->row(i) = (z.row(i).array() - m).exp().matrix();
    const S norm = probs->row(i).sum();
    probs->row(i) /= norm;
    total += w * (m + std::log(norm) - z(i, t));
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  std::vector<S> wts(weights.begin(), weights.end());
  return make_result<S>(Tensor<S>::scalar(total), {logits}, [probs, tgt = std::move(tgt), wts = std::move(wts)](Node<S>& self) {
    const S g = self.grad[0];
    auto dst = input(self, 0).grad_buffer().matrix();
    for (std::size_t i = 0; i < tgt.size(); ++i) {
      if (wts[i] == S(0)) continue;
      const auto r = static_cast<Index>(i);
      dst.row(r) += (g * wts[i]) * probs->row(r);
      dst(r, tgt[i]) -= g * wts[i];
    }
  });
}

template <typename S>
Var<S> soft_cross_entropy(const Var<S>& logits, const Tensor<S>& coef) {
  if (coef.shape() != logits.shape())
    throw ShapeError("soft_cross_entropy: coefficients " + shape_string(coef.shape()) + " for logits " +
                     shape_string(logits.shape()));
  const Index rows = logits.value().rows();
  const auto z = logits.value().matrix();
  auto probs = std::make_shared<RowMat<S>>(z.rows(), z.cols());
  S total = 0;
  for (Index i = 0; i < rows; ++i) {
    const S m = z.row(i).maxCoeff();
    probs->row(i) = (z.row(i).array() - m).exp().matrix();
    const S norm = probs->row(i).sum();
    probs->row(i) /= norm;
    const S lse = m + std::log(norm);
    total -= (coef.matrix().row(i).array() * (z.row(i).array() - lse)).sum();
  }
  return make_result<S>(Tensor<S>::scalar(total), {logits}, [probs, coef](Node<S>& self) {
    const S g = self.grad[0];
    const auto c = coef.matrix();
    const Eigen::Matrix<S, Eigen::Dynamic, 1> mass = c.rowwise().sum();
    input(self, 0).grad_buffer().matrix().array() += g * (probs->array().colwise() * mass.array() - c.array());
  });
}

#define BSSM_INSTANTIATE_OPS(S)                                                                     \
  template Var<S> add(const Var<S>&, const Var<S>&);                                                \
  template Var<S> sub(const Var<S>&, const Var<S>&);                                                \
  template Var<S> mul(const Var<S>&, const Var<S>&);                                                \
  template Var<S> div(const Var<S>&, const Var<S>&);                                                \
  template Var<S> scale(const Var<S>&, S);                                                          \
  template Var<S> add_scalar(const Var<S>&, S);                                                     \
  template Var<S> neg(const Var<S>&);                                                               \
  template Var<S> exp(const Var<S>&);                                                               \
  template Var<S> log(const Var<S>&);                                                               \
  template Var<S> square(const Var<S>&);                                                            \
  template Var<S> sigmoid(const Var<S>&);                                                           \
  template Var<S> softplus(const Var<S>&);                                                          \
  template Var<S> silu(const Var<S>&);                                                              \
  template Var<S> matmul(const Var<S>&, const Var<S>&);                                             \
  template Var<S> transpose(const Var<S>&);                                                         \
  template Var<S> reshape(const Var<S>&, Shape);                                                    \
  template Var<S> concat(const std::vector<Var<S>>&);                                               \
  template Var<S> slice(const Var<S>&, Index, Index);                                               \
  template Var<S> sum(const Var<S>&);                                                               \
  template Var<S> mean(const Var<S>&);                                                              \
  template Var<S> softmax(const Var<S>&, int);                                                      \
  template Var<S> log_softmax(const Var<S>&);                                                       \
  template Var<S> layer_norm(const Var<S>&, const Var<S>&, const Var<S>&, S);                       \
  template Var<S> embedding_lookup(const Var<S>&, std::span<const int>);                            \
  template Var<S> causal_depthwise_conv(const Var<S>&, const Var<S>&, const Var<S>&, Index);        \
  template Var<S> mask_rows(const Var<S>&, std::span<const S>);                                     \
  template Var<S> masked_mean_pool(const Var<S>&, std::span<const S>, Index);                       \
  template Var<S> sparse_cross_entropy(const Var<S>&, std::span<const int>, std::span<const S>);    \
  template Var<S> soft_cross_entropy(const Var<S>&, const Tensor<S>&);

BSSM_INSTANTIATE_OPS(float)
BSSM_INSTANTIATE_OPS(double)

}  // namespace bssm
