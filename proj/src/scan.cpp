#include "bssm/scan.hpp"

#include <cmath>
#include <memory>

#include "bssm/error.hpp"

namespace bssm {

namespace {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using CVecMap = Eigen::Map<const Vec<S>>;
template <typename S>
using VecMap = Eigen::Map<Vec<S>>;

void expect_shape(const Shape& got, const Shape& want, const char* what) {
  if (got != want)
    throw ShapeError(std::string("ssd_scan: ") + what + " has shape " + shape_string(got) + ", expected " +
                     shape_string(want));
}

template <typename S>
void validate(const Tensor<S>& x, const Tensor<S>& delta, const Tensor<S>& a, const Tensor<S>& B,
              const Tensor<S>& C, const Tensor<S>& D, const ScanLayout& l) {
  if (l.batch < 1 || l.seq_len < 1 || l.heads < 1 || l.head_dim < 1 || l.groups < 1 || l.state < 1)
    throw ShapeError("ssd_scan: layout dimensions must be positive");
  if (l.heads % l.groups != 0) throw ShapeError("ssd_scan: heads must be a multiple of groups");
  const Index rows = l.batch * l.seq_len;
  expect_shape(x.shape(), {rows, l.heads * l.head_dim}, "x");
  expect_shape(delta.shape(), {rows, l.heads}, "delta");
  expect_shape(a.shape(), {l.heads}, "a");
  expect_shape(B.shape(), {rows, l.groups * l.state}, "B");
  expect_shape(C.shape(), {rows, l.groups * l.state}, "C");
  expect_shape(D.shape(), {l.heads}, "D");
  if ((delta.values().array() < S(0)).any()) throw DomainError("ssd_scan: delta must be non-negative");
  if ((a.values().array() >= S(0)).any()) throw DomainError("ssd_scan: a must be negative");
}

/// Forward pass; when `states` is non-null it receives H_t for every
/// (batch, head, t) as consecutive column-major head_dim x state blocks.
template <typename S>
Tensor<S> scan_forward(const Tensor<S>& x, const Tensor<S>& delta, const Tensor<S>& a, const Tensor<S>& B,
                       const Tensor<S>& C, const Tensor<S>& D, const ScanLayout& l, std::vector<S>* states) {
  const Index p = l.head_dim, n = l.state, block = p * n;
  Tensor<S> y(x.shape());
  if (states) states->assign(static_cast<std::size_t>(l.batch * l.heads * l.seq_len * block), S(0));
  Mat<S> H(p, n);
  for (Index b = 0; b < l.batch; ++b) {
    for (Index h = 0; h < l.heads; ++h) {
      const Index g = l.group_of(h);
      H.setZero();
      for (Index t = 0; t < l.seq_len; ++t) {
        const Index row = b * l.seq_len + t;
        const S dt = delta.matrix()(row, h);
        const CVecMap<S> xt(x.data() + row * x.cols() + h * p, p);
        const CVecMap<S> bt(B.data() + row * B.cols() + g * n, n);
        const CVecMap<S> ct(C.data() + row * C.cols() + g * n, n);
        H *= std::exp(dt * a[h]);
        H.noalias() += (dt * xt) * bt.transpose();
        VecMap<S>(y.data() + row * y.cols() + h * p, p).noalias() = H * ct + D[h] * xt;
        if (states) {
          const Index off = ((b * l.heads + h) * l.seq_len + t) * block;
          std::copy(H.data(), H.data() + block, states->data() + off);
        }
      }
    }
  }
  return y;
}

}  // namespace

template <typename S>
Tensor<S> ssd_scan_sequential(const Tensor<S>& x, const Tensor<S>& delta, const Tensor<S>& a, const Tensor<S>& B,
                              const Tensor<S>& C, const Tensor<S>& D, const ScanLayout& layout) {
  validate(x, delta, a, B, C, D, layout);
  return scan_forward<S>(x, delta, a, B, C, D, layout, nullptr);
}

template <typename S>
Tensor<S> ssd_scan_chunked(const Tensor<S>& x, const Tensor<S>& delta, const Tensor<S>& a, const Tensor<S>& B,
                           const Tensor<S>& C, const Tensor<S>& D, const ScanLayout& l, Index chunk_size) {
  validate(x, delta, a, B, C, D, l);
  if (chunk_size < 1) throw ShapeError("ssd_scan_chunked: chunk_size must be >= 1");
  const Index p = l.head_dim, n = l.state;
  Tensor<S> y(x.shape());
  const auto xm = x.matrix();
  const auto bm = B.matrix();
  const auto cm = C.matrix();
  auto ym = y.matrix();
  Mat<S> carried(p, n);
  for (Index b = 0; b < l.batch; ++b) {
    for (Index h = 0; h < l.heads; ++h) {
      const Index g = l.group_of(h);
      carried.setZero();
      for (Index c0 = 0; c0 < l.seq_len; c0 += chunk_size) {
        const Index len = std::min(chunk_size, l.seq_len - c0);
        const Index r0 = b * l.seq_len + c0;
        const Mat<S> xc = xm.block(r0, h * p, len, p);
        const Mat<S> bc = bm.block(r0, g * n, len, n);
        const Mat<S> cc = cm.block(r0, g * n, len, n);
        Vec<S> dt(len), cum(len);
        S acc = 0;
        for (Index i = 0; i < len; ++i) {
          dt(i) = delta.matrix()(r0 + i, h);
          acc += dt(i) * a[h];
          cum(i) = acc;
        }
        Mat<S> mix = cc * bc.transpose();
        for (Index i = 0; i < len; ++i)
          for (Index j = 0; j < len; ++j)
            mix(i, j) = j <= i ? mix(i, j) * std::exp(cum(i) - cum(j)) * dt(j) : S(0);
        Mat<S> out = mix * xc;
        out.noalias() += cum.array().exp().matrix().asDiagonal() * (cc * carried.transpose());
        out += D[h] * xc;
        ym.block(r0, h * p, len, p) = out;

        const S last = cum(len - 1);
        const Vec<S> w = ((last - cum.array()).exp() * dt.array()).matrix();
        carried = std::exp(last) * carried + xc.transpose() * w.asDiagonal() * bc;
      }
    }
  }
  return y;
}

template <typename S>
Var<S> ssd_scan(const Var<S>& x, const Var<S>& delta, const Var<S>& a, const Var<S>& B, const Var<S>& C,
                const Var<S>& D, const ScanLayout& layout) {
  validate(x.value(), delta.value(), a.value(), B.value(), C.value(), D.value(), layout);
  const bool record = grad_enabled() && (x.requires_grad() || delta.requires_grad() || a.requires_grad() ||
                                         B.requires_grad() || C.requires_grad() || D.requires_grad());
  auto states = std::make_shared<std::vector<S>>();
  Tensor<S> y = scan_forward(x.value(), delta.value(), a.value(), B.value(), C.value(), D.value(), layout,
                             record ? states.get() : nullptr);

  return make_result<S>(std::move(y), {x, delta, a, B, C, D}, [states, l = layout](Node<S>& self) {
    const Index p = l.head_dim, n = l.state, block = p * n;
    const auto& xv = self.inputs[0]->value;
    const auto& dv = self.inputs[1]->value;
    const auto& av = self.inputs[2]->value;
    const auto& bv = self.inputs[3]->value;
    const auto& cv = self.inputs[4]->value;
    const auto& Dv = self.inputs[5]->value;
    Tensor<S>* gx = self.inputs[0]->requires_grad ? &self.inputs[0]->grad_buffer() : nullptr;
    Tensor<S>* gd = self.inputs[1]->requires_grad ? &self.inputs[1]->grad_buffer() : nullptr;
    Tensor<S>* ga = self.inputs[2]->requires_grad ? &self.inputs[2]->grad_buffer() : nullptr;
    Tensor<S>* gb = self.inputs[3]->requires_grad ? &self.inputs[3]->grad_buffer() : nullptr;
    Tensor<S>* gc = self.inputs[4]->requires_grad ? &self.inputs[4]->grad_buffer() : nullptr;
    Tensor<S>* gD = self.inputs[5]->requires_grad ? &self.inputs[5]->grad_buffer() : nullptr;
    const Tensor<S>& gy = self.grad;

    Mat<S> G(p, n);
    for (Index b = 0; b < l.batch; ++b) {
      for (Index h = 0; h < l.heads; ++h) {
        const Index g = l.group_of(h);
        const S ah = av[h];
        G.setZero();
        S carry_decay = 0;  // exp(delta_{t+1} a) applied to G_{t+1}
        for (Index t = l.seq_len - 1; t >= 0; --t) {
          const Index row = b * l.seq_len + t;
          const S dt = dv.matrix()(row, h);
          const S alpha = std::exp(dt * ah);
          const CVecMap<S> xt(xv.data() + row * xv.cols() + h * p, p);
          const CVecMap<S> bt(bv.data() + row * bv.cols() + g * n, n);
          const CVecMap<S> ct(cv.data() + row * cv.cols() + g * n, n);
          const CVecMap<S> gyt(gy.data() + row * gy.cols() + h * p, p);
          const S* state_t = states->data() + ((b * l.heads + h) * l.seq_len + t) * block;
          const Eigen::Map<const Mat<S>> Ht(state_t, p, n);

          G *= carry_decay;
          G.noalias() += gyt * ct.transpose();

          if (gc) VecMap<S>(gc->data() + row * gc->cols() + g * n, n).noalias() += Ht.transpose() * gyt;
          if (gD) (*gD)[h] += gyt.dot(xt);
          const Vec<S> GB = G * bt;
          if (gx) VecMap<S>(gx->data() + row * gx->cols() + h * p, p).noalias() += dt * GB + Dv[h] * gyt;
          if (gb) VecMap<S>(gb->data() + row * gb->cols() + g * n, n).noalias() += dt * (G.transpose() * xt);
          if (gd || ga) {
            // <G_t, H_{t-1}> drives both the step-size and the decay-rate gradients.
            const S decay_term = t > 0 ? G.cwiseProduct(Eigen::Map<const Mat<S>>(state_t - block, p, n)).sum() : S(0);
            if (gd) gd->matrix()(row, h) += xt.dot(GB) + ah * alpha * decay_term;
            if (ga) (*ga)[h] += dt * alpha * decay_term;
          }
          carry_decay = alpha;
        }
      }
    }
  });
}

template Tensor<float> ssd_scan_sequential(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                           const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                           const ScanLayout&);
template Tensor<double> ssd_scan_sequential(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                            const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                            const ScanLayout&);
template Tensor<float> ssd_scan_chunked(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                        const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                        const ScanLayout&, Index);
template Tensor<double> ssd_scan_chunked(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                         const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                         const ScanLayout&, Index);
template Var<float> ssd_scan(const Var<float>&, const Var<float>&, const Var<float>&, const Var<float>&,
                             const Var<float>&, const Var<float>&, const ScanLayout&);
template Var<double> ssd_scan(const Var<double>&, const Var<double>&, const Var<double>&, const Var<double>&,
                              const Var<double>&, const Var<double>&, const ScanLayout&);

}  // namespace bssm
