#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "selgan/autograd.hpp"

namespace selgan::ops {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

struct ConvGeometry {
  std::int64_t channels, height, width;  // of the image side
  int kernel, stride, pad;
  std::int64_t out_h, out_w;              // of the column side

  std::int64_t rows() const { return channels * kernel * kernel; }
  std::int64_t cols() const { return out_h * out_w; }
  bool is_pointwise() const { return kernel == 1 && stride == 1 && pad == 0; }
};

// Output columns [lo, hi) whose tap at kernel offset `kj` lands inside the image.
inline void valid_range(const ConvGeometry& g, std::int64_t kj, std::int64_t& lo, std::int64_t& hi) {
  const std::int64_t first = g.pad - kj;  // smallest iw + pad - kj that is >= 0
  lo = first <= 0 ? 0 : (first + g.stride - 1) / g.stride;
  const std::int64_t last = g.width - 1 + g.pad - kj;  // largest admissible ow * stride
  hi = last < 0 ? 0 : std::min<std::int64_t>(g.out_w, last / g.stride + 1);
  if (hi < lo) hi = lo;
}

// Unfolds one [C,H,W] image into [C*k*k, Ho*Wo] patches; out-of-image taps are zero.
template <typename T>
void im2col(const T* image, const ConvGeometry& g, T* col) {
  const std::int64_t k = g.kernel;
  for (std::int64_t c = 0; c < g.channels; ++c) {
    for (std::int64_t ki = 0; ki < k; ++ki) {
      for (std::int64_t kj = 0; kj < k; ++kj) {
        T* row = col + ((c * k + ki) * k + kj) * g.cols();
        std::int64_t lo, hi;
        valid_range(g, kj, lo, hi);
        const std::int64_t offset = kj - g.pad;
        for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
          const std::int64_t ih = oh * g.stride - g.pad + ki;
          T* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= g.height) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* src = image + (c * g.height + ih) * g.width + offset;
          std::fill(dst, dst + lo, T(0));
          if (g.stride == 1) {
            std::copy(src + lo, src + hi, dst + lo);
          } else {
            for (std::int64_t ow = lo; ow < hi; ++ow) dst[ow] = src[ow * g.stride];
          }
          std::fill(dst + hi, dst + g.out_w, T(0));
        }
      }
    }
  }
}

// Adjoint of im2col: scatters patch columns back onto a [C,H,W] image.
template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* image) {
  const std::int64_t k = g.kernel;
  for (std::int64_t c = 0; c < g.channels; ++c) {
    for (std::int64_t ki = 0; ki < k; ++ki) {
      for (std::int64_t kj = 0; kj < k; ++kj) {
        const T* row = col + ((c * k + ki) * k + kj) * g.cols();
        std::int64_t lo, hi;
        valid_range(g, kj, lo, hi);
        const std::int64_t offset = kj - g.pad;
        for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
          const std::int64_t ih = oh * g.stride - g.pad + ki;
          if (ih < 0 || ih >= g.height) continue;
          const T* src = row + oh * g.out_w;
          T* dst = image + (c * g.height + ih) * g.width + offset;
          if (g.stride == 1) {
            for (std::int64_t ow = lo; ow < hi; ++ow) dst[ow] += src[ow];
          } else {
            for (std::int64_t ow = lo; ow < hi; ++ow) dst[ow * g.stride] += src[ow];
          }
        }
      }
    }
  }
}

template <typename T>
void check_bias(const Var<T>& bias, std::int64_t channels, const char* what) {
  if (bias.defined() && (bias.shape().size() != 1 || bias.dim(0) != channels)) {
    throw ShapeError(std::string(what) + ": bias shape " + to_string(bias.shape()) +
                     " does not match " + std::to_string(channels) + " output channels");
  }
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs.size() != 4 || ws.size() != 4 || ws[1] != xs[1] || ws[2] != ws[3]) {
    throw ShapeError("conv2d: input " + to_string(xs) + " incompatible with weight " + to_string(ws));
  }
  const std::int64_t B = xs[0], cout = ws[0];
  const int k = static_cast<int>(ws[2]);
  const std::int64_t out_h = (xs[2] + 2 * pad - k) / stride + 1;
  const std::int64_t out_w = (xs[3] + 2 * pad - k) / stride + 1;
  if (out_h < 1 || out_w < 1) throw ShapeError("conv2d: input " + to_string(xs) + " too small");
  check_bias(bias, cout, "conv2d");
  const ConvGeometry g{xs[1], xs[2], xs[3], k, stride, pad, out_h, out_w};

  Tensor<T> out({B, cout, out_h, out_w});
  RowMatrix<T> col(g.is_pointwise() ? 0 : g.rows(), g.is_pointwise() ? 0 : g.cols());
  ConstMatMap<T> W(weight.value().data(), cout, g.rows());
  const std::int64_t in_block = xs[1] * xs[2] * xs[3];
  for (std::int64_t b = 0; b < B; ++b) {
    const T* img = x.value().data() + b * in_block;
    MatMap<T> Y(out.data() + b * cout * g.cols(), cout, g.cols());
    if (g.is_pointwise()) {
      Y.noalias() = W * ConstMatMap<T>(img, g.rows(), g.cols());
    } else {
      im2col(img, g, col.data());
      Y.noalias() = W * col;
    }
    if (bias.defined()) Y.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(bias.value().data(), cout);
  }

  std::vector<Var<T>> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  return make_result<T>(std::move(out), parents, [g, B, cout, in_block](Node<T>& self) {
    Node<T>& px = *self.parents[0];
    Node<T>& pw = *self.parents[1];
    Node<T>* pb = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
    ConstMatMap<T> W(pw.value.data(), cout, g.rows());
    RowMatrix<T> col(g.is_pointwise() ? 0 : g.rows(), g.is_pointwise() ? 0 : g.cols());
    RowMatrix<T> dcol;
    for (std::int64_t b = 0; b < B; ++b) {
      ConstMatMap<T> dY(self.grad.data() + b * cout * g.cols(), cout, g.cols());
      const T* img = px.value.data() + b * in_block;
      if (pw.requires_grad) {
        MatMap<T> dW(pw.grad_buffer().data(), cout, g.rows());
        if (g.is_pointwise()) {
          dW.noalias() += dY * ConstMatMap<T>(img, g.rows(), g.cols()).transpose();
        } else {
          im2col(img, g, col.data());
          dW.noalias() += dY * col.transpose();
        }
      }
      if (pb && pb->requires_grad) {
        Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> db(pb->grad_buffer().data(), cout);
        db += dY.rowwise().sum();
      }
      if (px.requires_grad) {
        T* dimg = px.grad_buffer().data() + b * in_block;
        if (g.is_pointwise()) {
          MatMap<T>(dimg, g.rows(), g.cols()).noalias() += W.transpose() * dY;
        } else {
          dcol.noalias() = W.transpose() * dY;
          col2im(dcol.data(), g, dimg);
        }
      }
    }
  });
}

template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride,
                        int pad) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs.size() != 4 || ws.size() != 4 || ws[0] != xs[1] || ws[2] != ws[3]) {
    throw ShapeError("conv_transpose2d: input " + to_string(xs) + " incompatible with weight " +
                     to_string(ws));
  }
  const std::int64_t B = xs[0], cin = xs[1], cout = ws[1];
  const int k = static_cast<int>(ws[2]);
  const std::int64_t out_h = (xs[2] - 1) * stride - 2 * pad + k;
  const std::int64_t out_w = (xs[3] - 1) * stride - 2 * pad + k;
  if (out_h < 1 || out_w < 1) throw ShapeError("conv_transpose2d: empty output");
  check_bias(bias, cout, "conv_transpose2d");
  // The transposed convolution is the adjoint of a convolution whose image
  // side is the output here and whose column side is the input.
  const ConvGeometry g{cout, out_h, out_w, k, stride, pad, xs[2], xs[3]};
  if ((out_h + 2 * pad - k) / stride + 1 != xs[2] || (out_w + 2 * pad - k) / stride + 1 != xs[3]) {
    throw ShapeError("conv_transpose2d: inconsistent geometry for input " + to_string(xs));
  }

  Tensor<T> out({B, cout, out_h, out_w});
  ConstMatMap<T> W(weight.value().data(), cin, g.rows());
  RowMatrix<T> col;
  const std::int64_t out_block = cout * out_h * out_w;
  for (std::int64_t b = 0; b < B; ++b) {
    ConstMatMap<T> X(x.value().data() + b * cin * g.cols(), cin, g.cols());
    col.noalias() = W.transpose() * X;
    T* img = out.data() + b * out_block;
    col2im(col.data(), g, img);
    if (bias.defined()) {
      for (std::int64_t c = 0; c < cout; ++c) {
        const T bv = bias.value()[c];
        for (std::int64_t p = 0; p < out_h * out_w; ++p) img[c * out_h * out_w + p] += bv;
      }
    }
  }

  std::vector<Var<T>> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  return make_result<T>(std::move(out), parents, [g, B, cin, cout, out_block](Node<T>& self) {
    Node<T>& px = *self.parents[0];
    Node<T>& pw = *self.parents[1];
    Node<T>* pb = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
    ConstMatMap<T> W(pw.value.data(), cin, g.rows());
    RowMatrix<T> dcol(g.rows(), g.cols());
    const std::int64_t plane = g.height * g.width;
    for (std::int64_t b = 0; b < B; ++b) {
      const T* dimg = self.grad.data() + b * out_block;
      im2col(dimg, g, dcol.data());
      if (pw.requires_grad) {
        ConstMatMap<T> X(px.value.data() + b * cin * g.cols(), cin, g.cols());
        MatMap<T> dW(pw.grad_buffer().data(), cin, g.rows());
        dW.noalias() += X * dcol.transpose();
      }
      if (px.requires_grad) {
        MatMap<T> dX(px.grad_buffer().data() + b * cin * g.cols(), cin, g.cols());
        dX.noalias() += W * dcol;
      }
      if (pb && pb->requires_grad) {
        Tensor<T>& db = pb->grad_buffer();
        for (std::int64_t c = 0; c < cout; ++c) {
          T acc = 0;
          for (std::int64_t p = 0; p < plane; ++p) acc += dimg[c * plane + p];
          db[c] += acc;
        }
      }
    }
  });
}

template <typename T>
Var<T> instance_norm(const Var<T>& x, T eps) {
  if (x.shape().size() != 4) throw ShapeError("instance_norm expects [B,C,H,W]");
  const std::int64_t planes = x.dim(0) * x.dim(1);
  const std::int64_t n = x.dim(2) * x.dim(3);
  Tensor<T> out(x.shape());
  std::vector<T> inv_std(static_cast<std::size_t>(planes));
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* src = x.value().data() + p * n;
    T* dst = out.data() + p * n;
    T mu = 0;
    for (std::int64_t i = 0; i < n; ++i) mu += src[i];
    mu /= static_cast<T>(n);
    T var = 0;
    for (std::int64_t i = 0; i < n; ++i) var += (src[i] - mu) * (src[i] - mu);
    var /= static_cast<T>(n);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(p)] = is;
    for (std::int64_t i = 0; i < n; ++i) dst[i] = (src[i] - mu) * is;
  }
  return make_result<T>(std::move(out), {x}, [planes, n, inv_std = std::move(inv_std)](Node<T>& self) {
    Tensor<T>& g = self.parents[0]->grad_buffer();
    const T count = static_cast<T>(n);
    for (std::int64_t p = 0; p < planes; ++p) {
      const T* y = self.value.data() + p * n;
      const T* dy = self.grad.data() + p * n;
      T mean_dy = 0, mean_dy_y = 0;
      for (std::int64_t i = 0; i < n; ++i) {
        mean_dy += dy[i];
        mean_dy_y += dy[i] * y[i];
      }
      mean_dy /= count;
      mean_dy_y /= count;
      const T is = inv_std[static_cast<std::size_t>(p)];
      T* dx = g.data() + p * n;
      for (std::int64_t i = 0; i < n; ++i) dx[i] += is * (dy[i] - mean_dy - y[i] * mean_dy_y);
    }
  });
}

template <typename T>
Var<T> pool_upsample(const Var<T>& x, int scale) {
  if (x.shape().size() != 4) throw ShapeError("pool_upsample expects [B,C,H,W]");
  const std::int64_t H = x.dim(2), W = x.dim(3);
  if (scale < 1 || H % scale != 0 || W % scale != 0) {
    throw ShapeError("pool_upsample: scale " + std::to_string(scale) + " does not divide " +
                     std::to_string(H) + "x" + std::to_string(W));
  }
  const std::int64_t planes = x.dim(0) * x.dim(1);
  const std::int64_t s = scale;
  const T inv = T(1) / static_cast<T>(s * s);
  // Shared cell-average kernel; the backward pass is the same operator.
  auto apply = [H, W, s, inv](const T* src, T* dst, bool accumulate) {
    for (std::int64_t ch = 0; ch < H / s; ++ch) {
      for (std::int64_t cw = 0; cw < W / s; ++cw) {
        T acc = 0;
        for (std::int64_t i = 0; i < s; ++i)
          for (std::int64_t j = 0; j < s; ++j) acc += src[(ch * s + i) * W + cw * s + j];
        acc *= inv;
        for (std::int64_t i = 0; i < s; ++i)
          for (std::int64_t j = 0; j < s; ++j) {
            T& d = dst[(ch * s + i) * W + cw * s + j];
            d = accumulate ? d + acc : acc;
          }
      }
    }
  };
  Tensor<T> out(x.shape());
  for (std::int64_t p = 0; p < planes; ++p) apply(x.value().data() + p * H * W, out.data() + p * H * W, false);
  return make_result<T>(std::move(out), {x}, [planes, H, W, apply](Node<T>& self) {
    Tensor<T>& g = self.parents[0]->grad_buffer();
    for (std::int64_t p = 0; p < planes; ++p) apply(self.grad.data() + p * H * W, g.data() + p * H * W, true);
  });
}

#define SELGAN_INSTANTIATE(T)                                                               \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, int, int);           \
  template Var<T> conv_transpose2d(const Var<T>&, const Var<T>&, const Var<T>&, int, int); \
  template Var<T> instance_norm(const Var<T>&, T);                                          \
  template Var<T> pool_upsample(const Var<T>&, int);

SELGAN_INSTANTIATE(float)
SELGAN_INSTANTIATE(double)

#undef SELGAN_INSTANTIATE

}  // namespace selgan::ops
