#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "whc/error.hpp"
#include "whc/ops.hpp"

namespace whc::nn {

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapS = Eigen::Map<Mat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using CMapS = Eigen::Map<const Mat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using CMap = Eigen::Map<const Mat<T>>;
template <typename T>
using MapM = Eigen::Map<Mat<T>>;

// Upper bound on im2col buffer elements; rows of output are processed in bands.
constexpr std::size_t kColumnBudget = std::size_t(1) << 22;

void check_kernel(int k, int dilation) {
  if (k != 1 && k != 3) throw ShapeError("conv kernel must be 1x1 or 3x3, got " + std::to_string(k));
  if (dilation != 1 && dilation != 2)
    throw ShapeError("conv dilation must be 1 or 2, got " + std::to_string(dilation));
  if (k == 1 && dilation != 1) throw ShapeError("1x1 conv does not take a dilation");
}

template <typename T>
void check_conv_shapes(const Shape& xs, const Tensor<T>& weight, const Tensor<T>& bias) {
  const Shape& ws = weight.shape();
  if (ws.h != ws.w) throw ShapeError("conv weight must be square, got " + ws.str());
  if (ws.c != xs.c)
    throw ShapeError("conv expects " + std::to_string(ws.c) + " input channels, got " +
                     std::to_string(xs.c));
  if (bias.shape() != Shape{ws.n, 1, 1, 1})
    throw ShapeError("conv bias must be (" + std::to_string(ws.n) + ",1,1,1), got " + bias.shape().str());
}

int band_rows(std::size_t col_rows, int h, int w) {
  const std::size_t per_row = col_rows * std::size_t(w);
  return std::clamp(int(kColumnBudget / std::max<std::size_t>(per_row, 1)), 1, h);
}

// cols[(ci*k + ky)*k + kx][(oy - r0)*w + ox] = x[ci][oy + (ky - k/2)*d][ox + (kx - k/2)*d]
template <typename T>
void im2col_band(const T* x, int c_in, int h, int w, int k, int d, int r0, int r1, T* cols) {
  const int half = k / 2;
  const int nr = r1 - r0;
  const std::size_t band = std::size_t(nr) * w;
  for (int ci = 0; ci < c_in; ++ci) {
    const T* xp = x + std::size_t(ci) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      const int oy_off = (ky - half) * d;
      for (int kx = 0; kx < k; ++kx) {
        const int ox_off = (kx - half) * d;
        T* row = cols + (std::size_t(ci * k + ky) * k + kx) * band;
        const int x_lo = std::max(0, -ox_off);
        const int x_hi = std::min(w, w - ox_off);
        for (int oy = r0; oy < r1; ++oy) {
          T* out = row + std::size_t(oy - r0) * w;
          const int iy = oy + oy_off;
          if (iy < 0 || iy >= h || x_lo >= x_hi) {
            std::fill(out, out + w, T(0));
            continue;
          }
          const T* in = xp + std::size_t(iy) * w;
          std::fill(out, out + x_lo, T(0));
          std::copy(in + x_lo + ox_off, in + x_hi + ox_off, out + x_lo);
          std::fill(out + x_hi, out + w, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im_band_add(const T* cols, int c_in, int h, int w, int k, int d, int r0, int r1, T* dx) {
  const int half = k / 2;
  const int nr = r1 - r0;
  const std::size_t band = std::size_t(nr) * w;
  for (int ci = 0; ci < c_in; ++ci) {
    T* xp = dx + std::size_t(ci) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      const int oy_off = (ky - half) * d;
      for (int kx = 0; kx < k; ++kx) {
        const int ox_off = (kx - half) * d;
        const T* row = cols + (std::size_t(ci * k + ky) * k + kx) * band;
        const int x_lo = std::max(0, -ox_off);
        const int x_hi = std::min(w, w - ox_off);
        for (int oy = r0; oy < r1; ++oy) {
          const int iy = oy + oy_off;
          if (iy < 0 || iy >= h) continue;
          const T* src = row + std::size_t(oy - r0) * w;
          T* dst = xp + std::size_t(iy) * w + ox_off;
          for (int ox = x_lo; ox < x_hi; ++ox) dst[ox] += src[ox];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d_same(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int dilation) {
  const Shape xs = x.shape();
  const int k = weight.h();
  check_kernel(k, dilation);
  check_conv_shapes(xs, weight, bias);
  const int c_out = weight.n();
  const int h = xs.h, w = xs.w;
  const std::size_t plane = xs.plane();
  const std::size_t K = std::size_t(xs.c) * k * k;

  Tensor<T> y(Shape{xs.n, c_out, h, w});
  const CMap<T> wm(weight.data(), c_out, Eigen::Index(K));
  const auto bvec = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(bias.data(), c_out);

  if (k == 1) {
    for (int b = 0; b < xs.n; ++b) {
      const CMap<T> xm(x.plane(b, 0), xs.c, Eigen::Index(plane));
      MapM<T> ym(y.plane(b, 0), c_out, Eigen::Index(plane));
      ym.noalias() = wm * xm;
      ym.colwise() += bvec;
    }
    return y;
  }

  const int rows_per_band = band_rows(K, h, w);
  AlignedVector<T> cols(K * std::size_t(rows_per_band) * w);
  for (int b = 0; b < xs.n; ++b) {
    for (int r0 = 0; r0 < h; r0 += rows_per_band) {
      const int r1 = std::min(h, r0 + rows_per_band);
      const Eigen::Index band = Eigen::Index(r1 - r0) * w;
      im2col_band(x.plane(b, 0), xs.c, h, w, k, dilation, r0, r1, cols.data());
      const CMap<T> cm(cols.data(), Eigen::Index(K), band);
      MapS<T> ym(y.plane(b, 0) + std::size_t(r0) * w, c_out, band, Eigen::OuterStride<>(Eigen::Index(plane)));
      ym.noalias() = wm * cm;
      ym.colwise() += bvec;
    }
  }
  return y;
}

template <typename T>
void conv2d_same_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dy,
                          int dilation, Tensor<T>* dx, Tensor<T>& dweight, Tensor<T>& dbias) {
  const Shape xs = x.shape();
  const int k = weight.h();
  const int c_out = weight.n();
  const int h = xs.h, w = xs.w;
  const std::size_t plane = xs.plane();
  const std::size_t K = std::size_t(xs.c) * k * k;
  if (dy.shape() != Shape{xs.n, c_out, h, w}) throw ShapeError("conv backward: gradient shape mismatch");
  if (dweight.shape() != weight.shape()) dweight = Tensor<T>(weight.shape());
  if (dbias.shape() != Shape{c_out, 1, 1, 1}) dbias = Tensor<T>(Shape{c_out, 1, 1, 1});
  if (dx) *dx = Tensor<T>(xs);

  const CMap<T> wm(weight.data(), c_out, Eigen::Index(K));
  MapM<T> dwm(dweight.data(), c_out, Eigen::Index(K));
  auto dbvec = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(dbias.data(), c_out);

  if (k == 1) {
    for (int b = 0; b < xs.n; ++b) {
      const CMap<T> xm(x.plane(b, 0), xs.c, Eigen::Index(plane));
      const CMap<T> dym(dy.plane(b, 0), c_out, Eigen::Index(plane));
      dwm.noalias() += dym * xm.transpose();
      dbvec += dym.rowwise().sum();
      if (dx) {
        MapM<T> dxm(dx->plane(b, 0), xs.c, Eigen::Index(plane));
        dxm.noalias() = wm.transpose() * dym;
      }
    }
    return;
  }

  const int rows_per_band = band_rows(K, h, w);
  AlignedVector<T> cols(K * std::size_t(rows_per_band) * w);
  Mat<T> dcols;
  for (int b = 0; b < xs.n; ++b) {
    for (int r0 = 0; r0 < h; r0 += rows_per_band) {
      const int r1 = std::min(h, r0 + rows_per_band);
      const Eigen::Index band = Eigen::Index(r1 - r0) * w;
      im2col_band(x.plane(b, 0), xs.c, h, w, k, dilation, r0, r1, cols.data());
      const CMap<T> cm(cols.data(), Eigen::Index(K), band);
      const CMapS<T> dym(dy.plane(b, 0) + std::size_t(r0) * w, c_out, band,
                         Eigen::OuterStride<>(Eigen::Index(plane)));
      dwm.noalias() += dym * cm.transpose();
      dbvec += dym.rowwise().sum();
      if (dx) {
        dcols.noalias() = wm.transpose() * dym;
        col2im_band_add(dcols.data(), xs.c, h, w, k, dilation, r0, r1, dx->plane(b, 0));
      }
    }
  }
}

template <typename T>
Tensor<T> conv_transpose2d_x2(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (ws.h != 3 || ws.w != 3) throw ShapeError("transpose conv kernel must be 3x3, got " + ws.str());
  if (ws.n != xs.c)
    throw ShapeError("transpose conv expects " + std::to_string(ws.n) + " input channels, got " +
                     std::to_string(xs.c));
  const int c_out = ws.c;
  if (bias.shape() != Shape{c_out, 1, 1, 1}) throw ShapeError("transpose conv bias shape mismatch");
  const int h = xs.h, w = xs.w, oh = 2 * h, ow = 2 * w;
  const Eigen::Index P = Eigen::Index(xs.plane());
  const Eigen::Index KC = Eigen::Index(c_out) * 9;

  Tensor<T> y(Shape{xs.n, c_out, oh, ow});
  const CMap<T> wm(weight.data(), xs.c, KC);
  Mat<T> cols;
  for (int b = 0; b < xs.n; ++b) {
    const CMap<T> xm(x.plane(b, 0), xs.c, P);
    cols.noalias() = wm.transpose() * xm;
    for (int co = 0; co < c_out; ++co) {
      T* yp = y.plane(b, co);
      std::fill(yp, yp + std::size_t(oh) * ow, bias[std::size_t(co)]);
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          const T* src = cols.data() + (Eigen::Index(co) * 9 + ky * 3 + kx) * P;
          for (int iy = 0; iy < h; ++iy) {
            const int oy = 2 * iy - 1 + ky;
            if (oy < 0 || oy >= oh) continue;
            for (int ix = 0; ix < w; ++ix) {
              const int ox = 2 * ix - 1 + kx;
              if (ox < 0 || ox >= ow) continue;
              yp[std::size_t(oy) * ow + ox] += src[std::size_t(iy) * w + ix];
            }
          }
        }
    }
  }
  return y;
}

template <typename T>
void conv_transpose2d_x2_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dy,
                                  Tensor<T>* dx, Tensor<T>& dweight, Tensor<T>& dbias) {
  const Shape xs = x.shape();
  const int c_out = weight.c();
  const int h = xs.h, w = xs.w, oh = 2 * h, ow = 2 * w;
  if (dy.shape() != Shape{xs.n, c_out, oh, ow})
    throw ShapeError("transpose conv backward: gradient shape mismatch");
  if (dweight.shape() != weight.shape()) dweight = Tensor<T>(weight.shape());
  if (dbias.shape() != Shape{c_out, 1, 1, 1}) dbias = Tensor<T>(Shape{c_out, 1, 1, 1});
  if (dx) *dx = Tensor<T>(xs);
  const Eigen::Index P = Eigen::Index(xs.plane());
  const Eigen::Index KC = Eigen::Index(c_out) * 9;

  const CMap<T> wm(weight.data(), xs.c, KC);
  MapM<T> dwm(dweight.data(), xs.c, KC);
  Mat<T> dcols(KC, P);
  for (int b = 0; b < xs.n; ++b) {
    for (int co = 0; co < c_out; ++co) {
      const T* dyp = dy.plane(b, co);
      T sum = T(0);
      for (std::size_t i = 0; i < std::size_t(oh) * ow; ++i) sum += dyp[i];
      dbias[std::size_t(co)] += sum;
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          T* dst = dcols.data() + (Eigen::Index(co) * 9 + ky * 3 + kx) * P;
          for (int iy = 0; iy < h; ++iy) {
            const int oy = 2 * iy - 1 + ky;
            for (int ix = 0; ix < w; ++ix) {
              const int ox = 2 * ix - 1 + kx;
              dst[std::size_t(iy) * w + ix] =
                  (oy < 0 || oy >= oh || ox < 0 || ox >= ow) ? T(0) : dyp[std::size_t(oy) * ow + ox];
            }
          }
        }
    }
    const CMap<T> xm(x.plane(b, 0), xs.c, P);
    dwm.noalias() += xm * dcols.transpose();
    if (dx) {
      MapM<T> dxm(dx->plane(b, 0), xs.c, P);
      dxm.noalias() = wm * dcols;
    }
  }
}

template <typename T>
Tensor<T> maxpool2x2(const Tensor<T>& x, std::vector<std::uint32_t>* argmax) {
  const Shape xs = x.shape();
  if (xs.h % 2 != 0 || xs.w % 2 != 0)
    throw ShapeError("maxpool2x2 needs even spatial dims, got " + xs.str());
  const int oh = xs.h / 2, ow = xs.w / 2;
  Tensor<T> y(Shape{xs.n, xs.c, oh, ow});
  if (argmax) argmax->resize(y.size());
  std::size_t o = 0;
  for (int b = 0; b < xs.n; ++b)
    for (int ch = 0; ch < xs.c; ++ch) {
      const T* in = x.plane(b, ch);
      const std::size_t base = std::size_t(in - x.data());
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox, ++o) {
          const std::size_t i0 = std::size_t(2 * oy) * xs.w + 2 * ox;
          const std::size_t cand[4] = {i0, i0 + 1, i0 + std::size_t(xs.w), i0 + std::size_t(xs.w) + 1};
          std::size_t best = cand[0];
          for (int q = 1; q < 4; ++q)
            if (in[cand[q]] > in[best]) best = cand[q];
          y[o] = in[best];
          if (argmax) (*argmax)[o] = std::uint32_t(base + best);
        }
    }
  return y;
}

template <typename T>
Tensor<T> maxpool2x2_backward(const Tensor<T>& dy, const std::vector<std::uint32_t>& argmax,
                              const Shape& input_shape) {
  if (argmax.size() != dy.size()) throw ShapeError("maxpool backward: argmax size mismatch");
  Tensor<T> dx(input_shape);
  for (std::size_t o = 0; o < dy.size(); ++o) dx[argmax[o]] += dy[o];
  return dx;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (T& v : y.vec()) v = v > T(0) ? v : T(0);
  return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  if (y.shape() != dy.shape()) throw ShapeError("relu backward: shape mismatch");
  Tensor<T> dx(dy.shape());
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = y[i] > T(0) ? dy[i] : T(0);
  return dx;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape as = a.shape(), bs = b.shape();
  if (as.n != bs.n || as.h != bs.h || as.w != bs.w)
    throw ShapeError("concat: incompatible shapes " + as.str() + " and " + bs.str());
  Tensor<T> y(Shape{as.n, as.c + bs.c, as.h, as.w});
  const std::size_t na = std::size_t(as.c) * as.plane();
  const std::size_t nb = std::size_t(bs.c) * bs.plane();
  for (int n = 0; n < as.n; ++n) {
    std::copy_n(a.plane(n, 0), na, y.plane(n, 0));
    std::copy_n(b.plane(n, 0), nb, y.plane(n, as.c));
  }
  return y;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& x, int first_channels) {
  const Shape xs = x.shape();
  if (first_channels < 1 || first_channels >= xs.c)
    throw ShapeError("split_channels: cannot split " + std::to_string(xs.c) + " channels at " +
                     std::to_string(first_channels));
  Tensor<T> a(Shape{xs.n, first_channels, xs.h, xs.w});
  Tensor<T> b(Shape{xs.n, xs.c - first_channels, xs.h, xs.w});
  const std::size_t na = a.size() / std::size_t(xs.n);
  const std::size_t nb = b.size() / std::size_t(xs.n);
  for (int n = 0; n < xs.n; ++n) {
    std::copy_n(x.plane(n, 0), na, a.plane(n, 0));
    std::copy_n(x.plane(n, first_channels), nb, b.plane(n, 0));
  }
  return {std::move(a), std::move(b)};
}

template <typename T>
LossValue<T> euclidean_loss(const Tensor<T>& pred, const Tensor<T>& gt) {
  if (pred.shape() != gt.shape())
    throw ShapeError("euclidean_loss: prediction " + pred.shape().str() + " vs target " + gt.shape().str());
  if (pred.empty()) throw ShapeError("euclidean_loss: empty tensors");
  const double inv_n = 1.0 / double(pred.n());
  LossValue<T> out;
  out.grad = Tensor<T>(pred.shape());
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = double(pred[i]) - double(gt[i]);
    sum += d * d;
    out.grad[i] = T(d * inv_n);
  }
  out.value = 0.5 * inv_n * sum;
  return out;
}

#define WHC_INSTANTIATE_OPS(T)                                                                      \
  template Tensor<T> conv2d_same(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int);        \
  template void conv2d_same_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int,     \
                                     Tensor<T>*, Tensor<T>&, Tensor<T>&);                          \
  template Tensor<T> conv_transpose2d_x2(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);     \
  template void conv_transpose2d_x2_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                             Tensor<T>*, Tensor<T>&, Tensor<T>&);                  \
  template Tensor<T> maxpool2x2(const Tensor<T>&, std::vector<std::uint32_t>*);                     \
  template Tensor<T> maxpool2x2_backward(const Tensor<T>&, const std::vector<std::uint32_t>&,       \
                                         const Shape&);                                             \
  template Tensor<T> relu(const Tensor<T>&);                                                        \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                           \
  template std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>&, int);                   \
  template LossValue<T> euclidean_loss(const Tensor<T>&, const Tensor<T>&);

WHC_INSTANTIATE_OPS(float)
WHC_INSTANTIATE_OPS(double)

}  // namespace whc::nn
