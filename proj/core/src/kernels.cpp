#include "cfn/kernels.hpp"

#include <algorithm>
#include <string>

namespace cfn {
namespace {

template <typename T>
void require_nonempty(const Tensor<T>& t, const char* what) {
  if (t.empty()) throw ShapeError(std::string(what) + ": empty tensor");
}

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* what) {
  require_nonempty(t, what);
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     to_string(t.shape()));
  }
}

struct ConvGeometry {
  std::ptrdiff_t n, cin, h, w, cout, kh, kw, oh, ow, stride, pad;
};

std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad,
                            const char* axis) {
  const std::size_t padded = in + 2 * pad;
  if (stride == 0) throw ShapeError("conv2d: stride must be >= 1");
  if (padded < k || (padded - k) % stride != 0) {
    throw ShapeError(std::string("conv2d: non-integral output ") + axis + " extent (in=" +
                     std::to_string(in) + ", k=" + std::to_string(k) + ", stride=" +
                     std::to_string(stride) + ", pad=" + std::to_string(pad) + ")");
  }
  return (padded - k) / stride + 1;
}

ConvGeometry conv_geometry(const Shape& input, const Shape& kernel, std::size_t stride,
                           std::size_t pad) {
  if (input[1] != kernel[1]) {
    throw ShapeError("conv2d: channel mismatch, input has " + std::to_string(input[1]) +
                     " channels but kernel expects " + std::to_string(kernel[1]));
  }
  const auto kh = kernel[2];
  const auto kw = kernel[3];
  if ((kh != 1 && kh != 3) || (kw != 1 && kw != 3)) {
    throw ShapeError("conv2d: kernel extents must be 1 or 3, got " + to_string(kernel));
  }
  const auto oh = conv_out_extent(input[2], kh, stride, pad, "height");
  const auto ow = conv_out_extent(input[3], kw, stride, pad, "width");
  auto s = [](std::size_t v) { return static_cast<std::ptrdiff_t>(v); };
  return {s(input[0]), s(input[1]), s(input[2]), s(input[3]), s(kernel[0]), s(kh), s(kw),
          s(oh),       s(ow),       s(stride),   s(pad)};
}

// Output columns ox whose input column ox*stride + k - pad lies in [0, extent).
std::pair<std::ptrdiff_t, std::ptrdiff_t> valid_range(std::ptrdiff_t k, std::ptrdiff_t pad,
                                                      std::ptrdiff_t stride, std::ptrdiff_t extent,
                                                      std::ptrdiff_t out_extent) {
  std::ptrdiff_t lo = 0;
  while (lo < out_extent && lo * stride + k - pad < 0) ++lo;
  std::ptrdiff_t hi = out_extent;
  while (hi > lo && (hi - 1) * stride + k - pad >= extent) --hi;
  return {lo, hi};
}

}  // namespace

template <typename T>
Tensor<T> elementwise(ElementwiseOp op, const Tensor<T>& a, const Tensor<T>& b) {
  require_nonempty(a, "elementwise");
  if (op == ElementwiseOp::relu) return elementwise(op, a, T{0});
  if (a.shape() != b.shape()) {
    throw ShapeError("elementwise: shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
  Tensor<T> out(a.shape());
  const auto x = a.data();
  const auto y = b.data();
  auto z = out.data();
  for (std::size_t i = 0; i < z.size(); ++i) {
    switch (op) {
      case ElementwiseOp::add: z[i] = x[i] + y[i]; break;
      case ElementwiseOp::mul:
      case ElementwiseOp::scale: z[i] = x[i] * y[i]; break;
      case ElementwiseOp::relu: break;
    }
  }
  return out;
}

template <typename T>
Tensor<T> elementwise(ElementwiseOp op, const Tensor<T>& a, T b) {
  require_nonempty(a, "elementwise");
  Tensor<T> out(a.shape());
  const auto x = a.data();
  auto z = out.data();
  for (std::size_t i = 0; i < z.size(); ++i) {
    switch (op) {
      case ElementwiseOp::add: z[i] = x[i] + b; break;
      case ElementwiseOp::mul:
      case ElementwiseOp::scale: z[i] = x[i] * b; break;
      case ElementwiseOp::relu: z[i] = x[i] > T{0} ? x[i] : T{0}; break;
    }
  }
  return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 std::size_t stride, std::size_t pad) {
  require_rank(input, 4, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  require_rank(bias, 1, "conv2d bias");
  const auto g = conv_geometry(input.shape(), kernel.shape(), stride, pad);
  if (static_cast<std::ptrdiff_t>(bias.dim(0)) != g.cout) {
    throw ShapeError("conv2d: bias length " + std::to_string(bias.dim(0)) +
                     " does not match output channels " + std::to_string(g.cout));
  }

  Tensor<T> out({input.dim(0), kernel.dim(0), static_cast<std::size_t>(g.oh),
                 static_cast<std::size_t>(g.ow)});
  const T* x = input.data().data();
  const T* k = kernel.data().data();
  const T* b = bias.data().data();
  T* y = out.data().data();

  for (std::ptrdiff_t n = 0; n < g.n; ++n) {
    for (std::ptrdiff_t co = 0; co < g.cout; ++co) {
      T* plane = y + (n * g.cout + co) * g.oh * g.ow;
      std::fill(plane, plane + g.oh * g.ow, b[co]);
      for (std::ptrdiff_t ci = 0; ci < g.cin; ++ci) {
        const T* in_plane = x + (n * g.cin + ci) * g.h * g.w;
        for (std::ptrdiff_t ky = 0; ky < g.kh; ++ky) {
          const auto [oy_lo, oy_hi] = valid_range(ky, g.pad, g.stride, g.h, g.oh);
          for (std::ptrdiff_t kx = 0; kx < g.kw; ++kx) {
            const auto [ox_lo, ox_hi] = valid_range(kx, g.pad, g.stride, g.w, g.ow);
            const T wv = k[((co * g.cin + ci) * g.kh + ky) * g.kw + kx];
            for (std::ptrdiff_t oy = oy_lo; oy < oy_hi; ++oy) {
              const T* in_row = in_plane + (oy * g.stride + ky - g.pad) * g.w;
              const std::ptrdiff_t col0 = kx - g.pad;
              T* out_row = plane + oy * g.ow;
              if (g.stride == 1) {
                for (std::ptrdiff_t ox = ox_lo; ox < ox_hi; ++ox) out_row[ox] += wv * in_row[ox + col0];
              } else {
                for (std::ptrdiff_t ox = ox_lo; ox < ox_hi; ++ox) {
                  out_row[ox] += wv * in_row[ox * g.stride + col0];
                }
              }
            }
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> conv2d_backward_input(const Tensor<T>& upstream, const Tensor<T>& kernel,
                                const Shape& input_shape, std::size_t stride, std::size_t pad) {
  const auto g = conv_geometry(input_shape, kernel.shape(), stride, pad);
  Tensor<T> grad(input_shape);
  const T* dy = upstream.data().data();
  const T* k = kernel.data().data();
  T* dx = grad.data().data();
  for (std::ptrdiff_t n = 0; n < g.n; ++n) {
    for (std::ptrdiff_t co = 0; co < g.cout; ++co) {
      const T* dplane = dy + (n * g.cout + co) * g.oh * g.ow;
      for (std::ptrdiff_t ci = 0; ci < g.cin; ++ci) {
        T* in_plane = dx + (n * g.cin + ci) * g.h * g.w;
        for (std::ptrdiff_t ky = 0; ky < g.kh; ++ky) {
          const auto [oy_lo, oy_hi] = valid_range(ky, g.pad, g.stride, g.h, g.oh);
          for (std::ptrdiff_t kx = 0; kx < g.kw; ++kx) {
            const auto [ox_lo, ox_hi] = valid_range(kx, g.pad, g.stride, g.w, g.ow);
            const T wv = k[((co * g.cin + ci) * g.kh + ky) * g.kw + kx];
            for (std::ptrdiff_t oy = oy_lo; oy < oy_hi; ++oy) {
              T* in_row = in_plane + (oy * g.stride + ky - g.pad) * g.w;
              const std::ptrdiff_t col0 = kx - g.pad;
              const T* d_row = dplane + oy * g.ow;
              for (std::ptrdiff_t ox = ox_lo; ox < ox_hi; ++ox) {
                in_row[ox * g.stride + col0] += wv * d_row[ox];
              }
            }
          }
        }
      }
    }
  }
  return grad;
}

template <typename T>
Tensor<T> conv2d_backward_kernel(const Tensor<T>& upstream, const Tensor<T>& input,
                                 const Shape& kernel_shape, std::size_t stride, std::size_t pad) {
  const auto g = conv_geometry(input.shape(), kernel_shape, stride, pad);
  Tensor<T> grad(kernel_shape);
  const T* dy = upstream.data().data();
  const T* x = input.data().data();
  T* dk = grad.data().data();
  for (std::ptrdiff_t co = 0; co < g.cout; ++co) {
    for (std::ptrdiff_t ci = 0; ci < g.cin; ++ci) {
      for (std::ptrdiff_t ky = 0; ky < g.kh; ++ky) {
        const auto [oy_lo, oy_hi] = valid_range(ky, g.pad, g.stride, g.h, g.oh);
        for (std::ptrdiff_t kx = 0; kx < g.kw; ++kx) {
          const auto [ox_lo, ox_hi] = valid_range(kx, g.pad, g.stride, g.w, g.ow);
          T acc{0};
          for (std::ptrdiff_t n = 0; n < g.n; ++n) {
            const T* dplane = dy + (n * g.cout + co) * g.oh * g.ow;
            const T* in_plane = x + (n * g.cin + ci) * g.h * g.w;
            for (std::ptrdiff_t oy = oy_lo; oy < oy_hi; ++oy) {
              const T* in_row = in_plane + (oy * g.stride + ky - g.pad) * g.w;
              const std::ptrdiff_t col0 = kx - g.pad;
              const T* d_row = dplane + oy * g.ow;
              for (std::ptrdiff_t ox = ox_lo; ox < ox_hi; ++ox) {
                acc += d_row[ox] * in_row[ox * g.stride + col0];
              }
            }
          }
          dk[((co * g.cin + ci) * g.kh + ky) * g.kw + kx] = acc;
        }
      }
    }
  }
  return grad;
}

template <typename T>
Tensor<T> conv2d_backward_bias(const Tensor<T>& upstream) {
  require_rank(upstream, 4, "conv2d upstream");
  const auto n = upstream.dim(0), c = upstream.dim(1), hw = upstream.dim(2) * upstream.dim(3);
  Tensor<T> grad({c});
  const T* dy = upstream.data().data();
  for (std::size_t co = 0; co < c; ++co) {
    T acc{0};
    for (std::size_t i = 0; i < n; ++i) {
      const T* plane = dy + (i * c + co) * hw;
      for (std::size_t j = 0; j < hw; ++j) acc += plane[j];
    }
    grad[co] = acc;
  }
  return grad;
}

template <typename T>
PoolResult<T> maxpool2d(const Tensor<T>& input, std::size_t window, std::size_t stride) {
  require_rank(input, 4, "maxpool2d input");
  const auto n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (window == 0 || stride == 0) throw ShapeError("maxpool2d: window and stride must be >= 1");
  if (window > h || window > w) {
    throw ShapeError("maxpool2d: window " + std::to_string(window) + " larger than input " +
                     to_string(input.shape()));
  }
  if ((h - window) % stride != 0 || (w - window) % stride != 0) {
    throw ShapeError("maxpool2d: extent not divisible by stride after windowing, input " +
                     to_string(input.shape()));
  }
  const auto oh = (h - window) / stride + 1, ow = (w - window) / stride + 1;
  PoolResult<T> result{Tensor<T>({n, c, oh, ow}), {}};
  result.argmax.resize(result.output.size());
  const T* x = input.data().data();
  T* y = result.output.data().data();
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
        std::size_t best = base + oy * stride * w + ox * stride;
        for (std::size_t dy = 0; dy < window; ++dy) {
          for (std::size_t dx = 0; dx < window; ++dx) {
            const std::size_t idx = base + (oy * stride + dy) * w + ox * stride + dx;
            if (x[idx] > x[best]) best = idx;
          }
        }
        y[o] = x[best];
        result.argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return result;
}

template <typename T>
Tensor<T> maxpool2d_backward(const Tensor<T>& upstream, const std::vector<std::uint32_t>& argmax,
                             const Shape& input_shape) {
  if (upstream.size() != argmax.size()) {
    throw ShapeError("maxpool2d backward: upstream " + to_string(upstream.shape()) +
                     " does not match saved index map");
  }
  Tensor<T> grad(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) grad[argmax[i]] += upstream[i];
  return grad;
}

template <typename T>
Tensor<T> reduce_mean_spatial(const Tensor<T>& input) {
  require_rank(input, 4, "reduce_mean_spatial input");
  const auto n = input.dim(0), k = input.dim(1), hw = input.dim(2) * input.dim(3);
  Tensor<T> out({n, k});
  const T inv = T{1} / static_cast<T>(hw);
  const T* x = input.data().data();
  for (std::size_t plane = 0; plane < n * k; ++plane) {
    T acc{0};
    const T* p = x + plane * hw;
    for (std::size_t j = 0; j < hw; ++j) acc += p[j];
    out[plane] = acc * inv;
  }
  return out;
}

#define CFN_INSTANTIATE_KERNELS(T)                                                              \
  template Tensor<T> elementwise(ElementwiseOp, const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> elementwise(ElementwiseOp, const Tensor<T>&, T);                           \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t,  \
                            std::size_t);                                                       \
  template Tensor<T> conv2d_backward_input(const Tensor<T>&, const Tensor<T>&, const Shape&,    \
                                           std::size_t, std::size_t);                           \
  template Tensor<T> conv2d_backward_kernel(const Tensor<T>&, const Tensor<T>&, const Shape&,   \
                                            std::size_t, std::size_t);                          \
  template Tensor<T> conv2d_backward_bias(const Tensor<T>&);                                    \
  template PoolResult<T> maxpool2d(const Tensor<T>&, std::size_t, std::size_t);                 \
  template Tensor<T> maxpool2d_backward(const Tensor<T>&, const std::vector<std::uint32_t>&,    \
                                        const Shape&);                                          \
  template Tensor<T> reduce_mean_spatial(const Tensor<T>&);

CFN_INSTANTIATE_KERNELS(float)
CFN_INSTANTIATE_KERNELS(double)

#undef CFN_INSTANTIATE_KERNELS

}  // namespace cfn
