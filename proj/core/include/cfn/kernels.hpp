#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "cfn/tensor.hpp"

// Deterministic CPU kernels. Every reduction runs sequentially in a fixed
// order, so identical inputs give bitwise-identical outputs:
//
//   conv2d            out = bias, then += over (cin, ky, kx) in that order
//   conv2d grads      kernel/bias sums run over (n, oy, ox) row-major
//   reduce_mean       row-major sum over (i, j), then one multiply by 1/(H*W)
//
namespace cfn {

enum class ElementwiseOp { add, mul, scale, relu };

// Binary form: shapes must match exactly. `relu` ignores `b`.
template <typename T>
Tensor<T> elementwise(ElementwiseOp op, const Tensor<T>& a, const Tensor<T>& b);

// Scalar form: add/mul/scale broadcast `b`; `relu` ignores it.
template <typename T>
Tensor<T> elementwise(ElementwiseOp op, const Tensor<T>& a, T b);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(ElementwiseOp::add, a, b); }
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(ElementwiseOp::mul, a, b); }
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) { return elementwise(ElementwiseOp::scale, a, factor); }
template <typename T>
Tensor<T> relu(const Tensor<T>& a) { return elementwise(ElementwiseOp::relu, a, T{0}); }

// Cross-correlation with per-channel bias.
// input [N,Cin,H,W], kernel [Cout,Cin,kh,kw] with kh,kw in {1,3}, bias [Cout].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 std::size_t stride = 1, std::size_t pad = 0);

template <typename T>
Tensor<T> conv2d_backward_input(const Tensor<T>& upstream, const Tensor<T>& kernel,
                                const Shape& input_shape, std::size_t stride, std::size_t pad);

template <typename T>
Tensor<T> conv2d_backward_kernel(const Tensor<T>& upstream, const Tensor<T>& input,
                                 const Shape& kernel_shape, std::size_t stride, std::size_t pad);

template <typename T>
Tensor<T> conv2d_backward_bias(const Tensor<T>& upstream);

template <typename T>
struct PoolResult {
  Tensor<T> output;
  // Flat input offset of each output cell's winner.
  std::vector<std::uint32_t> argmax;
};

// Max pooling. Ties resolve to the first cell in row-major window order.
template <typename T>
PoolResult<T> maxpool2d(const Tensor<T>& input, std::size_t window = 2, std::size_t stride = 2);

template <typename T>
Tensor<T> maxpool2d_backward(const Tensor<T>& upstream, const std::vector<std::uint32_t>& argmax,
                             const Shape& input_shape);

// [N,K,H,W] -> [N,K], mean over the spatial extent.
template <typename T>
Tensor<T> reduce_mean_spatial(const Tensor<T>& input);

}  // namespace cfn
