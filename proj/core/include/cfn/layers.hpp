#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "cfn/tensor.hpp"

// Differentiable layer vocabulary. Each `*_fb` call runs the forward pass and
// returns a backward closure that owns the activations it needs.
namespace cfn {

template <typename T>
struct Gradients {
  std::vector<Tensor<T>> inputs;  // one per forward input, same shapes
  std::vector<Tensor<T>> params;  // one per parameter, same shapes and order as passed in
};

template <typename T>
using BackwardFn = std::function<Gradients<T>(const Tensor<T>& upstream)>;

template <typename T>
struct LayerOutput {
  Tensor<T> output;
  BackwardFn<T> backward;
};

// input [N,K], weight [C,K], bias [C] -> [N,C]. params grads: {weight, bias}.
template <typename T>
LayerOutput<T> fc_fb(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias);

// [N,K,H,W] -> [N,K]; backward spreads grad/(H*W) to every cell.
template <typename T>
LayerOutput<T> gap_fb(const Tensor<T>& input);

// Subgradient at exactly 0 is 0.
template <typename T>
LayerOutput<T> relu_fb(const Tensor<T>& input);

// params grads: {kernel, bias}.
template <typename T>
LayerOutput<T> conv2d_fb(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                         std::size_t stride, std::size_t pad);

template <typename T>
LayerOutput<T> maxpool2d_fb(const Tensor<T>& input, std::size_t window = 2, std::size_t stride = 2);

template <typename T>
struct LossValue {
  T loss{};                  // mean cross-entropy over the batch
  Tensor<T> probabilities;   // [N,C], softmax of the logits
  std::vector<T> per_sample; // cross-entropy of each row
};

template <typename T>
struct LossOutput {
  LossValue<T> value;
  // d(scale * loss)/d(logits) = scale * (softmax - onehot) / N
  std::function<Tensor<T>(T scale)> backward;
};

// Mean softmax cross-entropy. Throws ShapeError for labels outside [0, C).
template <typename T>
LossOutput<T> softmax_ce_fb(const Tensor<T>& logits, std::span<const int> labels);

}  // namespace cfn
