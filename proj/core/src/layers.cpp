#include "cfn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "cfn/kernels.hpp"

namespace cfn {
namespace {

template <typename T>
void require_shape(const Tensor<T>& t, const Shape& expected, const char* what) {
  if (t.shape() != expected) {
    throw ShapeError(std::string(what) + ": expected shape " + to_string(expected) + ", got " +
                     to_string(t.shape()));
  }
}

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* what) {
  if (t.empty() || t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     to_string(t.shape()));
  }
}

}  // namespace

template <typename T>
LayerOutput<T> fc_fb(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  require_rank(input, 2, "fc input");
  require_rank(weight, 2, "fc weight");
  require_rank(bias, 1, "fc bias");
  const auto n = input.dim(0), k = input.dim(1), c = weight.dim(0);
  if (weight.dim(1) != k || bias.dim(0) != c) {
    throw ShapeError("fc: shape mismatch, input " + to_string(input.shape()) + ", weight " +
                     to_string(weight.shape()) + ", bias " + to_string(bias.shape()));
  }
  Tensor<T> out({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    const T* x = &input[i * k];
    for (std::size_t j = 0; j < c; ++j) {
      const T* w = &weight[j * k];
      T acc = bias[j];
      for (std::size_t q = 0; q < k; ++q) acc += x[q] * w[q];
      out[i * c + j] = acc;
    }
  }

  auto saved_input = std::make_shared<const Tensor<T>>(input);
  auto saved_weight = std::make_shared<const Tensor<T>>(weight);
  auto backward = [saved_input, saved_weight, n, k, c](const Tensor<T>& upstream) {
    require_shape(upstream, Shape{n, c}, "fc upstream");
    const auto& x = *saved_input;
    const auto& w = *saved_weight;
    Gradients<T> g;
    Tensor<T> dx({n, k});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        const T d = upstream[i * c + j];
        const T* wr = &w[j * k];
        T* dr = &dx[i * k];
        for (std::size_t q = 0; q < k; ++q) dr[q] += d * wr[q];
      }
    }
    Tensor<T> dw({c, k});
    Tensor<T> db({c});
    for (std::size_t j = 0; j < c; ++j) {
      T* dwr = &dw[j * k];
      T bacc{0};
      for (std::size_t i = 0; i < n; ++i) {
        const T d = upstream[i * c + j];
        const T* xr = &x[i * k];
        for (std::size_t q = 0; q < k; ++q) dwr[q] += d * xr[q];
        bacc += d;
      }
      db[j] = bacc;
    }
    g.inputs.push_back(std::move(dx));
    g.params.push_back(std::move(dw));
    g.params.push_back(std::move(db));
    return g;
  };
  return {std::move(out), std::move(backward)};
}

template <typename T>
LayerOutput<T> gap_fb(const Tensor<T>& input) {
  auto out = reduce_mean_spatial(input);
  const Shape in_shape = input.shape();
  auto backward = [in_shape](const Tensor<T>& upstream) {
    require_shape(upstream, Shape{in_shape[0], in_shape[1]}, "gap upstream");
    const std::size_t hw = in_shape[2] * in_shape[3];
    const T inv = T{1} / static_cast<T>(hw);
    Tensor<T> dx(in_shape);
    for (std::size_t plane = 0; plane < upstream.size(); ++plane) {
      const T v = upstream[plane] * inv;
      std::fill(&dx[plane * hw], &dx[plane * hw] + hw, v);
    }
    return Gradients<T>{{std::move(dx)}, {}};
  };
  return {std::move(out), std::move(backward)};
}

template <typename T>
LayerOutput<T> relu_fb(const Tensor<T>& input) {
  auto out = relu(input);
  auto saved = std::make_shared<const Tensor<T>>(input);
  auto backward = [saved](const Tensor<T>& upstream) {
    require_shape(upstream, saved->shape(), "relu upstream");
    Tensor<T> dx(saved->shape());
    const auto x = saved->data();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = x[i] > T{0} ? upstream[i] : T{0};
    return Gradients<T>{{std::move(dx)}, {}};
  };
  return {std::move(out), std::move(backward)};
}

template <typename T>
LayerOutput<T> conv2d_fb(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                         std::size_t stride, std::size_t pad) {
  auto out = conv2d(input, kernel, bias, stride, pad);
  auto saved_input = std::make_shared<const Tensor<T>>(input);
  auto saved_kernel = std::make_shared<const Tensor<T>>(kernel);
  const Shape out_shape = out.shape();
  auto backward = [saved_input, saved_kernel, out_shape, stride, pad](const Tensor<T>& upstream) {
    require_shape(upstream, out_shape, "conv2d upstream");
    Gradients<T> g;
    g.inputs.push_back(
        conv2d_backward_input(upstream, *saved_kernel, saved_input->shape(), stride, pad));
    g.params.push_back(
        conv2d_backward_kernel(upstream, *saved_input, saved_kernel->shape(), stride, pad));
    g.params.push_back(conv2d_backward_bias(upstream));
    return g;
  };
  return {std::move(out), std::move(backward)};
}

template <typename T>
LayerOutput<T> maxpool2d_fb(const Tensor<T>& input, std::size_t window, std::size_t stride) {
  auto pooled = maxpool2d(input, window, stride);
  auto argmax = std::make_shared<const std::vector<std::uint32_t>>(std::move(pooled.argmax));
  const Shape in_shape = input.shape();
  const Shape out_shape = pooled.output.shape();
  auto backward = [argmax, in_shape, out_shape](const Tensor<T>& upstream) {
    require_shape(upstream, out_shape, "maxpool2d upstream");
    return Gradients<T>{{maxpool2d_backward(upstream, *argmax, in_shape)}, {}};
  };
  return {std::move(pooled.output), std::move(backward)};
}

template <typename T>
LossOutput<T> softmax_ce_fb(const Tensor<T>& logits, std::span<const int> labels) {
  require_rank(logits, 2, "softmax_ce logits");
  const auto n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != n) {
    throw ShapeError("softmax_ce: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(n));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw ShapeError("softmax_ce: label " + std::to_string(labels[i]) + " at row " +
                       std::to_string(i) + " outside [0, " + std::to_string(c) + ")");
    }
  }

  LossValue<T> value;
  value.probabilities = Tensor<T>({n, c});
  value.per_sample.resize(n);
  T total{0};
  for (std::size_t i = 0; i < n; ++i) {
    const T* z = &logits[i * c];
    T* p = &value.probabilities[i * c];
    T peak = z[0];
    for (std::size_t j = 1; j < c; ++j) peak = std::max(peak, z[j]);
    T denom{0};
    for (std::size_t j = 0; j < c; ++j) {
      p[j] = std::exp(z[j] - peak);
      denom += p[j];
    }
    for (std::size_t j = 0; j < c; ++j) p[j] /= denom;
    // log-sum-exp form keeps the loss finite for saturated logits
    const T loss = std::log(denom) - (z[labels[i]] - peak);
    value.per_sample[i] = loss;
    total += loss;
  }
  value.loss = total / static_cast<T>(n);

  auto probs = std::make_shared<const Tensor<T>>(value.probabilities);
  auto saved_labels = std::make_shared<const std::vector<int>>(labels.begin(), labels.end());
  auto backward = [probs, saved_labels, n, c](T scale) {
    Tensor<T> dz = *probs;
    const T factor = scale / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) {
      dz[i * c + static_cast<std::size_t>((*saved_labels)[i])] -= T{1};
      for (std::size_t j = 0; j < c; ++j) dz[i * c + j] *= factor;
    }
    return dz;
  };
  return {std::move(value), std::move(backward)};
}

#define CFN_INSTANTIATE_LAYERS(T)                                                              \
  template LayerOutput<T> fc_fb(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);         \
  template LayerOutput<T> gap_fb(const Tensor<T>&);                                            \
  template LayerOutput<T> relu_fb(const Tensor<T>&);                                           \
  template LayerOutput<T> conv2d_fb(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                    std::size_t, std::size_t);                                 \
  template LayerOutput<T> maxpool2d_fb(const Tensor<T>&, std::size_t, std::size_t);            \
  template LossOutput<T> softmax_ce_fb(const Tensor<T>&, std::span<const int>);

CFN_INSTANTIATE_LAYERS(float)
CFN_INSTANTIATE_LAYERS(double)

#undef CFN_INSTANTIATE_LAYERS

}  // namespace cfn
