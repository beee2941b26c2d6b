#include "cfn/fusion.hpp"

#include <memory>
#include <string>

namespace cfn {
namespace {

// out[n,k] = relu( sum_s weight_at(k,s) * G[n,k,s] + bias_at(k) )
template <typename T, typename WeightAt, typename BiasAt>
Tensor<T> weighted_fusion(const BranchStack<T>& stack, WeightAt weight_at, BiasAt bias_at) {
  const auto n = stack.batch(), k = stack.channels(), s = stack.branches();
  const auto& g = stack.values();
  Tensor<T> out({n, k});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < k; ++c) {
      const T* row = &g[(i * k + c) * s];
      T acc{0};
      for (std::size_t b = 0; b < s; ++b) acc += weight_at(c, b) * row[b];
      acc += bias_at(c);
      out[i * k + c] = acc > T{0} ? acc : T{0};
    }
  }
  return out;
}

template <typename T>
void require_upstream(const Tensor<T>& upstream, std::size_t n, std::size_t k, const char* what) {
  if (upstream.shape() != Shape{n, k}) {
    throw ShapeError(std::string(what) + ": upstream shape " + to_string(upstream.shape()) +
                     " does not match fused feature [" + std::to_string(n) + "," +
                     std::to_string(k) + "]");
  }
}

// dL/d(pre-activation): upstream masked where the fused output is 0.
template <typename T>
Tensor<T> relu_mask(const Tensor<T>& upstream, const Tensor<T>& fused) {
  Tensor<T> d(upstream.shape());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = fused[i] > T{0} ? upstream[i] : T{0};
  return d;
}

}  // namespace

std::string_view to_string(FusionKind kind) {
  switch (kind) {
    case FusionKind::sum: return "sum";
    case FusionKind::conv: return "conv";
    case FusionKind::lc: return "lc";
  }
  return "?";
}

FusionKind parse_fusion_kind(std::string_view text) {
  if (text == "sum") return FusionKind::sum;
  if (text == "conv") return FusionKind::conv;
  if (text == "lc") return FusionKind::lc;
  throw ConfigError("unknown fusion kind '" + std::string(text) + "' (expected sum, conv or lc)");
}

template <typename T>
BranchStack<T>::BranchStack(Tensor<T> values) : values_(std::move(values)) {
  if (values_.empty() || values_.rank() != 3) {
    throw ShapeError("branch stack must have shape [N,K,S], got " + to_string(values_.shape()));
  }
}

template <typename T>
StackOutput<T> stack_branches(std::span<const Tensor<T>> gaps) {
  if (gaps.empty()) throw ShapeError("stack_branches: need at least one branch");
  const Shape first = gaps[0].shape();
  if (gaps[0].empty() || first.size() != 2) {
    throw ShapeError("stack_branches: branch 0 must be [N,K], got " + to_string(first));
  }
  for (std::size_t b = 1; b < gaps.size(); ++b) {
    if (gaps[b].shape() != first) {
      throw ShapeError("stack_branches: ragged branch " + std::to_string(b) + " has shape " +
                       to_string(gaps[b].shape()) + ", branch 0 has " + to_string(first));
    }
  }
  const auto n = first[0], k = first[1], s = gaps.size();
  Tensor<T> g({n, k, s});
  for (std::size_t b = 0; b < s; ++b) {
    for (std::size_t i = 0; i < n * k; ++i) g[i * s + b] = gaps[b][i];
  }
  auto unstack = [n, k, s](const Tensor<T>& upstream) {
    if (upstream.shape() != Shape{n, k, s}) {
      throw ShapeError("stack_branches backward: upstream shape " + to_string(upstream.shape()));
    }
    std::vector<Tensor<T>> parts;
    parts.reserve(s);
    for (std::size_t b = 0; b < s; ++b) {
      Tensor<T> part({n, k});
      for (std::size_t i = 0; i < n * k; ++i) part[i] = upstream[i * s + b];
      parts.push_back(std::move(part));
    }
    return parts;
  };
  return {BranchStack<T>(std::move(g)), std::move(unstack)};
}

template <typename T>
LayerOutput<T> fuse_sum(const BranchStack<T>& stack) {
  const auto n = stack.batch(), k = stack.channels(), s = stack.branches();
  const auto& g = stack.values();
  Tensor<T> out({n, k});
  for (std::size_t i = 0; i < n * k; ++i) {
    const T* row = &g[i * s];
    T acc{0};
    for (std::size_t b = 0; b < s; ++b) acc += row[b];
    out[i] = acc > T{0} ? acc : T{0};
  }
  auto fused = std::make_shared<const Tensor<T>>(out);
  auto backward = [fused, n, k, s](const Tensor<T>& upstream) {
    require_upstream(upstream, n, k, "fuse_sum");
    const auto d = relu_mask(upstream, *fused);
    Tensor<T> dg({n, k, s});
    for (std::size_t i = 0; i < n * k; ++i) {
      for (std::size_t b = 0; b < s; ++b) dg[i * s + b] = d[i];
    }
    return Gradients<T>{{std::move(dg)}, {}};
  };
  return {std::move(out), std::move(backward)};
}

template <typename T>
LayerOutput<T> fuse_conv(const BranchStack<T>& stack, const Tensor<T>& shared, const Tensor<T>& bias) {
  const auto n = stack.batch(), k = stack.channels(), s = stack.branches();
  if (shared.shape() != Shape{s} || bias.shape() != Shape{1}) {
    throw ShapeError("fuse_conv: expected shared [" + std::to_string(s) + "] and bias [1], got " +
                     to_string(shared.shape()) + " and " + to_string(bias.shape()));
  }
  const T b0 = bias[0];
  auto out = weighted_fusion(
      stack, [&](std::size_t, std::size_t b) { return shared[b]; }, [&](std::size_t) { return b0; });

  auto fused = std::make_shared<const Tensor<T>>(out);
  auto saved_g = std::make_shared<const Tensor<T>>(stack.values());
  auto saved_w = std::make_shared<const Tensor<T>>(shared);
  auto backward = [fused, saved_g, saved_w, n, k, s](const Tensor<T>& upstream) {
    require_upstream(upstream, n, k, "fuse_conv");
    const auto d = relu_mask(upstream, *fused);
    const auto& g = *saved_g;
    const auto& w = *saved_w;
    Tensor<T> dg({n, k, s});
    Tensor<T> dw({s});
    Tensor<T> db({1});
    for (std::size_t i = 0; i < n * k; ++i) {
      for (std::size_t b = 0; b < s; ++b) dg[i * s + b] = d[i] * w[b];
    }
    for (std::size_t b = 0; b < s; ++b) {
      T acc{0};
      for (std::size_t i = 0; i < n * k; ++i) acc += d[i] * g[i * s + b];
      dw[b] = acc;
    }
    T bacc{0};
    for (std::size_t i = 0; i < n * k; ++i) bacc += d[i];
    db[0] = bacc;
    return Gradients<T>{{std::move(dg)}, {std::move(dw), std::move(db)}};
  };
  return {std::move(out), std::move(backward)};
}

template <typename T>
LayerOutput<T> fuse_lc(const BranchStack<T>& stack, const Tensor<T>& weight, const Tensor<T>& bias) {
  const auto n = stack.batch(), k = stack.channels(), s = stack.branches();
  if (weight.shape() != Shape{k, s} || bias.shape() != Shape{k}) {
    throw ShapeError("fuse_lc: expected weight [" + std::to_string(k) + "," + std::to_string(s) +
                     "] and bias [" + std::to_string(k) + "], got " + to_string(weight.shape()) +
                     " and " + to_string(bias.shape()));
  }
  auto out = weighted_fusion(
      stack, [&](std::size_t c, std::size_t b) { return weight[c * s + b]; },
      [&](std::size_t c) { return bias[c]; });

  auto fused = std::make_shared<const Tensor<T>>(out);
  auto saved_g = std::make_shared<const Tensor<T>>(stack.values());
  auto saved_w = std::make_shared<const Tensor<T>>(weight);
  auto backward = [fused, saved_g, saved_w, n, k, s](const Tensor<T>& upstream) {
    require_upstream(upstream, n, k, "fuse_lc");
    const auto d = relu_mask(upstream, *fused);
    const auto& g = *saved_g;
    const auto& w = *saved_w;
    Tensor<T> dg({n, k, s});
    Tensor<T> dw({k, s});
    Tensor<T> db({k});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < k; ++c) {
        const T di = d[i * k + c];
        for (std::size_t b = 0; b < s; ++b) {
          dg[(i * k + c) * s + b] = di * w[c * s + b];
          dw[c * s + b] += di * g[(i * k + c) * s + b];
        }
        db[c] += di;
      }
    }
    return Gradients<T>{{std::move(dg)}, {std::move(dw), std::move(db)}};
  };
  return {std::move(out), std::move(backward)};
}

template <typename T>
LayerOutput<T> fuse(const BranchStack<T>& stack, const FusionParams<T>& params) {
  switch (params.kind) {
    case FusionKind::sum: return fuse_sum(stack);
    case FusionKind::conv: return fuse_conv(stack, params.weight, params.bias);
    case FusionKind::lc: return fuse_lc(stack, params.weight, params.bias);
  }
  throw ShapeError("fuse: unknown fusion kind");
}

std::size_t fusion_param_count(FusionKind kind, std::size_t channels, std::size_t branches) {
  switch (kind) {
    case FusionKind::sum: return 0;
    case FusionKind::conv: return branches + 1;
    case FusionKind::lc: return channels * (branches + 1);
  }
  return 0;
}

template <typename T>
FusionParams<T> init_lc(std::size_t channels, std::size_t branches) {
  if (channels == 0 || branches == 0) throw ShapeError("init_lc: K and S must be >= 1");
  const T w = T{1} / static_cast<T>(branches);
  return {FusionKind::lc, Tensor<T>::full({channels, branches}, w), Tensor<T>::zeros({channels})};
}

template <typename T>
FusionParams<T> init_fusion(FusionKind kind, std::size_t channels, std::size_t branches) {
  switch (kind) {
    case FusionKind::sum: return {FusionKind::sum, {}, {}};
    case FusionKind::conv:
      if (branches == 0) throw ShapeError("init_fusion: S must be >= 1");
      return {FusionKind::conv, Tensor<T>::full({branches}, T{1} / static_cast<T>(branches)),
              Tensor<T>::zeros({1})};
    case FusionKind::lc: return init_lc<T>(channels, branches);
  }
  throw ShapeError("init_fusion: unknown fusion kind");
}

PredictionAudit prediction_strategy_audit(std::size_t channels, std::size_t classes,
                                          std::size_t branches, FusionKind kind) {
  const auto fuse = fusion_param_count(kind, channels, branches);
  PredictionAudit audit;
  audit.fusion_params = fuse;
  audit.eflp_actual = classes * (channels + 1) + fuse;
  audit.eplf_actual = branches * classes * (channels + 1) + fuse;
  audit.eflp_paper_formula = branches * (classes + 1) + fuse;
  audit.eplf_paper_formula = branches * channels * (classes + 1) + fuse;
  return audit;
}

#define CFN_INSTANTIATE_FUSION(T)                                                                \
  template class BranchStack<T>;                                                                 \
  template StackOutput<T> stack_branches(std::span<const Tensor<T>>);                            \
  template LayerOutput<T> fuse_sum(const BranchStack<T>&);                                       \
  template LayerOutput<T> fuse_conv(const BranchStack<T>&, const Tensor<T>&, const Tensor<T>&);  \
  template LayerOutput<T> fuse_lc(const BranchStack<T>&, const Tensor<T>&, const Tensor<T>&);    \
  template LayerOutput<T> fuse(const BranchStack<T>&, const FusionParams<T>&);                   \
  template FusionParams<T> init_lc<T>(std::size_t, std::size_t);                                 \
  template FusionParams<T> init_fusion<T>(FusionKind, std::size_t, std::size_t);

CFN_INSTANTIATE_FUSION(float)
CFN_INSTANTIATE_FUSION(double)

#undef CFN_INSTANTIATE_FUSION

}  // namespace cfn
