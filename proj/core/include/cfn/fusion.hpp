#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cfn/layers.hpp"
#include "cfn/tensor.hpp"

// Fusion of side-branch GAP features.
//
// Each branch s = 1..S contributes a K-vector g(s) per image (the last one,
// s = S, is the main branch). The vectors are stacked into G[N,K,S] and
// reduced back to a K-vector per image by one of three modules:
//
//   sum   out[n,k] = relu( sum_s G[n,k,s] )                      0 params
//   conv  out[n,k] = relu( sum_s w[s] * G[n,k,s] + b )           S+1 params
//   lc    out[n,k] = relu( sum_s W[k,s] * G[n,k,s] + b[k] )      K*(S+1) params
//
// conv shares one 1x1xS filter across the K positions; lc learns an untied
// filter per position. All three accumulate in ascending s, starting from 0
// and adding the bias last, so tied lc weights reproduce conv bit for bit.
namespace cfn {

enum class FusionKind { sum, conv, lc };

std::string_view to_string(FusionKind kind);
// Accepts "sum", "conv", "lc"; throws ConfigError otherwise.
FusionKind parse_fusion_kind(std::string_view text);

// Stacked GAP features G with shape [N,K,S]. Slice [:,:,S-1] is the main branch.
template <typename T>
class BranchStack {
 public:
  explicit BranchStack(Tensor<T> values);

  const Tensor<T>& values() const { return values_; }
  std::size_t batch() const { return values_.dim(0); }
  std::size_t channels() const { return values_.dim(1); }
  std::size_t branches() const { return values_.dim(2); }

 private:
  Tensor<T> values_;
};

template <typename T>
struct StackOutput {
  BranchStack<T> stack;
  // Splits dL/dG [N,K,S] back into S gradients of shape [N,K].
  std::function<std::vector<Tensor<T>>(const Tensor<T>& upstream)> unstack;
};

// Throws ShapeError for an empty list or ragged [N,K] shapes.
template <typename T>
StackOutput<T> stack_branches(std::span<const Tensor<T>> gaps);

template <typename T>
struct FusionParams {
  FusionKind kind = FusionKind::lc;
  Tensor<T> weight;  // lc: [K,S]; conv: [S]; sum: empty
  Tensor<T> bias;    // lc: [K];   conv: [1]; sum: empty

  std::size_t parameter_count() const { return weight.size() + bias.size(); }
};

// Every fuse_* returns the [N,K] fused feature. Backward yields
// inputs = {dL/dG} and params = {weight, bias} (none for sum).
template <typename T>
LayerOutput<T> fuse_sum(const BranchStack<T>& stack);

template <typename T>
LayerOutput<T> fuse_conv(const BranchStack<T>& stack, const Tensor<T>& shared, const Tensor<T>& bias);

template <typename T>
LayerOutput<T> fuse_lc(const BranchStack<T>& stack, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
LayerOutput<T> fuse(const BranchStack<T>& stack, const FusionParams<T>& params);

std::size_t fusion_param_count(FusionKind kind, std::size_t channels, std::size_t branches);

// LC weights all 1/S, bias 0.
template <typename T>
FusionParams<T> init_lc(std::size_t channels, std::size_t branches);

// sum: no tensors; conv: shared 1/S, bias 0; lc: init_lc.
template <typename T>
FusionParams<T> init_fusion(FusionKind kind, std::size_t channels, std::size_t branches);

// Parameter cost of the classifier head under the two prediction strategies.
//
// "actual" counts FC layers over a K-dimensional feature:
//   early fusion, late prediction  = C*(K+1) + W_fuse
//   early prediction, late fusion  = S*C*(K+1) + W_fuse
// "paper_formula" fields evaluate the published inequality term by term:
//   S*(C+1) + W_fuse  and  S*K*(C+1) + W_fuse
struct PredictionAudit {
  std::size_t eflp_actual = 0;
  std::size_t eplf_actual = 0;
  std::size_t eflp_paper_formula = 0;
  std::size_t eplf_paper_formula = 0;
  std::size_t fusion_params = 0;
};

PredictionAudit prediction_strategy_audit(std::size_t channels, std::size_t classes,
                                          std::size_t branches, FusionKind kind);

}  // namespace cfn
