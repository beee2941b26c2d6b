#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cfn/checkpoint.hpp"
#include "cfn/graph.hpp"
#include "cfn/layers.hpp"
#include "cfn/tensor.hpp"

namespace cfn {

template <typename T>
using TensorMap = std::map<std::string, Tensor<T>, std::less<>>;

template <typename T>
struct ModelParams {
  TensorMap<T> tensors;

  std::size_t total_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : tensors) n += t.size();
    return n;
  }
  const Tensor<T>& at(std::string_view name) const;
};

// Name of the weight-initialization scheme, recorded in run manifests.
inline constexpr std::string_view kInitScheme = "he_uniform(bound=sqrt(6/fan_in)),bias=0,fusion=1/S";

// He-style uniform initialization. Each tensor draws from its own stream
// keyed by (seed, parameter name), so a node's initial weights do not depend
// on which other nodes exist in the graph. Biases start at 0; fusion
// weights start at 1/S.
template <typename T>
ModelParams<T> init_params(const GraphSpec& graph, std::uint64_t seed);

// Throws ShapeError if names or shapes differ from the graph's parameter list.
template <typename T>
void check_params(const GraphSpec& graph, const ModelParams<T>& params);

template <typename T>
std::vector<CheckpointEntry> to_checkpoint(const ModelParams<T>& params);
template <typename T>
ModelParams<T> from_checkpoint(std::span<const CheckpointEntry> entries);

// Saved forward state of one pass; consumed by backward().
template <typename T>
class LayerTape {
 public:
  struct Record {
    std::string node;
    std::vector<std::string> inputs;
    std::vector<std::string> params;
    std::vector<Shape> param_shapes;
    Shape output_shape;
    BackwardFn<T> backward;
  };

  std::vector<Record> records;  // forward order, loss excluded
  std::string loss_input;
  std::function<Tensor<T>(T)> loss_backward;
  TensorMap<T> outputs;  // node outputs retained on request

  bool complete() const { return static_cast<bool>(loss_backward); }
};

template <typename T>
struct ForwardResult {
  LossValue<T> loss;
  LayerTape<T> tape;
};

struct ForwardOptions {
  bool retain_outputs = false;  // keep every node output in tape.outputs
};

// images [N,Cin,H,W]; labels in [0, C).
template <typename T>
ForwardResult<T> forward(const GraphSpec& graph, const ModelParams<T>& params, const Tensor<T>& images,
                         std::span<const int> labels, const ForwardOptions& options = {});

// Inference pass without a loss. Returns the outputs of the requested nodes
// (all nodes except the loss when `nodes` is empty).
template <typename T>
TensorMap<T> infer(const GraphSpec& graph, const ModelParams<T>& params, const Tensor<T>& images,
                   const std::vector<std::string>& nodes = {});

struct BackwardOptions {
  // (consumer, producer) edges whose gradient contribution is dropped.
  std::set<std::pair<std::string, std::string>> masked_edges;
  bool retain_node_gradients = false;
};

template <typename T>
struct GradientMap {
  TensorMap<T> params;
  TensorMap<T> nodes;  // dL/d(node output), when retained; includes "input"
};

// Reverse traversal of the tape. A node feeding several consumers receives
// the sum of their contributions, in reverse forward order. A parameter
// whose node receives no gradient (all consumer edges masked) gets zeros.
template <typename T>
GradientMap<T> backward(const LayerTape<T>& tape, const BackwardOptions& options = {});

}  // namespace cfn
