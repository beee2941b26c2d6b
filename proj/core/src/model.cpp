#include "cfn/model.hpp"

#include <cmath>

#include "cfn/fusion.hpp"
#include "cfn/rng.hpp"

namespace cfn {
namespace {

template <typename T>
const Tensor<T>& lookup(const TensorMap<T>& map, const std::string& name, const char* what) {
  const auto it = map.find(name);
  if (it == map.end()) throw ShapeError(std::string(what) + " '" + name + "' not found");
  return it->second;
}

template <typename T>
FusionParams<T> fusion_params_of(const GraphSpec& graph, const NodeSpec& node, const ModelParams<T>& params) {
  FusionParams<T> fp;
  fp.kind = *graph.fusion;
  if (fp.kind != FusionKind::sum) {
    fp.weight = params.at(node.name + ".weight");
    fp.bias = params.at(node.name + ".bias");
  }
  return fp;
}

// One node's forward step. Returns the output and, when `record` is set,
// fills in the backward closure.
template <typename T>
Tensor<T> run_node(const GraphSpec& graph, const NodeSpec& node, const ModelParams<T>& params,
                   const TensorMap<T>& values, typename LayerTape<T>::Record* record) {
  auto input = [&](std::size_t i) -> const Tensor<T>& {
    return lookup(values, node.inputs.at(i), "node output");
  };
  auto param = [&](const char* suffix) -> const Tensor<T>& { return params.at(node.name + suffix); };

  LayerOutput<T> out;
  switch (node.kind) {
    case NodeKind::conv3x3:
      out = conv2d_fb(input(0), param(".weight"), param(".bias"), 1, 1);
      break;
    case NodeKind::conv1x1:
      out = conv2d_fb(input(0), param(".weight"), param(".bias"), 1, 0);
      break;
    case NodeKind::maxpool: out = maxpool2d_fb(input(0), 2, 2); break;
    case NodeKind::relu: out = relu_fb(input(0)); break;
    case NodeKind::gap: out = gap_fb(input(0)); break;
    case NodeKind::fc: out = fc_fb(input(0), param(".weight"), param(".bias")); break;
    case NodeKind::stack: {
      std::vector<Tensor<T>> gaps;
      gaps.reserve(node.inputs.size());
      for (std::size_t i = 0; i < node.inputs.size(); ++i) gaps.push_back(input(i));
      auto stacked = stack_branches<T>(gaps);
      out.output = stacked.stack.values();
      out.backward = [unstack = std::move(stacked.unstack)](const Tensor<T>& upstream) {
        return Gradients<T>{unstack(upstream), {}};
      };
      break;
    }
    case NodeKind::fuse:
      out = fuse(BranchStack<T>(input(0)), fusion_params_of(graph, node, params));
      break;
    case NodeKind::softmax_ce: throw ShapeError("run_node: loss node handled by caller");
  }
  if (record != nullptr) {
    record->node = node.name;
    record->inputs = node.inputs;
    record->output_shape = out.output.shape();
    record->backward = std::move(out.backward);
  }
  return std::move(out.output);
}

template <typename T>
void check_images(const GraphSpec& graph, const Tensor<T>& images) {
  if (images.empty() || images.rank() != 4 || images.dim(1) != graph.in_channels) {
    throw ShapeError("graph input must be [N," + std::to_string(graph.in_channels) + ",H,W], got " +
                     to_string(images.shape()));
  }
}

}  // namespace

template <typename T>
const Tensor<T>& ModelParams<T>::at(std::string_view name) const {
  const auto it = tensors.find(name);
  if (it == tensors.end()) throw ShapeError("parameter '" + std::string(name) + "' not found");
  return it->second;
}

template <typename T>
ModelParams<T> init_params(const GraphSpec& graph, std::uint64_t seed) {
  validate_graph(graph);
  ModelParams<T> params;
  for (const auto& p : parameter_shapes(graph)) {
    Tensor<T> t(p.shape);
    if (p.role == NodeRole::fusion) {
      // lc tensors lead with K; conv ignores the channel argument
      const auto init = init_fusion<T>(*graph.fusion, p.shape[0], graph.branch_count());
      t = p.name.ends_with(".weight") ? init.weight : init.bias;
    } else if (p.decayed) {
      const double bound = std::sqrt(6.0 / static_cast<double>(p.fan_in));
      t = Tensor<T>::uniform(p.shape, mix_seed(seed, p.name), -bound, bound);
    }
    params.tensors.emplace(p.name, std::move(t));
  }
  return params;
}

template <typename T>
void check_params(const GraphSpec& graph, const ModelParams<T>& params) {
  const auto shapes = parameter_shapes(graph);
  if (shapes.size() != params.tensors.size()) {
    throw ShapeError("model expects " + std::to_string(shapes.size()) + " parameter tensors, got " +
                     std::to_string(params.tensors.size()));
  }
  for (const auto& p : shapes) {
    const auto& t = params.at(p.name);
    if (t.shape() != p.shape) {
      throw ShapeError("parameter '" + p.name + "' has shape " + to_string(t.shape()) + ", expected " +
                       to_string(p.shape));
    }
  }
}

template <typename T>
std::vector<CheckpointEntry> to_checkpoint(const ModelParams<T>& params) {
  std::vector<CheckpointEntry> entries;
  for (const auto& [name, t] : params.tensors) entries.push_back({name, t});
  return entries;
}

template <typename T>
ModelParams<T> from_checkpoint(std::span<const CheckpointEntry> entries) {
  ModelParams<T> params;
  for (const auto& e : entries) {
    std::visit([&](const auto& t) { params.tensors.emplace(e.name, t.template cast<T>()); }, e.tensor);
  }
  return params;
}

template <typename T>
ForwardResult<T> forward(const GraphSpec& graph, const ModelParams<T>& params, const Tensor<T>& images,
                         std::span<const int> labels, const ForwardOptions& options) {
  check_images(graph, images);
  ForwardResult<T> result;
  TensorMap<T> values;
  values.emplace(std::string(kInputNode), images);
  const auto shapes = parameter_shapes(graph);
  for (const auto& node : graph.nodes) {
    if (node.kind == NodeKind::softmax_ce) {
      auto loss = softmax_ce_fb(lookup(values, node.inputs.front(), "node output"), labels);
      result.loss = std::move(loss.value);
      result.tape.loss_input = node.inputs.front();
      result.tape.loss_backward = std::move(loss.backward);
      continue;
    }
    typename LayerTape<T>::Record record;
    auto out = run_node(graph, node, params, values, &record);
    for (const auto& p : shapes) {
      if (p.name.starts_with(node.name + ".")) {
        record.params.push_back(p.name);
        record.param_shapes.push_back(p.shape);
      }
    }
    result.tape.records.push_back(std::move(record));
    values.insert_or_assign(node.name, std::move(out));
  }
  if (options.retain_outputs) result.tape.outputs = std::move(values);
  return result;
}

template <typename T>
TensorMap<T> infer(const GraphSpec& graph, const ModelParams<T>& params, const Tensor<T>& images,
                   const std::vector<std::string>& nodes) {
  check_images(graph, images);
  for (const auto& name : nodes) graph.node(name);
  TensorMap<T> values;
  values.emplace(std::string(kInputNode), images);
  for (const auto& node : graph.nodes) {
    if (node.kind == NodeKind::softmax_ce) continue;
    values.insert_or_assign(node.name, run_node<T>(graph, node, params, values, nullptr));
  }
  if (nodes.empty()) {
    values.erase(std::string(kInputNode));
    return values;
  }
  TensorMap<T> selected;
  for (const auto& name : nodes) selected.insert_or_assign(name, values.at(name));
  return selected;
}

template <typename T>
GradientMap<T> backward(const LayerTape<T>& tape, const BackwardOptions& options) {
  if (!tape.complete()) throw ShapeError("backward: missing tape (run forward first)");
  GradientMap<T> grads;
  TensorMap<T> pending;
  pending.emplace(tape.loss_input, tape.loss_backward(T{1}));

  auto accumulate = [&](const std::string& producer, Tensor<T>&& g) {
    auto it = pending.find(producer);
    if (it == pending.end()) {
      pending.emplace(producer, std::move(g));
      return;
    }
    auto& acc = it->second;
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
  };

  for (auto rec = tape.records.rbegin(); rec != tape.records.rend(); ++rec) {
    auto it = pending.find(rec->node);
    if (it == pending.end()) {
      for (std::size_t p = 0; p < rec->params.size(); ++p) {
        grads.params.insert_or_assign(rec->params[p], Tensor<T>(rec->param_shapes[p]));
      }
      continue;
    }
    const Tensor<T> upstream = std::move(it->second);
    pending.erase(it);
    auto g = rec->backward(upstream);
    if (options.retain_node_gradients) grads.nodes.insert_or_assign(rec->node, upstream);
    if (g.params.size() != rec->params.size()) {
      throw ShapeError("backward: node '" + rec->node + "' returned wrong number of parameter gradients");
    }
    for (std::size_t p = 0; p < rec->params.size(); ++p) {
      if (!grads.params.emplace(rec->params[p], std::move(g.params[p])).second) {
        throw ShapeError("backward: parameter '" + rec->params[p] + "' received two gradients");
      }
    }
    for (std::size_t i = 0; i < rec->inputs.size(); ++i) {
      if (options.masked_edges.contains({rec->node, rec->inputs[i]})) continue;
      accumulate(rec->inputs[i], std::move(g.inputs.at(i)));
    }
  }
  if (options.retain_node_gradients) {
    if (auto it = pending.find(std::string(kInputNode)); it != pending.end()) {
      grads.nodes.insert_or_assign(std::string(kInputNode), std::move(it->second));
    }
  }
  return grads;
}

#define CFN_INSTANTIATE_MODEL(T)                                                                   \
  template struct ModelParams<T>;                                                                  \
  template ModelParams<T> init_params<T>(const GraphSpec&, std::uint64_t);                         \
  template void check_params(const GraphSpec&, const ModelParams<T>&);                             \
  template std::vector<CheckpointEntry> to_checkpoint(const ModelParams<T>&);                      \
  template ModelParams<T> from_checkpoint<T>(std::span<const CheckpointEntry>);                    \
  template ForwardResult<T> forward(const GraphSpec&, const ModelParams<T>&, const Tensor<T>&,     \
                                    std::span<const int>, const ForwardOptions&);                  \
  template TensorMap<T> infer(const GraphSpec&, const ModelParams<T>&, const Tensor<T>&,           \
                              const std::vector<std::string>&);                                    \
  template GradientMap<T> backward(const LayerTape<T>&, const BackwardOptions&);

CFN_INSTANTIATE_MODEL(float)
CFN_INSTANTIATE_MODEL(double)

#undef CFN_INSTANTIATE_MODEL

}  // namespace cfn
