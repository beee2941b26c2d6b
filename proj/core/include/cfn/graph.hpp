#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cfn/fusion.hpp"
#include "cfn/tensor.hpp"

namespace cfn {

enum class NodeKind { conv3x3, conv1x1, maxpool, relu, gap, stack, fuse, fc, softmax_ce };

// Which part of the network owns a node's parameters.
enum class NodeRole { main, branch, fusion };

std::string_view to_string(NodeKind kind);

// Graph inputs are referenced by this name.
inline constexpr std::string_view kInputNode = "input";

struct NodeSpec {
  std::string name;
  NodeKind kind = NodeKind::relu;
  std::size_t channels = 0;  // output channels for conv/fc nodes
  std::vector<std::string> inputs;
  NodeRole role = NodeRole::main;
};

// Nodes are listed in topological order: every input names an earlier node
// or `kInputNode`. Side branches hang off `branch_points` (pool nodes) as
// conv1x1 -> relu -> gap and feed the stack together with the main GAP,
// which is always the last stacked branch.
struct GraphSpec {
  std::size_t in_channels = 3;
  std::vector<NodeSpec> nodes;
  std::vector<std::string> branch_points;
  std::optional<FusionKind> fusion;  // nullopt: plain CNN, no stack/fuse nodes
  std::size_t channels = 0;          // K, width of every 1x1 conv
  std::size_t classes = 0;           // C

  std::size_t branch_count() const { return branch_points.size() + 1; }
  const NodeSpec* find(std::string_view name) const;
  const NodeSpec& node(std::string_view name) const;
  const NodeSpec& loss_node() const;
  bool has_fusion() const { return fusion.has_value(); }
};

// Throws ShapeError describing the first violated structural rule.
void validate_graph(const GraphSpec& graph);

// Declarative description consumed by build_generic_cfn.
//
// `widths` lists the 3x3 convs; a 2x2 max pool follows every second one
// (pool1 after conv2, pool2 after conv4, ...). A 1x1 conv of width
// `channels` closes the main path, then GAP and one FC layer to `classes`.
// Each branch point must name one of the pools.
struct ArchitectureConfig {
  std::vector<std::size_t> widths;
  std::size_t channels = 0;
  std::size_t classes = 0;
  std::vector<std::string> branch_points;
  FusionKind fusion = FusionKind::lc;
  std::size_t in_channels = 3;
};

// Zero branch points yields the plain CNN graph (no stack/fuse nodes).
// Throws ConfigError on invalid widths, unknown or non-pool branch points.
GraphSpec build_generic_cfn(const ArchitectureConfig& config);

// Reconstructed CIFAR model: 3x3 widths 96,96,192,192,192,192 with pools
// after conv2/conv4/conv6, 1x1 conv to 192, GAP, FC.
ArchitectureConfig cifar_architecture(std::size_t classes);
GraphSpec build_plain_cifar_cnn(std::size_t classes);
// Plain model plus branches at pool2 and pool3 (S = 3).
GraphSpec build_cfn_cifar(std::size_t classes, FusionKind fusion);

struct ParameterShape {
  std::string name;
  Shape shape;
  NodeRole role = NodeRole::main;
  std::size_t fan_in = 0;  // 0 for biases and fusion tensors
  bool decayed = false;    // weight decay applies (weights, not biases)
};

// Every learnable tensor in forward order: "<node>.weight", "<node>.bias".
std::vector<ParameterShape> parameter_shapes(const GraphSpec& graph);

// Output channel count of every node.
std::map<std::string, std::size_t, std::less<>> infer_channels(const GraphSpec& graph);

struct ParameterBreakdown {
  std::size_t basic = 0;           // main path + classifier
  std::size_t extra_branches = 0;  // side-branch 1x1 convs
  std::size_t fusion = 0;
  std::size_t total = 0;
};

ParameterBreakdown count_parameters(const GraphSpec& graph);

}  // namespace cfn
