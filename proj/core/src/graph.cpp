#include "cfn/graph.hpp"

#include <algorithm>
#include <set>

namespace cfn {
namespace {

bool is_conv(NodeKind kind) { return kind == NodeKind::conv3x3 || kind == NodeKind::conv1x1; }

std::string node_error(const NodeSpec& node, const std::string& what) {
  return "graph node '" + node.name + "': " + what;
}

}  // namespace

std::string_view to_string(NodeKind kind) {
  switch (kind) {
    case NodeKind::conv3x3: return "conv3x3";
    case NodeKind::conv1x1: return "conv1x1";
    case NodeKind::maxpool: return "maxpool";
    case NodeKind::relu: return "relu";
    case NodeKind::gap: return "gap";
    case NodeKind::stack: return "stack";
    case NodeKind::fuse: return "fuse";
    case NodeKind::fc: return "fc";
    case NodeKind::softmax_ce: return "softmax_ce";
  }
  return "?";
}

const NodeSpec* GraphSpec::find(std::string_view name) const {
  for (const auto& n : nodes) {
    if (n.name == name) return &n;
  }
  return nullptr;
}

const NodeSpec& GraphSpec::node(std::string_view name) const {
  if (const auto* n = find(name)) return *n;
  throw ShapeError("graph has no node '" + std::string(name) + "'");
}

const NodeSpec& GraphSpec::loss_node() const {
  for (const auto& n : nodes) {
    if (n.kind == NodeKind::softmax_ce) return n;
  }
  throw ShapeError("graph has no loss node");
}

std::map<std::string, std::size_t, std::less<>> infer_channels(const GraphSpec& graph) {
  std::map<std::string, std::size_t, std::less<>> channels;
  channels[std::string(kInputNode)] = graph.in_channels;
  for (const auto& node : graph.nodes) {
    for (const auto& in : node.inputs) {
      if (!channels.contains(in)) {
        throw ShapeError(node_error(node, "input '" + in + "' is not an earlier node"));
      }
    }
    std::size_t out = 0;
    switch (node.kind) {
      case NodeKind::conv3x3:
      case NodeKind::conv1x1:
      case NodeKind::fc: out = node.channels; break;
      case NodeKind::softmax_ce: out = 1; break;
      default:
        if (node.inputs.empty()) throw ShapeError(node_error(node, "has no inputs"));
        out = channels.at(node.inputs.front());
    }
    channels[node.name] = out;
  }
  return channels;
}

void validate_graph(const GraphSpec& graph) {
  if (graph.in_channels == 0) throw ShapeError("graph input must have >= 1 channel");
  if (graph.nodes.empty()) throw ShapeError("graph has no nodes");

  std::set<std::string, std::less<>> names{std::string(kInputNode)};
  std::size_t losses = 0;
  for (const auto& node : graph.nodes) {
    if (!names.insert(node.name).second) throw ShapeError(node_error(node, "duplicate name"));
    for (const auto& in : node.inputs) {
      if (in == node.name || !names.contains(in)) {
        throw ShapeError(node_error(node, "input '" + in + "' does not name an earlier node (cycle or typo)"));
      }
    }
    const auto arity = node.inputs.size();
    if (node.kind == NodeKind::stack ? arity == 0 : arity != 1) {
      throw ShapeError(node_error(node, "wrong number of inputs for " + std::string(to_string(node.kind))));
    }
    if ((is_conv(node.kind) || node.kind == NodeKind::fc) && node.channels == 0) {
      throw ShapeError(node_error(node, "needs channels >= 1"));
    }
    if (node.kind == NodeKind::softmax_ce) ++losses;
  }
  if (losses != 1) throw ShapeError("graph must have exactly one loss node, found " + std::to_string(losses));
  if (graph.nodes.back().kind != NodeKind::softmax_ce) throw ShapeError("loss node must be last");

  infer_channels(graph);
  const auto& fc = graph.node(graph.loss_node().inputs.front());
  if (fc.kind != NodeKind::fc) throw ShapeError("loss must consume an fc node");
  if (graph.classes != 0 && fc.channels != graph.classes) {
    throw ShapeError("fc width " + std::to_string(fc.channels) + " differs from class count " +
                     std::to_string(graph.classes));
  }

  std::vector<const NodeSpec*> stacks;
  for (const auto& node : graph.nodes) {
    if (node.kind == NodeKind::stack) stacks.push_back(&node);
  }
  if (!graph.has_fusion()) {
    if (!stacks.empty() || !graph.branch_points.empty()) {
      throw ShapeError("plain graph must not contain branches or a stack node");
    }
    return;
  }
  if (stacks.size() != 1) throw ShapeError("fusion graph needs exactly one stack node");
  const auto& stack = *stacks.front();
  if (stack.inputs.size() != graph.branch_count()) {
    throw ShapeError("stack has " + std::to_string(stack.inputs.size()) + " inputs but S = " +
                     std::to_string(graph.branch_count()));
  }

  // Every stacked branch is conv1x1 -> relu -> gap with the same K.
  std::optional<std::size_t> k;
  for (std::size_t s = 0; s < stack.inputs.size(); ++s) {
    const auto& gap = graph.node(stack.inputs[s]);
    if (gap.kind != NodeKind::gap) throw ShapeError(node_error(stack, "branch " + std::to_string(s + 1) + " does not end in gap"));
    const auto& act = graph.node(gap.inputs.front());
    if (act.kind != NodeKind::relu) throw ShapeError(node_error(gap, "branch gap must follow relu"));
    const auto& conv = graph.node(act.inputs.front());
    if (conv.kind != NodeKind::conv1x1) throw ShapeError(node_error(act, "branch relu must follow conv1x1"));
    if (k && *k != conv.channels) {
      throw ShapeError("K mismatch across branches: " + std::to_string(*k) + " vs " +
                       std::to_string(conv.channels) + " at '" + conv.name + "'");
    }
    k = conv.channels;
    if (s + 1 < stack.inputs.size()) {
      const auto& source = conv.inputs.front();
      if (source != graph.branch_points[s]) {
        throw ShapeError("branch " + std::to_string(s + 1) + " starts at '" + source +
                         "', expected branch point '" + graph.branch_points[s] + "'");
      }
      const auto* point = graph.find(source);
      if (point == nullptr || point->kind != NodeKind::maxpool) {
        throw ShapeError("branch point '" + source + "' is not a pool node");
      }
    }
  }
  if (graph.channels != 0 && *k != graph.channels) {
    throw ShapeError("branch width " + std::to_string(*k) + " differs from K = " + std::to_string(graph.channels));
  }

  std::size_t fuses = 0;
  for (const auto& node : graph.nodes) {
    if (node.kind != NodeKind::fuse) continue;
    ++fuses;
    if (node.inputs.front() != stack.name) throw ShapeError(node_error(node, "fuse must consume the stack"));
  }
  if (fuses != 1) throw ShapeError("fusion graph needs exactly one fuse node");
}

GraphSpec build_generic_cfn(const ArchitectureConfig& config) {
  if (config.widths.empty()) throw ConfigError("widths: need at least one 3x3 conv");
  for (const auto w : config.widths) {
    if (w == 0) throw ConfigError("widths: every width must be >= 1");
  }
  if (config.channels == 0) throw ConfigError("K must be >= 1");
  if (config.classes < 2) throw ConfigError("C must be >= 2");

  GraphSpec graph;
  graph.in_channels = config.in_channels;
  graph.channels = config.channels;
  graph.classes = config.classes;

  std::vector<std::string> pools;
  std::string last(kInputNode);
  std::size_t index = 0;
  auto add = [&](std::string name, NodeKind kind, std::size_t channels, std::vector<std::string> inputs,
                 NodeRole role = NodeRole::main) {
    graph.nodes.push_back({name, kind, channels, std::move(inputs), role});
    return name;
  };
  for (const auto width : config.widths) {
    ++index;
    const auto id = std::to_string(index);
    last = add("conv" + id, NodeKind::conv3x3, width, {last});
    last = add("relu" + id, NodeKind::relu, 0, {last});
    if (index % 2 == 0) {
      last = add("pool" + std::to_string(index / 2), NodeKind::maxpool, 0, {last});
      pools.push_back(last);
    }
  }
  const auto head = std::to_string(index + 1);
  last = add("conv" + head, NodeKind::conv1x1, config.channels, {last});
  last = add("relu" + head, NodeKind::relu, 0, {last});
  const std::string main_gap = add("gap", NodeKind::gap, 0, {last});

  // Branch points, ordered by depth.
  std::vector<std::string> points;
  for (const auto& p : config.branch_points) {
    const auto* node = graph.find(p);
    if (node == nullptr) throw ConfigError("branch point '" + p + "' is not a node of the model");
    if (node->kind != NodeKind::maxpool) throw ConfigError("branch point '" + p + "' is not a pool node");
    if (std::find(points.begin(), points.end(), p) != points.end()) {
      throw ConfigError("branch point '" + p + "' listed twice");
    }
    points.push_back(p);
  }
  std::sort(points.begin(), points.end(), [&](const std::string& a, const std::string& b) {
    return std::find(pools.begin(), pools.end(), a) < std::find(pools.begin(), pools.end(), b);
  });

  std::string feature = main_gap;
  if (!points.empty()) {
    graph.fusion = config.fusion;
    graph.branch_points = points;
    std::vector<std::string> stacked;
    for (std::size_t s = 0; s < points.size(); ++s) {
      const auto prefix = "branch" + std::to_string(s + 1) + "_";
      auto b = add(prefix + "conv", NodeKind::conv1x1, config.channels, {points[s]}, NodeRole::branch);
      b = add(prefix + "relu", NodeKind::relu, 0, {b}, NodeRole::branch);
      stacked.push_back(add(prefix + "gap", NodeKind::gap, 0, {b}, NodeRole::branch));
    }
    stacked.push_back(main_gap);
    const auto stack = add("stack", NodeKind::stack, 0, stacked, NodeRole::fusion);
    feature = add("fuse", NodeKind::fuse, 0, {stack}, NodeRole::fusion);
  }
  const auto fc = add("fc", NodeKind::fc, config.classes, {feature});
  add("loss", NodeKind::softmax_ce, 0, {fc});
  validate_graph(graph);
  return graph;
}

ArchitectureConfig cifar_architecture(std::size_t classes) {
  ArchitectureConfig config;
  config.widths = {96, 96, 192, 192, 192, 192};
  config.channels = 192;
  config.classes = classes;
  return config;
}

GraphSpec build_plain_cifar_cnn(std::size_t classes) { return build_generic_cfn(cifar_architecture(classes)); }

GraphSpec build_cfn_cifar(std::size_t classes, FusionKind fusion) {
  auto config = cifar_architecture(classes);
  config.branch_points = {"pool2", "pool3"};
  config.fusion = fusion;
  return build_generic_cfn(config);
}

std::vector<ParameterShape> parameter_shapes(const GraphSpec& graph) {
  const auto channels = infer_channels(graph);
  std::vector<ParameterShape> shapes;
  for (const auto& node : graph.nodes) {
    const auto in = node.inputs.empty() ? 0 : channels.at(node.inputs.front());
    switch (node.kind) {
      case NodeKind::conv3x3:
      case NodeKind::conv1x1: {
        const std::size_t k = node.kind == NodeKind::conv3x3 ? 3 : 1;
        shapes.push_back({node.name + ".weight", {node.channels, in, k, k}, node.role, in * k * k, true});
        shapes.push_back({node.name + ".bias", {node.channels}, node.role, 0, false});
        break;
      }
      case NodeKind::fc:
        shapes.push_back({node.name + ".weight", {node.channels, in}, node.role, in, true});
        shapes.push_back({node.name + ".bias", {node.channels}, node.role, 0, false});
        break;
      case NodeKind::fuse: {
        const auto k = in;
        const auto s = graph.branch_count();
        if (*graph.fusion == FusionKind::lc) {
          shapes.push_back({node.name + ".weight", {k, s}, NodeRole::fusion, 0, true});
          shapes.push_back({node.name + ".bias", {k}, NodeRole::fusion, 0, false});
        } else if (*graph.fusion == FusionKind::conv) {
          shapes.push_back({node.name + ".weight", {s}, NodeRole::fusion, 0, true});
          shapes.push_back({node.name + ".bias", {1}, NodeRole::fusion, 0, false});
        }
        break;
      }
      default: break;
    }
  }
  return shapes;
}

ParameterBreakdown count_parameters(const GraphSpec& graph) {
  ParameterBreakdown counts;
  for (const auto& p : parameter_shapes(graph)) {
    const auto n = element_count(p.shape);
    switch (p.role) {
      case NodeRole::main: counts.basic += n; break;
      case NodeRole::branch: counts.extra_branches += n; break;
      case NodeRole::fusion: counts.fusion += n; break;
    }
    counts.total += n;
  }
  return counts;
}

}  // namespace cfn
