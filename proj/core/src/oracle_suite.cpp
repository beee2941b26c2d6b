#include "cfn/oracle_suite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "cfn/errors.hpp"
#include "cfn/fusion.hpp"
#include "cfn/grad_check.hpp"
#include "cfn/layers.hpp"
#include "cfn/model.hpp"
#include "cfn/rng.hpp"

namespace cfn {
namespace {

constexpr double kOpMargin = 1e-3;

// One op instance: its tensors (inputs then parameters) and a forward
// closure over them.
struct Problem {
  std::vector<TensorD> tensors;
  std::vector<std::string> names;
  std::function<LayerOutput<double>(const std::vector<TensorD>&)> run;
  bool scalar_loss = false;  // softmax_ce: objective is the loss itself
  std::vector<int> labels;
};

TensorD random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  TensorD t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Values with |x| >= kOpMargin.
TensorD away_from_zero(Shape shape, Rng& rng) {
  TensorD t(std::move(shape));
  for (auto& v : t.data()) {
    const double mag = rng.uniform(kOpMargin, 1.0);
    v = rng.coin() ? mag : -mag;
  }
  return t;
}

// Smallest gap between the largest and runner-up value in any 2x2 window.
// With skip_zero_max, windows whose maximum is exactly 0 are ignored: after
// a ReLU such a window is all zeros and stays so under small perturbations.
double pool_margin(const TensorD& x, bool skip_zero_max = false) {
  const std::size_t planes = x.dim(0) * x.dim(1);
  const std::size_t h = x.dim(2);
  const std::size_t w = x.dim(3);
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t oy = 0; oy + 1 < h; oy += 2) {
      for (std::size_t ox = 0; ox + 1 < w; ox += 2) {
        double v[4];
        for (std::size_t k = 0; k < 4; ++k) v[k] = x[(p * h + oy + k / 2) * w + ox + k % 2];
        std::sort(v, v + 4);
        if (skip_zero_max && v[3] == 0.0) continue;
        margin = std::min(margin, v[3] - v[2]);
      }
    }
  }
  return margin;
}

// Smallest |pre-activation| of a fusion module's output ReLU.
double fusion_margin(FusionKind kind, const TensorD& stack, const TensorD& weight, const TensorD& bias) {
  const std::size_t n = stack.dim(0);
  const std::size_t k = stack.dim(1);
  const std::size_t s = stack.dim(2);
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < k; ++c) {
      double pre = 0.0;
      for (std::size_t b = 0; b < s; ++b) {
        const double g = stack[(i * k + c) * s + b];
        switch (kind) {
          case FusionKind::sum: pre += g; break;
          case FusionKind::conv: pre += weight[b] * g; break;
          case FusionKind::lc: pre += weight[c * s + b] * g; break;
        }
      }
      if (kind == FusionKind::conv) pre += bias[0];
      if (kind == FusionKind::lc) pre += bias[c];
      margin = std::min(margin, std::abs(pre));
    }
  }
  return margin;
}

Problem make_fusion_problem(FusionKind kind, Rng& rng) {
  constexpr std::size_t n = 2, k = 4, s = 3;
  for (;;) {
    Problem p;
    p.tensors.push_back(random_tensor({n, k, s}, rng));
    p.names.push_back("stack");
    TensorD weight;
    TensorD bias;
    if (kind == FusionKind::conv) {
      weight = random_tensor({s}, rng);
      bias = random_tensor({1}, rng, -0.5, 0.5);
    } else if (kind == FusionKind::lc) {
      weight = random_tensor({k, s}, rng);
      bias = random_tensor({k}, rng, -0.5, 0.5);
    }
    if (fusion_margin(kind, p.tensors[0], weight, bias) < kOpMargin) continue;
    if (kind != FusionKind::sum) {
      p.tensors.push_back(weight);
      p.tensors.push_back(bias);
      p.names.push_back("weight");
      p.names.push_back("bias");
    }
    p.run = [kind](const std::vector<TensorD>& t) {
      BranchStack<double> stack(t[0]);
      switch (kind) {
        case FusionKind::sum: return fuse_sum(stack);
        case FusionKind::conv: return fuse_conv(stack, t[1], t[2]);
        case FusionKind::lc: break;
      }
      return fuse_lc(stack, t[1], t[2]);
    };
    return p;
  }
}

Problem make_problem(const std::string& op, Rng& rng) {
  Problem p;
  if (op == "fc") {
    p.tensors = {random_tensor({3, 5}, rng), random_tensor({4, 5}, rng), random_tensor({4}, rng)};
    p.names = {"input", "weight", "bias"};
    p.run = [](const std::vector<TensorD>& t) { return fc_fb(t[0], t[1], t[2]); };
  } else if (op == "gap") {
    p.tensors = {random_tensor({2, 3, 4, 4}, rng)};
    p.names = {"input"};
    p.run = [](const std::vector<TensorD>& t) { return gap_fb(t[0]); };
  } else if (op == "relu") {
    p.tensors = {away_from_zero({2, 3, 4, 4}, rng)};
    p.names = {"input"};
    p.run = [](const std::vector<TensorD>& t) { return relu_fb(t[0]); };
  } else if (op == "conv1x1") {
    p.tensors = {random_tensor({2, 3, 5, 5}, rng), random_tensor({4, 3, 1, 1}, rng), random_tensor({4}, rng)};
    p.names = {"input", "weight", "bias"};
    p.run = [](const std::vector<TensorD>& t) { return conv2d_fb(t[0], t[1], t[2], 1, 0); };
  } else if (op == "conv3x3") {
    p.tensors = {random_tensor({2, 3, 5, 5}, rng), random_tensor({4, 3, 3, 3}, rng), random_tensor({4}, rng)};
    p.names = {"input", "weight", "bias"};
    p.run = [](const std::vector<TensorD>& t) { return conv2d_fb(t[0], t[1], t[2], 1, 1); };
  } else if (op == "maxpool") {
    TensorD x;
    do {
      x = random_tensor({2, 3, 4, 4}, rng);
    } while (pool_margin(x) < kOpMargin);
    p.tensors = {std::move(x)};
    p.names = {"input"};
    p.run = [](const std::vector<TensorD>& t) { return maxpool2d_fb(t[0], 2, 2); };
  } else if (op == "softmax_ce") {
    p.tensors = {random_tensor({4, 5}, rng, -2.0, 2.0)};
    p.names = {"logits"};
    for (std::size_t i = 0; i < 4; ++i) p.labels.push_back(static_cast<int>(rng.below(5)));
    p.scalar_loss = true;
  } else if (op == "stack") {
    p.tensors = {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)};
    p.names = {"g1", "g2", "g3"};
    p.run = [](const std::vector<TensorD>& t) {
      auto out = stack_branches<double>(t);
      LayerOutput<double> lo;
      lo.output = out.stack.values();
      lo.backward = [unstack = std::move(out.unstack)](const TensorD& up) {
        return Gradients<double>{unstack(up), {}};
      };
      return lo;
    };
  } else if (op == "fuse_sum") {
    return make_fusion_problem(FusionKind::sum, rng);
  } else if (op == "fuse_conv") {
    return make_fusion_problem(FusionKind::conv, rng);
  } else if (op == "fuse_lc") {
    return make_fusion_problem(FusionKind::lc, rng);
  } else {
    throw ConfigError("unknown op '" + op + "'");
  }
  return p;
}

GradCheckReport check_problem(const Problem& p, Rng& rng) {
  if (p.scalar_loss) {
    const auto labels = p.labels;
    Objective objective = [labels](const std::vector<TensorD>& t) {
      return softmax_ce_fb(t[0], labels).value.loss;
    };
    AnalyticGradient gradient = [labels](const std::vector<TensorD>& t) {
      return std::vector<TensorD>{softmax_ce_fb(t[0], labels).backward(1.0)};
    };
    return grad_check(objective, gradient, p.tensors, p.names);
  }
  const auto shape = p.run(p.tensors).output.shape();
  const TensorD r = random_tensor(shape, rng);
  Objective objective = [&](const std::vector<TensorD>& t) {
    const auto out = p.run(t).output;
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += r[i] * out[i];
    return s;
  };
  AnalyticGradient gradient = [&](const std::vector<TensorD>& t) {
    auto g = p.run(t).backward(r);
    std::vector<TensorD> all = std::move(g.inputs);
    for (auto& x : g.params) all.push_back(std::move(x));
    return all;
  };
  return grad_check(objective, gradient, p.tensors, p.names);
}

double graph_kink_margin(const GraphSpec& graph, const ModelParams<double>& params, const TensorMap<double>& outputs) {
  double margin = std::numeric_limits<double>::infinity();
  for (const auto& node : graph.nodes) {
    if (node.kind == NodeKind::relu) {
      for (const double v : outputs.at(node.inputs.front()).data()) margin = std::min(margin, std::abs(v));
    } else if (node.kind == NodeKind::maxpool) {
      margin = std::min(margin, pool_margin(outputs.at(node.inputs.front()), true));
    } else if (node.kind == NodeKind::fuse) {
      TensorD w;
      TensorD b;
      if (*graph.fusion != FusionKind::sum) {
        w = params.at(node.name + ".weight");
        b = params.at(node.name + ".bias");
      }
      margin = std::min(margin, fusion_margin(*graph.fusion, outputs.at(node.inputs.front()), w, b));
    }
  }
  return margin;
}

}  // namespace

bool OracleReport::passed() const {
  return std::all_of(rows.begin(), rows.end(), [](const OracleRow& r) { return r.passed; });
}

double OracleReport::max_error() const {
  double worst = 0.0;
  for (const auto& r : rows) worst = std::max(worst, r.max_relative_error);
  return worst;
}

const std::vector<std::string>& oracle_ops() {
  static const std::vector<std::string> ops{"fc",         "gap",   "relu",     "conv1x1",   "conv3x3", "maxpool",
                                            "softmax_ce", "stack", "fuse_sum", "fuse_conv", "fuse_lc"};
  return ops;
}

OracleReport run_op_grad_checks(std::size_t seeds, double threshold, const std::vector<std::string>& ops,
                                std::uint64_t first_seed) {
  OracleReport report;
  report.threshold = threshold;
  for (const auto& op : ops.empty() ? oracle_ops() : ops) {
    std::vector<OracleRow> rows;
    for (std::size_t i = 0; i < seeds; ++i) {
      Rng rng(mix_seed(first_seed + i, op));
      const auto problem = make_problem(op, rng);
      const auto check = check_problem(problem, rng);
      if (rows.empty()) {
        for (const auto& e : check.entries) rows.push_back({op, e.name, 0.0, 0, false});
      }
      for (std::size_t k = 0; k < rows.size(); ++k) {
        rows[k].max_relative_error = std::max(rows[k].max_relative_error, check.entries[k].max_relative_error);
        rows[k].seeds += 1;
      }
    }
    for (auto& row : rows) {
      row.passed = row.max_relative_error < threshold;
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

GraphSpec grad_check_graph(FusionKind fusion) {
  ArchitectureConfig a;
  a.widths = {4, 4, 6, 6};
  a.channels = 5;
  a.classes = 3;
  a.branch_points = {"pool1", "pool2"};
  a.fusion = fusion;
  return build_generic_cfn(a);
}

GraphCheckResult run_graph_grad_check(const GraphSpec& graph, std::uint64_t seed, double threshold,
                                      double min_margin) {
  constexpr std::size_t kMaxTries = 200;
  GraphCheckResult result;
  for (std::size_t attempt = 0; attempt < kMaxTries; ++attempt, ++seed) {
    const auto params = init_params<double>(graph, seed);
    Rng rng(mix_seed(seed, "graph-check-batch"));
    const TensorD images = random_tensor({4, graph.in_channels, 8, 8}, rng);
    std::vector<int> labels;
    for (std::size_t i = 0; i < 4; ++i) labels.push_back(static_cast<int>(rng.below(graph.classes)));

    ForwardOptions keep;
    keep.retain_outputs = true;
    const auto probe = forward(graph, params, images, labels, keep);
    const double margin = graph_kink_margin(graph, params, probe.tape.outputs);
    if (margin < min_margin) {
      ++result.rejected_seeds;
      continue;
    }

    std::vector<TensorD> tensors{images};
    std::vector<std::string> names{std::string(kInputNode)};
    for (const auto& [name, t] : params.tensors) {
      tensors.push_back(t);
      names.push_back(name);
    }
    auto unpack = [&](const std::vector<TensorD>& t) {
      ModelParams<double> p;
      for (std::size_t i = 1; i < t.size(); ++i) p.tensors.emplace(names[i], t[i]);
      return p;
    };
    Objective objective = [&](const std::vector<TensorD>& t) {
      return forward(graph, unpack(t), t[0], labels).loss.loss;
    };
    AnalyticGradient gradient = [&](const std::vector<TensorD>& t) {
      const auto fwd = forward(graph, unpack(t), t[0], labels);
      BackwardOptions opts;
      opts.retain_node_gradients = true;
      auto g = backward(fwd.tape, opts);
      std::vector<TensorD> out{g.nodes.at(std::string(kInputNode))};
      for (std::size_t i = 1; i < names.size(); ++i) out.push_back(g.params.at(names[i]));
      return out;
    };
    const auto check = grad_check(objective, gradient, tensors, names);
    result.seed = seed;
    result.kink_margin = margin;
    result.report.threshold = threshold;
    for (const auto& e : check.entries) {
      result.report.rows.push_back({"cfn_graph", e.name, e.max_relative_error, 1, e.max_relative_error < threshold});
    }
    return result;
  }
  throw NumericError("run_graph_grad_check: no seed with kink margin >= " + std::to_string(min_margin) + " in " +
                     std::to_string(kMaxTries) + " tries");
}

}  // namespace cfn
