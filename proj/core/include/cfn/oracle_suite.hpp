#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cfn/graph.hpp"

// Finite-difference checks of every differentiable op and of a small CFN
// graph, in double precision. Backs the `grad-check` command.
namespace cfn {

struct OracleRow {
  std::string op;
  std::string tensor;  // input or parameter checked
  double max_relative_error = 0.0;
  std::size_t seeds = 0;
  bool passed = false;
};

struct OracleReport {
  std::vector<OracleRow> rows;
  double threshold = 0.0;

  bool passed() const;
  double max_error() const;
};

// Names accepted by run_op_grad_checks: fc, gap, relu, conv1x1, conv3x3,
// maxpool, softmax_ce, stack, fuse_sum, fuse_conv, fuse_lc.
const std::vector<std::string>& oracle_ops();

// Each op is checked on `seeds` random problems (seed values first_seed,
// first_seed+1, ...). The scalar checked is sum(r * out) for a fixed random
// r, or the loss itself for softmax_ce. Inputs to kinked ops (relu, maxpool,
// the fusions' output ReLU) are resampled until every decision is at least
// 1e-3 away from its switching point, so a step of kGradCheckEps never
// crosses a kink. Empty `ops` means all.
OracleReport run_op_grad_checks(std::size_t seeds = 20, double threshold = 1e-6,
                                const std::vector<std::string>& ops = {}, std::uint64_t first_seed = 0);

// Small CFN used for the whole-graph check: 3x3 widths 4,4,6,6, K = 5, C = 3,
// branches at pool1 and pool2 (S = 3), the given fusion.
GraphSpec grad_check_graph(FusionKind fusion = FusionKind::lc);

struct GraphCheckResult {
  OracleReport report;
  std::uint64_t seed = 0;       // seed actually used
  double kink_margin = 0.0;     // smallest distance of any ReLU/max decision to its switch
  std::size_t rejected_seeds = 0;
};

// Mean loss of a 4x3x8x8 batch with respect to every parameter and the
// input. Seeds whose forward pass puts some ReLU input or max-pool runner-up
// within `min_margin` of its switching point are skipped (counted in
// rejected_seeds), starting from `seed`.
GraphCheckResult run_graph_grad_check(const GraphSpec& graph, std::uint64_t seed = 0, double threshold = 1e-5,
                                      double min_margin = 1e-4);

}  // namespace cfn
