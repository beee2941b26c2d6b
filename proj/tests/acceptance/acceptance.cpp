// Acceptance checks 1-8. Prints one line per criterion:
//   criterion <n> <PASS|FAIL|SKIPPED> <name>: <detail>
// and exits non-zero when any criterion fails.

#include <algorithm>
#include <array>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "cfn/checkpoint.hpp"
#include "cfn/config.hpp"
#include "cfn/fusion.hpp"
#include "cfn/model.hpp"
#include "cfn/oracle_suite.hpp"
#include "cfn/rng.hpp"
#include "cfn/train.hpp"
#include "cfn/transfer.hpp"
#include "cfn_cli/cli.hpp"

namespace fs = std::filesystem;
using namespace cfn;

namespace {

enum class Verdict { pass, fail, skipped };

struct Outcome {
  Verdict verdict = Verdict::fail;
  std::string detail;
};

// Pinned tolerances and budgets.
constexpr double kOpGradTol = 1e-6;
constexpr double kGraphGradTol = 1e-5;
constexpr std::size_t kOpSeeds = 20;
constexpr double kInitTol = 1e-12;
constexpr double kRoutingTol = 1e-12;
constexpr double kMinTrainAccuracy = 0.98;
constexpr double kCifarMarginPoints = 1.0;
constexpr double kBudget1 = 1.0;
constexpr double kBudget2 = 300.0;
constexpr double kBudget5 = 600.0;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

Outcome pass_if(bool ok, std::string detail) { return {ok ? Verdict::pass : Verdict::fail, std::move(detail)}; }

// 1. Parameter reconciliation with the CIFAR builders.
Outcome criterion_parameters() {
  const auto t0 = Clock::now();
  const auto plain = count_parameters(build_plain_cifar_cnn(10));
  const auto sum = count_parameters(build_cfn_cifar(10, FusionKind::sum));
  const auto conv = count_parameters(build_cfn_cifar(10, FusionKind::conv));
  const auto lc = count_parameters(build_cfn_cifar(10, FusionKind::lc));
  const double elapsed = seconds_since(t0);
  const bool ok = plain.basic == 1286698 && plain.total == 1286698 && lc.basic == 1286698 &&
                  lc.extra_branches == 74112 && sum.fusion == 0 && conv.fusion == 4 && lc.fusion == 768 &&
                  elapsed < kBudget1;
  return pass_if(ok, "basic " + std::to_string(lc.basic) + ", branches " + std::to_string(lc.extra_branches) +
                         ", fusion sum/conv/lc " + std::to_string(sum.fusion) + "/" + std::to_string(conv.fusion) +
                         "/" + std::to_string(lc.fusion) + ", " + fmt(elapsed) + " s");
}

// 2. Finite-difference checks of every op and of the whole graph.
Outcome criterion_gradients() {
  const auto t0 = Clock::now();
  const auto ops = run_op_grad_checks(kOpSeeds, kOpGradTol);
  bool ok = ops.passed() && ops.rows.size() >= oracle_ops().size();
  for (const auto& row : ops.rows) ok = ok && row.seeds >= kOpSeeds;
  double graph_error = 0.0;
  for (const auto kind : {FusionKind::sum, FusionKind::conv, FusionKind::lc}) {
    const auto g = run_graph_grad_check(grad_check_graph(kind), 0, kGraphGradTol);
    ok = ok && g.report.passed();
    graph_error = std::max(graph_error, g.report.max_error());
  }
  const double elapsed = seconds_since(t0);
  ok = ok && graph_error < kGraphGradTol && elapsed < kBudget2;
  return pass_if(ok, "ops max rel err " + fmt(ops.max_error()) + " over " + std::to_string(ops.rows.size()) +
                         " checks x " + std::to_string(kOpSeeds) + " seeds, graph " + fmt(graph_error) + ", " +
                         fmt(elapsed) + " s");
}

// 3. Exact fusion equivalences.
Outcome criterion_fusion() {
  bool sum_ok = true, tied_ok = true, init_ok = true;
  double init_gap = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const std::size_t n = 4, k = 7, s = 3;
    const BranchStack<double> g(TensorD::uniform({n, k, s}, seed, -1.0, 1.0));
    sum_ok = sum_ok &&
             fuse_conv(g, TensorD::full({s}, 1.0), TensorD({1})).output.bitwise_equal(fuse_sum(g).output);

    const auto w = TensorD::uniform({s}, seed + 100, -1.0, 1.0);
    const auto b = TensorD::uniform({1}, seed + 200, -1.0, 1.0);
    TensorD wl({k, s});
    TensorD bl({k});
    for (std::size_t i = 0; i < k; ++i) {
      bl[i] = b[0];
      for (std::size_t j = 0; j < s; ++j) wl.at({i, j}) = w[j];
    }
    tied_ok = tied_ok && fuse_conv(g, w, b).output.bitwise_equal(fuse_lc(g, wl, bl).output);

    const BranchStack<double> pos(TensorD::uniform({n, k, s}, seed + 300, 0.0, 2.0));
    const auto init = init_lc<double>(k, s);
    const auto lc = fuse_lc(pos, init.weight, init.bias).output;
    const auto total = fuse_sum(pos).output;
    for (std::size_t i = 0; i < lc.size(); ++i) {
      init_gap = std::max(init_gap, std::abs(lc[i] - total[i] / static_cast<double>(s)));
    }
  }
  init_ok = init_gap <= kInitTol;
  return pass_if(sum_ok && tied_ok && init_ok, std::string("conv(1,0)==sum ") + (sum_ok ? "bitwise" : "differs") +
                                                   ", tied lc==conv " + (tied_ok ? "bitwise" : "differs") +
                                                   ", init gap " + fmt(init_gap));
}

// 4. Gradient routing through the branches.
Outcome criterion_routing() {
  ArchitectureConfig c;
  c.widths = {4, 4, 6, 6};
  c.channels = 5;
  c.classes = 3;
  c.branch_points = {"pool1", "pool2"};
  const auto graph = build_generic_cfn(c);
  auto params = init_params<double>(graph, 3);
  params.tensors.at("fuse.weight") = TensorD::uniform({5, 3}, 8, 0.1, 1.0);
  const auto x = TensorD::uniform({4, 3, 8, 8}, 9, -1.0, 1.0);
  const std::vector<int> labels{0, 2, 1, 2};
  const auto fwd = forward(graph, params, x, labels);

  BackwardOptions joint_opts;
  joint_opts.retain_node_gradients = true;
  const auto joint = backward(fwd.tape, joint_opts);
  double worst = 0.0;
  const std::vector<std::array<std::string, 3>> points{{"pool1", "branch1_conv", "conv3"},
                                                       {"pool2", "branch2_conv", "conv5"}};
  for (const auto& [pool, branch, main] : points) {
    auto via_branch = joint_opts;
    via_branch.masked_edges = {{main, pool}};
    auto via_main = joint_opts;
    via_main.masked_edges = {{branch, pool}};
    const auto a = backward(fwd.tape, via_branch).nodes.at(pool);
    const auto b = backward(fwd.tape, via_main).nodes.at(pool);
    const auto& j = joint.nodes.at(pool);
    for (std::size_t i = 0; i < j.size(); ++i) worst = std::max(worst, std::abs(a[i] + b[i] - j[i]));
  }

  bool cut_ok = true;
  for (std::size_t col = 0; col < 2; ++col) {
    auto p = init_params<double>(graph, 12);
    auto& w = p.tensors.at("fuse.weight");
    for (std::size_t k = 0; k < 5; ++k) w.at({k, col}) = 0.0;
    const auto grads = backward(forward(graph, p, x, labels).tape);
    const std::string node = "branch" + std::to_string(col + 1) + "_conv";
    for (const auto* suffix : {".weight", ".bias"}) {
      for (const double v : grads.params.at(node + suffix).values()) cut_ok = cut_ok && v == 0.0;
    }
  }
  return pass_if(worst <= kRoutingTol && cut_ok, "max |branch+main-joint| " + fmt(worst) +
                                                     ", zeroed LC column gradients " + (cut_ok ? "exactly 0" : "nonzero"));
}

// 5. Toy convergence and bitwise rerun.
Outcome criterion_convergence() {
  const auto t0 = Clock::now();
  auto cfn_cfg = resolve_config(KeyValueConfig{});
  KeyValueConfig plain_kv;
  plain_kv.set("model", "plain");
  const auto plain_cfg = resolve_config(plain_kv);
  // make_synthetic(3, 2000, 16, seed 1) followed by GCN; 600 steps of 100 = 30 epochs.
  const auto data = load_dataset(cfn_cfg, Split::train);
  const double epochs = static_cast<double>(cfn_cfg.train.max_iterations * cfn_cfg.train.batch_size) /
                        static_cast<double>(data.size());

  auto run = [&](const RunConfig& rc) { return train<float>(rc.graph(), data, rc.train); };
  const auto plain = run(plain_cfg);
  const auto cfn = run(cfn_cfg);
  const auto again = run(cfn_cfg);
  const double plain_acc = 1.0 - evaluate(plain_cfg.graph(), plain.params, data).top1;
  const double cfn_acc = 1.0 - evaluate(cfn_cfg.graph(), cfn.params, data).top1;
  const bool bitwise = std::bit_cast<std::uint64_t>(cfn.final_loss) == std::bit_cast<std::uint64_t>(again.final_loss);
  const double elapsed = seconds_since(t0);
  const bool ok = plain.status == TrainStatus::completed && cfn.status == TrainStatus::completed &&
                  plain_acc >= kMinTrainAccuracy && cfn_acc >= kMinTrainAccuracy && bitwise && epochs <= 30.0 &&
                  elapsed < kBudget5;
  return pass_if(ok, "train accuracy plain " + fmt(plain_acc) + ", cfn " + fmt(cfn_acc) + " after " + fmt(epochs) +
                         " epochs, rerun " + (bitwise ? "bitwise equal" : "differs") + ", " + fmt(elapsed) + " s");
}

// 6. Desk-scale CIFAR-10 comparison; needs the binary batches locally.
Outcome criterion_cifar() {
  const char* env = std::getenv("CFN_CIFAR10_DIR");
  if (env == nullptr || !fs::exists(fs::path(env) / "test_batch.bin")) {
    return {Verdict::skipped, "set CFN_CIFAR10_DIR to a directory holding data_batch_1..5.bin and test_batch.bin"};
  }
  const fs::path dir(env);
  auto make = [&](bool cfn_model, std::uint64_t seed) {
    KeyValueConfig kv;
    kv.set("model", cfn_model ? "cfn" : "plain");
    kv.set("data", "cifar10");
    kv.set("C", "10");
    kv.set("widths", "16,16,32,32,64,64");
    kv.set("K", "64");
    if (cfn_model) kv.set("branch_points", "pool2,pool3");
    std::string train_files;
    for (int b = 1; b <= 5; ++b) train_files += (b > 1 ? "," : "") + (dir / ("data_batch_" + std::to_string(b) + ".bin")).string();
    kv.set("train_files", train_files);
    kv.set("test_files", (dir / "test_batch.bin").string());
    kv.set("train_limit", "5000");
    kv.set("test_limit", "1000");
    kv.set("iters", "1500");
    kv.set("seed", std::to_string(seed));
    return resolve_config(kv);
  };
  std::vector<double> plain_err, cfn_err;
  const auto probe_cfg = make(false, 1);
  const auto train_data = load_dataset(probe_cfg, Split::train);
  const auto test_data = load_dataset(probe_cfg, Split::test);
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    for (const bool use_cfn : {false, true}) {
      const auto rc = make(use_cfn, seed);
      const auto r = train<float>(rc.graph(), train_data, rc.train);
      if (r.status != TrainStatus::completed) return {Verdict::fail, "seed " + std::to_string(seed) + ": " + r.diagnostic};
      (use_cfn ? cfn_err : plain_err).push_back(100.0 * evaluate(rc.graph(), r.params, test_data).top1);
    }
  }
  std::sort(plain_err.begin(), plain_err.end());
  std::sort(cfn_err.begin(), cfn_err.end());
  return pass_if(cfn_err[1] <= plain_err[1] + kCifarMarginPoints,
                 "median test error plain " + fmt(plain_err[1]) + "%, cfn " + fmt(cfn_err[1]) + "%");
}

// 7. Retrieval metrics on constructed databases.
Outcome criterion_retrieval() {
  Rng rng(7);
  FeatureMatrix db;
  db.dim = 16;
  std::vector<int> groups;
  for (int g = 0; g < 25; ++g) {
    std::vector<double> v(db.dim);
    for (auto& x : v) x = rng.normal();
    for (int copy = 0; copy < 4; ++copy) {
      db.values.insert(db.values.end(), v.begin(), v.end());
      db.labels.push_back(g);
      groups.push_back(g);
    }
  }
  const auto copies = knn_retrieve(db, db, Distance::cosine);
  const double ns = ns_score(copies, groups, groups);

  FeatureMatrix distinct;
  distinct.dim = 16;
  for (std::size_t i = 0; i < 100 * distinct.dim; ++i) distinct.values.push_back(rng.normal());
  distinct.labels.assign(100, 0);
  bool rank1 = true;
  double map = 0.0;
  for (const auto d : {Distance::euclidean, Distance::cosine}) {
    const auto r = knn_retrieve(distinct, distinct, d);
    std::vector<std::vector<std::size_t>> relevant(distinct.rows());
    for (std::size_t i = 0; i < distinct.rows(); ++i) {
      relevant[i] = {i};
      rank1 = rank1 && r.rankings[i][0] == i;
    }
    const double m = mean_ap(r, relevant);
    map = d == Distance::euclidean ? m : std::min(map, m);
  }
  // With duplicated rows the exact-tie rule still puts each row's first copy on top.
  for (std::size_t i = 0; i < db.rows(); i += 4) rank1 = rank1 && copies.rankings[i][0] == i;
  return pass_if(ns == 4.0 && map == 1.0 && rank1,
                 "N-S " + fmt(ns) + ", mAP " + fmt(map) + ", rank-1 self retrieval " + (rank1 ? "all rows" : "violated"));
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 8. Checkpoint round trip and manifest replay.
Outcome criterion_artifacts() {
  const auto work = fs::temp_directory_path() / "cfn_acceptance_artifacts";
  fs::remove_all(work);
  fs::create_directories(work);

  KeyValueConfig kv;
  kv.set("synth_count", "200");
  kv.set("iters", "40");
  kv.set("batch", "50");
  const auto rc = resolve_config(kv);
  const auto data = load_dataset(rc, Split::train);
  const auto trained = train<float>(rc.graph(), data, rc.train);
  write_checkpoint(work / "trained.ckpt", to_checkpoint(trained.params));
  const auto loaded = from_checkpoint<float>(read_checkpoint(work / "trained.ckpt"));
  bool round_trip = loaded.tensors.size() == trained.params.tensors.size();
  for (const auto& [name, t] : trained.params.tensors) {
    round_trip = round_trip && loaded.tensors.contains(name) && loaded.at(name).bitwise_equal(t);
  }

  std::ostringstream sink;
  const std::vector<std::string> base{"train", "--set", "synth_count=200", "--iters", "40", "--batch", "50",
                                      "--set", "eval_every=10", "--out", (work / "run1").string()};
  int code = cli::run(base, sink, sink);
  code = std::max(code, cli::run({"train", "--config", (work / "run1" / "manifest.cfg").string(), "--out",
                                  (work / "run2").string()},
                                 sink, sink));
  const auto log1 = slurp(work / "run1" / "train_log.csv");
  const bool replay = code == 0 && !log1.empty() && log1 == slurp(work / "run2" / "train_log.csv") &&
                      slurp(work / "run1" / "model.ckpt") == slurp(work / "run2" / "model.ckpt");
  fs::remove_all(work);
  return pass_if(round_trip && replay, std::string("checkpoint round trip ") + (round_trip ? "bitwise" : "differs") +
                                           ", manifest replay log " + (replay ? "bitwise" : "differs"));
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"parameter reconciliation", criterion_parameters},
      {"gradient oracle", criterion_gradients},
      {"fusion equivalences", criterion_fusion},
      {"branch gradient routing", criterion_routing},
      {"toy convergence", criterion_convergence},
      {"desk-scale CIFAR-10", criterion_cifar},
      {"retrieval metrics", criterion_retrieval},
      {"artifact plumbing", criterion_artifacts},
  };
  bool failed = false;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {Verdict::fail, std::string("exception: ") + e.what()};
    }
    const char* word = o.verdict == Verdict::pass ? "PASS" : o.verdict == Verdict::fail ? "FAIL" : "SKIPPED";
    failed = failed || o.verdict == Verdict::fail;
    std::cout << "criterion " << (i + 1) << " " << word << " " << criteria[i].first << ": " << o.detail << std::endl;
  }
  return failed ? 1 : 0;
}
