#include "cfn_cli/cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "cfn/checkpoint.hpp"
#include "cfn/config.hpp"
#include "cfn/errors.hpp"
#include "cfn/fusion.hpp"
#include "cfn/oracle_suite.hpp"
#include "cfn/train.hpp"
#include "cfn/transfer.hpp"

namespace cfn::cli {
namespace {

namespace fs = std::filesystem;

// Options shared by every command that builds a model or loads data.
struct RunOptions {
  std::string config_path;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;  // config key -> value from a dedicated flag
  bool paper_schedule = false;
  std::string out_dir = "cfn-out";
};

void add_run_options(CLI::App* cmd, RunOptions& o) {
  cmd->add_option("--config", o.config_path, "Flat key = value config file (a manifest works too)");
  cmd->add_option("--set", o.sets, "Override one config key, key=value (repeatable)");
  cmd->add_flag("--paper-schedule", o.paper_schedule, "Use the full CIFAR schedule (lr 0.1, drop at 100k, stop at 120k)");
  for (const auto* key : {"model", "fusion", "seed", "lr", "iters", "batch", "dtype", "data"}) {
    cmd->add_option_function<std::string>(
        std::string("--") + key, [&o, key](const std::string& v) { o.flags[key] = v; },
        std::string("Shortcut for --set ") + key + "=...");
  }
}

void add_out_option(CLI::App* cmd, std::string& out_dir) {
  cmd->add_option("--out", out_dir, "Output directory (created if missing)")->capture_default_str();
}

RunConfig resolve(const RunOptions& o) {
  KeyValueConfig kv = o.config_path.empty() ? KeyValueConfig{} : KeyValueConfig::load(o.config_path);
  for (const auto& [key, value] : o.flags) kv.set(key, value);
  if (o.paper_schedule) kv.set("paper_schedule", "true");
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + s + "'");
    kv.set(s.substr(0, eq), s.substr(eq + 1));
  }
  return resolve_config(kv);
}

fs::path prepare_out(const std::string& dir) {
  const fs::path p(dir);
  fs::create_directories(p);
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
}

// Resolved config plus comment lines recording the command and its
// command-specific options. Comments are ignored when the file is loaded
// back with --config.
void write_manifest(const fs::path& dir, const std::string& command, const RunConfig& rc,
                    const std::vector<std::pair<std::string, std::string>>& options = {}) {
  std::string text = "# command: " + command + "\n";
  for (const auto& [k, v] : options) text += "# option " + k + " = " + v + "\n";
  text += rc.to_manifest();
  write_text(dir / "manifest.cfg", text);
}

// Shortest text that reads back to the same double.
std::string real(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string grouped(std::size_t v) {
  auto s = std::to_string(v);
  for (auto i = static_cast<std::ptrdiff_t>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

std::string percent(double fraction) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100.0 * fraction << "%";
  return os.str();
}

template <typename T>
ModelParams<T> load_model(const fs::path& path, const GraphSpec& graph) {
  const auto entries = read_checkpoint(path);
  auto params = from_checkpoint<T>(entries);
  check_params(graph, params);
  return params;
}

void write_log_csv(const fs::path& path, const std::vector<TrainRecord>& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "iter,lr,loss,top1,top5\n";
  for (const auto& r : log) {
    out << r.iteration << ',' << real(r.lr) << ',' << real(r.loss) << ',' << real(r.top1) << ','
        << (r.top5 ? real(*r.top5) : "") << '\n';
  }
}

bool has_test_split(const RunConfig& rc) {
  return rc.data == DataSource::synthetic ||
         ((rc.data == DataSource::cifar10 || rc.data == DataSource::cifar100) && !rc.test_files.empty());
}

template <typename T>
int do_train(const RunConfig& rc, const fs::path& out_dir, std::ostream& out, std::ostream& err) {
  const auto graph = rc.graph();
  const auto train_data = load_dataset(rc, Split::train);
  std::optional<Dataset> test_data;
  if (has_test_split(rc)) test_data = load_dataset(rc, Split::test);
  write_manifest(out_dir, "train", rc);

  TrainOptions<T> options;
  if (test_data) options.eval_data = &*test_data;
  options.on_record = [&](const TrainRecord& r) {
    out << "iter " << r.iteration << "  lr " << r.lr << "  loss " << r.loss << "  top1 " << percent(r.top1);
    if (r.top5) out << "  top5 " << percent(*r.top5);
    out << '\n';
  };
  const auto result = train<T>(graph, train_data, rc.train, options);
  write_log_csv(out_dir / "train_log.csv", result.log);
  write_checkpoint(out_dir / "model.ckpt", to_checkpoint(result.params));
  if (result.status == TrainStatus::diverged) {
    err << "error: " << result.diagnostic << "; last good parameters saved to " << (out_dir / "model.ckpt").string()
        << '\n';
    return kExitRuntime;
  }
  const auto train_eval = evaluate(graph, result.params, train_data, rc.train.batch_size);
  out << "finished " << result.iterations_run << " iterations, final batch loss " << real(result.final_loss) << '\n';
  out << "train top1 error " << percent(train_eval.top1) << '\n';
  if (test_data) {
    const auto test_eval = evaluate(graph, result.params, *test_data, rc.train.batch_size);
    out << "test top1 error " << percent(test_eval.top1);
    if (test_eval.top5) out << ", top5 error " << percent(*test_eval.top5);
    out << '\n';
  }
  return kExitOk;
}

template <typename T>
int do_eval(const RunConfig& rc, const fs::path& ckpt, Split split, const fs::path& out_dir, std::ostream& out) {
  const auto graph = rc.graph();
  const auto params = load_model<T>(ckpt, graph);
  const auto data = load_dataset(rc, split);
  const auto r = evaluate(graph, params, data, rc.train.batch_size);
  const std::string name = split == Split::train ? "train" : "test";
  write_text(out_dir / "eval.csv", "split,count,top1,top5\n" + name + "," + std::to_string(r.count) + "," +
                                       real(r.top1) + "," + (r.top5 ? real(*r.top5) : "") + "\n");
  out << name << " rows " << r.count << ", top1 error " << percent(r.top1);
  if (r.top5) out << ", top5 error " << percent(*r.top5);
  out << '\n';
  return kExitOk;
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw ConfigError("--split must be train or test, got '" + s + "'");
}

int do_params(const RunConfig& rc, const fs::path& out_dir, std::ostream& out) {
  const auto graph = rc.graph();
  const auto counts = count_parameters(graph);
  write_manifest(out_dir, "params", rc);
  out << "model " << rc.model << ", fusion " << (graph.has_fusion() ? std::string(to_string(*graph.fusion)) : "none")
      << ", K = " << graph.channels << ", C = " << graph.classes << ", S = " << graph.branch_count() << "\n\n";
  out << std::left << std::setw(18) << "component" << std::right << std::setw(12) << "parameters" << '\n';
  auto row = [&](const std::string& name, std::size_t v) {
    out << std::left << std::setw(18) << name << std::right << std::setw(12) << grouped(v) << '\n';
  };
  row("basic", counts.basic);
  row("extra branches", counts.extra_branches);
  row("fusion", counts.fusion);
  row("total", counts.total);

  std::ofstream csv(out_dir / "params.csv", std::ios::binary);
  csv << "component,parameters\nbasic," << counts.basic << "\nextra_branches," << counts.extra_branches
      << "\nfusion," << counts.fusion << "\ntotal," << counts.total << '\n';

  if (graph.has_fusion()) {
    const auto audit =
        prediction_strategy_audit(graph.channels, graph.classes, graph.branch_count(), *graph.fusion);
    out << "\nprediction layer parameters (FC layers plus fusion)\n";
    out << "  fuse features, one classifier:   " << grouped(audit.eflp_actual) << '\n';
    out << "  classifier per branch, fuse out: " << grouped(audit.eplf_actual) << '\n';
    out << "  published closed forms: S(C+1)+Wf = " << grouped(audit.eflp_paper_formula)
        << ", S*K(C+1)+Wf = " << grouped(audit.eplf_paper_formula) << '\n';
  }
  return kExitOk;
}

int do_grad_check(const std::vector<std::string>& ops, std::size_t seeds, double threshold, double graph_threshold,
                  bool graph_check, const fs::path& out_dir, std::ostream& out) {
  const auto report = run_op_grad_checks(seeds, threshold, ops);
  std::vector<OracleRow> rows = report.rows;
  bool ok = report.passed();
  std::string graph_note;
  if (graph_check) {
    const auto g = run_graph_grad_check(grad_check_graph(FusionKind::lc), 0, graph_threshold);
    ok = ok && g.report.passed();
    rows.insert(rows.end(), g.report.rows.begin(), g.report.rows.end());
    graph_note = "cfn_graph: 4x3x8x8 batch, seed " + std::to_string(g.seed) + " (" +
                 std::to_string(g.rejected_seeds) + " seeds skipped near a ReLU/max kink), threshold " +
                 real(graph_threshold);
  }
  std::ofstream csv(out_dir / "grad_check.csv", std::ios::binary);
  csv << "op,tensor,seeds,max_relative_error,threshold,result\n";
  out << std::left << std::setw(12) << "op" << std::setw(14) << "tensor" << std::right << std::setw(7) << "seeds"
      << std::setw(16) << "max rel err" << "  result\n";
  for (const auto& r : rows) {
    const double limit = r.op == "cfn_graph" ? graph_threshold : threshold;
    out << std::left << std::setw(12) << r.op << std::setw(14) << r.tensor << std::right << std::setw(7) << r.seeds
        << std::setw(16) << std::scientific << std::setprecision(3) << r.max_relative_error << std::defaultfloat
        << "  " << (r.passed ? "pass" : "FAIL") << '\n';
    csv << r.op << ',' << r.tensor << ',' << r.seeds << ',' << real(r.max_relative_error) << ',' << real(limit) << ','
        << (r.passed ? "pass" : "fail") << '\n';
  }
  if (!graph_note.empty()) out << graph_note << '\n';
  out << (ok ? "all checks passed" : "some checks FAILED") << " (op threshold " << real(threshold) << ")\n";
  return ok ? kExitOk : kExitRuntime;
}

std::string default_map_node(const GraphSpec& graph) {
  // The last main-path activation before global average pooling.
  return graph.node("gap").inputs.front();
}

void write_pgm_ranking(const TensorF& maps, std::size_t index, std::size_t top, const fs::path& dir,
                       std::ostream& out) {
  const std::size_t k = maps.dim(1), h = maps.dim(2), w = maps.dim(3);
  std::vector<float> one(maps.data().begin() + static_cast<std::ptrdiff_t>(index * k * h * w),
                         maps.data().begin() + static_cast<std::ptrdiff_t>((index + 1) * k * h * w));
  const TensorF image_maps({k, h, w}, std::move(one));
  const auto ranked = rank_feature_maps(image_maps);
  const auto files = write_feature_maps(image_maps, top, dir);
  out << "rank,channel,mean_activation,file\n";
  for (std::size_t r = 0; r < files.size(); ++r) {
    out << r + 1 << ',' << ranked.order[r] << ',' << real(ranked.means[ranked.order[r]]) << ','
        << files[r].filename().string() << '\n';
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"cfn: convolutional fusion networks, training and evaluation"};
  app.name("cfn");
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  RunOptions ro;
  std::string checkpoint;
  std::string split = "test";
  std::function<int()> action;

  auto* train_cmd = app.add_subcommand("train", "Train a model and write log, checkpoint and manifest");
  add_run_options(train_cmd, ro);
  add_out_option(train_cmd, ro.out_dir);
  train_cmd->callback([&] {
    action = [&] {
      const auto rc = resolve(ro);
      const auto dir = prepare_out(ro.out_dir);
      return rc.dtype == "f64" ? do_train<double>(rc, dir, out, err) : do_train<float>(rc, dir, out, err);
    };
  });

  auto* eval_cmd = app.add_subcommand("eval", "Top-1/top-5 error of a checkpoint");
  add_run_options(eval_cmd, ro);
  add_out_option(eval_cmd, ro.out_dir);
  eval_cmd->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  eval_cmd->add_option("--split", split, "train or test")->capture_default_str();
  eval_cmd->callback([&] {
    action = [&] {
      const auto rc = resolve(ro);
      const auto s = parse_split(split);
      const auto dir = prepare_out(ro.out_dir);
      write_manifest(dir, "eval", rc, {{"checkpoint", checkpoint}, {"split", split}});
      return rc.dtype == "f64" ? do_eval<double>(rc, checkpoint, s, dir, out) : do_eval<float>(rc, checkpoint, s, dir, out);
    };
  });

  auto* params_cmd = app.add_subcommand("params", "Parameter audit: basic / extra branches / fusion");
  add_run_options(params_cmd, ro);
  add_out_option(params_cmd, ro.out_dir);
  params_cmd->callback([&] {
    action = [&] { return do_params(resolve(ro), prepare_out(ro.out_dir), out); };
  });

  std::vector<std::string> ops;
  std::size_t seeds = 20;
  double threshold = 1e-6;
  double graph_threshold = 1e-5;
  bool all = false;
  bool no_graph = false;
  auto* gc_cmd = app.add_subcommand("grad-check", "Finite-difference checks of every op and a small CFN graph");
  gc_cmd->add_flag("--all", all, "Check every op and the whole graph (the default when no --op is given)");
  gc_cmd->add_option("--op", ops, "Check only these ops")->check(CLI::IsMember(oracle_ops()));
  gc_cmd->add_option("--seeds", seeds, "Random problems per op")->capture_default_str()->check(CLI::PositiveNumber);
  gc_cmd->add_option("--threshold", threshold, "Per-op relative error bound")->capture_default_str();
  gc_cmd->add_option("--graph-threshold", graph_threshold, "Whole-graph relative error bound")->capture_default_str();
  gc_cmd->add_flag("--no-graph", no_graph, "Skip the whole-graph check");
  add_out_option(gc_cmd, ro.out_dir);
  gc_cmd->callback([&] {
    action = [&] {
      if (all && !ops.empty()) throw ConfigError("--all and --op are mutually exclusive");
      const auto dir = prepare_out(ro.out_dir);
      const bool graph = !no_graph && ops.empty();
      write_manifest(dir, "grad-check", resolve(ro),
                     {{"seeds", std::to_string(seeds)}, {"threshold", real(threshold)},
                      {"graph_threshold", real(graph_threshold)}, {"graph", graph ? "true" : "false"}});
      return do_grad_check(ops, seeds, threshold, graph_threshold, graph, dir, out);
    };
  });

  bool l2 = false;
  std::size_t batch = 32;
  auto* extract_cmd = app.add_subcommand("extract", "Write fused features of a dataset split to CSV");
  add_run_options(extract_cmd, ro);
  add_out_option(extract_cmd, ro.out_dir);
  extract_cmd->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  extract_cmd->add_option("--split", split, "train or test")->capture_default_str();
  extract_cmd->add_flag("--l2", l2, "L2-normalize each feature row");
  extract_cmd->add_option("--extract-batch", batch, "Images per inference batch")->capture_default_str()->check(CLI::PositiveNumber);
  extract_cmd->callback([&] {
    action = [&] {
      const auto rc = resolve(ro);
      const auto s = parse_split(split);
      const auto graph = rc.graph();
      const auto params = load_model<float>(checkpoint, graph);
      const auto dir = prepare_out(ro.out_dir);
      write_manifest(dir, "extract", rc, {{"checkpoint", checkpoint}, {"split", split}, {"l2", l2 ? "true" : "false"}});
      const auto features = extract_fused_features(graph, params, load_dataset(rc, s), l2, batch);
      const auto file = dir / ("features_" + split + ".csv");
      write_feature_csv(file, features);
      out << "wrote " << features.rows() << " x " << features.dim << " features to " << file.string() << '\n';
      return kExitOk;
    };
  });

  std::string train_features, test_features;
  ProbeConfig probe;
  auto* probe_cmd = app.add_subcommand("probe", "Linear softmax probe on frozen feature CSVs");
  probe_cmd->add_option("--train-features", train_features, "Feature CSV for training")->required();
  probe_cmd->add_option("--test-features", test_features, "Feature CSV for testing")->required();
  probe_cmd->add_option("--epochs", probe.epochs, "SGD epochs")->capture_default_str();
  probe_cmd->add_option("--probe-lr", probe.learning_rate, "Learning rate")->capture_default_str();
  probe_cmd->add_option("--probe-batch", probe.batch_size, "Mini-batch size")->capture_default_str()->check(CLI::PositiveNumber);
  probe_cmd->add_option("--probe-seed", probe.seed, "Shuffle seed")->capture_default_str();
  add_out_option(probe_cmd, ro.out_dir);
  probe_cmd->callback([&] {
    action = [&] {
      const auto dir = prepare_out(ro.out_dir);
      write_manifest(dir, "probe", resolve(ro),
                     {{"train_features", train_features}, {"test_features", test_features},
                      {"epochs", std::to_string(probe.epochs)}, {"probe_lr", real(probe.learning_rate)},
                      {"probe_batch", std::to_string(probe.batch_size)}, {"probe_seed", std::to_string(probe.seed)}});
      const auto r = linear_probe(read_feature_csv(train_features), read_feature_csv(test_features), probe);
      write_text(dir / "probe.csv", "train_accuracy,test_accuracy\n" + real(r.train_accuracy) + "," +
                                        real(r.test_accuracy) + "\n");
      out << "train accuracy " << percent(r.train_accuracy) << ", test accuracy " << percent(r.test_accuracy) << '\n';
      if (!r.missing_classes.empty()) {
        out << "classes present in test but absent from training:";
        for (const int c : r.missing_classes) out << ' ' << c;
        out << '\n';
      }
      return kExitOk;
    };
  });

  std::string db_path, query_path, distance = "cosine", metric = "both";
  bool no_l2 = false;
  std::size_t top = 10;
  auto* retrieve_cmd = app.add_subcommand("retrieve", "KNN retrieval over feature CSVs with mAP and N-S score");
  retrieve_cmd->add_option("--db", db_path, "Database feature CSV (label = group / class id)")->required();
  retrieve_cmd->add_option("--queries", query_path, "Query feature CSV (default: the database itself)");
  retrieve_cmd->add_option("--distance", distance, "euclidean or cosine")->capture_default_str();
  retrieve_cmd->add_option("--metric", metric, "map, ns or both")->capture_default_str()->check(CLI::IsMember({"map", "ns", "both"}));
  retrieve_cmd->add_option("--top", top, "Ranked neighbours written per query")->capture_default_str();
  retrieve_cmd->add_flag("--no-l2", no_l2, "Use the features as stored (default: L2-normalize rows)");
  add_out_option(retrieve_cmd, ro.out_dir);
  retrieve_cmd->callback([&] {
    action = [&] {
      const auto d = parse_distance(distance);
      const auto dir = prepare_out(ro.out_dir);
      write_manifest(dir, "retrieve", resolve(ro),
                     {{"db", db_path}, {"queries", query_path.empty() ? db_path : query_path}, {"distance", distance},
                      {"metric", metric}, {"l2", no_l2 ? "false" : "true"}});
      auto db = read_feature_csv(db_path);
      auto queries = query_path.empty() ? db : read_feature_csv(query_path);
      if (!no_l2) {
        l2_normalize(db);
        l2_normalize(queries);
      }
      const auto result = knn_retrieve(db, queries, d);
      std::ofstream csv(dir / "rankings.csv", std::ios::binary);
      csv << "query,rank,db_index,distance\n";
      for (std::size_t q = 0; q < result.rankings.size(); ++q) {
        for (std::size_t r = 0; r < std::min(top, result.rankings[q].size()); ++r) {
          csv << q << ',' << r + 1 << ',' << result.rankings[q][r] << ',' << real(result.distances[q][r]) << '\n';
        }
      }
      std::string metrics = "metric,value\n";
      if (metric != "ns") {
        std::vector<std::vector<std::size_t>> relevant(queries.rows());
        for (std::size_t q = 0; q < queries.rows(); ++q) {
          for (std::size_t i = 0; i < db.rows(); ++i) {
            if (db.labels[i] == queries.labels[q]) relevant[q].push_back(i);
          }
        }
        const double m = mean_ap(result, relevant);
        out << "mAP " << real(m) << '\n';
        metrics += "mAP," + real(m) + "\n";
      }
      if (metric != "map") {
        const double ns = ns_score(result, db.labels, queries.labels);
        out << "N-S score " << real(ns) << '\n';
        metrics += "N-S," + real(ns) + "\n";
      }
      write_text(dir / "metrics.csv", metrics);
      return kExitOk;
    };
  });

  std::string node;
  std::size_t image_index = 0;
  std::size_t top_m = 4;
  auto* maps_cmd = app.add_subcommand("rank-maps", "Rank one image's feature maps by mean activation and write PGMs");
  add_run_options(maps_cmd, ro);
  add_out_option(maps_cmd, ro.out_dir);
  maps_cmd->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  maps_cmd->add_option("--split", split, "train or test")->capture_default_str();
  maps_cmd->add_option("--node", node, "Node whose maps are ranked (default: input of the main GAP)");
  maps_cmd->add_option("--index", image_index, "Image row in the split")->capture_default_str();
  maps_cmd->add_option("--top", top_m, "Number of maps written")->capture_default_str();
  maps_cmd->callback([&] {
    action = [&] {
      const auto rc = resolve(ro);
      const auto graph = rc.graph();
      const auto params = load_model<float>(checkpoint, graph);
      const auto data = load_dataset(rc, parse_split(split));
      if (image_index >= data.size()) {
        throw ConfigError("--index " + std::to_string(image_index) + " is outside the " + std::to_string(data.size()) +
                          " rows of the split");
      }
      const std::string name = node.empty() ? default_map_node(graph) : node;
      const std::vector<std::size_t> idx{image_index};
      const auto maps = infer(graph, params, gather_images(data, idx), {name}).at(name);
      if (maps.rank() != 4) throw ConfigError("node '" + name + "' has no spatial maps");
      const auto dir = prepare_out(ro.out_dir);
      write_manifest(dir, "rank-maps", rc,
                     {{"checkpoint", checkpoint}, {"split", split}, {"node", name},
                      {"index", std::to_string(image_index)}, {"top", std::to_string(top_m)}});
      std::ostringstream table;
      write_pgm_ranking(maps, 0, top_m, dir / "maps", table);
      write_text(dir / "maps" / "ranking.csv", table.str());
      out << table.str();
      return kExitOk;
    };
  });

  auto* lc_cmd = app.add_subcommand("lc-weights", "Per-branch mean LC fusion weights and the full K x S matrix");
  add_run_options(lc_cmd, ro);
  add_out_option(lc_cmd, ro.out_dir);
  lc_cmd->add_option("--checkpoint", checkpoint, "Model checkpoint (default: fresh initialization from the seed)");
  lc_cmd->callback([&] {
    action = [&] {
      const auto rc = resolve(ro);
      const auto graph = rc.graph();
      const auto params = checkpoint.empty() ? init_params<double>(graph, rc.train.seed) : load_model<double>(checkpoint, graph);
      const auto table = lc_weight_table(graph, params);
      const auto dir = prepare_out(ro.out_dir);
      write_manifest(dir, "lc-weights", rc, {{"checkpoint", checkpoint.empty() ? "<init>" : checkpoint}});
      dump_lc_weights(table, dir);
      double sum = 0.0;
      out << "branch,mean_weight\n";
      for (std::size_t s = 0; s < table.branches; ++s) {
        out << s + 1 << ',' << real(table.branch_means[s]) << '\n';
        sum += table.branch_means[s];
      }
      out << "sum of branch means " << real(sum) << '\n';
      return kExitOk;
    };
  });

  auto* synth_cmd = app.add_subcommand("make-synth", "Export the synthetic train/test sets to checkpoint containers");
  add_run_options(synth_cmd, ro);
  add_out_option(synth_cmd, ro.out_dir);
  synth_cmd->callback([&] {
    action = [&] {
      auto rc = resolve(ro);
      if (rc.data != DataSource::synthetic) throw ConfigError("make-synth needs data = synthetic");
      rc.gcn = false;
      const auto dir = prepare_out(ro.out_dir);
      write_manifest(dir, "make-synth", rc);
      for (const auto s : {Split::train, Split::test}) {
        const auto data = load_dataset(rc, s);
        const Shape label_shape{data.size()};
        std::vector<double> labels(data.labels.begin(), data.labels.end());
        const std::vector<CheckpointEntry> entries{{"images", data.images},
                                                   {"labels", TensorD(label_shape, std::move(labels))}};
        const auto file = dir / (s == Split::train ? "synthetic_train.ckpt" : "synthetic_test.ckpt");
        write_checkpoint(file, entries);
        out << "wrote " << data.size() << " images of " << to_string(data.images.shape()) << " to " << file.string()
            << '\n';
      }
      return kExitOk;
    };
  });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << sub->help();
    return kExitValidation;
  }

  try {
    return action ? action() : kExitValidation;
  } catch (const std::invalid_argument& e) {  // ConfigError, ShapeError
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {  // FormatError, NumericError, I/O
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace cfn::cli
