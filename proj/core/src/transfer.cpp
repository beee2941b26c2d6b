#include "cfn/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "cfn/errors.hpp"
#include "cfn/layers.hpp"
#include "cfn/train.hpp"

namespace cfn {
namespace {

const NodeSpec& fuse_node(const GraphSpec& graph) {
  for (const auto& node : graph.nodes) {
    if (node.kind == NodeKind::fuse) return node;
  }
  throw ConfigError("model has no fusion node; fused features need a CFN graph");
}

double squared_distance(const double* a, const double* b, std::size_t dim) {
  double s = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

double norm(const double* a, std::size_t dim) {
  double s = 0.0;
  for (std::size_t i = 0; i < dim; ++i) s += a[i] * a[i];
  return std::sqrt(s);
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  return out;
}

}  // namespace

void FeatureMatrix::validate() const {
  if (values.size() != rows() * dim) {
    throw ShapeError("feature matrix holds " + std::to_string(values.size()) + " values for " +
                     std::to_string(rows()) + " rows of dimension " + std::to_string(dim));
  }
}

void l2_normalize(FeatureMatrix& features) {
  features.validate();
  for (std::size_t r = 0; r < features.rows(); ++r) {
    double* row = features.values.data() + r * features.dim;
    const double n = norm(row, features.dim);
    if (n == 0.0) continue;
    for (std::size_t i = 0; i < features.dim; ++i) row[i] /= n;
  }
  features.l2_normalized = true;
}

FeatureMatrix extract_fused_features(const GraphSpec& graph, const ModelParams<float>& params,
                                     const Dataset& data, bool l2_normalized, std::size_t batch_size) {
  const auto& fuse = fuse_node(graph);
  data.validate();
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  FeatureMatrix f;
  f.dim = graph.channels;
  f.labels = data.labels;
  f.values.reserve(data.size() * f.dim);
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto out = infer(graph, params, gather_images(data, idx), {fuse.name});
    for (const float v : out.at(fuse.name).data()) f.values.push_back(v);
  }
  f.validate();
  if (l2_normalized) l2_normalize(f);
  return f;
}

void write_feature_csv(const std::filesystem::path& path, const FeatureMatrix& features) {
  features.validate();
  auto out = open_out(path);
  out << "label";
  for (std::size_t i = 0; i < features.dim; ++i) out << ",f" << i;
  out << '\n';
  out.precision(17);
  for (std::size_t r = 0; r < features.rows(); ++r) {
    out << features.labels[r];
    for (std::size_t i = 0; i < features.dim; ++i) out << ',' << features.row(r)[i];
    out << '\n';
  }
}

FeatureMatrix read_feature_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || !line.starts_with("label")) {
    throw FormatError(path.string() + ": missing 'label,f0,...' header");
  }
  FeatureMatrix f;
  f.dim = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != f.dim + 1) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(f.dim + 1) + " fields");
    }
    try {
      f.labels.push_back(std::stoi(cells[0]));
      for (std::size_t i = 1; i < cells.size(); ++i) f.values.push_back(std::stod(cells[i]));
    } catch (const std::logic_error&) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": bad number");
    }
  }
  return f;
}

ProbeResult linear_probe(const FeatureMatrix& train_set, const FeatureMatrix& test_set, const ProbeConfig& config) {
  train_set.validate();
  test_set.validate();
  if (train_set.rows() == 0 || test_set.rows() == 0) throw ShapeError("linear_probe: empty feature set");
  if (train_set.dim != test_set.dim) {
    throw ShapeError("linear_probe: train dimension " + std::to_string(train_set.dim) + " != test dimension " +
                     std::to_string(test_set.dim));
  }
  int max_label = 0;
  for (const int l : train_set.labels) max_label = std::max(max_label, l);
  for (const int l : test_set.labels) max_label = std::max(max_label, l);
  const auto classes = static_cast<std::size_t>(max_label) + 1;
  const std::size_t dim = train_set.dim;

  ProbeResult result;
  std::vector<bool> present(classes, false);
  for (const int l : train_set.labels) present[static_cast<std::size_t>(l)] = true;
  for (const int l : test_set.labels) {
    if (!present[static_cast<std::size_t>(l)] &&
        std::find(result.missing_classes.begin(), result.missing_classes.end(), l) == result.missing_classes.end()) {
      result.missing_classes.push_back(l);
    }
  }
  std::sort(result.missing_classes.begin(), result.missing_classes.end());

  ModelParams<double> params;
  params.tensors.emplace("probe.weight", TensorD({classes, dim}));
  params.tensors.emplace("probe.bias", TensorD({classes}));
  TensorMap<double> velocity;
  TrainConfig sgd;
  sgd.momentum = config.momentum;
  sgd.weight_decay = config.weight_decay;

  auto rows_tensor = [&](const FeatureMatrix& f, std::span<const std::size_t> idx) {
    TensorD x({idx.size(), dim});
    for (std::size_t j = 0; j < idx.size(); ++j) {
      std::copy_n(f.row(idx[j]), dim, x.data().begin() + static_cast<std::ptrdiff_t>(j * dim));
    }
    return x;
  };

  BatchStream stream(train_set.rows(), std::min(config.batch_size, train_set.rows()), config.seed);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (const auto& idx : stream.epoch_batches(epoch)) {
      std::vector<int> labels;
      for (const auto i : idx) labels.push_back(train_set.labels[i]);
      auto fc = fc_fb(rows_tensor(train_set, idx), params.at("probe.weight"), params.at("probe.bias"));
      auto loss = softmax_ce_fb(fc.output, labels);
      auto g = fc.backward(loss.backward(1.0));
      TensorMap<double> grads;
      grads.emplace("probe.weight", std::move(g.params[0]));
      grads.emplace("probe.bias", std::move(g.params[1]));
      sgd_step(params, grads, velocity, sgd, config.learning_rate);
    }
  }

  auto accuracy = [&](const FeatureMatrix& f) {
    std::vector<std::size_t> idx(f.rows());
    std::iota(idx.begin(), idx.end(), 0);
    const auto logits = fc_fb(rows_tensor(f, idx), params.at("probe.weight"), params.at("probe.bias")).output;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < f.rows(); ++i) {
      if (label_rank(logits.data().data() + i * classes, classes, f.labels[i]) == 0) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(f.rows());
  };
  result.train_accuracy = accuracy(train_set);
  result.test_accuracy = accuracy(test_set);
  return result;
}

Distance parse_distance(std::string_view text) {
  if (text == "euclidean") return Distance::euclidean;
  if (text == "cosine") return Distance::cosine;
  throw ConfigError("unknown distance '" + std::string(text) + "' (expected euclidean or cosine)");
}

std::string_view to_string(Distance d) { return d == Distance::euclidean ? "euclidean" : "cosine"; }

RetrievalResult knn_retrieve(const FeatureMatrix& db, const FeatureMatrix& queries, Distance distance) {
  db.validate();
  queries.validate();
  if (db.rows() == 0) throw ShapeError("knn_retrieve: empty database");
  if (db.dim != queries.dim) {
    throw ShapeError("knn_retrieve: database dimension " + std::to_string(db.dim) + " != query dimension " +
                     std::to_string(queries.dim));
  }
  std::vector<double> db_norms(db.rows());
  for (std::size_t i = 0; i < db.rows(); ++i) db_norms[i] = norm(db.row(i), db.dim);

  RetrievalResult result;
  result.rankings.resize(queries.rows());
  result.distances.resize(queries.rows());
  std::vector<double> d(db.rows());
  for (std::size_t q = 0; q < queries.rows(); ++q) {
    const double* qv = queries.row(q);
    const double qn = norm(qv, db.dim);
    for (std::size_t i = 0; i < db.rows(); ++i) {
      if (distance == Distance::euclidean) {
        d[i] = std::sqrt(squared_distance(qv, db.row(i), db.dim));
      } else {
        double dot = 0.0;
        for (std::size_t k = 0; k < db.dim; ++k) dot += qv[k] * db.row(i)[k];
        const double denom = qn * db_norms[i];
        d[i] = denom == 0.0 ? 1.0 : 1.0 - dot / denom;
      }
    }
    auto& order = result.rankings[q];
    order.resize(db.rows());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return d[a] < d[b]; });
    auto& dist = result.distances[q];
    dist.reserve(order.size());
    for (const auto i : order) dist.push_back(d[i]);
  }
  return result;
}

double ns_score(const RetrievalResult& result, const std::vector<int>& groups, const std::vector<int>& query_groups) {
  if (result.rankings.size() != query_groups.size()) {
    throw ShapeError("ns_score: " + std::to_string(query_groups.size()) + " query groups for " +
                     std::to_string(result.rankings.size()) + " rankings");
  }
  if (result.rankings.empty()) throw ShapeError("ns_score: no queries");
  std::map<int, std::size_t> sizes;
  for (const int g : groups) ++sizes[g];
  for (const auto& [g, n] : sizes) {
    if (n != 4) throw ShapeError("ns_score: group " + std::to_string(g) + " has " + std::to_string(n) + " members, expected 4");
  }
  double total = 0.0;
  for (std::size_t q = 0; q < result.rankings.size(); ++q) {
    if (!sizes.contains(query_groups[q])) {
      throw ShapeError("ns_score: query " + std::to_string(q) + " belongs to no database group");
    }
    const auto& ranking = result.rankings[q];
    if (ranking.size() != groups.size()) throw ShapeError("ns_score: ranking length differs from database size");
    std::size_t hits = 0;
    for (std::size_t r = 0; r < std::min<std::size_t>(4, ranking.size()); ++r) {
      if (groups.at(ranking[r]) == query_groups[q]) ++hits;
    }
    total += static_cast<double>(hits);
  }
  return total / static_cast<double>(result.rankings.size());
}

double average_precision(const std::vector<std::size_t>& ranking, const std::vector<std::size_t>& relevant) {
  if (relevant.empty()) throw ShapeError("average_precision: empty relevance set");
  std::vector<bool> is_rel;
  for (const auto r : relevant) {
    if (r >= is_rel.size()) is_rel.resize(r + 1, false);
    is_rel[r] = true;
  }
  std::size_t found = 0;
  double sum = 0.0;
  for (std::size_t rank = 0; rank < ranking.size(); ++rank) {
    const auto i = ranking[rank];
    if (i < is_rel.size() && is_rel[i]) {
      ++found;
      sum += static_cast<double>(found) / static_cast<double>(rank + 1);
    }
  }
  return sum / static_cast<double>(relevant.size());
}

double mean_ap(const RetrievalResult& result, const std::vector<std::vector<std::size_t>>& relevant) {
  if (relevant.size() != result.rankings.size()) {
    throw ShapeError("mean_ap: " + std::to_string(relevant.size()) + " relevance sets for " +
                     std::to_string(result.rankings.size()) + " rankings");
  }
  if (relevant.empty()) throw ShapeError("mean_ap: no queries");
  double total = 0.0;
  for (std::size_t q = 0; q < relevant.size(); ++q) {
    if (relevant[q].empty()) throw ShapeError("mean_ap: query " + std::to_string(q) + " has no relevant items");
    total += average_precision(result.rankings[q], relevant[q]);
  }
  return total / static_cast<double>(relevant.size());
}

RankedMaps rank_feature_maps(const TensorF& activations) {
  if (activations.rank() != 3) throw ShapeError("rank_feature_maps expects [K,H,W], got " + to_string(activations.shape()));
  const std::size_t k = activations.dim(0);
  const std::size_t area = activations.dim(1) * activations.dim(2);
  RankedMaps r;
  r.means.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < area; ++i) s += activations[c * area + i];
    r.means[c] = s / static_cast<double>(area);
  }
  r.order.resize(k);
  std::iota(r.order.begin(), r.order.end(), 0);
  std::stable_sort(r.order.begin(), r.order.end(), [&](std::size_t a, std::size_t b) { return r.means[a] > r.means[b]; });
  return r;
}

std::vector<std::uint8_t> to_grayscale(const float* map, std::size_t count) {
  const auto [lo, hi] = std::minmax_element(map, map + count);
  std::vector<std::uint8_t> px(count, 128);
  if (*lo == *hi) return px;
  const double range = static_cast<double>(*hi) - static_cast<double>(*lo);
  for (std::size_t i = 0; i < count; ++i) {
    const double v = (static_cast<double>(map[i]) - *lo) / range * 255.0;
    px[i] = static_cast<std::uint8_t>(std::lround(v));
  }
  return px;
}

void write_pgm(const std::filesystem::path& path, std::size_t height, std::size_t width,
               const std::vector<std::uint8_t>& pixels) {
  if (pixels.size() != height * width) throw ShapeError("write_pgm: pixel count does not match size");
  auto out = open_out(path);
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

std::vector<std::filesystem::path> write_feature_maps(const TensorF& activations, std::size_t top_m,
                                                      const std::filesystem::path& dir) {
  const auto ranked = rank_feature_maps(activations);
  if (top_m > ranked.order.size()) {
    throw ConfigError("top_m = " + std::to_string(top_m) + " exceeds the " + std::to_string(ranked.order.size()) +
                      " available feature maps");
  }
  const std::size_t h = activations.dim(1);
  const std::size_t w = activations.dim(2);
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  for (std::size_t r = 0; r < top_m; ++r) {
    const auto c = ranked.order[r];
    const auto path = dir / ("map_" + std::to_string(r + 1) + "_" + std::to_string(c) + ".pgm");
    write_pgm(path, h, w, to_grayscale(activations.data().data() + c * h * w, h * w));
    written.push_back(path);
  }
  return written;
}

template <typename T>
LcWeightTable lc_weight_table(const GraphSpec& graph, const ModelParams<T>& params) {
  if (!graph.fusion || *graph.fusion != FusionKind::lc) throw ConfigError("LC weight dump needs a model with lc fusion");
  const auto& w = params.at(fuse_node(graph).name + ".weight");
  LcWeightTable t;
  t.channels = w.dim(0);
  t.branches = w.dim(1);
  t.branch_means.assign(t.branches, 0.0);
  for (std::size_t i = 0; i < t.channels; ++i) {
    for (std::size_t s = 0; s < t.branches; ++s) {
      const double v = static_cast<double>(w[i * t.branches + s]);
      t.matrix.push_back(v);
      t.branch_means[s] += v;
    }
  }
  for (auto& m : t.branch_means) m /= static_cast<double>(t.channels);
  return t;
}

void dump_lc_weights(const LcWeightTable& table, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    auto out = open_out(dir / "lc_branch_means.csv");
    out.precision(17);
    out << "branch,mean_weight\n";
    for (std::size_t s = 0; s < table.branches; ++s) out << s + 1 << ',' << table.branch_means[s] << '\n';
  }
  auto out = open_out(dir / "lc_weights.csv");
  out.precision(17);
  out << "channel";
  for (std::size_t s = 0; s < table.branches; ++s) out << ",w" << s;
  out << '\n';
  for (std::size_t i = 0; i < table.channels; ++i) {
    out << i;
    for (std::size_t s = 0; s < table.branches; ++s) out << ',' << table.matrix[i * table.branches + s];
    out << '\n';
  }
}

template LcWeightTable lc_weight_table(const GraphSpec&, const ModelParams<float>&);
template LcWeightTable lc_weight_table(const GraphSpec&, const ModelParams<double>&);

}  // namespace cfn
