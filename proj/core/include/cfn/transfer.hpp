#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cfn/dataset.hpp"
#include "cfn/graph.hpp"
#include "cfn/model.hpp"

namespace cfn {

struct FeatureMatrix {
  std::size_t dim = 0;
  std::vector<double> values;  // row-major, rows() x dim
  std::vector<int> labels;
  bool l2_normalized = false;

  std::size_t rows() const { return labels.size(); }
  const double* row(std::size_t i) const { return values.data() + i * dim; }
  // Throws ShapeError if values.size() != rows() * dim.
  void validate() const;
};

// Divides each row by its L2 norm (all-zero rows stay zero).
void l2_normalize(FeatureMatrix& features);

// Outputs of the "fuse" node for every image, computed in batches of
// `batch_size` in single precision. Throws ConfigError for graphs without
// fusion.
FeatureMatrix extract_fused_features(const GraphSpec& graph, const ModelParams<float>& params,
                                     const Dataset& data, bool l2_normalized, std::size_t batch_size = 32);

void write_feature_csv(const std::filesystem::path& path, const FeatureMatrix& features);
FeatureMatrix read_feature_csv(const std::filesystem::path& path);

struct ProbeConfig {
  std::size_t epochs = 50;
  double learning_rate = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::size_t batch_size = 64;
  std::uint64_t seed = 1;
};

struct ProbeResult {
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  // Classes with test rows but no training rows; their rows still count as
  // errors unless predicted correctly.
  std::vector<int> missing_classes;
};

// Single linear softmax layer trained by SGD on frozen features. The class
// count is 1 + the largest label seen in either set.
ProbeResult linear_probe(const FeatureMatrix& train, const FeatureMatrix& test, const ProbeConfig& config);

enum class Distance { euclidean, cosine };
Distance parse_distance(std::string_view text);
std::string_view to_string(Distance d);

struct RetrievalResult {
  // rankings[q] is a permutation of database indices, closest first.
  std::vector<std::vector<std::size_t>> rankings;
  std::vector<std::vector<double>> distances;  // aligned with rankings
};

// Ascending distance; equal distances ordered by lower database index.
RetrievalResult knn_retrieve(const FeatureMatrix& db, const FeatureMatrix& queries, Distance distance);

// groups[i] is the group id of database item i; each group must have exactly
// four members. query_groups[q] is the group of query q. Mean count of
// same-group items among each query's top four.
double ns_score(const RetrievalResult& result, const std::vector<int>& groups,
                const std::vector<int>& query_groups);

// Average precision of one ranked list against a relevance set:
// mean over relevant items of precision at that item's rank.
double average_precision(const std::vector<std::size_t>& ranking, const std::vector<std::size_t>& relevant);
double mean_ap(const RetrievalResult& result, const std::vector<std::vector<std::size_t>>& relevant);

struct RankedMaps {
  std::vector<std::size_t> order;  // channel indices, highest mean first
  std::vector<double> means;       // per channel, in channel order
};

// activations [K,H,W]. Ties in the mean go to the lower channel index.
RankedMaps rank_feature_maps(const TensorF& activations);

// Min-max scaled 8-bit grayscale of one [H,W] map; a constant map is 128.
std::vector<std::uint8_t> to_grayscale(const float* map, std::size_t count);

// Writes map_<rank>_<channel>.pgm for the top `top_m` channels and returns
// the written paths. Throws ConfigError when top_m > K.
std::vector<std::filesystem::path> write_feature_maps(const TensorF& activations, std::size_t top_m,
                                                      const std::filesystem::path& dir);

void write_pgm(const std::filesystem::path& path, std::size_t height, std::size_t width,
               const std::vector<std::uint8_t>& pixels);

struct LcWeightTable {
  std::size_t channels = 0;
  std::size_t branches = 0;
  std::vector<double> branch_means;  // S entries
  std::vector<double> matrix;        // K x S, row-major
};

// Requires lc fusion; throws ConfigError otherwise.
template <typename T>
LcWeightTable lc_weight_table(const GraphSpec& graph, const ModelParams<T>& params);

// Writes <dir>/lc_branch_means.csv (`branch,mean_weight`) and
// <dir>/lc_weights.csv (header `channel,w0..w{S-1}`).
void dump_lc_weights(const LcWeightTable& table, const std::filesystem::path& dir);

}  // namespace cfn
