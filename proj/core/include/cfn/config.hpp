#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "cfn/dataset.hpp"
#include "cfn/graph.hpp"
#include "cfn/train.hpp"

namespace cfn {

// Flat `key = value` text. Blank lines and lines starting with '#' are
// ignored; a '#' after a value starts a trailing comment.
class KeyValueConfig {
 public:
  struct Entry {
    std::string value;
    std::size_t line = 0;  // 0 for overrides
  };

  // Throws ConfigError "<source>:<line>: ..." on a line without '=' or with
  // an empty key, and on a key defined twice (naming both lines).
  static KeyValueConfig parse(std::string_view text, const std::string& source = "<config>");
  static KeyValueConfig load(const std::filesystem::path& path);

  // Later calls win; used for command-line overrides.
  void set(const std::string& key, std::string value);

  bool contains(std::string_view key) const { return entries_.find(key) != entries_.end(); }
  const std::map<std::string, Entry, std::less<>>& entries() const { return entries_; }

 private:
  std::map<std::string, Entry, std::less<>> entries_;
};

enum class DataSource { synthetic, cifar10, cifar100, folder };

// Fully resolved run description. Every field maps to one config key (see
// config_keys()); to_manifest() writes all of them back so a manifest can be
// fed in again as a config file.
struct RunConfig {
  std::string model = "cfn";  // cfn | plain | cifar-cfn | cifar-plain
  std::vector<std::size_t> widths;
  std::vector<std::string> branch_points;
  FusionKind fusion = FusionKind::lc;
  std::size_t channels = 0;  // K
  std::size_t classes = 10;  // C
  std::string dtype = "f32";

  TrainConfig train;
  bool paper_schedule = false;

  DataSource data = DataSource::synthetic;
  std::vector<std::string> train_files;
  std::vector<std::string> test_files;
  std::string folder;
  std::size_t image_size = 32;
  std::size_t synth_count = 2000;
  std::size_t synth_test_count = 500;
  std::size_t synth_size = 16;
  std::uint64_t synth_seed = 1;  // test split uses a derived stream
  std::size_t train_limit = 0;  // 0: use every training row
  std::size_t test_limit = 0;
  bool gcn = true;

  ArchitectureConfig architecture() const;
  GraphSpec graph() const;
  // Manifest text: sorted `key = value` lines, reals at round-trip precision.
  std::string to_manifest() const;
};

// Keys accepted by resolve_config, sorted.
const std::vector<std::string>& config_keys();

// Defaults, then model/schedule presets, then the given entries. Unknown keys
// and malformed values throw ConfigError naming the key (and line when known).
RunConfig resolve_config(const KeyValueConfig& config);

std::string_view to_string(DataSource source);

// Loads the requested split as described by `config`: synthetic data is
// generated (test split from a stream derived from synth_seed), CIFAR files
// are read from train_files / test_files, an image folder serves both
// splits. The row limit is applied, then GCN when enabled.
Dataset load_dataset(const RunConfig& config, Split split);

}  // namespace cfn
