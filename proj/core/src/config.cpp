#include "cfn/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "cfn/errors.hpp"
#include "cfn/rng.hpp"

namespace cfn {
namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::string where(const std::string& key, const KeyValueConfig::Entry& e) {
  return e.line == 0 ? "'" + key + "'" : "'" + key + "' (line " + std::to_string(e.line) + ")";
}

std::size_t parse_count(const std::string& key, const KeyValueConfig::Entry& e) {
  std::size_t v = 0;
  const auto& s = e.value;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError(where(key, e) + ": expected a non-negative integer, got '" + s + "'");
  }
  return v;
}

double parse_real(const std::string& key, const KeyValueConfig::Entry& e) {
  double v = 0.0;
  const auto& s = e.value;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError(where(key, e) + ": expected a number, got '" + s + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const KeyValueConfig::Entry& e) {
  if (e.value == "true" || e.value == "1") return true;
  if (e.value == "false" || e.value == "0") return false;
  throw ConfigError(where(key, e) + ": expected true or false, got '" + e.value + "'");
}

std::vector<std::string> parse_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto t = trim(item);
    if (!t.empty()) out.push_back(std::move(t));
  }
  return out;
}

std::vector<std::size_t> parse_counts(const std::string& key, const KeyValueConfig::Entry& e) {
  std::vector<std::size_t> out;
  for (const auto& item : parse_list(e.value)) out.push_back(parse_count(key, {item, e.line}));
  return out;
}

std::string real_text(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <typename T>
std::string join(const std::vector<T>& items) {
  std::string out;
  for (const auto& item : items) {
    if (!out.empty()) out += ',';
    if constexpr (std::is_same_v<T, std::string>) {
      out += item;
    } else {
      out += std::to_string(item);
    }
  }
  return out;
}

DataSource parse_source(const std::string& key, const KeyValueConfig::Entry& e) {
  if (e.value == "synthetic") return DataSource::synthetic;
  if (e.value == "cifar10") return DataSource::cifar10;
  if (e.value == "cifar100") return DataSource::cifar100;
  if (e.value == "folder") return DataSource::folder;
  throw ConfigError(where(key, e) + ": unknown data source '" + e.value +
                    "' (expected synthetic, cifar10, cifar100 or folder)");
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::string_view text, const std::string& source) {
  KeyValueConfig config;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = std::min(text.find('\n', pos), text.size());
    std::string line(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) {
      if (end == text.size()) break;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": syntax error, expected 'key = value'");
    }
    auto key = trim(std::string_view(line).substr(0, eq));
    auto value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(line_no) + ": syntax error, empty key");
    if (const auto it = config.entries_.find(key); it != config.entries_.end()) {
      throw ConfigError(source + ": duplicate key '" + key + "' on lines " + std::to_string(it->second.line) +
                        " and " + std::to_string(line_no));
    }
    config.entries_.emplace(std::move(key), Entry{std::move(value), line_no});
    if (end == text.size()) break;
  }
  return config;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

void KeyValueConfig::set(const std::string& key, std::string value) {
  entries_.insert_or_assign(key, Entry{trim(value), 0});
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k{"augment",      "batch",       "branch_points", "C",           "data",
                               "drop_factor",  "drops",       "dtype",         "eval_every",  "folder",
                               "fusion",       "gcn",         "image_size",    "iters",       "K",
                               "lr",           "model",       "momentum",      "paper_schedule", "seed",
                               "synth_count",  "synth_seed", "synth_size",  "synth_test_count", "test_files", "test_limit",
                               "train_files",  "train_limit", "wd",            "widths"};
    std::sort(k.begin(), k.end());
    return k;
  }();
  return keys;
}

std::string_view to_string(DataSource source) {
  switch (source) {
    case DataSource::synthetic: return "synthetic";
    case DataSource::cifar10: return "cifar10";
    case DataSource::cifar100: return "cifar100";
    case DataSource::folder: return "folder";
  }
  return "?";
}

RunConfig resolve_config(const KeyValueConfig& config) {
  const auto& known = config_keys();
  for (const auto& [key, entry] : config.entries()) {
    if (!std::binary_search(known.begin(), known.end(), key)) {
      throw ConfigError("unknown config key " + where(key, entry));
    }
  }
  const auto& entries = config.entries();
  auto get = [&](const char* key) -> const KeyValueConfig::Entry* {
    const auto it = entries.find(key);
    return it == entries.end() ? nullptr : &it->second;
  };

  RunConfig rc;
  if (const auto* e = get("model")) rc.model = e->value;
  const bool cifar = rc.model == "cifar-cfn" || rc.model == "cifar-plain";
  const bool plain = rc.model == "plain" || rc.model == "cifar-plain";
  if (!cifar && rc.model != "cfn" && rc.model != "plain") {
    throw ConfigError("unknown model '" + rc.model + "' (expected cfn, plain, cifar-cfn or cifar-plain)");
  }
  if (cifar) {
    const auto arch = cifar_architecture(10);
    rc.widths = arch.widths;
    rc.channels = arch.channels;
    rc.branch_points = plain ? std::vector<std::string>{} : std::vector<std::string>{"pool2", "pool3"};
  } else {
    rc.widths = {8, 8, 16, 16};
    rc.channels = 16;
    rc.classes = 3;
    rc.branch_points = plain ? std::vector<std::string>{} : std::vector<std::string>{"pool1"};
  }
  if (const auto* e = get("widths")) rc.widths = parse_counts("widths", *e);
  if (const auto* e = get("K")) rc.channels = parse_count("K", *e);
  if (const auto* e = get("C")) rc.classes = parse_count("C", *e);
  if (const auto* e = get("branch_points")) {
    rc.branch_points = parse_list(e->value);
    if (plain && !rc.branch_points.empty()) {
      throw ConfigError(where("branch_points", *e) + ": a plain model has no side branches");
    }
  }
  if (const auto* e = get("fusion")) rc.fusion = parse_fusion_kind(e->value);
  if (const auto* e = get("dtype")) {
    if (e->value != "f32" && e->value != "f64") throw ConfigError(where("dtype", *e) + ": expected f32 or f64");
    rc.dtype = e->value;
  }

  if (const auto* e = get("paper_schedule")) rc.paper_schedule = parse_bool("paper_schedule", *e);
  std::size_t iters = rc.paper_schedule ? paper_cifar_schedule().max_iterations : 600;
  if (const auto* e = get("iters")) iters = parse_count("iters", *e);
  rc.train = rc.paper_schedule ? paper_cifar_schedule() : desk_scale_schedule(iters);
  rc.train.max_iterations = iters;
  if (const auto* e = get("lr")) rc.train.learning_rate = parse_real("lr", *e);
  if (const auto* e = get("momentum")) rc.train.momentum = parse_real("momentum", *e);
  if (const auto* e = get("wd")) rc.train.weight_decay = parse_real("wd", *e);
  if (const auto* e = get("batch")) rc.train.batch_size = parse_count("batch", *e);
  if (const auto* e = get("drops")) rc.train.decay_iterations = parse_counts("drops", *e);
  if (const auto* e = get("drop_factor")) rc.train.decay_factor = parse_real("drop_factor", *e);
  if (const auto* e = get("seed")) rc.train.seed = parse_count("seed", *e);
  if (const auto* e = get("augment")) rc.train.augment = parse_bool("augment", *e);
  if (const auto* e = get("eval_every")) rc.train.eval_every = parse_count("eval_every", *e);
  rc.train.validate();

  if (const auto* e = get("data")) rc.data = parse_source("data", *e);
  if (const auto* e = get("train_files")) rc.train_files = parse_list(e->value);
  if (const auto* e = get("test_files")) rc.test_files = parse_list(e->value);
  if (const auto* e = get("folder")) rc.folder = e->value;
  if (const auto* e = get("image_size")) rc.image_size = parse_count("image_size", *e);
  if (const auto* e = get("synth_count")) rc.synth_count = parse_count("synth_count", *e);
  if (const auto* e = get("synth_test_count")) rc.synth_test_count = parse_count("synth_test_count", *e);
  if (const auto* e = get("synth_size")) rc.synth_size = parse_count("synth_size", *e);
  if (const auto* e = get("synth_seed")) rc.synth_seed = parse_count("synth_seed", *e);
  if (const auto* e = get("train_limit")) rc.train_limit = parse_count("train_limit", *e);
  if (const auto* e = get("test_limit")) rc.test_limit = parse_count("test_limit", *e);
  if (const auto* e = get("gcn")) rc.gcn = parse_bool("gcn", *e);
  if (rc.data == DataSource::cifar10 && !get("C")) rc.classes = 10;
  if (rc.data == DataSource::cifar100 && !get("C")) rc.classes = 100;

  validate_graph(rc.graph());
  return rc;
}

ArchitectureConfig RunConfig::architecture() const {
  ArchitectureConfig a;
  a.widths = widths;
  a.channels = channels;
  a.classes = classes;
  a.branch_points = branch_points;
  a.fusion = fusion;
  return a;
}

GraphSpec RunConfig::graph() const { return build_generic_cfn(architecture()); }

std::string RunConfig::to_manifest() const {
  std::map<std::string, std::string> kv;
  kv["model"] = model;
  kv["widths"] = join(widths);
  kv["branch_points"] = join(branch_points);
  kv["fusion"] = std::string(to_string(fusion));
  kv["K"] = std::to_string(channels);
  kv["C"] = std::to_string(classes);
  kv["dtype"] = dtype;
  kv["paper_schedule"] = paper_schedule ? "true" : "false";
  kv["iters"] = std::to_string(train.max_iterations);
  kv["lr"] = real_text(train.learning_rate);
  kv["momentum"] = real_text(train.momentum);
  kv["wd"] = real_text(train.weight_decay);
  kv["batch"] = std::to_string(train.batch_size);
  kv["drops"] = join(train.decay_iterations);
  kv["drop_factor"] = real_text(train.decay_factor);
  kv["seed"] = std::to_string(train.seed);
  kv["augment"] = train.augment ? "true" : "false";
  kv["eval_every"] = std::to_string(train.eval_every);
  kv["data"] = std::string(to_string(data));
  kv["train_files"] = join(train_files);
  kv["test_files"] = join(test_files);
  kv["folder"] = folder;
  kv["image_size"] = std::to_string(image_size);
  kv["synth_count"] = std::to_string(synth_count);
  kv["synth_test_count"] = std::to_string(synth_test_count);
  kv["synth_size"] = std::to_string(synth_size);
  kv["synth_seed"] = std::to_string(synth_seed);
  kv["train_limit"] = std::to_string(train_limit);
  kv["test_limit"] = std::to_string(test_limit);
  kv["gcn"] = gcn ? "true" : "false";

  std::string out = "# resolved run configuration\n# init_scheme: " + std::string(kInitScheme) + "\n";
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

Dataset load_dataset(const RunConfig& config, Split split) {
  const bool train_split = split == Split::train;
  Dataset data;
  switch (config.data) {
    case DataSource::synthetic: {
      const auto seed = train_split ? config.synth_seed : mix_seed(config.synth_seed, "test");
      data = make_synthetic(config.classes, train_split ? config.synth_count : config.synth_test_count,
                            config.synth_size, seed);
      data.split = split;
      break;
    }
    case DataSource::cifar10:
    case DataSource::cifar100: {
      const auto& names = train_split ? config.train_files : config.test_files;
      if (names.empty()) {
        throw ConfigError(std::string(train_split ? "train_files" : "test_files") + " must list the CIFAR batch files");
      }
      std::vector<std::filesystem::path> files(names.begin(), names.end());
      data = config.data == DataSource::cifar10 ? load_cifar10(files, split) : load_cifar100(files, split);
      break;
    }
    case DataSource::folder: {
      if (config.folder.empty()) throw ConfigError("folder must name the image directory");
      data = load_image_folder(config.folder, config.image_size, config.image_size).data;
      data.split = split;
      break;
    }
  }
  if (data.classes != config.classes) {
    throw ConfigError("data has " + std::to_string(data.classes) + " classes but C = " +
                      std::to_string(config.classes));
  }
  const auto limit = train_split ? config.train_limit : config.test_limit;
  if (limit > 0) data = head(data, limit);
  if (config.gcn) data.images = gcn_normalize(data.images);
  return data;
}

}  // namespace cfn
