#include "cfn/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <string>

#include "cfn/rng.hpp"

namespace cfn {
namespace {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarPixels = 3 * kCifarSide * kCifarSide;

Dataset load_cifar(std::span<const std::filesystem::path> files, Split split, std::size_t label_bytes,
                   std::size_t classes) {
  if (files.empty()) throw FormatError("no CIFAR files given");
  const std::size_t record = label_bytes + kCifarPixels;
  std::vector<float> pixels;
  std::vector<int> labels;
  for (const auto& path : files) {
    const auto bytes = read_bytes(path);
    if (bytes.size() % record != 0) {
      const auto offset = bytes.size() - bytes.size() % record;
      throw FormatError(path.string() + ": truncated record at byte offset " + std::to_string(offset) +
                        " (file size " + std::to_string(bytes.size()) + " is not a multiple of " +
                        std::to_string(record) + ")");
    }
    for (std::size_t off = 0; off < bytes.size(); off += record) {
      const std::uint8_t label = bytes[off + label_bytes - 1];
      if (label >= classes) {
        throw FormatError(path.string() + ": label " + std::to_string(label) + " >= " +
                          std::to_string(classes) + " at byte offset " + std::to_string(off + label_bytes - 1));
      }
      labels.push_back(label);
      for (std::size_t i = 0; i < kCifarPixels; ++i) {
        pixels.push_back(static_cast<float>(bytes[off + label_bytes + i]) / 255.0f);
      }
    }
  }
  if (labels.empty()) throw FormatError("CIFAR input contains no records");
  Dataset data;
  data.images = TensorF({labels.size(), 3, kCifarSide, kCifarSide}, std::move(pixels));
  data.labels = std::move(labels);
  data.classes = classes;
  data.split = split;
  return data;
}

// Netpbm header token, skipping whitespace and '#' comments.
std::string pnm_token(const std::vector<std::uint8_t>& bytes, std::size_t& pos, const std::string& file) {
  while (pos < bytes.size()) {
    if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(bytes[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  std::string token;
  while (pos < bytes.size() && !std::isspace(bytes[pos])) token += static_cast<char>(bytes[pos++]);
  if (token.empty()) throw FormatError(file + ": truncated header");
  return token;
}

std::size_t pnm_number(const std::vector<std::uint8_t>& bytes, std::size_t& pos, const std::string& file) {
  const auto token = pnm_token(bytes, pos, file);
  if (!std::all_of(token.begin(), token.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
    throw FormatError(file + ": bad header field '" + token + "'");
  }
  return std::stoul(token);
}

}  // namespace

void Dataset::validate() const {
  if (labels.empty()) throw ShapeError("dataset is empty");
  if (images.empty() || images.rank() != 4 || images.dim(0) != labels.size()) {
    throw ShapeError("dataset images " + to_string(images.shape()) + " do not match " +
                     std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw ShapeError("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                       " outside [0, " + std::to_string(classes) + ")");
    }
  }
  for (const float v : images.data()) {
    if (!std::isfinite(v)) throw ShapeError("dataset contains a non-finite pixel");
  }
}

TensorF gather_images(const Dataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ShapeError("gather_images: no indices");
  const auto stride = data.images.size() / data.images.dim(0);
  Shape shape = data.images.shape();
  shape[0] = indices.size();
  std::vector<float> out;
  out.reserve(indices.size() * stride);
  const auto src = data.images.data();
  for (const auto i : indices) {
    if (i >= data.size()) throw ShapeError("gather_images: index " + std::to_string(i) + " out of range");
    out.insert(out.end(), src.begin() + static_cast<std::ptrdiff_t>(i * stride),
               src.begin() + static_cast<std::ptrdiff_t>((i + 1) * stride));
  }
  return TensorF(std::move(shape), std::move(out));
}

std::vector<int> gather_labels(const Dataset& data, std::span<const std::size_t> indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (const auto i : indices) out.push_back(data.labels.at(i));
  return out;
}

Dataset subset(const Dataset& data, std::span<const std::size_t> indices) {
  return {gather_images(data, indices), gather_labels(data, indices), data.classes, data.split};
}

Dataset head(const Dataset& data, std::size_t count) {
  std::vector<std::size_t> idx(std::min(count, data.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return subset(data, idx);
}

Dataset load_cifar10(std::span<const std::filesystem::path> files, Split split) {
  return load_cifar(files, split, 1, 10);
}

Dataset load_cifar100(std::span<const std::filesystem::path> files, Split split) {
  return load_cifar(files, split, 2, 100);
}

ImageFolder load_image_folder(const std::filesystem::path& root, std::size_t height, std::size_t width) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw FormatError(root.string() + " is not a directory");
  ImageFolder folder;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) folder.class_names.push_back(entry.path().filename().string());
  }
  std::sort(folder.class_names.begin(), folder.class_names.end());
  if (folder.class_names.size() < 2) throw FormatError(root.string() + ": need at least two class folders");

  std::vector<float> pixels;
  std::vector<int> labels;
  for (std::size_t c = 0; c < folder.class_names.size(); ++c) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(root / folder.class_names[c])) {
      const auto ext = entry.path().extension().string();
      if (entry.is_regular_file() && (ext == ".ppm" || ext == ".pgm")) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& path : files) {
      const auto name = path.string();
      const auto bytes = read_bytes(path);
      std::size_t pos = 0;
      const auto magic = pnm_token(bytes, pos, name);
      if (magic != "P5" && magic != "P6") throw FormatError(name + ": unsupported format " + magic);
      const auto w = pnm_number(bytes, pos, name);
      const auto h = pnm_number(bytes, pos, name);
      const auto maxval = pnm_number(bytes, pos, name);
      if (maxval == 0 || maxval > 255) throw FormatError(name + ": only 8-bit images are supported");
      if (w != width || h != height) {
        throw FormatError(name + ": image is " + std::to_string(w) + "x" + std::to_string(h) + ", expected " +
                          std::to_string(width) + "x" + std::to_string(height));
      }
      ++pos;  // single whitespace byte before the raster
      const std::size_t planes = magic == "P6" ? 3 : 1;
      if (bytes.size() < pos + planes * w * h) {
        throw FormatError(name + ": truncated raster at byte offset " + std::to_string(bytes.size()));
      }
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const std::size_t src = planes == 3 ? ch : 0;
        for (std::size_t i = 0; i < w * h; ++i) {
          pixels.push_back(static_cast<float>(bytes[pos + i * planes + src]) / static_cast<float>(maxval));
        }
      }
      labels.push_back(static_cast<int>(c));
    }
  }
  if (labels.empty()) throw FormatError(root.string() + ": no .ppm/.pgm images found");
  folder.data.images = TensorF({labels.size(), 3, height, width}, std::move(pixels));
  folder.data.labels = std::move(labels);
  folder.data.classes = folder.class_names.size();
  return folder;
}

TensorF gcn_normalize(const TensorF& images) {
  if (images.empty() || images.rank() != 4) throw ShapeError("gcn_normalize expects [N,C,H,W]");
  TensorF out = images;
  const std::size_t per = images.size() / images.dim(0);
  for (std::size_t n = 0; n < images.dim(0); ++n) {
    float* x = &out[n * per];
    double sum = 0.0;
    for (std::size_t i = 0; i < per; ++i) sum += x[i];
    const double mean = sum / static_cast<double>(per);
    double sq = 0.0;
    for (std::size_t i = 0; i < per; ++i) sq += (x[i] - mean) * (x[i] - mean);
    const double scale = 1.0 / std::max(std::sqrt(sq / static_cast<double>(per)), kGcnEpsilon);
    for (std::size_t i = 0; i < per; ++i) x[i] = static_cast<float>((x[i] - mean) * scale);
  }
  return out;
}

TensorF augment(const TensorF& image, std::uint64_t seed, const AugmentOptions& options) {
  if (image.empty() || image.rank() != 3) throw ShapeError("augment expects [C,H,W], got " + to_string(image.shape()));
  if (!options.enabled) return image;
  const auto c = image.dim(0), h = image.dim(1), w = image.dim(2), pad = options.pad;
  Rng rng(seed);
  std::size_t top = rng.below(2 * pad + 1);
  std::size_t left = rng.below(2 * pad + 1);
  bool flip = rng.coin();
  if (options.force_crop) std::tie(top, left) = *options.force_crop;
  if (options.force_flip) flip = *options.force_flip;
  if (top > 2 * pad || left > 2 * pad) throw ShapeError("augment: crop offset outside padded image");

  TensorF out({c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        // coordinates in the padded image, then back to the source
        const auto py = static_cast<std::ptrdiff_t>(y + top) - static_cast<std::ptrdiff_t>(pad);
        const auto px = static_cast<std::ptrdiff_t>(x + left) - static_cast<std::ptrdiff_t>(pad);
        float v = 0.0f;
        if (py >= 0 && px >= 0 && py < static_cast<std::ptrdiff_t>(h) && px < static_cast<std::ptrdiff_t>(w)) {
          v = image[(ch * h + static_cast<std::size_t>(py)) * w + static_cast<std::size_t>(px)];
        }
        const std::size_t ox = flip ? w - 1 - x : x;
        out[(ch * h + y) * w + ox] = v;
      }
    }
  }
  return out;
}

Dataset make_synthetic(std::size_t classes, std::size_t count, std::size_t size, std::uint64_t seed) {
  constexpr double kNoise = 1.0;
  if (classes < 2) throw ShapeError("make_synthetic: need at least 2 classes");
  if (count == 0 || size == 0) throw ShapeError("make_synthetic: count and size must be >= 1");
  using std::numbers::pi;
  Rng rng(seed);
  std::vector<float> pixels;
  pixels.reserve(count * 3 * size * size);
  std::vector<int> labels(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto c = i % classes;
    labels[i] = static_cast<int>(c);
    const double class_pos = static_cast<double>(c) / static_cast<double>(classes);
    const double angle = pi * class_pos + rng.uniform(-0.15, 0.15);
    const double cycles = (1.5 + static_cast<double>(c % 3)) * rng.uniform(0.85, 1.15);
    const double phase = rng.uniform(0.0, 2 * pi);
    const double amplitude = rng.uniform(0.6, 1.2);
    const double offset = rng.uniform(-0.3, 0.3);
    for (std::size_t ch = 0; ch < 3; ++ch) {
      // weak class-dependent colour cast, visible to a pixel-space centroid
      const double tint = 0.15 * std::cos(2 * pi * (class_pos + static_cast<double>(ch) / 3.0));
      for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
          const double u = (static_cast<double>(x) * std::cos(angle) + static_cast<double>(y) * std::sin(angle)) /
                           static_cast<double>(size);
          const double v = amplitude * std::sin(2 * pi * cycles * u + phase) + offset + tint + kNoise * rng.normal();
          pixels.push_back(static_cast<float>(v));
        }
      }
    }
  }
  Dataset data;
  data.images = TensorF({count, 3, size, size}, std::move(pixels));
  data.labels = std::move(labels);
  data.classes = classes;
  return data;
}

BatchStream::BatchStream(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed)
    : size_(dataset_size), batch_size_(batch_size), seed_(seed) {
  if (dataset_size == 0) throw ShapeError("BatchStream: empty dataset");
  if (batch_size == 0 || batch_size > dataset_size) {
    throw ShapeError("BatchStream: batch size " + std::to_string(batch_size) + " must be in [1, " +
                     std::to_string(dataset_size) + "]");
  }
  order_ = epoch_order(0);
}

std::vector<std::size_t> BatchStream::epoch_order(std::size_t epoch) const {
  std::vector<std::size_t> order(size_);
  for (std::size_t i = 0; i < size_; ++i) order[i] = i;
  Rng rng(mix_seed(seed_, static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = size_; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

std::vector<std::vector<std::size_t>> BatchStream::epoch_batches(std::size_t epoch) const {
  const auto order = epoch_order(epoch);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < size_; start += batch_size_) {
    const auto end = std::min(size_, start + batch_size_);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

std::vector<std::size_t> BatchStream::next() {
  if (cursor_ >= size_) {
    ++epoch_;
    cursor_ = 0;
    order_ = epoch_order(epoch_);
  }
  const auto end = std::min(size_, cursor_ + batch_size_);
  std::vector<std::size_t> batch(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(end));
  cursor_ = end;
  return batch;
}

}  // namespace cfn
