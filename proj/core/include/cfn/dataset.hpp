#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "cfn/tensor.hpp"

namespace cfn {

enum class Split { train, test };

struct Dataset {
  TensorF images;           // [N,Cimg,H,W]
  std::vector<int> labels;  // N entries in [0, classes)
  std::size_t classes = 0;
  Split split = Split::train;

  std::size_t size() const { return labels.size(); }
  // Throws ShapeError on N == 0, label/image count mismatch, labels out of
  // range or non-finite pixels.
  void validate() const;
};

// Copies the listed rows into a new [indices.size(),C,H,W] tensor.
TensorF gather_images(const Dataset& data, std::span<const std::size_t> indices);
std::vector<int> gather_labels(const Dataset& data, std::span<const std::size_t> indices);
Dataset subset(const Dataset& data, std::span<const std::size_t> indices);
// First `count` rows (all rows if count >= N).
Dataset head(const Dataset& data, std::size_t count);

// CIFAR binary files. CIFAR-10 records are 1 label byte + 3072 pixel bytes;
// CIFAR-100 records are coarse + fine label bytes + 3072 pixel bytes and the
// fine label is used. Pixels map to [0, 1] by /255. Several files (e.g. the
// five training batches) are concatenated in the order given. Throws
// FormatError naming the byte offset of a truncated record or a bad label.
Dataset load_cifar10(std::span<const std::filesystem::path> files, Split split);
Dataset load_cifar100(std::span<const std::filesystem::path> files, Split split);

// Class-per-subdirectory folder of binary PPM (P6) or PGM (P5) images, all
// height x width. Classes are the sorted subdirectory names. Grayscale images
// are replicated to three channels.
struct ImageFolder {
  Dataset data;
  std::vector<std::string> class_names;
};
ImageFolder load_image_folder(const std::filesystem::path& root, std::size_t height, std::size_t width);

// Per image: subtract the scalar mean over all channels and pixels, divide
// by max(std, 1e-8). Population standard deviation.
inline constexpr double kGcnEpsilon = 1e-8;
TensorF gcn_normalize(const TensorF& images);

struct AugmentOptions {
  bool enabled = false;
  std::size_t pad = 4;
  std::optional<bool> force_flip;                                // default: fair coin
  std::optional<std::pair<std::size_t, std::size_t>> force_crop;  // (top, left) in padded image
};

// Zero-pad by `pad`, crop back to the original H x W at a random offset,
// flip horizontally with probability 1/2. image is [C,H,W]. Identity when
// disabled.
TensorF augment(const TensorF& image, std::uint64_t seed, const AugmentOptions& options);

// Class-conditional oriented gratings plus Gaussian noise, 3 channels,
// H x H pixels, labels i % C (balanced). Fully determined by the arguments.
Dataset make_synthetic(std::size_t classes, std::size_t count, std::size_t size, std::uint64_t seed);

// Seeded mini-batch partition. The order of epoch e is a pure function of
// (seed, e); every index appears exactly once per epoch and the final short
// batch is kept.
class BatchStream {
 public:
  BatchStream(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed);

  std::vector<std::size_t> epoch_order(std::size_t epoch) const;
  std::vector<std::vector<std::size_t>> epoch_batches(std::size_t epoch) const;

  // Sequential access across epochs.
  std::vector<std::size_t> next();
  std::size_t epoch() const { return epoch_; }

  std::size_t batch_size() const { return batch_size_; }

 private:
  std::size_t size_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::size_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
};

}  // namespace cfn
