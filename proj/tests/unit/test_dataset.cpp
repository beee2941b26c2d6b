#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "cfn/errors.hpp"
#include "cfn/dataset.hpp"
#include "oracles.hpp"

using namespace cfn;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("cfn_dataset_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// One CIFAR record: label byte(s), then R, G, B planes of 32x32 bytes.
std::vector<unsigned char> cifar_record(std::vector<unsigned char> labels, unsigned char fill) {
  auto r = std::move(labels);
  for (std::size_t i = 0; i < 3072; ++i) r.push_back(static_cast<unsigned char>((fill + i) % 256));
  return r;
}

double image_mean(const TensorF& t, std::size_t n) {
  const std::size_t d = t.size() / t.dim(0);
  double s = 0.0;
  for (std::size_t j = 0; j < d; ++j) s += t[n * d + j];
  return s / static_cast<double>(d);
}

double image_std(const TensorF& t, std::size_t n) {
  const std::size_t d = t.size() / t.dim(0);
  const double m = image_mean(t, n);
  double s = 0.0;
  for (std::size_t j = 0; j < d; ++j) s += (t[n * d + j] - m) * (t[n * d + j] - m);
  return std::sqrt(s / static_cast<double>(d));
}

}  // namespace

TEST(Cifar10, TwoRecords) {
  TempDir dir;
  auto bytes = cifar_record({3}, 0);
  const auto second = cifar_record({9}, 255);
  bytes.insert(bytes.end(), second.begin(), second.end());
  write_bytes(dir.path() / "batch.bin", bytes);
  const std::vector<fs::path> files{dir.path() / "batch.bin"};
  const auto d = load_cifar10(files, Split::train);
  EXPECT_EQ(d.size(), 2u);
  EXPECT_EQ(d.labels, (std::vector<int>{3, 9}));
  EXPECT_EQ(d.classes, 10u);
  EXPECT_EQ(d.images.shape(), (Shape{2, 3, 32, 32}));
  EXPECT_EQ(d.images.at({0, 0, 0, 0}), 0.0f);
  // Second record starts with byte 255; green plane starts at byte 1024.
  EXPECT_EQ(d.images.at({1, 0, 0, 0}), 1.0f);
  EXPECT_EQ(d.images.at({0, 1, 0, 0}), static_cast<float>(1024 % 256) / 255.0f);
  EXPECT_EQ(d.images.at({0, 0, 0, 7}), 7.0f / 255.0f);
  // Same file twice, same tensors.
  EXPECT_TRUE(load_cifar10(files, Split::train).images.bitwise_equal(d.images));
}

TEST(Cifar10, Errors) {
  TempDir dir;
  auto bytes = cifar_record({1}, 0);
  bytes.resize(bytes.size() + 100, 0);
  write_bytes(dir.path() / "short.bin", bytes);
  const std::vector<fs::path> files{dir.path() / "short.bin"};
  try {
    load_cifar10(files, Split::train);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("byte offset 3073"), std::string::npos) << e.what();
  }
  write_bytes(dir.path() / "label.bin", cifar_record({10}, 0));
  const std::vector<fs::path> bad_label{dir.path() / "label.bin"};
  EXPECT_THROW(load_cifar10(bad_label, Split::train), FormatError);
  const std::vector<fs::path> missing{dir.path() / "nope.bin"};
  EXPECT_THROW(load_cifar10(missing, Split::train), FormatError);
}

TEST(Cifar100, UsesFineLabel) {
  TempDir dir;
  write_bytes(dir.path() / "train.bin", cifar_record({4, 87}, 10));
  const std::vector<fs::path> files{dir.path() / "train.bin"};
  const auto d = load_cifar100(files, Split::test);
  EXPECT_EQ(d.labels, (std::vector<int>{87}));
  EXPECT_EQ(d.classes, 100u);
  EXPECT_EQ(d.split, Split::test);
  EXPECT_EQ(d.images.at({0, 0, 0, 0}), 10.0f / 255.0f);
}

TEST(Gcn, Examples) {
  const auto two = gcn_normalize(TensorF({1, 1, 1, 2}, {0.0f, 2.0f}));
  EXPECT_FLOAT_EQ(two[0], -1.0f);
  EXPECT_FLOAT_EQ(two[1], 1.0f);
  const auto flat = gcn_normalize(TensorF::full({1, 3, 4, 4}, 0.7f));
  for (const float v : flat.values()) EXPECT_NEAR(v, 0.0f, 1e-6);
}

TEST(Gcn, MomentsAndIdempotence) {
  const auto x = TensorF::uniform({5, 3, 8, 8}, 4, -3.0, 7.0);
  const auto y = gcn_normalize(x);
  for (std::size_t n = 0; n < 5; ++n) {
    EXPECT_NEAR(image_mean(y, n), 0.0, 1e-6);
    EXPECT_NEAR(image_std(y, n), 1.0, 1e-6);
  }
  const auto z = gcn_normalize(y);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(z[i], y[i], 1e-6);
}

TEST(Augment, DisabledIsIdentityAndDeterministic) {
  const auto img = TensorF::uniform({3, 8, 8}, 5, 0.0, 1.0);
  AugmentOptions off;
  EXPECT_TRUE(augment(img, 3, off).bitwise_equal(img));
  AugmentOptions on;
  on.enabled = true;
  EXPECT_TRUE(augment(img, 3, on).bitwise_equal(augment(img, 3, on)));
  bool any_diff = false;
  for (std::uint64_t s = 0; s < 10; ++s) any_diff = any_diff || !augment(img, s, on).bitwise_equal(img);
  EXPECT_TRUE(any_diff);
}

TEST(Augment, CenterCropAndDoubleFlip) {
  const auto img = TensorF::uniform({3, 8, 8}, 6, 0.0, 1.0);
  AugmentOptions o;
  o.enabled = true;
  o.force_crop = std::pair<std::size_t, std::size_t>{4, 4};
  o.force_flip = false;
  EXPECT_TRUE(augment(img, 1, o).bitwise_equal(img));
  o.force_flip = true;
  const auto once = augment(img, 1, o);
  EXPECT_EQ(once.at({1, 2, 0}), img.at({1, 2, 7}));
  EXPECT_TRUE(augment(once, 2, o).bitwise_equal(img));
}

TEST(Augment, ShiftedCropZeroFills) {
  const auto img = TensorF::full({1, 4, 4}, 1.0f);
  AugmentOptions o;
  o.enabled = true;
  o.force_flip = false;
  o.force_crop = std::pair<std::size_t, std::size_t>{0, 0};
  const auto out = augment(img, 1, o);
  // Crop starts 4 pixels above and left of the image, which is pad entirely.
  for (const float v : out.values()) EXPECT_EQ(v, 0.0f);
  o.force_crop = std::pair<std::size_t, std::size_t>{2, 4};
  const auto half = augment(img, 1, o);
  EXPECT_EQ(half.at({0, 1, 0}), 0.0f);
  EXPECT_EQ(half.at({0, 2, 0}), 1.0f);
  EXPECT_THROW(augment(img, 1, [] {
                 AugmentOptions bad;
                 bad.enabled = true;
                 bad.force_crop = std::pair<std::size_t, std::size_t>{9, 0};
                 return bad;
               }()),
               ShapeError);
}

TEST(Synthetic, BalancedDeterministicLearnable) {
  const auto d = make_synthetic(3, 2000, 16, 1);
  EXPECT_EQ(d.images.shape(), (Shape{2000, 3, 16, 16}));
  std::vector<std::size_t> counts(3, 0);
  for (const int l : d.labels) ++counts[static_cast<std::size_t>(l)];
  for (const auto c : counts) EXPECT_GE(c, 666u);
  EXPECT_NO_THROW(d.validate());
  const auto again = make_synthetic(3, 2000, 16, 1);
  EXPECT_TRUE(again.images.bitwise_equal(d.images));
  EXPECT_EQ(again.labels, d.labels);
  EXPECT_FALSE(make_synthetic(3, 2000, 16, 2).images.bitwise_equal(d.images));
  EXPECT_GT(oracle::nearest_centroid_accuracy(d.images, d.labels, 3), 1.0 / 3.0 + 0.05);
  EXPECT_THROW(make_synthetic(1, 10, 8, 1), ShapeError);
}

TEST(BatchStreamTest, ShortFinalBatch) {
  BatchStream s(5, 2, 1);
  std::vector<std::size_t> sizes;
  for (const auto& b : s.epoch_batches(0)) sizes.push_back(b.size());
  EXPECT_EQ(sizes, (std::vector<std::size_t>{2, 2, 1}));
}

TEST(BatchStreamTest, PartitionAndReproducibility) {
  BatchStream s(50, 8, 3);
  std::vector<std::size_t> all;
  for (const auto& b : s.epoch_batches(0)) all.insert(all.end(), b.begin(), b.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(all[i], i);
  EXPECT_NE(s.epoch_order(0), s.epoch_order(1));
  EXPECT_EQ(s.epoch_order(1), BatchStream(50, 8, 3).epoch_order(1));

  BatchStream seq(5, 2, 7);
  std::vector<std::size_t> first;
  for (int i = 0; i < 3; ++i) {
    const auto b = seq.next();
    first.insert(first.end(), b.begin(), b.end());
  }
  EXPECT_EQ(first, seq.epoch_order(0));
  EXPECT_EQ(seq.next().size(), 2u);
  EXPECT_EQ(seq.epoch(), 1u);
  EXPECT_THROW(BatchStream(5, 6, 1), ShapeError);
}

TEST(DatasetHelpers, SubsetHeadValidate) {
  const auto d = make_synthetic(3, 12, 4, 1);
  const std::vector<std::size_t> idx{5, 0};
  const auto s = subset(d, idx);
  EXPECT_EQ(s.labels, (std::vector<int>{d.labels[5], d.labels[0]}));
  EXPECT_EQ(head(d, 4).size(), 4u);
  EXPECT_EQ(head(d, 100).size(), 12u);
  auto broken = d;
  broken.labels[0] = 3;
  EXPECT_THROW(broken.validate(), ShapeError);
}

TEST(ImageFolderTest, LoadsPpmAndPgm) {
  TempDir dir;
  fs::create_directories(dir.path() / "cats");
  fs::create_directories(dir.path() / "dogs");
  {
    std::ofstream p6(dir.path() / "cats" / "a.ppm", std::ios::binary);
    p6 << "P6\n# comment\n2 1\n255\n";
    const unsigned char px[] = {255, 0, 0, 0, 255, 0};
    p6.write(reinterpret_cast<const char*>(px), sizeof px);
  }
  {
    std::ofstream p5(dir.path() / "dogs" / "b.pgm", std::ios::binary);
    p5 << "P5 2 1 255\n";
    const unsigned char px[] = {51, 102};
    p5.write(reinterpret_cast<const char*>(px), sizeof px);
  }
  const auto f = load_image_folder(dir.path(), 1, 2);
  EXPECT_EQ(f.class_names, (std::vector<std::string>{"cats", "dogs"}));
  EXPECT_EQ(f.data.labels, (std::vector<int>{0, 1}));
  EXPECT_EQ(f.data.images.at({0, 0, 0, 0}), 1.0f);
  EXPECT_EQ(f.data.images.at({0, 1, 0, 1}), 1.0f);
  EXPECT_EQ(f.data.images.at({1, 2, 0, 1}), 102.0f / 255.0f);
  EXPECT_THROW(load_image_folder(dir.path(), 2, 2), FormatError);
  EXPECT_THROW(load_image_folder(dir.path() / "missing", 1, 2), FormatError);
}
