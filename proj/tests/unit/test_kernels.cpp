#include <gtest/gtest.h>

#include <cmath>

#include "cfn/kernels.hpp"
#include "oracles.hpp"

using namespace cfn;

namespace {

TensorD rand_t(Shape s, std::uint64_t seed) { return TensorD::uniform(std::move(s), seed, -1.0, 1.0); }

}  // namespace

TEST(Conv2d, IdentityOneByOne) {
  const auto x = rand_t({2, 3, 4, 4}, 1);
  TensorD k({3, 3, 1, 1});
  for (std::size_t c = 0; c < 3; ++c) k.at({c, c, 0, 0}) = 1.0;
  const auto y = conv2d(x, k, TensorD({3}));
  EXPECT_TRUE(y.bitwise_equal(x));
}

TEST(Conv2d, OnesKernelGivesNine) {
  const auto y = conv2d(TensorD::full({1, 1, 3, 3}, 1.0), TensorD::full({1, 1, 3, 3}, 1.0), TensorD({1}));
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y[0], 9.0);
}

struct ConvCase {
  Shape x, k;
  std::size_t stride, pad;
};

void PrintTo(const ConvCase& c, std::ostream* os) {
  *os << "x" << to_string(c.x) << " k" << to_string(c.k) << " s" << c.stride << " p" << c.pad;
}

class ConvVsOracle : public ::testing::TestWithParam<ConvCase> {};

TEST_P(ConvVsOracle, MatchesNestedLoops) {
  const auto& c = GetParam();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto x = rand_t(c.x, seed);
    const auto k = rand_t(c.k, seed + 100);
    const auto b = rand_t({c.k[0]}, seed + 200);
    const auto y = conv2d(x, k, b, c.stride, c.pad);
    const auto ref = oracle::conv2d(x, k, b, c.stride, c.pad);
    ASSERT_EQ(y.shape(), ref.shape());
    EXPECT_LT(oracle::max_abs_diff(y, ref), 1e-12);
  }
}

INSTANTIATE_TEST_SUITE_P(Shapes, ConvVsOracle,
                         ::testing::Values(ConvCase{{2, 3, 5, 5}, {4, 3, 3, 3}, 1, 1},
                                           ConvCase{{2, 3, 5, 5}, {4, 3, 3, 3}, 1, 0},
                                           ConvCase{{2, 3, 5, 5}, {2, 3, 1, 1}, 1, 0},
                                           ConvCase{{1, 2, 7, 7}, {3, 2, 3, 3}, 2, 1},
                                           ConvCase{{1, 2, 7, 7}, {3, 2, 1, 1}, 2, 0},
                                           ConvCase{{1, 1, 1, 1}, {2, 1, 3, 3}, 1, 1}));

TEST(Conv2d, BackwardMatchesFiniteDifferences) {
  const auto x = rand_t({2, 3, 5, 5}, 4);
  const auto k = rand_t({4, 3, 3, 3}, 5);
  const auto b = rand_t({4}, 6);
  const auto r = rand_t({2, 4, 5, 5}, 7);
  auto dot = [&](const TensorD& y) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += r[i] * y[i];
    return s;
  };
  const auto gx = conv2d_backward_input(r, k, x.shape(), 1, 1);
  const auto gk = conv2d_backward_kernel(r, x, k.shape(), 1, 1);
  const auto gb = conv2d_backward_bias(r);
  EXPECT_LT(oracle::max_abs_diff(gx, oracle::numeric_gradient([&](const TensorD& v) { return dot(oracle::conv2d(v, k, b, 1, 1)); }, x)), 1e-8);
  EXPECT_LT(oracle::max_abs_diff(gk, oracle::numeric_gradient([&](const TensorD& v) { return dot(oracle::conv2d(x, v, b, 1, 1)); }, k)), 1e-8);
  EXPECT_LT(oracle::max_abs_diff(gb, oracle::numeric_gradient([&](const TensorD& v) { return dot(oracle::conv2d(x, k, v, 1, 1)); }, b)), 1e-8);
}

TEST(Conv2d, StridedBackwardMatchesFiniteDifferences) {
  const auto x = rand_t({1, 2, 7, 7}, 8);
  const auto k = rand_t({3, 2, 3, 3}, 9);
  const auto b = rand_t({3}, 10);
  const auto r = rand_t({1, 3, 4, 4}, 11);
  auto dot = [&](const TensorD& y) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += r[i] * y[i];
    return s;
  };
  const auto gx = conv2d_backward_input(r, k, x.shape(), 2, 1);
  const auto gk = conv2d_backward_kernel(r, x, k.shape(), 2, 1);
  EXPECT_LT(oracle::max_abs_diff(gx, oracle::numeric_gradient([&](const TensorD& v) { return dot(oracle::conv2d(v, k, b, 2, 1)); }, x)), 1e-8);
  EXPECT_LT(oracle::max_abs_diff(gk, oracle::numeric_gradient([&](const TensorD& v) { return dot(oracle::conv2d(x, v, b, 2, 1)); }, k)), 1e-8);
}

TEST(Conv2d, Errors) {
  EXPECT_THROW(conv2d(TensorD({1, 2, 4, 4}), TensorD({1, 3, 3, 3}), TensorD({1}), 1, 1), ShapeError);
  EXPECT_THROW(conv2d(TensorD({1, 1, 4, 4}), TensorD({1, 1, 3, 3}), TensorD({1}), 2, 0), ShapeError);
  EXPECT_THROW(conv2d(TensorD({1, 1, 4, 4}), TensorD({1, 1, 2, 2}), TensorD({1}), 1, 0), ShapeError);
  EXPECT_THROW(conv2d(TensorD({1, 1, 4, 4}), TensorD({2, 1, 1, 1}), TensorD({1}), 1, 0), ShapeError);
}

TEST(MaxPool, SingleWindow) {
  const auto r = maxpool2d(TensorD({1, 1, 2, 2}, {1, 2, 3, 4}));
  EXPECT_EQ(r.output[0], 4.0);
  EXPECT_EQ(r.argmax[0], 3u);  // row 1, column 1
}

TEST(MaxPool, ConstantInputTakesFirstIndex) {
  const auto r = maxpool2d(TensorD::full({1, 1, 4, 4}, 2.5));
  for (const double v : r.output.data()) EXPECT_EQ(v, 2.5);
  EXPECT_EQ(r.argmax, (std::vector<std::uint32_t>{0, 2, 8, 10}));
}

TEST(MaxPool, MatchesWindowScan) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto x = rand_t({1, 1, 8, 8}, seed);
    EXPECT_TRUE(maxpool2d(x).output.bitwise_equal(oracle::maxpool2x2(x)));
    const auto y = rand_t({2, 3, 6, 4}, seed + 10);
    EXPECT_TRUE(maxpool2d(y).output.bitwise_equal(oracle::maxpool2x2(y)));
  }
}

TEST(MaxPool, BackwardRoutesToWinner) {
  const TensorD x({1, 1, 2, 2}, {1, 5, 3, 4});
  const auto r = maxpool2d(x);
  const auto g = maxpool2d_backward(TensorD({1, 1, 1, 1}, {7.0}), r.argmax, x.shape());
  EXPECT_EQ(g.values(), (std::vector<double>{0, 7, 0, 0}));
}

TEST(MaxPool, Errors) {
  EXPECT_THROW(maxpool2d(TensorD({1, 1, 1, 1})), ShapeError);
  EXPECT_THROW(maxpool2d(TensorD({1, 1, 3, 4})), ShapeError);
}

TEST(ReduceMean, Examples) {
  EXPECT_EQ(reduce_mean_spatial(TensorD({1, 1, 2, 2}, {1, 2, 3, 4}))[0], 2.5);
  const auto c = reduce_mean_spatial(TensorD::full({2, 3, 5, 7}, -1.25));
  for (const double v : c.data()) EXPECT_EQ(v, -1.25);
  const auto x = rand_t({2, 3, 1, 1}, 3);
  EXPECT_EQ(reduce_mean_spatial(x).values(), x.values());
}
