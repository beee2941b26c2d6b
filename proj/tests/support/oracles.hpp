#pragma once

// Reference implementations used only by the tests. They are written for
// obviousness (direct index formulas, brute force) rather than speed, and
// share no code with the library paths they check.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cfn/fusion.hpp"
#include "cfn/tensor.hpp"

namespace cfn::oracle {

// y[n,co,oy,ox] = b[co] + sum_{ci,ky,kx} k[co,ci,ky,kx] * x[n,ci,oy*s+ky-p,ox*s+kx-p]
TensorD conv2d(const TensorD& x, const TensorD& k, const TensorD& b, std::size_t stride, std::size_t pad);

// 2x2 stride-2 max pool; ties resolved to the first element in row-major order.
TensorD maxpool2x2(const TensorD& x);

// Central differences of a scalar function of one tensor.
TensorD numeric_gradient(const std::function<double(const TensorD&)>& f, const TensorD& x, double eps = 1e-5);

double max_abs_diff(const TensorD& a, const TensorD& b);

// Parameter counts from the layer formulas: conv (k*k*cin + 1)*cout, FC (K+1)*C.
struct Counts {
  std::size_t basic = 0;
  std::size_t branches = 0;
  std::size_t fusion = 0;
};
Counts count_cfn(const std::vector<std::size_t>& widths, std::size_t k, std::size_t c,
                 const std::vector<std::size_t>& branch_pool_indices, FusionKind fusion);

// Accuracy of assigning each row to the class whose mean image is nearest.
double nearest_centroid_accuracy(const TensorF& images, const std::vector<int>& labels, std::size_t classes);

// Indices sorted by (distance, index) using std::sort on pairs.
std::vector<std::size_t> brute_force_ranking(const std::vector<double>& distances);

}  // namespace cfn::oracle
