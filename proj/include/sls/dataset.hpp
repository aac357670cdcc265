#pragma once

#include <utility>

#include "sls/rng.hpp"
#include "sls/tensor.hpp"

namespace sls {

struct Dataset {
  Tensor x;  // n x x_dim
  Tensor y;  // n x d

  int n() const { return x.rows(); }
};

/// Rows [0, n*frac) and [n*frac, n) after a seeded shuffle.
std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double frac, RngStream& rng);

Dataset take_rows(const Dataset& data, const std::vector<int>& idx);

}  // namespace sls
