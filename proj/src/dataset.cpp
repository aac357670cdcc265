#include "sls/dataset.hpp"

#include <numeric>
#include <stdexcept>

namespace sls {

Dataset take_rows(const Dataset& data, const std::vector<int>& idx) {
  Dataset out;
  out.x = Tensor(static_cast<int>(idx.size()), data.x.cols());
  out.y = Tensor(static_cast<int>(idx.size()), data.y.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    for (int j = 0; j < data.x.cols(); ++j) out.x(static_cast<int>(i), j) = data.x(idx[i], j);
    for (int j = 0; j < data.y.cols(); ++j) out.y(static_cast<int>(i), j) = data.y(idx[i], j);
  }
  return out;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double frac, RngStream& rng) {
  if (frac <= 0.0 || frac >= 1.0)
    throw std::invalid_argument("split_dataset: frac must be in (0,1)");
  int n = data.n();
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx);
  int cut = static_cast<int>(frac * n);
  if (cut < 1 || cut >= n) throw std::invalid_argument("split_dataset: degenerate split");
  std::vector<int> a(idx.begin(), idx.begin() + cut), b(idx.begin() + cut, idx.end());
  return {take_rows(data, a), take_rows(data, b)};
}

}  // namespace sls
