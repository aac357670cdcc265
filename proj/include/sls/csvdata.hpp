#pragma once

#include <string>
#include <vector>

#include "sls/dataset.hpp"

namespace sls {

/// Comma-separated, header row, numeric cells. Parse errors carry row and
/// column positions (1-based, header = row 1).
struct CsvTable {
  std::vector<std::string> columns;
  Tensor values;
};

CsvTable read_csv(const std::string& path);
void write_csv(const std::string& path, const CsvTable& table);

/// Column indices for the requested names; unknown name -> error.
std::vector<int> resolve_columns(const CsvTable& table, const std::vector<std::string>& names);

Dataset dataset_from_table(const CsvTable& table, const std::vector<int>& feature_cols,
                           const std::vector<int>& target_cols);

/// Feature/response CSV with x0..x{p-1}, y0..y{d-1} column names.
void write_dataset_csv(const std::string& path, const Dataset& data);
/// Reads a dataset written by write_dataset_csv (columns inferred by prefix).
Dataset read_dataset_csv(const std::string& path);

/// Per-column empirical-CDF rank map to (0,1) followed by the standard
/// normal inverse CDF. Fit on training data only; out-of-range values clip
/// to ranks 1/(n+1) and n/(n+1). Constant columns map to zero (warned).
class QuantileTransform {
 public:
  QuantileTransform() = default;

  void fit(const Tensor& data);
  Tensor apply(const Tensor& data) const;
  Tensor inverse(const Tensor& data) const;

  bool fitted() const { return !sorted_.empty(); }
  int columns() const { return static_cast<int>(sorted_.size()); }
  const std::vector<std::string>& warnings() const { return warnings_; }

  /// Sorted training values per column (serialization support).
  const std::vector<std::vector<double>>& knots() const { return sorted_; }
  void set_knots(std::vector<std::vector<double>> knots) { sorted_ = std::move(knots); }

 private:
  std::vector<std::vector<double>> sorted_;
  std::vector<std::string> warnings_;
};

}  // namespace sls
