#include "sls/csvdata.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace sls {

namespace {
std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

double parse_cell(const std::string& cell, int row, int col) {
  const char* s = cell.c_str();
  char* end = nullptr;
  double v = std::strtod(s, &end);
  while (end && *end == ' ') ++end;
  if (end == s || (end && *end != '\0'))
    throw std::runtime_error("csv parse error at row " + std::to_string(row) + " column " +
                             std::to_string(col) + ": not numeric: '" + cell + "'");
  return v;
}

const boost::math::normal& std_normal() {
  static const boost::math::normal dist(0.0, 1.0);
  return dist;
}
}  // namespace

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open csv file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty csv file: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  CsvTable table;
  table.columns = split_line(line);
  if (table.columns.empty()) throw std::runtime_error("csv has no columns: " + path);
  std::vector<double> buf;
  int rows = 0;
  int row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_line(line);
    if (cells.size() != table.columns.size())
      throw std::runtime_error("csv row " + std::to_string(row_no) + " has " +
                               std::to_string(cells.size()) + " cells, expected " +
                               std::to_string(table.columns.size()));
    for (std::size_t c = 0; c < cells.size(); ++c)
      buf.push_back(parse_cell(cells[c], row_no, static_cast<int>(c) + 1));
    ++rows;
  }
  if (rows == 0) throw std::runtime_error("csv has no data rows: " + path);
  table.values = Tensor::from(std::move(buf), rows, static_cast<int>(table.columns.size()));
  return table;
}

void write_csv(const std::string& path, const CsvTable& table) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write csv file: " + path);
  for (std::size_t c = 0; c < table.columns.size(); ++c)
    out << (c ? "," : "") << table.columns[c];
  out << "\n";
  out.precision(17);
  for (int i = 0; i < table.values.rows(); ++i) {
    for (int j = 0; j < table.values.cols(); ++j) out << (j ? "," : "") << table.values(i, j);
    out << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<int> resolve_columns(const CsvTable& table, const std::vector<std::string>& names) {
  std::vector<int> idx;
  for (const auto& name : names) {
    auto it = std::find(table.columns.begin(), table.columns.end(), name);
    if (it == table.columns.end())
      throw std::runtime_error("csv column not found: " + name);
    idx.push_back(static_cast<int>(it - table.columns.begin()));
  }
  return idx;
}

Dataset dataset_from_table(const CsvTable& table, const std::vector<int>& feature_cols,
                           const std::vector<int>& target_cols) {
  if (feature_cols.empty() || target_cols.empty())
    throw std::invalid_argument("dataset_from_table: need feature and target columns");
  Dataset d;
  d.x = Tensor(table.values.rows(), static_cast<int>(feature_cols.size()));
  d.y = Tensor(table.values.rows(), static_cast<int>(target_cols.size()));
  for (int i = 0; i < table.values.rows(); ++i) {
    for (std::size_t j = 0; j < feature_cols.size(); ++j)
      d.x(i, static_cast<int>(j)) = table.values(i, feature_cols[j]);
    for (std::size_t j = 0; j < target_cols.size(); ++j)
      d.y(i, static_cast<int>(j)) = table.values(i, target_cols[j]);
  }
  return d;
}

void write_dataset_csv(const std::string& path, const Dataset& data) {
  CsvTable table;
  for (int j = 0; j < data.x.cols(); ++j) table.columns.push_back("x" + std::to_string(j));
  for (int j = 0; j < data.y.cols(); ++j) table.columns.push_back("y" + std::to_string(j));
  table.values = Tensor(data.n(), data.x.cols() + data.y.cols());
  for (int i = 0; i < data.n(); ++i) {
    for (int j = 0; j < data.x.cols(); ++j) table.values(i, j) = data.x(i, j);
    for (int j = 0; j < data.y.cols(); ++j) table.values(i, data.x.cols() + j) = data.y(i, j);
  }
  write_csv(path, table);
}

Dataset read_dataset_csv(const std::string& path) {
  CsvTable table = read_csv(path);
  std::vector<int> xs, ys;
  for (std::size_t c = 0; c < table.columns.size(); ++c) {
    const std::string& n = table.columns[c];
    if (!n.empty() && n[0] == 'x')
      xs.push_back(static_cast<int>(c));
    else if (!n.empty() && n[0] == 'y')
      ys.push_back(static_cast<int>(c));
    else
      throw std::runtime_error("dataset csv column must start with x or y: " + n);
  }
  return dataset_from_table(table, xs, ys);
}

void QuantileTransform::fit(const Tensor& data) {
  sorted_.clear();
  warnings_.clear();
  for (int j = 0; j < data.cols(); ++j) {
    std::vector<double> col(data.rows());
    for (int i = 0; i < data.rows(); ++i) col[i] = data(i, j);
    std::sort(col.begin(), col.end());
    if (col.front() == col.back())
      warnings_.push_back("column " + std::to_string(j) +
                          " is constant; transformed to zeros");
    sorted_.push_back(std::move(col));
  }
}

Tensor QuantileTransform::apply(const Tensor& data) const {
  if (!fitted()) throw std::logic_error("QuantileTransform: not fitted");
  if (data.cols() != columns())
    throw std::invalid_argument("QuantileTransform: column count mismatch");
  Tensor out(data.rows(), data.cols());
  for (int j = 0; j < data.cols(); ++j) {
    const auto& s = sorted_[j];
    double n = static_cast<double>(s.size());
    bool constant = s.front() == s.back();
    for (int i = 0; i < data.rows(); ++i) {
      if (constant) {
        out(i, j) = 0.0;
        continue;
      }
      double v = data(i, j);
      double rank;  // in units of 1..n, later divided by n+1
      auto lo = std::lower_bound(s.begin(), s.end(), v);
      auto hi = std::upper_bound(s.begin(), s.end(), v);
      if (lo != hi) {
        // tie block: average rank
        rank = 0.5 * ((lo - s.begin() + 1) + (hi - s.begin()));
      } else if (lo == s.begin()) {
        rank = 1.0;  // clip below the training minimum
      } else if (lo == s.end()) {
        rank = n;  // clip above the training maximum
      } else {
        double a = *(lo - 1), b = *lo;
        double base = static_cast<double>(lo - s.begin());  // rank of a
        rank = base + (v - a) / (b - a);
      }
      double u = rank / (n + 1.0);
      out(i, j) = boost::math::quantile(std_normal(), u);
    }
  }
  return out;
}

Tensor QuantileTransform::inverse(const Tensor& data) const {
  if (!fitted()) throw std::logic_error("QuantileTransform: not fitted");
  if (data.cols() != columns())
    throw std::invalid_argument("QuantileTransform: column count mismatch");
  Tensor out(data.rows(), data.cols());
  for (int j = 0; j < data.cols(); ++j) {
    const auto& s = sorted_[j];
    double n = static_cast<double>(s.size());
    for (int i = 0; i < data.rows(); ++i) {
      if (s.front() == s.back()) {
        out(i, j) = s.front();
        continue;
      }
      double u = boost::math::cdf(std_normal(), data(i, j));
      double rank = std::clamp(u * (n + 1.0), 1.0, n);
      double fi = std::floor(rank);
      int a = static_cast<int>(fi) - 1;
      int b = std::min(a + 1, static_cast<int>(n) - 1);
      double frac = rank - fi;
      out(i, j) = s[a] + frac * (s[b] - s[a]);
    }
  }
  return out;
}

}  // namespace sls
