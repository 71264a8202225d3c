#include "gmpvi/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "gmpvi/error.hpp"
#include "gmpvi/rng.hpp"

namespace gmpvi {
namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\"");
  const auto e = s.find_last_not_of(" \t\r\"");
  if (b == std::string::npos) return {};
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_cell(const std::string& cell, std::size_t row, const std::string& column) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (!cell.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (cell.empty() || ec != std::errc() || ptr != last || !std::isfinite(v))
    throw data_error("row " + std::to_string(row) + ", column '" + column +
                     "': non-numeric value '" + cell + "'");
  return v;
}

}  // namespace

Dataset Dataset::rows(std::span<const Eigen::Index> index) const {
  Dataset out;
  out.columns = columns;
  out.standardization = standardization;
  out.X.resize(static_cast<Eigen::Index>(index.size()), X.cols());
  out.y.resize(static_cast<Eigen::Index>(index.size()));
  if (time.size() > 0) out.time.resize(static_cast<Eigen::Index>(index.size()));
  for (std::size_t r = 0; r < index.size(); ++r) {
    const Eigen::Index i = index[r];
    out.X.row(r) = X.row(i);
    out.y(r) = y(i);
    if (!group.empty()) out.group.push_back(group[i]);
    if (time.size() > 0) out.time(r) = time(i);
  }
  return out;
}

Eigen::Index CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw data_error("missing column '" + name + "'");
  return static_cast<Eigen::Index>(it - header.begin());
}

CsvTable read_csv_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open '" + path.string() + "'");
  CsvTable t;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    if (t.header.empty()) {
      t.header = split_line(line);
      continue;
    }
    const auto cells = split_line(line);
    if (cells.size() != t.header.size())
      throw data_error("row " + std::to_string(row) + ": expected " +
                       std::to_string(t.header.size()) + " cells, found " +
                       std::to_string(cells.size()));
    std::vector<double> values(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) values[c] = parse_cell(cells[c], row, t.header[c]);
    t.rows.push_back(std::move(values));
  }
  if (t.header.empty()) throw data_error("'" + path.string() + "' is empty");
  if (t.rows.empty()) throw data_error("'" + path.string() + "' has a header but no rows");
  return t;
}

Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  const CsvTable t = read_csv_table(path);
  std::vector<std::string> covs = schema.covariates;
  if (covs.empty()) {
    for (const auto& h : t.header)
      if (h.size() > 1 && h[0] == 'x' && std::all_of(h.begin() + 1, h.end(), ::isdigit))
        covs.push_back(h);
  }
  const Eigen::Index ycol = t.column(schema.response);
  std::vector<Eigen::Index> xcols;
  for (const auto& c : covs) xcols.push_back(t.column(c));

  const Eigen::Index n = static_cast<Eigen::Index>(t.rows.size());
  const Eigen::Index off = schema.add_intercept ? 1 : 0;
  Dataset d;
  d.X.resize(n, off + static_cast<Eigen::Index>(xcols.size()));
  d.y.resize(n);
  if (schema.add_intercept) d.columns.push_back("intercept");
  for (const auto& c : covs) d.columns.push_back(c);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (schema.add_intercept) d.X(i, 0) = 1.0;
    for (std::size_t c = 0; c < xcols.size(); ++c) d.X(i, off + c) = t.rows[i][xcols[c]];
    d.y(i) = t.rows[i][ycol];
  }
  if (schema.group) {
    const Eigen::Index gcol = t.column(*schema.group);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double g = t.rows[i][gcol];
      if (g != std::floor(g))
        throw data_error("row " + std::to_string(i + 2) + ", column '" + *schema.group +
                         "': group labels must be integers");
      d.group.push_back(static_cast<int>(g));
    }
  }
  if (schema.time) {
    const Eigen::Index tcol = t.column(*schema.time);
    d.time.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) d.time(i) = t.rows[i][tcol];
  }
  d.standardization.mean = Eigen::VectorXd::Zero(d.X.cols());
  d.standardization.scale = Eigen::VectorXd::Ones(d.X.cols());
  if (schema.standardize_covariates || schema.standardize_response)
    standardize(d, schema.standardize_response);
  return d;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw data_error("cannot write '" + tmp.string() + "'");
    out << text;
    if (!out) throw data_error("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
  std::string s;
  for (std::size_t c = 0; c < header.size(); ++c) s += (c ? "," : "") + header[c];
  s += '\n';
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (c) s += ',';
      s += format_double(r[c]);
    }
    s += '\n';
  }
  write_text_atomic(path, s);
}

TrainTestSplit split_indices(Eigen::Index n, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw config_error("split fraction must lie in (0, 1)");
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  Rng rng(seed, Stream::split);
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  const auto ntrain = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  TrainTestSplit s;
  s.train.assign(idx.begin(), idx.begin() + ntrain);
  s.test.assign(idx.begin() + ntrain, idx.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

void standardize(Dataset& data, bool response) {
  Standardization s;
  s.mean = Eigen::VectorXd::Zero(data.X.cols());
  s.scale = Eigen::VectorXd::Ones(data.X.cols());
  const double n = static_cast<double>(data.size());
  for (Eigen::Index c = 0; c < data.X.cols(); ++c) {
    const bool intercept = (data.X.col(c).array() == 1.0).all();
    if (intercept) continue;
    const double m = data.X.col(c).mean();
    const double sd = std::sqrt((data.X.col(c).array() - m).square().sum() / std::max(1.0, n - 1.0));
    s.mean(c) = m;
    s.scale(c) = sd > 0.0 ? sd : 1.0;
  }
  if (response) {
    s.y_mean = data.y.mean();
    const double sd = std::sqrt((data.y.array() - s.y_mean).square().sum() / std::max(1.0, n - 1.0));
    s.y_scale = sd > 0.0 ? sd : 1.0;
  }
  apply_standardization(data, s);
}

void apply_standardization(Dataset& data, const Standardization& s) {
  for (Eigen::Index c = 0; c < data.X.cols(); ++c)
    data.X.col(c) = (data.X.col(c).array() - s.mean(c)) / s.scale(c);
  data.y = (data.y.array() - s.y_mean) / s.y_scale;
  data.standardization = s;
}

}  // namespace gmpvi
