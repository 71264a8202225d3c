#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gmpvi {

/// Column-wise affine transform applied to covariates (and optionally the
/// response) so predictions can be mapped back to the original scale.
struct Standardization {
  Eigen::VectorXd mean;   // per design column; intercept keeps 0
  Eigen::VectorXd scale;  // per design column; intercept keeps 1
  double y_mean = 0.0;
  double y_scale = 1.0;
};

/// Regression data. X carries an explicit intercept column when the model
/// has one; `group` and `time` are filled only for long-format data.
struct Dataset {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  std::vector<int> group;
  Eigen::VectorXd time;
  std::vector<std::string> columns;
  Standardization standardization;

  Eigen::Index size() const { return y.size(); }
  Eigen::Index covariates() const { return X.cols(); }
  Dataset rows(std::span<const Eigen::Index> index) const;
};

/// Which CSV columns to read. Covariates default to every column named
/// x1, x2, ... in header order.
struct CsvSchema {
  std::string response = "y";
  std::vector<std::string> covariates;
  bool add_intercept = true;
  bool standardize_covariates = false;
  bool standardize_response = false;
  std::optional<std::string> group;
  std::optional<std::string> time;
};

/// Parses a headed CSV into a Dataset. Missing columns, non-numeric cells
/// and empty files raise data errors naming the row and column.
Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema = {});

/// Plain numeric table: header plus rows, for files whose layout is not a
/// regression schema.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  Eigen::Index column(const std::string& name) const;
};
CsvTable read_csv_table(const std::filesystem::path& path);

/// Writes a table atomically (temporary file then rename) with 17
/// significant digits per value.
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);

/// Writes text atomically.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

/// Formats a double with 17 significant digits.
std::string format_double(double v);

struct TrainTestSplit {
  std::vector<Eigen::Index> train;
  std::vector<Eigen::Index> test;
};

/// Random split with round(fraction * n) training rows; reproducible given seed.
TrainTestSplit split_indices(Eigen::Index n, double train_fraction, std::uint64_t seed);

/// Standardises the non-intercept columns of X in place (and y when asked),
/// recording the transform.
void standardize(Dataset& data, bool response);
/// Applies an existing transform (from a training set) to another set.
void apply_standardization(Dataset& data, const Standardization& s);

}  // namespace gmpvi
