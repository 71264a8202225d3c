#include "gmpvi/simulate.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <cmath>
#include <fstream>
#include <sstream>

#include "gmpvi/error.hpp"
#include "gmpvi/rng.hpp"

namespace gmpvi {

namespace {

void check_size(Eigen::Index n) {
  if (n < 1) throw config_error("simulation size must be at least 1");
}

std::string missing_file(const std::filesystem::path& path, const std::string& what) {
  return what + " not found at " + path.string() + "; run `gmpvi fetch-data` or supply the file";
}

}  // namespace

Dataset simulate_logistic_quadrants(Eigen::Index n, std::uint64_t seed, bool intercept) {
  check_size(n);
  Rng rng(seed, Stream::simulation);
  const int off = intercept ? 1 : 0;
  Dataset d;
  d.X.resize(n, 2 + off);
  d.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x1 = -2.0 + 4.0 * rng.uniform();
    const double x2 = -2.0 + 4.0 * rng.uniform();
    const double u = rng.uniform();
    if (intercept) d.X(i, 0) = 1.0;
    d.X(i, off) = x1;
    d.X(i, off + 1) = x2;
    if (x1 < 0.0 && x2 > 0.0)
      d.y(i) = 0.0;
    else if (x1 > 0.0 && x2 < 0.0)
      d.y(i) = 1.0;
    else
      d.y(i) = u < 0.5 ? 1.0 : 0.0;
  }
  d.columns = intercept ? std::vector<std::string>{"intercept", "x1", "x2"} : std::vector<std::string>{"x1", "x2"};
  return d;
}

Dataset simulate_linear(Eigen::Index n, std::uint64_t seed, const Eigen::Vector2d& theta, double sigma2) {
  check_size(n);
  if (!(sigma2 > 0.0)) throw config_error("noise variance must be positive");
  Rng rng(seed, Stream::simulation);
  Dataset d;
  d.X.resize(n, 2);
  d.y.resize(n);
  const double sd = std::sqrt(sigma2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = -2.0 + 4.0 * rng.uniform();
    d.X(i, 0) = 1.0;
    d.X(i, 1) = x;
    d.y(i) = theta(0) + theta(1) * x + sd * rng.normal();
  }
  d.columns = {"intercept", "x1"};
  return d;
}

Dataset simulate_cubic(Eigen::Index n, std::uint64_t seed, double sigma2) {
  check_size(n);
  if (!(sigma2 > 0.0)) throw config_error("noise variance must be positive");
  Rng rng(seed, Stream::simulation);
  Dataset d;
  d.X.resize(n, 2);
  d.y.resize(n);
  const double sd = std::sqrt(sigma2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = -2.0 + 4.0 * rng.uniform();
    d.X(i, 0) = 1.0;
    d.X(i, 1) = x;
    d.y(i) = x * x * x + sd * rng.normal();
  }
  d.columns = {"intercept", "x1"};
  return d;
}

Dataset simulate_two_regime(Eigen::Index n, std::uint64_t seed, double sd_left, double sd_right) {
  check_size(n);
  Rng rng(seed, Stream::simulation);
  Dataset d;
  d.X.resize(n, 1);
  d.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = -2.0 + 4.0 * rng.uniform();
    d.X(i, 0) = x;
    d.y(i) = std::sin(2.0 * x) + (x < 0.0 ? sd_left : sd_right) * rng.normal();
  }
  d.columns = {"x1"};
  return d;
}

Dataset simulate_smooth_curve(Eigen::Index n, std::uint64_t seed, double sd) {
  check_size(n);
  Rng rng(seed, Stream::simulation);
  Dataset d;
  d.X.resize(n, 1);
  d.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = n == 1 ? 0.0 : -2.0 + 4.0 * static_cast<double>(i) / static_cast<double>(n - 1);
    d.X(i, 0) = x;
    d.y(i) = std::sin(2.0 * x) + sd * rng.normal();
  }
  d.columns = {"x1"};
  return d;
}

Dataset aids_dataset(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw data_error(missing_file(path, "AIDS quarterly counts"));
  const CsvTable t = read_csv_table(path);
  const Eigen::Index cq = t.column("quarter"), cc = t.column("cases");
  const auto n = static_cast<Eigen::Index>(t.rows.size());
  if (n < 2) throw data_error(path.string() + ": need at least two quarters");
  Dataset d;
  d.X = Eigen::MatrixXd::Zero(n, 6);
  d.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = t.rows[static_cast<std::size_t>(i)];
    const double q = row[static_cast<std::size_t>(cq)];
    if (q != 1.0 && q != 2.0 && q != 3.0 && q != 4.0)
      throw data_error(path.string() + ": row " + std::to_string(i + 2) + ", column quarter: expected 1-4");
    const double tt = static_cast<double>(i) / static_cast<double>(n - 1);
    d.X(i, 0) = 1.0;
    d.X(i, 1) = tt;
    d.X(i, 2) = tt * tt;
    if (q > 1.0) d.X(i, 1 + static_cast<Eigen::Index>(q)) = 1.0;
    d.y(i) = row[static_cast<std::size_t>(cc)];
  }
  d.columns = {"intercept", "t", "t2", "q2", "q3", "q4"};
  return d;
}

Dataset telescope_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw data_error(missing_file(path, "telescope data"));
  std::vector<std::vector<double>> rows;
  std::vector<double> labels;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 11) throw data_error(path.string() + ": row " + std::to_string(lineno) + ": expected 11 fields");
    std::vector<double> r;
    for (int c = 0; c < 10; ++c) {
      try {
        std::size_t used = 0;
        r.push_back(std::stod(cells[static_cast<std::size_t>(c)], &used));
      } catch (const std::exception&) {
        throw data_error(path.string() + ": row " + std::to_string(lineno) + ", column " + std::to_string(c + 1) +
                         ": not a number");
      }
    }
    std::string cls = cells[10];
    while (!cls.empty() && (cls.back() == '\r' || cls.back() == ' ')) cls.pop_back();
    if (cls != "g" && cls != "h")
      throw data_error(path.string() + ": row " + std::to_string(lineno) + ", column 11: class must be g or h");
    rows.push_back(std::move(r));
    labels.push_back(cls == "g" ? 1.0 : 0.0);
  }
  if (rows.empty()) throw data_error(path.string() + ": empty file");
  Dataset d;
  const auto n = static_cast<Eigen::Index>(rows.size());
  d.X.resize(n, 11);
  d.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d.X(i, 0) = 1.0;
    for (int c = 0; c < 10; ++c) d.X(i, c + 1) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
    d.y(i) = labels[static_cast<std::size_t>(i)];
  }
  d.columns = {"intercept", "fLength", "fWidth", "fSize", "fConc", "fConc1",
               "fAsym", "fM3Long", "fM3Trans", "fAlpha", "fDist"};
  return d;
}

Dataset iq_dataset(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw data_error(missing_file(path, "IQ data"));
  const CsvTable t = read_csv_table(path);
  const Eigen::Index ck = t.column("kid_iq"), cm = t.column("mom_iq"), ch = t.column("mom_hs");
  const auto n = static_cast<Eigen::Index>(t.rows.size());
  if (n < 4) throw data_error(path.string() + ": too few rows");
  Eigen::VectorXd kid(n), mom(n), hs(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = t.rows[static_cast<std::size_t>(i)];
    kid(i) = row[static_cast<std::size_t>(ck)];
    mom(i) = row[static_cast<std::size_t>(cm)];
    hs(i) = row[static_cast<std::size_t>(ch)];
  }
  auto z = [](const Eigen::VectorXd& v) {
    const double mu = v.mean();
    const double sd = std::sqrt((v.array() - mu).square().sum() / static_cast<double>(v.size() - 1));
    return Eigen::VectorXd((v.array() - mu) / sd);
  };
  Dataset d;
  d.X.resize(n, 3);
  d.X.col(0).setOnes();
  d.X.col(1) = hs;
  d.X.col(2) = z(mom);
  d.y = z(kid);
  d.columns = {"intercept", "mom_hs", "mom_iq"};
  return d;
}

Dataset lidar_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw data_error(missing_file(path, "lidar data"));
  std::string line;
  std::vector<double> x, y;
  int lineno = 0;
  bool header = true;
  while (std::getline(in, line)) {
    ++lineno;
    std::stringstream ss(line);
    std::vector<std::string> cells;
    std::string cell;
    while (ss >> cell) cells.push_back(cell);
    if (cells.empty()) continue;
    if (header) {
      header = false;
      try {
        std::stod(cells[0]);
      } catch (const std::exception&) {
        continue;
      }
    }
    if (cells.size() < 2) throw data_error(path.string() + ": row " + std::to_string(lineno) + ": expected 2 fields");
    try {
      x.push_back(std::stod(cells[cells.size() - 2]));
      y.push_back(std::stod(cells[cells.size() - 1]));
    } catch (const std::exception&) {
      throw data_error(path.string() + ": row " + std::to_string(lineno) + ": not a number");
    }
  }
  if (x.empty()) throw data_error(path.string() + ": empty file");
  Dataset d;
  d.X = Eigen::Map<Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  d.y = Eigen::Map<Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
  d.columns = {"range"};
  return d;
}

ConjugatePosterior conjugate_posterior(const Dataset& data, double sigma2, const Eigen::MatrixXd& prior_cov) {
  const Eigen::LLT<Eigen::MatrixXd> pl(prior_cov);
  if (pl.info() != Eigen::Success) throw numerical_error("conjugate_posterior: prior covariance not SPD");
  const Eigen::MatrixXd prec = pl.solve(Eigen::MatrixXd::Identity(prior_cov.rows(), prior_cov.cols())) +
                               data.X.transpose() * data.X / sigma2;
  const Eigen::LLT<Eigen::MatrixXd> llt(prec);
  ConjugatePosterior p;
  p.cov = llt.solve(Eigen::MatrixXd::Identity(prec.rows(), prec.cols()));
  p.mean = llt.solve(data.X.transpose() * data.y / sigma2);
  return p;
}

double conjugate_llpd(const ConjugatePosterior& post, const Dataset& test, double sigma2) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < test.size(); ++i) {
    const Eigen::VectorXd x = test.X.row(i).transpose();
    s += normal_logpdf(test.y(i), x.dot(post.mean), x.dot(post.cov * x) + sigma2);
  }
  return s / static_cast<double>(test.size());
}

double least_squares_variance(const Dataset& data) {
  const Eigen::Index n = data.size(), p = data.covariates();
  if (n <= p) throw data_error("least_squares_variance: need more rows than columns");
  const Eigen::VectorXd coef = data.X.colPivHouseholderQr().solve(data.y);
  return (data.y - data.X * coef).squaredNorm() / static_cast<double>(n - p);
}

}  // namespace gmpvi
