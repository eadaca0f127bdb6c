#pragma once

// Independent scalar-loop oracles and small helpers shared by the tests. Nothing
// here calls into the library's numeric code.

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "zsar/rng.hpp"
#include "zsar/types.hpp"

namespace testing {

using zsar::Matrix;

inline Matrix random_matrix(zsar::Rng& rng, long rows, long cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (long i = 0; i < rows; ++i) {
    for (long j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  }
  return m;
}

inline std::vector<int> random_labels(zsar::Rng& rng, std::size_t n, int classes) {
  std::vector<int> out(n);
  for (auto& y : out) y = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
  return out;
}

inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (long i = 0; i < a.rows(); ++i) {
    for (long j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (long t = 0; t < a.cols(); ++t) s += a(i, t) * b(t, j);
      out(i, j) = s;
    }
  }
  return out;
}

inline double dot_row(const Matrix& a, long i, const Matrix& b, long j) {
  double s = 0.0;
  for (long t = 0; t < a.cols(); ++t) s += a(i, t) * b(j, t);
  return s;
}

struct ScalarContrastive {
  double loss = 0.0;
  Matrix grad_features;
  Matrix grad_classes;
};

// Mean cross entropy of softmax(v_i . z_j / tau), written as plain loops.
inline ScalarContrastive scalar_contrastive(const Matrix& v, const Matrix& z,
                                            const std::vector<int>& labels, double tau) {
  const long n = v.rows();
  const long c = z.rows();
  ScalarContrastive out;
  out.grad_features = Matrix::Zero(v.rows(), v.cols());
  out.grad_classes = Matrix::Zero(z.rows(), z.cols());
  for (long i = 0; i < n; ++i) {
    std::vector<double> logits(static_cast<std::size_t>(c));
    double mx = -INFINITY;
    for (long j = 0; j < c; ++j) {
      logits[j] = dot_row(v, i, z, j) / tau;
      mx = std::max(mx, logits[j]);
    }
    double denom = 0.0;
    for (long j = 0; j < c; ++j) denom += std::exp(logits[j] - mx);
    const int y = labels[static_cast<std::size_t>(i)];
    out.loss += -(logits[y] - mx - std::log(denom));
    for (long j = 0; j < c; ++j) {
      const double p = std::exp(logits[j] - mx) / denom;
      const double coef = (p - (j == y ? 1.0 : 0.0)) / (tau * static_cast<double>(n));
      for (long t = 0; t < v.cols(); ++t) {
        out.grad_features(i, t) += coef * z(j, t);
        out.grad_classes(j, t) += coef * v(i, t);
      }
    }
  }
  out.loss /= static_cast<double>(n);
  return out;
}

inline std::vector<double> scalar_softmax(const std::vector<double>& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) s += (out[i] = std::exp(logits[i] - mx));
  for (auto& x : out) x /= s;
  return out;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return INFINITY;
  double m = 0.0;
  for (long i = 0; i < a.rows(); ++i) {
    for (long j = 0; j < a.cols(); ++j) m = std::max(m, std::abs(a(i, j) - b(i, j)));
  }
  return m;
}

inline bool bitwise_equal(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  return std::equal(a.data(), a.data() + a.size(), b.data(), [](double x, double y) {
    return std::memcmp(&x, &y, sizeof(double)) == 0;
  });
}

// Scratch directory removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("zsar-" + tag + "-" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
