#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace zsar {

// Row-major so that a row is one feature vector, matching the on-disk layout.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

using ClassId = std::uint32_t;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input file.
class LoadError : public Error {
 public:
  using Error::Error;
};

/// A computation produced NaN/Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

struct ActionClass {
  ClassId class_id = 0;
  std::string name;
  std::string canonical_name;
  std::string definition;
  std::vector<std::string> descriptions;
};

/// Dense feature rows with one string id and one class label per row.
struct FeatureStore {
  std::vector<std::string> item_ids;
  std::vector<ClassId> labels;
  Matrix matrix;

  std::size_t rows() const { return labels.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(matrix.cols()); }
};

struct EmbeddingTable {
  std::size_t dim = 0;
  std::map<std::string, Vector> entries;
};

struct ZsarSplit {
  std::string split_id;
  std::set<ClassId> seen_classes;
  std::set<ClassId> unseen_classes;
  // Unseen classes whose semantic features form the reconstruction bank during
  // training. Empty means "all unseen classes".
  std::set<ClassId> cim_classes;
  std::set<std::string> train_items;
  std::set<std::string> val_items;
  std::set<std::string> test_items;

  const std::set<ClassId>& cycle_bank() const {
    return cim_classes.empty() ? unseen_classes : cim_classes;
  }
};

enum class LossReduction { kMean, kSum };
enum class WeightDecayMode { kCoupled, kDecoupled };

struct RunConfig {
  int d = 512;
  int k = 100;
  double tau = 0.1;
  double alpha = 0.5;
  double gamma = 0.1;
  bool cim = true;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  WeightDecayMode weight_decay_mode = WeightDecayMode::kCoupled;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int batch_size = 512;
  int epochs = 50;
  int patience = 10;
  double warmup_fraction = 0.1;
  LossReduction reduction = LossReduction::kMean;
  bool l2_normalize = false;
  std::uint64_t seed = 0;

  /// Throws Error when any hyperparameter is outside its valid range.
  void validate() const;
};

}  // namespace zsar
