#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "zsar/align.hpp"

namespace zsar::gradcheck {

/// A self-contained overall_loss problem with random features and parameters.
struct Instance {
  align::Batch batch;
  align::TextBank seen;
  align::TextBank unseen;
  align::AlignmentParams params;
  align::LossSettings settings;
};

struct InstanceShape {
  int videos = 8;
  int seen_classes = 5;
  int unseen_classes = 4;
  int d = 16;
  int d_in = 16;
};

/// Hyperparameters are drawn per instance: tau in [0.1, 1], alpha in [0.2, 0.8],
/// gamma in [0.1, 1].
Instance random_instance(std::uint64_t seed, const InstanceShape& shape = {});

struct BlockError {
  std::string block;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct Report {
  std::vector<BlockError> blocks;
  double max_rel_error() const;
};

/// Entry-wise relative error |a - n| / max(|a|, |n|, floor); the floor keeps
/// entries whose true derivative is ~0 from dividing roundoff by roundoff.
inline constexpr double kRelativeFloor = 1e-3;

/// Compares the analytic gradient against central differences of the scalar
/// loss on every parameter entry.
Report check_gradients(const Instance& instance, double h = 1e-5);

}  // namespace zsar::gradcheck
