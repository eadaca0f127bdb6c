#include "zsar/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "zsar/rng.hpp"

namespace zsar::gradcheck {

namespace {

Matrix gaussian(Rng& rng, int rows, int cols, double scale) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = scale * rng.normal();
  }
  return m;
}

align::TextBank random_bank(Rng& rng, int classes, int d_in, ClassId first_id) {
  align::TextBank bank;
  for (int c = 0; c < classes; ++c) bank.class_ids.push_back(first_id + static_cast<ClassId>(c));
  bank.definitions = gaussian(rng, classes, d_in, 0.5);
  bank.description_means.resize(classes, d_in);
  for (int c = 0; c < classes; ++c) {
    const int k = 1 + static_cast<int>(rng.below(4));
    const Matrix descs = gaussian(rng, k, d_in, 0.5);
    bank.description_means.row(c) = descs.colwise().mean();
  }
  return bank;
}

double loss_at(const Instance& inst, const align::AlignmentParams& params) {
  return align::overall_loss(inst.batch, inst.seen, inst.unseen, params, inst.settings).loss.total;
}

template <typename Block>
BlockError check_block(const Instance& inst, align::AlignmentParams& params, Block& block,
                       const Block& analytic, const char* name, double h) {
  BlockError err{name, 0.0, 0.0};
  for (Eigen::Index i = 0; i < block.size(); ++i) {
    const double saved = block.data()[i];
    block.data()[i] = saved + h;
    const double plus = loss_at(inst, params);
    block.data()[i] = saved - h;
    const double minus = loss_at(inst, params);
    block.data()[i] = saved;
    const double numeric = (plus - minus) / (2.0 * h);
    const double a = analytic.data()[i];
    const double abs_err = std::abs(a - numeric);
    const double denom = std::max({std::abs(a), std::abs(numeric), kRelativeFloor});
    err.max_abs_error = std::max(err.max_abs_error, abs_err);
    err.max_rel_error = std::max(err.max_rel_error, abs_err / denom);
  }
  return err;
}

}  // namespace

Instance random_instance(std::uint64_t seed, const InstanceShape& shape) {
  Rng rng(derive_seed(seed, 0x6772616463686bULL));
  Instance inst;
  inst.settings.tau = rng.uniform(0.1, 1.0);
  inst.settings.alpha = rng.uniform(0.2, 0.8);
  inst.settings.gamma = rng.uniform(0.1, 1.0);
  inst.settings.cim = true;

  inst.batch.videos = gaussian(rng, shape.videos, shape.d_in, 0.5);
  for (int i = 0; i < shape.videos; ++i) {
    inst.batch.labels.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(shape.seen_classes))));
  }
  inst.seen = random_bank(rng, shape.seen_classes, shape.d_in, 0);
  inst.unseen = random_bank(rng, shape.unseen_classes, shape.d_in,
                            static_cast<ClassId>(shape.seen_classes));
  inst.params = align::init_params(static_cast<std::size_t>(shape.d_in),
                                   static_cast<std::size_t>(shape.d_in),
                                   static_cast<std::size_t>(shape.d), rng.next_u64());
  // Non-zero biases so their gradients are exercised away from the init point.
  for (Eigen::Index j = 0; j < inst.params.b_visual.size(); ++j) {
    inst.params.b_visual(j) = 0.1 * rng.normal();
    inst.params.b_semantic(j) = 0.1 * rng.normal();
  }
  return inst;
}

double Report::max_rel_error() const {
  double m = 0.0;
  for (const auto& b : blocks) m = std::max(m, b.max_rel_error);
  return m;
}

Report check_gradients(const Instance& instance, double h) {
  const auto analytic =
      align::overall_loss(instance.batch, instance.seen, instance.unseen, instance.params,
                          instance.settings)
          .grad;
  align::AlignmentParams params = instance.params;
  Report report;
  report.blocks.push_back(check_block(instance, params, params.w_visual, analytic.w_visual, "w_visual", h));
  report.blocks.push_back(check_block(instance, params, params.b_visual, analytic.b_visual, "b_visual", h));
  report.blocks.push_back(
      check_block(instance, params, params.w_semantic, analytic.w_semantic, "w_semantic", h));
  report.blocks.push_back(
      check_block(instance, params, params.b_semantic, analytic.b_semantic, "b_semantic", h));
  return report;
}

}  // namespace zsar::gradcheck
