#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "zsar/types.hpp"

namespace zsar::align {

/// Learnable projections. The semantic projection is shared between action
/// definitions and video descriptions.
struct AlignmentParams {
  Matrix w_visual;     // d_in_v x d
  RowVector b_visual;  // d
  Matrix w_semantic;   // d_in_s x d
  RowVector b_semantic;

  static AlignmentParams zeros_like(const AlignmentParams& other);
  std::size_t size() const;
  bool all_finite() const;
};

/// Seeded uniform init in [-1/sqrt(d_in), 1/sqrt(d_in)], zero biases.
AlignmentParams init_params(std::size_t d_in_visual, std::size_t d_in_semantic, std::size_t d,
                            std::uint64_t seed);

struct LossSettings {
  double tau = 0.1;
  double alpha = 0.5;
  double gamma = 0.1;
  bool cim = true;
  LossReduction reduction = LossReduction::kMean;
  bool l2_normalize = false;

  static LossSettings from(const RunConfig& config);
  // alpha == 1 drops the description pathway, alpha == 0 the definition pathway.
  bool uses_definitions() const { return alpha > 0.0; }
  bool uses_content() const { return alpha < 1.0; }
};

Matrix encode_visual(const Matrix& raw, const AlignmentParams& params);
Matrix encode_semantic(const Matrix& raw, const AlignmentParams& params);

/// Row j is the mean of class j's projected description features.
Matrix build_content_features(const std::vector<Matrix>& per_class_desc_features);

Matrix fuse_class_features(const Matrix& z_def, const Matrix& z_content, double alpha);

/// Row-wise softmax with max-logit subtraction.
Matrix softmax_rows(const Matrix& logits);

struct ContrastiveResult {
  double loss = 0.0;
  Matrix grad_features;  // d loss / d video features
  Matrix grad_classes;   // d loss / d class features
};

/// Cross entropy of softmax(v_i . z_j / tau) over all C classes against labels.
ContrastiveResult contrastive_loss(const Matrix& video_feats, const Matrix& class_feats,
                                   std::span<const int> labels, double tau,
                                   LossReduction reduction = LossReduction::kMean);

struct CycleFeatures {
  Matrix forward;    // N x d, convex combinations of unseen features
  Matrix cycle;      // N x d, convex combinations of seen features
  Matrix attn_fwd;   // N x M
  Matrix attn_bwd;   // N x N
};

CycleFeatures cycle_reconstruct(const Matrix& z_seen, const Matrix& z_unseen, double tau);

/// Pulls a gradient on the cycle features back onto the seen and unseen banks.
void cycle_backward(const CycleFeatures& cf, const Matrix& z_seen, const Matrix& z_unseen,
                    double tau, const Matrix& grad_cycle, Matrix& grad_seen, Matrix& grad_unseen);

/// Frozen text features for one group of classes, rows aligned with class order.
struct TextBank {
  std::vector<ClassId> class_ids;
  Matrix definitions;        // C x d_in_s; may be empty when alpha == 0
  Matrix description_means;  // C x d_in_s mean of selected descriptions; empty when alpha == 1
};

struct ClassBank {
  std::vector<ClassId> class_ids;
  Matrix z_def;
  Matrix z_content;
  Matrix z;
};

/// Projects a text bank and fuses it. Missing pathways are left empty.
ClassBank build_class_bank(const TextBank& bank, const AlignmentParams& params,
                           const LossSettings& settings);

struct Batch {
  Matrix videos;            // n x d_in_v raw features
  std::vector<int> labels;  // indices into the seen bank
};

struct LossBreakdown {
  double total = 0.0;
  double definition = 0.0;
  double content = 0.0;
  double cycle = 0.0;
};

struct StepResult {
  LossBreakdown loss;
  AlignmentParams grad;
};

/// L = L_def + L_content + gamma * L_cycle and its gradient with respect to every
/// parameter block. Gradients flow through both attention softmaxes.
StepResult overall_loss(const Batch& batch, const TextBank& seen, const TextBank& unseen_bank,
                        const AlignmentParams& params, const LossSettings& settings);

struct Prediction {
  Matrix scores;            // n x M
  std::vector<int> labels;  // argmax, ties to the lowest index
};

Prediction predict(const Matrix& video_feats, const Matrix& class_feats);
Prediction predict(const Matrix& video_feats, const Matrix& z_def_unseen,
                   const Matrix& z_content_unseen, double alpha);

Matrix normalize_rows(const Matrix& m);

}  // namespace zsar::align
