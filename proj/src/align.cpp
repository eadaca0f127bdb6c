#include "zsar/align.hpp"

#include <cmath>
#include <string>

#include "zsar/rng.hpp"

namespace zsar::align {

namespace {

void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw NumericError(std::string("non-finite values in ") + what);
}

Matrix affine(const Matrix& raw, const Matrix& w, const RowVector& b, const char* what) {
  if (raw.cols() != w.rows()) {
    throw Error(std::string(what) + ": input dimension " + std::to_string(raw.cols()) +
                " does not match projection rows " + std::to_string(w.rows()));
  }
  Matrix out = raw * w;
  out.rowwise() += b;
  return out;
}

// Softmax backward: given d/dA for A = softmax(L) row-wise, returns d/dL.
Matrix softmax_backward(const Matrix& attn, const Matrix& grad_attn) {
  const Eigen::VectorXd inner = (grad_attn.array() * attn.array()).rowwise().sum();
  Matrix out = grad_attn;
  out.colwise() -= inner;
  return (out.array() * attn.array()).matrix();
}

// Backward of y = x / |x| row-wise.
Matrix normalize_rows_backward(const Matrix& raw, const Matrix& grad_out) {
  Matrix grad(raw.rows(), raw.cols());
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    const double norm = raw.row(i).norm();
    if (norm == 0.0) {
      grad.row(i).setZero();
      continue;
    }
    const RowVector y = raw.row(i) / norm;
    grad.row(i) = (grad_out.row(i) - y * y.dot(grad_out.row(i))) / norm;
  }
  return grad;
}

void accumulate(Matrix& target, const Matrix& value) {
  if (target.size() == 0) {
    target = value;
  } else {
    target += value;
  }
}

// Gradient of a projected text block onto the shared semantic projection.
void add_semantic_grad(const Matrix& raw, const Matrix& grad_projected, AlignmentParams& grad) {
  if (grad_projected.size() == 0) return;
  grad.w_semantic.noalias() += raw.transpose() * grad_projected;
  grad.b_semantic += grad_projected.colwise().sum();
}

struct ProjectedBank {
  Matrix def_raw_proj;      // before optional normalization
  Matrix content_raw_proj;
  Matrix z_def;
  Matrix z_content;
  Matrix z;
};

ProjectedBank project_bank(const TextBank& bank, const AlignmentParams& params,
                           const LossSettings& settings) {
  ProjectedBank out;
  if (settings.uses_definitions()) {
    out.def_raw_proj = encode_semantic(bank.definitions, params);
    out.z_def = settings.l2_normalize ? normalize_rows(out.def_raw_proj) : out.def_raw_proj;
  }
  if (settings.uses_content()) {
    if (bank.description_means.rows() != static_cast<Eigen::Index>(bank.class_ids.size())) {
      throw Error("content pathway enabled but description features are missing; use alpha=1 "
                  "for definition-only training");
    }
    out.content_raw_proj = encode_semantic(bank.description_means, params);
    out.z_content = settings.l2_normalize ? normalize_rows(out.content_raw_proj) : out.content_raw_proj;
  }
  if (!settings.uses_content()) {
    out.z = out.z_def;
  } else if (!settings.uses_definitions()) {
    out.z = out.z_content;
  } else {
    out.z = fuse_class_features(out.z_def, out.z_content, settings.alpha);
  }
  return out;
}

// Routes a gradient on the fused features (plus direct gradients on each
// pathway) back to the semantic projection.
void backprop_bank(const TextBank& bank, const ProjectedBank& proj, const LossSettings& settings,
                   Matrix grad_def, Matrix grad_content, const Matrix& grad_fused,
                   AlignmentParams& grad) {
  if (grad_fused.size() != 0) {
    if (settings.uses_definitions()) {
      const double w = settings.uses_content() ? settings.alpha : 1.0;
      accumulate(grad_def, w * grad_fused);
    }
    if (settings.uses_content()) {
      const double w = settings.uses_definitions() ? 1.0 - settings.alpha : 1.0;
      accumulate(grad_content, w * grad_fused);
    }
  }
  if (settings.l2_normalize) {
    if (grad_def.size() != 0) grad_def = normalize_rows_backward(proj.def_raw_proj, grad_def);
    if (grad_content.size() != 0) {
      grad_content = normalize_rows_backward(proj.content_raw_proj, grad_content);
    }
  }
  add_semantic_grad(bank.definitions, grad_def, grad);
  add_semantic_grad(bank.description_means, grad_content, grad);
}

}  // namespace

AlignmentParams AlignmentParams::zeros_like(const AlignmentParams& other) {
  AlignmentParams p;
  p.w_visual = Matrix::Zero(other.w_visual.rows(), other.w_visual.cols());
  p.b_visual = RowVector::Zero(other.b_visual.size());
  p.w_semantic = Matrix::Zero(other.w_semantic.rows(), other.w_semantic.cols());
  p.b_semantic = RowVector::Zero(other.b_semantic.size());
  return p;
}

std::size_t AlignmentParams::size() const {
  return static_cast<std::size_t>(w_visual.size() + b_visual.size() + w_semantic.size() +
                                   b_semantic.size());
}

bool AlignmentParams::all_finite() const {
  return w_visual.allFinite() && b_visual.allFinite() && w_semantic.allFinite() &&
         b_semantic.allFinite();
}

AlignmentParams init_params(std::size_t d_in_visual, std::size_t d_in_semantic, std::size_t d,
                            std::uint64_t seed) {
  Rng rng(seed);
  auto uniform_block = [&](std::size_t rows) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
    Matrix w(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = rng.uniform(-bound, bound);
    }
    return w;
  };
  AlignmentParams p;
  p.w_visual = uniform_block(d_in_visual);
  p.b_visual = RowVector::Zero(static_cast<Eigen::Index>(d));
  p.w_semantic = uniform_block(d_in_semantic);
  p.b_semantic = RowVector::Zero(static_cast<Eigen::Index>(d));
  return p;
}

LossSettings LossSettings::from(const RunConfig& config) {
  LossSettings s;
  s.tau = config.tau;
  s.alpha = config.alpha;
  s.gamma = config.gamma;
  s.cim = config.cim;
  s.reduction = config.reduction;
  s.l2_normalize = config.l2_normalize;
  return s;
}

Matrix encode_visual(const Matrix& raw, const AlignmentParams& params) {
  return affine(raw, params.w_visual, params.b_visual, "encode_visual");
}

Matrix encode_semantic(const Matrix& raw, const AlignmentParams& params) {
  return affine(raw, params.w_semantic, params.b_semantic, "encode_semantic");
}

Matrix build_content_features(const std::vector<Matrix>& per_class) {
  if (per_class.empty()) return Matrix();
  const Eigen::Index d = per_class.front().cols();
  Matrix out(static_cast<Eigen::Index>(per_class.size()), d);
  for (std::size_t j = 0; j < per_class.size(); ++j) {
    const Matrix& rows = per_class[j];
    if (rows.rows() == 0) {
      throw Error("class row " + std::to_string(j) +
                  " has no selected descriptions; train it in definition-only mode (alpha=1)");
    }
    if (rows.cols() != d) throw Error("description feature width mismatch");
    out.row(static_cast<Eigen::Index>(j)) = rows.colwise().sum() / static_cast<double>(rows.rows());
  }
  return out;
}

Matrix fuse_class_features(const Matrix& z_def, const Matrix& z_content, double alpha) {
  if (z_def.rows() != z_content.rows() || z_def.cols() != z_content.cols()) {
    throw Error("fuse_class_features: shape mismatch");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error("fuse_class_features: alpha outside [0, 1]");
  return alpha * z_def + (1.0 - alpha) * z_content;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    out.row(i) = (logits.row(i).array() - m).exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

Matrix normalize_rows(const Matrix& m) {
  Matrix out = m;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double norm = m.row(i).norm();
    if (norm > 0.0) out.row(i) /= norm;
  }
  return out;
}

ContrastiveResult contrastive_loss(const Matrix& video_feats, const Matrix& class_feats,
                                   std::span<const int> labels, double tau,
                                   LossReduction reduction) {
  if (!(tau > 0.0)) throw Error("contrastive_loss: tau must be positive");
  if (video_feats.cols() != class_feats.cols()) throw Error("contrastive_loss: width mismatch");
  if (static_cast<Eigen::Index>(labels.size()) != video_feats.rows()) {
    throw Error("contrastive_loss: one label per video required");
  }
  const Eigen::Index n = video_feats.rows();
  const Eigen::Index c = class_feats.rows();
  if (c == 0) throw Error("contrastive_loss: empty class set");
  for (int y : labels) {
    if (y < 0 || y >= c) throw Error("contrastive_loss: label " + std::to_string(y) + " out of range");
  }

  const Matrix logits = (video_feats * class_feats.transpose()) / tau;
  require_finite(logits, "contrastive logits");
  const double scale =
      (reduction == LossReduction::kMean && n > 0) ? 1.0 / static_cast<double>(n) : 1.0;

  Matrix grad_logits(n, c);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m = logits.row(i).maxCoeff();
    const Eigen::ArrayXd shifted = (logits.row(i).array() - m).transpose();
    const Eigen::ArrayXd e = shifted.exp();
    const double sum = e.sum();
    const double lse = m + std::log(sum);
    const int y = labels[static_cast<std::size_t>(i)];
    total += lse - logits(i, y);
    grad_logits.row(i) = (e / sum).transpose();
    grad_logits(i, y) -= 1.0;
  }
  grad_logits *= scale;

  ContrastiveResult r;
  r.loss = total * scale;
  r.grad_features = (grad_logits * class_feats) / tau;
  r.grad_classes = (grad_logits.transpose() * video_feats) / tau;
  return r;
}

CycleFeatures cycle_reconstruct(const Matrix& z_seen, const Matrix& z_unseen, double tau) {
  if (z_seen.rows() == 0 || z_unseen.rows() == 0) {
    throw Error("cycle_reconstruct: both seen and unseen banks must be non-empty");
  }
  if (!(tau > 0.0)) throw Error("cycle_reconstruct: tau must be positive");
  CycleFeatures cf;
  const Matrix fwd_logits = (z_seen * z_unseen.transpose()) / tau;
  require_finite(fwd_logits, "forward attention logits");
  cf.attn_fwd = softmax_rows(fwd_logits);
  cf.forward = cf.attn_fwd * z_unseen;
  const Matrix bwd_logits = (cf.forward * z_seen.transpose()) / tau;
  require_finite(bwd_logits, "backward attention logits");
  cf.attn_bwd = softmax_rows(bwd_logits);
  cf.cycle = cf.attn_bwd * z_seen;
  return cf;
}

void cycle_backward(const CycleFeatures& cf, const Matrix& z_seen, const Matrix& z_unseen,
                    double tau, const Matrix& grad_cycle, Matrix& grad_seen, Matrix& grad_unseen) {
  if (grad_seen.size() == 0) grad_seen = Matrix::Zero(z_seen.rows(), z_seen.cols());
  if (grad_unseen.size() == 0) grad_unseen = Matrix::Zero(z_unseen.rows(), z_unseen.cols());

  // cycle = attn_bwd * z_seen
  const Matrix grad_attn_bwd = grad_cycle * z_seen.transpose();
  grad_seen.noalias() += cf.attn_bwd.transpose() * grad_cycle;
  // attn_bwd = softmax(forward * z_seen^T / tau)
  const Matrix grad_bwd_logits = softmax_backward(cf.attn_bwd, grad_attn_bwd) / tau;
  const Matrix grad_forward = grad_bwd_logits * z_seen;
  grad_seen.noalias() += grad_bwd_logits.transpose() * cf.forward;
  // forward = attn_fwd * z_unseen
  const Matrix grad_attn_fwd = grad_forward * z_unseen.transpose();
  grad_unseen.noalias() += cf.attn_fwd.transpose() * grad_forward;
  // attn_fwd = softmax(z_seen * z_unseen^T / tau)
  const Matrix grad_fwd_logits = softmax_backward(cf.attn_fwd, grad_attn_fwd) / tau;
  grad_seen.noalias() += grad_fwd_logits * z_unseen;
  grad_unseen.noalias() += grad_fwd_logits.transpose() * z_seen;
}

ClassBank build_class_bank(const TextBank& bank, const AlignmentParams& params,
                           const LossSettings& settings) {
  ProjectedBank proj = project_bank(bank, params, settings);
  ClassBank out;
  out.class_ids = bank.class_ids;
  out.z_def = std::move(proj.z_def);
  out.z_content = std::move(proj.z_content);
  out.z = std::move(proj.z);
  return out;
}

StepResult overall_loss(const Batch& batch, const TextBank& seen, const TextBank& unseen_bank,
                        const AlignmentParams& params, const LossSettings& settings) {
  if (!(settings.tau > 0.0)) throw Error("overall_loss: tau must be positive");
  const Matrix v_raw = encode_visual(batch.videos, params);
  const Matrix v = settings.l2_normalize ? normalize_rows(v_raw) : v_raw;
  const ProjectedBank seen_proj = project_bank(seen, params, settings);

  StepResult result;
  result.grad = AlignmentParams::zeros_like(params);
  Matrix grad_v = Matrix::Zero(v.rows(), v.cols());
  Matrix grad_seen_def;
  Matrix grad_seen_content;
  Matrix grad_seen_fused;

  if (settings.uses_definitions()) {
    auto r = contrastive_loss(v, seen_proj.z_def, batch.labels, settings.tau, settings.reduction);
    result.loss.definition = r.loss;
    grad_v += r.grad_features;
    grad_seen_def = std::move(r.grad_classes);
  }
  if (settings.uses_content()) {
    auto r = contrastive_loss(v, seen_proj.z_content, batch.labels, settings.tau, settings.reduction);
    result.loss.content = r.loss;
    grad_v += r.grad_features;
    grad_seen_content = std::move(r.grad_classes);
  }
  result.loss.total = result.loss.definition + result.loss.content;

  if (settings.cim) {
    const ProjectedBank unseen_proj = project_bank(unseen_bank, params, settings);
    const CycleFeatures cf = cycle_reconstruct(seen_proj.z, unseen_proj.z, settings.tau);
    auto r = contrastive_loss(v, cf.cycle, batch.labels, settings.tau, settings.reduction);
    result.loss.cycle = r.loss;
    result.loss.total += settings.gamma * r.loss;
    grad_v += settings.gamma * r.grad_features;

    Matrix grad_unseen_fused;
    cycle_backward(cf, seen_proj.z, unseen_proj.z, settings.tau, settings.gamma * r.grad_classes,
                   grad_seen_fused, grad_unseen_fused);
    backprop_bank(unseen_bank, unseen_proj, settings, Matrix(), Matrix(), grad_unseen_fused,
                  result.grad);
  }
  if (!std::isfinite(result.loss.total)) {
    throw NumericError("overall loss is non-finite (definition=" +
                       std::to_string(result.loss.definition) + ", content=" +
                       std::to_string(result.loss.content) + ", cycle=" +
                       std::to_string(result.loss.cycle) + ")");
  }

  backprop_bank(seen, seen_proj, settings, std::move(grad_seen_def), std::move(grad_seen_content),
                grad_seen_fused, result.grad);

  if (settings.l2_normalize) grad_v = normalize_rows_backward(v_raw, grad_v);
  result.grad.w_visual.noalias() += batch.videos.transpose() * grad_v;
  result.grad.b_visual += grad_v.colwise().sum();

  if (!result.grad.all_finite()) throw NumericError("non-finite gradient in overall_loss");
  return result;
}

Prediction predict(const Matrix& video_feats, const Matrix& class_feats) {
  if (class_feats.rows() == 0) throw Error("predict: empty unseen class set");
  if (video_feats.cols() != class_feats.cols()) throw Error("predict: width mismatch");
  Prediction p;
  // Plain index-order dot products: the scores, and therefore the rankings, do
  // not depend on the matrix kernel's blocking.
  p.scores.resize(video_feats.rows(), class_feats.rows());
  for (Eigen::Index i = 0; i < video_feats.rows(); ++i) {
    for (Eigen::Index j = 0; j < class_feats.rows(); ++j) {
      double s = 0.0;
      for (Eigen::Index t = 0; t < video_feats.cols(); ++t) s += video_feats(i, t) * class_feats(j, t);
      p.scores(i, j) = s;
    }
  }
  p.labels.resize(static_cast<std::size_t>(video_feats.rows()));
  for (Eigen::Index i = 0; i < p.scores.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < p.scores.cols(); ++j) {
      if (p.scores(i, j) > p.scores(i, best)) best = j;
    }
    p.labels[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return p;
}

Prediction predict(const Matrix& video_feats, const Matrix& z_def_unseen,
                   const Matrix& z_content_unseen, double alpha) {
  if (alpha == 1.0) return predict(video_feats, z_def_unseen);
  if (alpha == 0.0) return predict(video_feats, z_content_unseen);
  return predict(video_feats, fuse_class_features(z_def_unseen, z_content_unseen, alpha));
}

}  // namespace zsar::align
