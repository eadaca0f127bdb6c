#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "zsar/align.hpp"
#include "zsar/dataset.hpp"
#include "zsar/rng.hpp"
#include "zsar/types.hpp"

namespace zsar::optim {

struct AdamState {
  align::AlignmentParams m;
  align::AlignmentParams v;
  std::uint64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_params(const align::AlignmentParams& params, const RunConfig& config);
};

/// One bias-corrected Adam update. Coupled weight decay adds wd * p to the
/// gradient; decoupled decay subtracts lr * wd * p after the Adam step.
void adam_step(align::AlignmentParams& params, const align::AlignmentParams& grads,
               AdamState& state, double lr, double weight_decay,
               WeightDecayMode mode = WeightDecayMode::kCoupled);

/// Linear warmup over the first ceil(warmup_fraction * total) steps, with tick
/// (step + 1) / W * base, then half-cosine decay reaching 0 on the final step.
double lr_at(std::int64_t step, std::int64_t total_steps, double base_lr, double warmup_fraction);

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0.0;
  double lr = 0.0;
  std::optional<double> val_top1;
  double wallclock_s = 0.0;
};

/// Everything a training run reads, already resolved against a split.
struct TrainingData {
  align::TextBank seen;
  align::TextBank cycle_bank;
  Matrix train_videos;
  std::vector<int> train_labels;

  align::TextBank val_bank;  // unseen classes scored at validation
  Matrix val_videos;
  std::vector<int> val_labels;
};

TrainingData make_training_data(const Dataset& data, const ZsarSplit& split,
                                const RunConfig& config, const DescriptionOrder* order = nullptr);

struct TrainResult {
  align::AlignmentParams params;  // best-validation epoch, or last without val data
  AdamState adam;
  Rng rng;
  int best_epoch = 0;
  std::vector<EpochRecord> log;  // epoch 0 holds the loss at initialization
  std::vector<double> step_losses;
};

TrainResult train(const RunConfig& config, const TrainingData& data);

/// Mean per-sample loss over a whole video set, no updates.
double dataset_loss(const align::AlignmentParams& params, const TrainingData& data,
                    const align::LossSettings& settings);

/// Top-1 over the validation rows; nullopt when there are none.
std::optional<double> validation_top1(const align::AlignmentParams& params,
                                      const TrainingData& data, const align::LossSettings& settings);

/// One JSON object per line: epoch, mean_loss, lr, val_top1. Wallclock goes to
/// a separate timing log so the metrics log is reproducible byte for byte.
std::string encode_metrics_log(const std::vector<EpochRecord>& log);
std::string encode_timing_log(const std::vector<EpochRecord>& log);

struct Checkpoint {
  align::AlignmentParams params;
  AdamState adam;
  Rng rng;
  double tau = 0.1;
  double alpha = 0.5;
  double gamma = 0.1;
  std::uint32_t epoch = 0;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes, const std::string& origin = "<memory>");
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace zsar::optim
