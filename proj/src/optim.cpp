#include "zsar/optim.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "zsar/eval.hpp"
#include "zsar/io.hpp"

namespace zsar::optim {

namespace {

template <typename Block>
void adam_block(Block& p, const Block& g, Block& m, Block& v, const AdamState& s, double lr,
                double wd, WeightDecayMode mode, double bias1, double bias2) {
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    double grad = g.data()[i];
    if (mode == WeightDecayMode::kCoupled) grad += wd * p.data()[i];
    double& mi = m.data()[i];
    double& vi = v.data()[i];
    mi = s.beta1 * mi + (1.0 - s.beta1) * grad;
    vi = s.beta2 * vi + (1.0 - s.beta2) * grad * grad;
    const double m_hat = mi / bias1;
    const double v_hat = vi / bias2;
    double update = lr * m_hat / (std::sqrt(v_hat) + s.eps);
    if (mode == WeightDecayMode::kDecoupled) update += lr * wd * p.data()[i];
    p.data()[i] -= update;
  }
}

double params_norm(const align::AlignmentParams& p) {
  return std::sqrt(p.w_visual.squaredNorm() + p.b_visual.squaredNorm() +
                   p.w_semantic.squaredNorm() + p.b_semantic.squaredNorm());
}

std::vector<ClassId> sorted(const std::set<ClassId>& s) { return {s.begin(), s.end()}; }

}  // namespace

AdamState AdamState::for_params(const align::AlignmentParams& params, const RunConfig& config) {
  AdamState s;
  s.m = align::AlignmentParams::zeros_like(params);
  s.v = align::AlignmentParams::zeros_like(params);
  s.beta1 = config.beta1;
  s.beta2 = config.beta2;
  s.eps = config.eps;
  return s;
}

void adam_step(align::AlignmentParams& params, const align::AlignmentParams& grads,
               AdamState& state, double lr, double weight_decay, WeightDecayMode mode) {
  if (!grads.all_finite()) throw NumericError("adam_step: non-finite gradient");
  ++state.t;
  const double bias1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bias2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  adam_block(params.w_visual, grads.w_visual, state.m.w_visual, state.v.w_visual, state, lr,
             weight_decay, mode, bias1, bias2);
  adam_block(params.b_visual, grads.b_visual, state.m.b_visual, state.v.b_visual, state, lr,
             weight_decay, mode, bias1, bias2);
  adam_block(params.w_semantic, grads.w_semantic, state.m.w_semantic, state.v.w_semantic, state,
             lr, weight_decay, mode, bias1, bias2);
  adam_block(params.b_semantic, grads.b_semantic, state.m.b_semantic, state.v.b_semantic, state,
             lr, weight_decay, mode, bias1, bias2);
  if (!params.all_finite()) throw NumericError("adam_step produced non-finite parameters");
}

double lr_at(std::int64_t step, std::int64_t total_steps, double base_lr, double warmup_fraction) {
  if (total_steps <= 0 || step < 0 || step >= total_steps) {
    throw Error("lr_at: step " + std::to_string(step) + " outside [0, " +
                std::to_string(total_steps) + ")");
  }
  // The epsilon keeps e.g. 0.1 * 30 = 3.0000000000000004 from rounding up to 4.
  const auto warmup = static_cast<std::int64_t>(
      std::ceil(warmup_fraction * static_cast<double>(total_steps) - 1e-9));
  if (step < warmup) {
    return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  }
  const std::int64_t span = total_steps - warmup - 1;
  const double progress =
      span > 0 ? static_cast<double>(step - warmup) / static_cast<double>(span) : 0.0;
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

TrainingData make_training_data(const Dataset& data, const ZsarSplit& split,
                                const RunConfig& config, const DescriptionOrder* order) {
  io::validate_split_items(split, data.videos);
  const auto settings = align::LossSettings::from(config);
  const bool defs = settings.uses_definitions();
  const bool content = settings.uses_content();

  TrainingData td;
  const auto seen = sorted(split.seen_classes);
  const auto unseen = sorted(split.unseen_classes);
  td.seen = make_text_bank(data, seen, config.k, defs, content, order);
  if (config.cim) td.cycle_bank = make_text_bank(data, sorted(split.cycle_bank()), config.k, defs, content, order);
  auto train_rows = gather_items(data.videos, split.train_items, seen);
  td.train_videos = std::move(train_rows.features);
  td.train_labels = std::move(train_rows.labels);
  if (!split.val_items.empty()) {
    td.val_bank = make_text_bank(data, unseen, config.k, defs, content, order);
    auto val_rows = gather_items(data.videos, split.val_items, unseen);
    td.val_videos = std::move(val_rows.features);
    td.val_labels = std::move(val_rows.labels);
  }
  return td;
}

double dataset_loss(const align::AlignmentParams& params, const TrainingData& data,
                    const align::LossSettings& settings) {
  if (data.train_labels.empty()) return 0.0;
  align::Batch batch{data.train_videos, data.train_labels};
  const double loss = align::overall_loss(batch, data.seen, data.cycle_bank, params, settings).loss.total;
  return settings.reduction == LossReduction::kMean
             ? loss
             : loss / static_cast<double>(data.train_labels.size());
}

std::optional<double> validation_top1(const align::AlignmentParams& params,
                                      const TrainingData& data,
                                      const align::LossSettings& settings) {
  if (data.val_labels.empty()) return std::nullopt;
  Matrix v = align::encode_visual(data.val_videos, params);
  const auto bank = align::build_class_bank(data.val_bank, params, settings);
  if (settings.l2_normalize) v = align::normalize_rows(v);
  const auto pred = align::predict(v, bank.z);
  return eval::topk_accuracy(pred.scores, data.val_labels, 1);
}

TrainResult train(const RunConfig& config, const TrainingData& data) {
  config.validate();
  const auto settings = align::LossSettings::from(config);
  const auto n = static_cast<std::int64_t>(data.train_labels.size());
  if (n == 0 && config.epochs > 0) throw Error("train: no training items");

  const std::size_t d_in_s = static_cast<std::size_t>(
      settings.uses_definitions() ? data.seen.definitions.cols() : data.seen.description_means.cols());
  TrainResult result{
      align::init_params(static_cast<std::size_t>(data.train_videos.cols()), d_in_s,
                         static_cast<std::size_t>(config.d), derive_seed(config.seed, 1)),
      {},
      Rng(derive_seed(config.seed, 2)),
      0,
      {},
      {}};
  result.adam = AdamState::for_params(result.params, config);

  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };

  align::AlignmentParams params = result.params;
  EpochRecord initial;
  initial.epoch = 0;
  initial.mean_loss = dataset_loss(params, data, settings);
  initial.val_top1 = validation_top1(params, data, settings);
  initial.wallclock_s = elapsed();
  result.log.push_back(initial);

  const std::int64_t batch_size = config.batch_size;
  const std::int64_t steps_per_epoch = (n + batch_size - 1) / batch_size;
  const std::int64_t total_steps = steps_per_epoch * config.epochs;
  double best_val = -1.0;
  int since_best = 0;
  std::int64_t step = 0;

  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    result.rng.shuffle(order);

    double loss_sum = 0.0;
    double lr = 0.0;
    for (std::int64_t begin = 0; begin < n; begin += batch_size, ++step) {
      const std::int64_t end = std::min(n, begin + batch_size);
      align::Batch batch;
      batch.videos.resize(end - begin, data.train_videos.cols());
      batch.labels.resize(static_cast<std::size_t>(end - begin));
      for (std::int64_t r = begin; r < end; ++r) {
        const auto src = order[static_cast<std::size_t>(r)];
        batch.videos.row(r - begin) = data.train_videos.row(src);
        batch.labels[static_cast<std::size_t>(r - begin)] = data.train_labels[static_cast<std::size_t>(src)];
      }
      align::StepResult sr;
      try {
        sr = align::overall_loss(batch, data.seen, data.cycle_bank, params, settings);
      } catch (const NumericError& e) {
        throw NumericError("step " + std::to_string(step) + " (epoch " + std::to_string(epoch) +
                           "): " + e.what() + "; parameter norm " +
                           std::to_string(params_norm(params)));
      }
      lr = lr_at(step, total_steps, config.lr, config.warmup_fraction);
      adam_step(params, sr.grad, result.adam, lr, config.weight_decay, config.weight_decay_mode);
      result.step_losses.push_back(sr.loss.total);
      const double per_sample = settings.reduction == LossReduction::kMean
                                    ? sr.loss.total * static_cast<double>(end - begin)
                                    : sr.loss.total;
      loss_sum += per_sample;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_loss = loss_sum / static_cast<double>(n);
    rec.lr = lr;
    rec.val_top1 = validation_top1(params, data, settings);
    rec.wallclock_s = elapsed();
    result.log.push_back(rec);

    if (rec.val_top1) {
      if (*rec.val_top1 > best_val) {
        best_val = *rec.val_top1;
        result.params = params;
        result.best_epoch = epoch;
        since_best = 0;
      } else if (config.patience > 0 && ++since_best >= config.patience) {
        break;
      }
    } else {
      result.params = params;
      result.best_epoch = epoch;
    }
  }
  return result;
}

std::string encode_metrics_log(const std::vector<EpochRecord>& log) {
  std::string out;
  for (const auto& r : log) {
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["mean_loss"] = r.mean_loss;
    j["lr"] = r.lr;
    j["val_top1"] = r.val_top1 ? nlohmann::ordered_json(*r.val_top1) : nlohmann::ordered_json(nullptr);
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::string encode_timing_log(const std::vector<EpochRecord>& log) {
  std::string out;
  for (const auto& r : log) {
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["wallclock"] = r.wallclock_s;
    out += j.dump();
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: "ZCK1", u32 version, then little-endian fields in fixed order.

namespace {

constexpr char kCkptMagic[4] = {'Z', 'C', 'K', '1'};

class Writer {
 public:
  void raw(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  template <typename Block>
  void block(const Block& b) {
    u32(static_cast<std::uint32_t>(b.rows()));
    u32(static_cast<std::uint32_t>(b.cols()));
    for (Eigen::Index i = 0; i < b.size(); ++i) f64(b.data()[i]);
  }
  void params(const align::AlignmentParams& p) {
    block(p.w_visual);
    block(p.b_visual);
    block(p.w_semantic);
    block(p.b_semantic);
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(std::string_view bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}
  void need(std::size_t n) {
    if (pos_ + n > bytes_.size()) {
      throw LoadError(origin_ + ": truncated checkpoint at byte offset " + std::to_string(pos_));
    }
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_++])) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  template <typename Block>
  void block(Block& b) {
    const auto rows = u32();
    const auto cols = u32();
    if constexpr (Block::RowsAtCompileTime == 1) {
      if (rows != 1) throw LoadError(origin_ + ": expected a row vector block");
      b.resize(cols);
    } else {
      b.resize(rows, cols);
    }
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = f64();
  }
  void params(align::AlignmentParams& p) {
    block(p.w_visual);
    block(p.b_visual);
    block(p.w_semantic);
    block(p.b_semantic);
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  std::string_view bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.raw(kCkptMagic, 4);
  w.u32(kCheckpointVersion);
  w.f64(ckpt.tau);
  w.f64(ckpt.alpha);
  w.f64(ckpt.gamma);
  w.u32(ckpt.epoch);
  w.params(ckpt.params);
  w.params(ckpt.adam.m);
  w.params(ckpt.adam.v);
  w.u64(ckpt.adam.t);
  w.f64(ckpt.adam.beta1);
  w.f64(ckpt.adam.beta2);
  w.f64(ckpt.adam.eps);
  const std::string rng = ckpt.rng.serialize();
  w.u32(static_cast<std::uint32_t>(rng.size()));
  w.raw(rng.data(), rng.size());
  return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes, const std::string& origin) {
  Reader r(bytes, origin);
  if (r.str(4) != std::string_view(kCkptMagic, 4)) throw LoadError(origin + ": bad checkpoint magic");
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw LoadError(origin + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint c;
  c.tau = r.f64();
  c.alpha = r.f64();
  c.gamma = r.f64();
  c.epoch = r.u32();
  r.params(c.params);
  r.params(c.adam.m);
  r.params(c.adam.v);
  c.adam.t = r.u64();
  c.adam.beta1 = r.f64();
  c.adam.beta2 = r.f64();
  c.adam.eps = r.f64();
  const auto len = r.u32();
  c.rng = Rng::deserialize(r.str(len));
  if (!r.done()) throw LoadError(origin + ": trailing bytes after checkpoint at offset " + std::to_string(r.pos()));
  if (!c.params.all_finite()) throw LoadError(origin + ": non-finite parameters in checkpoint");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path), path.string());
}

}  // namespace zsar::optim
