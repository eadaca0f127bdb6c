// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>

#include "support.hpp"
#include "zsar/align.hpp"
#include "zsar/eval.hpp"
#include "zsar/gradcheck.hpp"
#include "zsar/io.hpp"
#include "zsar/optim.hpp"
#include "zsar/synth.hpp"
#include "zsar/textproc.hpp"

using namespace zsar;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

// ---------------------------------------------------------------------------

Outcome gradient_oracle() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const auto inst = gradcheck::random_instance(derive_seed(0, static_cast<std::uint64_t>(i)));
    worst = std::max(worst, gradcheck::check_gradients(inst, 1e-5).max_rel_error());
  }
  const double t = seconds_since(t0);
  char buf[160];
  std::snprintf(buf, sizeof buf, "20 instances, max rel error %.3e (<= 1e-6), %.2fs (< 30s)", worst, t);
  return {worst <= 1e-6 && t < 30.0, buf};
}

Outcome contrastive_vs_scalar() {
  Rng rng(2);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const long n = 1 + static_cast<long>(rng.below(12));
    const long c = 1 + static_cast<long>(rng.below(9));
    const long d = 1 + static_cast<long>(rng.below(10));
    const Matrix v = testing::random_matrix(rng, n, d);
    const Matrix z = testing::random_matrix(rng, c, d);
    const auto labels = testing::random_labels(rng, static_cast<std::size_t>(n), static_cast<int>(c));
    const double tau = rng.uniform(0.1, 1.0);
    const auto got = align::contrastive_loss(v, z, labels, tau);
    const auto ref = testing::scalar_contrastive(v, z, labels, tau);
    worst = std::max({worst, std::abs(got.loss - ref.loss), testing::max_abs_diff(got.grad_features, ref.grad_features),
                      testing::max_abs_diff(got.grad_classes, ref.grad_classes)});
  }
  Matrix v = testing::random_matrix(rng, 6, 4);
  Matrix z = testing::random_matrix(rng, 1, 4);
  const auto one = align::contrastive_loss(v, z, std::vector<int>(6, 0), 0.1);
  char buf[160];
  std::snprintf(buf, sizeof buf, "100 instances, max abs diff %.3e (<= 1e-12); C=1 loss %.17g", worst, one.loss);
  return {worst <= 1e-12 && one.loss == 0.0 && one.grad_features.isZero(0.0), buf};
}

Outcome attention_properties() {
  Rng rng(3);
  double row_err = 0.0, shift_err = 0.0, hard_err = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const long s = 1 + static_cast<long>(rng.below(6));
    const long m = 1 + static_cast<long>(rng.below(6));
    const Matrix zs = testing::random_matrix(rng, s, 5);
    const Matrix zu = testing::random_matrix(rng, m, 5);
    const auto cf = align::cycle_reconstruct(zs, zu, rng.uniform(0.05, 1.0));
    for (const Matrix* a : {&cf.attn_fwd, &cf.attn_bwd}) {
      for (long i = 0; i < a->rows(); ++i) row_err = std::max(row_err, std::abs(a->row(i).sum() - 1.0));
    }
    const Matrix logits = testing::random_matrix(rng, s, m, 3.0);
    const double shift = rng.uniform(-50.0, 50.0);
    shift_err = std::max(shift_err, testing::max_abs_diff(align::softmax_rows(logits),
                                                          align::softmax_rows(logits.array() + shift)));

    // tau -> 0: every seen row maps to its most similar unseen row
    const auto hard = align::cycle_reconstruct(zs, zu, 1e-6);
    const Matrix sims = testing::naive_matmul(zs, zu.transpose());
    for (long i = 0; i < s; ++i) {
      long best = 0;
      for (long j = 1; j < m; ++j) best = sims(i, j) > sims(i, best) ? j : best;
      for (long t = 0; t < zs.cols(); ++t) hard_err = std::max(hard_err, std::abs(hard.forward(i, t) - zu(best, t)));
    }
  }
  char buf[200];
  std::snprintf(buf, sizeof buf, "row sums %.2e, shift %.2e (<= 1e-12); tau=1e-6 hard limit %.2e (<= 1e-9)",
                row_err, shift_err, hard_err);
  return {row_err <= 1e-12 && shift_err <= 1e-12 && hard_err <= 1e-9, buf};
}

synth::SynthSpec small_spec(std::uint64_t seed) {
  synth::SynthSpec s;
  s.n_concepts = 8;
  s.n_seen = 5;
  s.n_unseen = 3;
  s.concepts_per_class = 2;
  s.videos_per_class = 12;
  s.val_videos_per_class = 4;
  s.descriptions_per_class = 6;
  s.d_latent = 8;
  s.d_in_visual = 10;
  s.d_in_text = 10;
  s.seed = seed;
  return s;
}

RunConfig small_config(std::uint64_t seed) {
  RunConfig c;
  c.d = 8;
  c.k = 6;
  c.batch_size = 16;
  c.epochs = 10;
  c.lr = 0.01;
  c.patience = 0;
  c.seed = seed;
  return c;
}

bool same_params(const align::AlignmentParams& a, const align::AlignmentParams& b) {
  return testing::bitwise_equal(a.w_visual, b.w_visual) && testing::bitwise_equal(a.b_visual, b.b_visual) &&
         testing::bitwise_equal(a.w_semantic, b.w_semantic) && testing::bitwise_equal(a.b_semantic, b.b_semantic);
}

bool bitwise_trace(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

Outcome loss_gating() {
  const auto problem = synth::generate(small_spec(11));
  bool gamma_ok = true, ad_ok = true, vc_ok = true;
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    auto plain = small_config(seed);
    plain.cim = false;
    auto zero = small_config(seed);
    zero.cim = true;
    zero.gamma = 0.0;
    const auto a = optim::train(plain, optim::make_training_data(problem.data, problem.split, plain));
    const auto b = optim::train(zero, optim::make_training_data(problem.data, problem.split, zero));
    gamma_ok = gamma_ok && bitwise_trace(a.step_losses, b.step_losses) && same_params(a.params, b.params);

    Rng noise(100 + seed);
    auto noisy_desc = problem.data;
    noisy_desc.descriptions->matrix = testing::random_matrix(noise, noisy_desc.descriptions->matrix.rows(),
                                                             noisy_desc.descriptions->matrix.cols(), 5.0);
    auto noisy_defs = problem.data;
    noisy_defs.definitions.matrix = testing::random_matrix(noise, noisy_defs.definitions.matrix.rows(),
                                                           noisy_defs.definitions.matrix.cols(), 5.0);
    auto ad = small_config(seed);
    ad.alpha = 1.0;
    const auto ad_clean = optim::train(ad, optim::make_training_data(problem.data, problem.split, ad));
    const auto ad_noisy = optim::train(ad, optim::make_training_data(noisy_desc, problem.split, ad));
    ad_ok = ad_ok && bitwise_trace(ad_clean.step_losses, ad_noisy.step_losses) &&
            same_params(ad_clean.params, ad_noisy.params);

    auto vc = small_config(seed);
    vc.alpha = 0.0;
    const auto vc_clean = optim::train(vc, optim::make_training_data(problem.data, problem.split, vc));
    const auto vc_noisy = optim::train(vc, optim::make_training_data(noisy_defs, problem.split, vc));
    vc_ok = vc_ok && bitwise_trace(vc_clean.step_losses, vc_noisy.step_losses) &&
            same_params(vc_clean.params, vc_noisy.params);
  }
  std::string detail = std::string("gamma=0 trace ") + (gamma_ok ? "identical" : "differs") +
                       "; alpha=1 vs noisy descriptions " + (ad_ok ? "identical" : "differs") +
                       "; alpha=0 vs noisy definitions " + (vc_ok ? "identical" : "differs");
  return {gamma_ok && ad_ok && vc_ok, detail};
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Outcome synthetic_ablation() {
  const auto t0 = Clock::now();
  RunConfig base;
  base.d = 32;
  base.k = 20;
  base.epochs = 60;
  base.batch_size = 64;
  base.lr = 0.005;
  base.tau = 0.1;
  base.gamma = 0.1;
  base.patience = 0;
  const char* names[] = {"AD-only", "AD+VC", "AD+VC+CIM"};
  std::vector<double> acc[3];
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    synth::SynthSpec spec;  // 12 concepts, 10 seen / 5 unseen, fidelity 0.4, visual noise 0.3
    spec.seed = seed;
    const auto problem = synth::generate(spec);
    for (int v = 0; v < 3; ++v) {
      auto config = eval::apply_variant(base, eval::parse_variant(names[v], base));
      config.seed = seed;
      const auto result = optim::train(config, optim::make_training_data(problem.data, problem.split, config));
      acc[v].push_back(eval::evaluate_split(result.params, problem.data, problem.split, config).top1);
    }
  }
  const double t = seconds_since(t0);
  const double ad = median(acc[0]), advc = median(acc[1]), cim = median(acc[2]);
  char buf[200];
  std::snprintf(buf, sizeof buf, "median top-1 AD-only %.3f, AD+VC %.3f, AD+VC+CIM %.3f; %.1fs (< 300s)", ad, advc,
                cim, t);
  return {advc >= ad && cim >= advc && ad > 0.4 && advc > 0.4 && cim > 0.4 && t < 300.0, buf};
}

// Brute-force ranking: score every description with plain loops, then order by
// selection (repeatedly take the best remaining).
std::vector<text::ScoredDescription> brute_rank(const ActionClass& a, const EmbeddingTable& t) {
  auto embed = [&](const std::string& s) -> std::optional<std::vector<double>> {
    std::vector<double> sum(t.dim, 0.0);
    std::size_t found = 0;
    for (const auto& tok : text::tokenize(s)) {
      auto it = t.entries.find(tok);
      if (it == t.entries.end()) continue;
      for (std::size_t j = 0; j < t.dim; ++j) sum[j] += it->second(static_cast<long>(j));
      ++found;
    }
    if (!found) return std::nullopt;
    for (auto& x : sum) x /= static_cast<double>(found);
    return sum;
  };
  std::vector<text::ScoredDescription> all;
  const auto nv = embed(a.name);
  for (std::size_t i = 0; i < a.descriptions.size(); ++i) {
    text::ScoredDescription e{i, std::nullopt};
    const auto dv = embed(a.descriptions[i]);
    if (nv && dv) {
      double ab = 0, aa = 0, bb = 0;
      for (std::size_t j = 0; j < t.dim; ++j) {
        ab += (*dv)[j] * (*nv)[j];
        aa += (*dv)[j] * (*dv)[j];
        bb += (*nv)[j] * (*nv)[j];
      }
      if (aa > 0 && bb > 0) e.score = std::clamp(ab / (std::sqrt(aa) * std::sqrt(bb)), -1.0, 1.0);
    }
    all.push_back(e);
  }
  std::vector<text::ScoredDescription> out;
  std::vector<bool> taken(all.size(), false);
  for (std::size_t round = 0; round < all.size(); ++round) {
    std::size_t best = all.size();
    for (std::size_t i = 0; i < all.size(); ++i) {
      if (taken[i]) continue;
      if (best == all.size()) { best = i; continue; }
      const auto& x = all[i];
      const auto& y = all[best];
      const bool better = x.score && (!y.score || *x.score > *y.score);
      if (better) best = i;
    }
    taken[best] = true;
    out.push_back(all[best]);
  }
  return out;
}

Outcome ranking_and_prediction() {
  Rng rng(6);
  const std::vector<std::string> vocab = {"a", "b", "c", "d", "e", "f", "g", "zz", "qq"};
  int rank_mismatch = 0, prefix_fail = 0, pred_mismatch = 0;
  for (int trial = 0; trial < 100; ++trial) {
    EmbeddingTable table;
    table.dim = 1 + rng.below(5);
    for (std::size_t w = 0; w < 7; ++w) {  // "zz" and "qq" stay out of vocabulary
      Vector v(static_cast<long>(table.dim));
      for (long j = 0; j < v.size(); ++j) v(j) = trial % 4 == 0 ? std::round(rng.normal()) : rng.normal();
      table.entries[vocab[w]] = v;
    }
    auto sentence = [&] {
      std::string s;
      const auto len = 1 + rng.below(4);
      for (std::uint64_t i = 0; i < len; ++i) s += vocab[rng.below(vocab.size())] + " ";
      return s;
    };
    ActionClass action;
    action.class_id = static_cast<ClassId>(trial);
    action.name = sentence();
    for (std::uint64_t i = 0, n = rng.below(12); i < n; ++i) action.descriptions.push_back(sentence());
    const auto got = text::rank_descriptions(action, table);
    const auto want = brute_rank(action, table);
    bool same = got.scored.size() == want.size();
    for (std::size_t i = 0; same && i < want.size(); ++i) {
      same = got.scored[i].description_index == want[i].description_index && got.scored[i].score == want[i].score;
    }
    rank_mismatch += !same;
    for (std::size_t k = 0; k <= action.descriptions.size(); ++k) {
      const auto a = text::select_top_k(got, k);
      const auto b = text::select_top_k(got, k + 1);
      if (!std::equal(a.begin(), a.end(), b.begin()) || b.size() < a.size()) ++prefix_fail;
    }

    const long n = 1 + static_cast<long>(rng.below(15));
    const long m = 1 + static_cast<long>(rng.below(8));
    const long d = 1 + static_cast<long>(rng.below(6));
    Matrix v = testing::random_matrix(rng, n, d);
    Matrix z = testing::random_matrix(rng, m, d);
    if (trial % 3 == 0) {
      v = v.array().round();
      z = z.array().round();
    }
    const auto pred = align::predict(v, z);
    for (long i = 0; i < n; ++i) {
      long best = 0;
      for (long j = 1; j < m; ++j) {
        if (testing::dot_row(v, i, z, j) > testing::dot_row(v, i, z, best)) best = j;
      }
      pred_mismatch += pred.labels[static_cast<std::size_t>(i)] != best;
    }
  }
  char buf[200];
  std::snprintf(buf, sizeof buf, "100 instances: ranking mismatches %d, predict mismatches %d, top-k prefix failures %d",
                rank_mismatch, pred_mismatch, prefix_fail);
  return {rank_mismatch == 0 && pred_mismatch == 0 && prefix_fail == 0, buf};
}

std::string checkpoint_bytes(const optim::TrainResult& r, const RunConfig& c) {
  optim::Checkpoint ckpt;
  ckpt.params = r.params;
  ckpt.adam = r.adam;
  ckpt.rng = r.rng;
  ckpt.tau = c.tau;
  ckpt.alpha = c.alpha;
  ckpt.gamma = c.gamma;
  ckpt.epoch = static_cast<std::uint32_t>(r.best_epoch);
  return optim::encode_checkpoint(ckpt);
}

Outcome determinism() {
  testing::TempDir tmp("accept-det");
  const auto spec = small_spec(21);
  synth::write_problem(synth::generate(spec), spec, tmp / "a");
  synth::write_problem(synth::generate(spec), spec, tmp / "b");
  bool data_ok = true;
  for (const auto& e : fs::directory_iterator(tmp / "a")) {
    const auto name = e.path().filename();
    data_ok = data_ok && io::read_file(e.path()) == io::read_file(tmp / "b" / name.string());
  }

  const auto problem = synth::generate(spec);
  const auto config = small_config(5);
  const auto td = optim::make_training_data(problem.data, problem.split, config);
  const auto r1 = optim::train(config, td);
  const auto r2 = optim::train(config, td);
  const bool ckpt_ok = checkpoint_bytes(r1, config) == checkpoint_bytes(r2, config);
  const bool metrics_ok = optim::encode_metrics_log(r1.log) == optim::encode_metrics_log(r2.log) &&
                          eval::evaluate_split(r1.params, problem.data, problem.split, config).top1 ==
                              eval::evaluate_split(r2.params, problem.data, problem.split, config).top1;

  const fs::path fixture = ZSAR_TEST_DATA;
  std::vector<ActionClass> names;
  std::istringstream in(io::read_file(fixture / "dedup_names.txt"));
  for (std::string line; std::getline(in, line);) {
    ActionClass a;
    a.class_id = static_cast<ClassId>(names.size());
    a.name = line;
    a.canonical_name = text::normalize_action_name(line);
    names.push_back(a);
  }
  const auto kept = text::dedup_actions(names).size();
  std::string detail = std::string("dataset ") + (data_ok ? "identical" : "differs") + ", checkpoint " +
                       (ckpt_ok ? "identical" : "differs") + ", metrics " + (metrics_ok ? "identical" : "differs") +
                       "; dedup " + std::to_string(names.size()) + " names -> " + std::to_string(kept);
  return {data_ok && ckpt_ok && metrics_ok && names.size() == 20 && kept == 14, detail};
}

Outcome round_trips() {
  testing::TempDir tmp("accept-rt");
  Rng rng(8);
  FeatureStore store;
  store.matrix = testing::random_matrix(rng, 9, 4);
  for (int i = 0; i < 9; ++i) {
    store.item_ids.push_back("item" + std::to_string(i));
    store.labels.push_back(static_cast<ClassId>(rng.below(3)));
  }
  io::save_feature_store(store, tmp / "a.zsf");
  io::save_feature_store(io::load_feature_store(tmp / "a.zsf"), tmp / "b.zsf");
  const bool zsf_ok = io::read_file(tmp / "a.zsf") == io::read_file(tmp / "b.zsf") &&
                      io::read_file(tmp / "a.zsf.ids") == io::read_file(tmp / "b.zsf.ids");

  const auto problem = synth::generate(small_spec(4));
  auto config = small_config(2);
  config.epochs = 2;
  const auto r = optim::train(config, optim::make_training_data(problem.data, problem.split, config));
  io::write_file_atomic(tmp / "a.zck", checkpoint_bytes(r, config));
  optim::save_checkpoint(optim::load_checkpoint(tmp / "a.zck"), tmp / "b.zck");
  const bool ckpt_ok = io::read_file(tmp / "a.zck") == io::read_file(tmp / "b.zck");

  io::save_split(problem.split, tmp / "a.json");
  io::save_split(io::load_split(tmp / "a.json"), tmp / "b.json");
  const bool split_ok = io::read_file(tmp / "a.json") == io::read_file(tmp / "b.json");
  std::string detail = std::string("ZSF1 ") + (zsf_ok ? "ok" : "differs") + ", checkpoint " +
                       (ckpt_ok ? "ok" : "differs") + ", split " + (split_ok ? "ok" : "differs");
  return {zsf_ok && ckpt_ok && split_ok, detail};
}

Outcome metrics_properties() {
  Rng rng(9);
  bool monotone = true, full = true;
  for (int trial = 0; trial < 100; ++trial) {
    const long n = 1 + static_cast<long>(rng.below(30));
    const int m = 1 + static_cast<int>(rng.below(10));
    const Matrix scores = testing::random_matrix(rng, n, m);
    const auto labels = testing::random_labels(rng, static_cast<std::size_t>(n), m);
    double prev = 0.0;
    for (int k = 1; k <= m; ++k) {
      const double acc = eval::topk_accuracy(scores, labels, k);
      monotone = monotone && acc >= prev;
      prev = acc;
    }
    full = full && prev == 1.0;
  }
  const std::vector<double> v{40, 42, 44};
  const auto rendered = eval::format_mean_std(eval::aggregate(v));
  std::string detail = std::string("monotone ") + (monotone ? "yes" : "no") + ", k=|unseen| " +
                       (full ? "1.0" : "below 1") + ", {40,42,44} -> \"" + rendered + "\"";
  return {monotone && full && rendered == "42.0 ± 1.6", detail};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient oracle", gradient_oracle},
      {"contrastive loss vs scalar reference", contrastive_vs_scalar},
      {"attention rows, shift invariance, hard limit", attention_properties},
      {"loss gating (gamma=0, alpha endpoints)", loss_gating},
      {"synthetic ablation ordering", synthetic_ablation},
      {"ranking and prediction vs brute force", ranking_and_prediction},
      {"determinism and dedup fixture", determinism},
      {"file round trips", round_trips},
      {"top-k and aggregation", metrics_properties},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - static_cast<std::size_t>(failed), criteria.size());
  return failed == 0 ? 0 : 1;
}
