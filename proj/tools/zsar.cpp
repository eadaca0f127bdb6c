// zsar: command-line entry point for the zero-shot action recognition toolkit.

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "zsar/dataset.hpp"
#include "zsar/eval.hpp"
#include "zsar/gradcheck.hpp"
#include "zsar/io.hpp"
#include "zsar/optim.hpp"
#include "zsar/synth.hpp"
#include "zsar/textproc.hpp"

namespace fs = std::filesystem;
using namespace zsar;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitUsage = 2;

constexpr const char* kConfigEcho = "config.cfg";

// Output directories are assembled in a hidden sibling and renamed into place
// only after every file has been written.
class StagedDir {
 public:
  explicit StagedDir(fs::path target) : target_(std::move(target)) {
    if (target_.empty()) throw Error("--out is required");
    if (fs::exists(target_) && !fs::is_empty(target_) && !fs::exists(target_ / kConfigEcho)) {
      throw Error("refusing to replace " + target_.string() + ": not empty and not a previous output");
    }
    const fs::path parent = target_.has_parent_path() ? target_.parent_path() : fs::path(".");
    fs::create_directories(parent);
    stage_ = parent / ("." + target_.filename().string() + ".tmp-" + std::to_string(::getpid()));
    fs::remove_all(stage_);
    fs::create_directories(stage_);
  }
  StagedDir(const StagedDir&) = delete;
  StagedDir& operator=(const StagedDir&) = delete;
  ~StagedDir() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(stage_, ec);
    }
  }

  fs::path operator/(const std::string& name) const { return stage_ / name; }
  const fs::path& path() const { return stage_; }

  void write(const std::string& name, std::string_view bytes) const {
    io::write_file_atomic(stage_ / name, bytes);
  }

  void commit() {
    if (fs::exists(target_)) fs::remove_all(target_);
    fs::rename(stage_, target_);
    committed_ = true;
  }

 private:
  fs::path target_;
  fs::path stage_;
  bool committed_ = false;
};

// Options shared by every subcommand.
struct Common {
  std::string config_path;
  std::uint64_t seed = 0;
  std::vector<std::string> overrides;

  void add_to(CLI::App* app, bool with_overrides) {
    app->add_option("--config", config_path, "RunConfig file (key=value lines)");
    app->add_option("--seed", seed, "Random seed; overrides the config value");
    if (with_overrides) {
      app->add_option("--set", overrides, "Config override key=value (repeatable)");
    }
  }

  RunConfig resolve(const CLI::App* app, const fs::path& fallback = {}) const {
    RunConfig c;
    if (!config_path.empty()) c = io::load_run_config(config_path);
    else if (!fallback.empty() && fs::exists(fallback)) c = io::load_run_config(fallback);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw Error("--set expects key=value, got '" + kv + "'");
      io::set_config_value(c, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (app->count("--seed") > 0) c.seed = seed;
    c.validate();
    return c;
  }
};

std::set<std::string> stop_words_from(const std::string& path) {
  return path.empty() ? text::default_stop_words() : text::load_stop_words(path);
}

std::vector<ActionClass> load_names(const fs::path& path) {
  std::istringstream in(io::read_file(path));
  std::vector<ActionClass> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ActionClass a;
    a.class_id = static_cast<ClassId>(out.size());
    a.name = line;
    out.push_back(std::move(a));
  }
  return out;
}

std::vector<double> parse_doubles(const std::string& list) {
  std::vector<double> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw Error("not a number: '" + item + "'");
    out.push_back(v);
  }
  return out;
}

std::vector<int> parse_ints(const std::string& list) {
  std::vector<int> out;
  for (double v : parse_doubles(list)) {
    if (v != static_cast<int>(v)) throw Error("not an integer: " + std::to_string(v));
    out.push_back(static_cast<int>(v));
  }
  return out;
}

std::optional<DescriptionOrder> rankings_from(const std::string& dir, const RunConfig& config) {
  if (dir.empty()) return std::nullopt;
  if (!fs::is_directory(dir)) throw LoadError("rankings directory not found: " + dir);
  return load_rankings(dir, static_cast<std::size_t>(config.k));
}

std::string format_loss_trace(const std::vector<double>& losses) {
  std::string out;
  char buf[40];
  for (double l : losses) {
    std::snprintf(buf, sizeof(buf), "%.17g\n", l);
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------

struct DedupArgs {
  Common common;
  std::string names;
  std::string classes;
  std::string stopwords;
  std::string out;
};

int run_dedup(const CLI::App* app, const DedupArgs& a) {
  const RunConfig config = a.common.resolve(app);
  if (a.names.empty() == a.classes.empty()) throw CLI::ValidationError("exactly one of --names or --classes is required");
  auto classes = a.names.empty() ? io::load_classes(a.classes) : load_names(a.names);
  const auto stop = stop_words_from(a.stopwords);
  for (auto& c : classes) c.canonical_name = text::normalize_action_name(c.name, stop);
  const auto kept = text::dedup_actions(classes);

  std::string table;
  for (const auto& c : kept) table += std::to_string(c.class_id) + "\t" + c.canonical_name + "\t" + c.name + "\n";
  std::cout << table;
  std::cerr << classes.size() << " actions -> " << kept.size() << " canonical\n";
  if (!a.out.empty()) {
    StagedDir dir(a.out);
    dir.write("actions.tsv", table);
    dir.write(kConfigEcho, io::encode_run_config(config));
    dir.commit();
  }
  return kExitOk;
}

struct RankArgs {
  Common common;
  std::string classes;
  std::string embeddings;
  std::string stopwords;
  bool drop_stopwords = false;
  std::string out;
};

int run_rank(const CLI::App* app, const RankArgs& a) {
  const RunConfig config = a.common.resolve(app);
  const auto classes = io::load_classes(a.classes);
  const auto table = io::load_embedding_table(a.embeddings);
  const auto stop = stop_words_from(a.stopwords);
  StagedDir dir(a.out);
  std::size_t excluded = 0;
  for (const auto& c : classes) {
    const auto ranking = text::rank_descriptions(c, table, a.drop_stopwords ? &stop : nullptr);
    for (const auto& s : ranking.scored) excluded += s.score ? 0 : 1;
    dir.write(std::to_string(c.class_id) + ".rank", text::encode_ranking(ranking));
  }
  dir.write(kConfigEcho, io::encode_run_config(config));
  dir.commit();
  std::cerr << "ranked " << classes.size() << " classes; " << excluded << " descriptions excluded\n";
  return kExitOk;
}

struct StatsArgs {
  Common common;
  std::string classes;
  std::size_t top = 40;
  std::size_t bottom = 20;
  std::string out;
};

int run_stats(const CLI::App* app, const StatsArgs& a) {
  const RunConfig config = a.common.resolve(app);
  const auto stats = text::corpus_stats(io::load_classes(a.classes), a.top, a.bottom);
  const std::string report = text::render_stats(stats);
  std::cout << report;
  if (!a.out.empty()) {
    StagedDir dir(a.out);
    dir.write("stats.txt", report);
    dir.write(kConfigEcho, io::encode_run_config(config));
    dir.commit();
  }
  return kExitOk;
}

struct GenArgs {
  Common common;
  std::string spec;
  std::string out;
};

int run_gen(const CLI::App* app, const GenArgs& a) {
  const RunConfig config = a.common.resolve(app);
  synth::SynthSpec spec;
  if (!a.spec.empty()) spec = synth::load_spec(a.spec);
  if (app->count("--seed") > 0) spec.seed = a.common.seed;
  const auto problem = synth::generate(spec);
  StagedDir dir(a.out);
  synth::write_problem(problem, spec, dir.path());
  dir.write(kConfigEcho, io::encode_run_config(config));
  dir.commit();
  std::cerr << "generated " << problem.classes.size() << " classes, " << problem.data.videos.rows()
            << " videos\n";
  return kExitOk;
}

struct TrainArgs {
  Common common;
  std::string data;
  std::string split;
  std::string rankings;
  std::string out;
};

int run_train(const CLI::App* app, const TrainArgs& a) {
  const RunConfig config = a.common.resolve(app);
  const Dataset data = load_dataset(a.data);
  const ZsarSplit split = io::load_split(a.split);
  const auto order = rankings_from(a.rankings, config);
  const auto td = optim::make_training_data(data, split, config, order ? &*order : nullptr);
  const auto result = optim::train(config, td);

  optim::Checkpoint ckpt;
  ckpt.params = result.params;
  ckpt.adam = result.adam;
  ckpt.rng = result.rng;
  ckpt.tau = config.tau;
  ckpt.alpha = config.alpha;
  ckpt.gamma = config.gamma;
  ckpt.epoch = static_cast<std::uint32_t>(result.best_epoch);

  StagedDir dir(a.out);
  dir.write("checkpoint.zck", optim::encode_checkpoint(ckpt));
  dir.write("metrics.jsonl", optim::encode_metrics_log(result.log));
  dir.write("timing.jsonl", optim::encode_timing_log(result.log));
  dir.write("loss_trace.txt", format_loss_trace(result.step_losses));
  dir.write(kConfigEcho, io::encode_run_config(config));
  dir.commit();
  std::cerr << "trained " << result.log.size() - 1 << " epochs; best epoch " << result.best_epoch << "\n";
  return kExitOk;
}

struct EvalArgs {
  Common common;
  std::string data;
  std::vector<std::string> splits;
  std::vector<std::string> checkpoints;
  std::string rankings;
  std::string out;
};

int run_eval(const CLI::App* app, const EvalArgs& a) {
  if (a.checkpoints.size() != 1 && a.checkpoints.size() != a.splits.size()) {
    throw CLI::ValidationError("give one --checkpoint, or one per --split");
  }
  const RunConfig config = a.common.resolve(app, fs::path(a.checkpoints.front()).parent_path() / kConfigEcho);
  const Dataset data = load_dataset(a.data);
  const auto order = rankings_from(a.rankings, config);
  std::vector<eval::SplitMetrics> per_split;
  for (std::size_t i = 0; i < a.splits.size(); ++i) {
    const auto ckpt = optim::load_checkpoint(a.checkpoints.size() == 1 ? a.checkpoints[0] : a.checkpoints[i]);
    per_split.push_back(eval::evaluate_split(ckpt.params, data, io::load_split(a.splits[i]), config,
                                             order ? &*order : nullptr));
  }
  const auto agg = eval::aggregate_splits(per_split);
  const std::string table = eval::render_metrics_table(per_split, agg);
  std::cout << table;
  if (!a.out.empty()) {
    StagedDir dir(a.out);
    dir.write("metrics.tsv", table);
    dir.write("metrics.json", eval::metrics_json(per_split, agg));
    dir.write(kConfigEcho, io::encode_run_config(config));
    dir.commit();
  }
  return kExitOk;
}

struct AblateArgs {
  Common common;
  std::string data;
  std::vector<std::string> splits;
  std::string rankings;
  std::string variants = "AD-only,VC-only,AD+VC,AD+VC+CIM";
  std::string alphas;
  std::string ks;
  std::string out;
};

int run_ablate(const CLI::App* app, const AblateArgs& a) {
  const RunConfig config = a.common.resolve(app);
  const Dataset data = load_dataset(a.data);
  const auto order = rankings_from(a.rankings, config);
  std::vector<eval::SplitInput> inputs;
  for (const auto& s : a.splits) inputs.push_back({&data, io::load_split(s), order ? &*order : nullptr});
  const auto variants =
      eval::expand_sweeps(eval::parse_variants(a.variants, config), parse_doubles(a.alphas), parse_ints(a.ks));
  const auto table = eval::run_ablation(config, variants, inputs);
  const std::string rendered = eval::render_ablation(table);
  std::cout << rendered;
  if (!a.out.empty()) {
    StagedDir dir(a.out);
    dir.write("ablation.tsv", rendered);
    dir.write(kConfigEcho, io::encode_run_config(config));
    dir.commit();
  }
  return kExitOk;
}

struct GradcheckArgs {
  Common common;
  int instances = 20;
  double h = 1e-5;
  double tolerance = 1e-6;
};

int run_gradcheck(const CLI::App* app, const GradcheckArgs& a) {
  const RunConfig config = a.common.resolve(app);
  if (a.instances < 1) throw CLI::ValidationError("--instances must be >= 1");
  std::map<std::string, double> worst;
  std::vector<std::string> order;
  for (int i = 0; i < a.instances; ++i) {
    const auto inst = gradcheck::random_instance(derive_seed(config.seed, static_cast<std::uint64_t>(i)));
    for (const auto& b : gradcheck::check_gradients(inst, a.h).blocks) {
      if (!worst.count(b.block)) order.push_back(b.block);
      worst[b.block] = std::max(worst[b.block], b.max_rel_error);
    }
  }
  double overall = 0.0;
  for (const auto& name : order) {
    std::printf("%-12s max_rel_error %.3e\n", name.c_str(), worst[name]);
    overall = std::max(overall, worst[name]);
  }
  const bool ok = overall <= a.tolerance;
  std::printf("overall      max_rel_error %.3e  (%d instances, tolerance %.1e) %s\n", overall, a.instances,
              a.tolerance, ok ? "OK" : "FAILED");
  return ok ? kExitOk : kExitValidation;
}

struct ExportArgs {
  Common common;
  std::string data;
  std::string split;
  std::string checkpoint;
  std::string rankings;
  std::string out;
};

int run_export(const CLI::App* app, const ExportArgs& a) {
  const RunConfig config = a.common.resolve(app, fs::path(a.checkpoint).parent_path() / kConfigEcho);
  const Dataset data = load_dataset(a.data);
  const ZsarSplit split = io::load_split(a.split);
  io::validate_split_items(split, data.videos);
  const auto order = rankings_from(a.rankings, config);
  const auto ckpt = optim::load_checkpoint(a.checkpoint);
  const auto settings = align::LossSettings::from(config);

  std::vector<ClassId> classes(split.seen_classes.begin(), split.seen_classes.end());
  classes.insert(classes.end(), split.unseen_classes.begin(), split.unseen_classes.end());
  const auto bank = align::build_class_bank(
      make_text_bank(data, classes, config.k, settings.uses_definitions(), settings.uses_content(),
                     order ? &*order : nullptr),
      ckpt.params, settings);
  FeatureStore class_store;
  class_store.matrix = bank.z;
  for (ClassId c : classes) {
    class_store.item_ids.push_back("class" + std::to_string(c));
    class_store.labels.push_back(c);
  }

  FeatureStore video_store;
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < data.videos.rows(); ++i) {
    const auto& id = data.videos.item_ids[i];
    if (split.train_items.count(id) || split.val_items.count(id) || split.test_items.count(id)) {
      rows.push_back(static_cast<Eigen::Index>(i));
      video_store.item_ids.push_back(id);
      video_store.labels.push_back(data.videos.labels[i]);
    }
  }
  Matrix raw(static_cast<Eigen::Index>(rows.size()), data.videos.matrix.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) raw.row(static_cast<Eigen::Index>(i)) = data.videos.matrix.row(rows[i]);
  video_store.matrix = align::encode_visual(raw, ckpt.params);
  if (settings.l2_normalize) video_store.matrix = align::normalize_rows(video_store.matrix);

  StagedDir dir(a.out);
  io::save_feature_store(video_store, dir / "videos.zsf");
  io::save_feature_store(class_store, dir / "classes.zsf");
  dir.write(kConfigEcho, io::encode_run_config(config));
  dir.commit();
  std::cerr << "exported " << video_store.rows() << " videos, " << class_store.rows() << " classes\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Zero-shot action recognition toolkit"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  DedupArgs dedup;
  auto* dedup_cmd = app.add_subcommand("dedup", "Normalize action names and drop duplicates");
  dedup.common.add_to(dedup_cmd, false);
  dedup_cmd->add_option("--names", dedup.names, "Plain text file, one action name per line");
  dedup_cmd->add_option("--classes", dedup.classes, "Class metadata (JSON lines)");
  dedup_cmd->add_option("--stopwords", dedup.stopwords, "Stop-word file (default: built-in list)");
  dedup_cmd->add_option("--out", dedup.out, "Output directory (default: stdout only)");

  RankArgs rank;
  auto* rank_cmd = app.add_subcommand("rank", "Rank each class's descriptions by relevance to its name");
  rank.common.add_to(rank_cmd, false);
  rank_cmd->add_option("--classes", rank.classes, "Class metadata (JSON lines)")->required();
  rank_cmd->add_option("--embeddings", rank.embeddings, "Word vectors, word2vec text format")->required();
  rank_cmd->add_flag("--drop-stopwords", rank.drop_stopwords, "Drop stop words before embedding text");
  rank_cmd->add_option("--stopwords", rank.stopwords, "Stop-word file for --drop-stopwords (default: built-in list)");
  rank_cmd->add_option("--out", rank.out, "Output directory for <class_id>.rank files")->required();

  StatsArgs stats;
  auto* stats_cmd = app.add_subcommand("stats", "Description and sentence counts per class");
  stats.common.add_to(stats_cmd, false);
  stats_cmd->add_option("--classes", stats.classes, "Class metadata (JSON lines)")->required();
  stats_cmd->add_option("--top", stats.top, "Most-described classes to list");
  stats_cmd->add_option("--bottom", stats.bottom, "Least-described classes to list");
  stats_cmd->add_option("--out", stats.out, "Output directory (default: stdout only)");

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic problem");
  gen.common.add_to(gen_cmd, false);
  gen_cmd->add_option("--spec", gen.spec, "Synthetic spec file (key=value; default: built-in spec)");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train the alignment model on one split");
  train.common.add_to(train_cmd, true);
  train_cmd->add_option("--data", train.data, "Dataset directory")->required();
  train_cmd->add_option("--split", train.split, "Split file")->required();
  train_cmd->add_option("--rankings", train.rankings, "Directory of .rank files (default: store order)");
  train_cmd->add_option("--out", train.out, "Run directory")->required();

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Top-1/top-5 on the unseen classes of each split");
  ev.common.add_to(eval_cmd, true);
  eval_cmd->add_option("--data", ev.data, "Dataset directory")->required();
  eval_cmd->add_option("--split", ev.splits, "Split file (repeatable)")->required();
  eval_cmd->add_option("--checkpoint", ev.checkpoints, "Checkpoint, one for all splits or one per split")->required();
  eval_cmd->add_option("--rankings", ev.rankings, "Directory of .rank files (default: store order)");
  eval_cmd->add_option("--out", ev.out, "Output directory (default: stdout only)");

  AblateArgs ablate;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train and evaluate each variant on each split");
  ablate.common.add_to(ablate_cmd, true);
  ablate_cmd->add_option("--data", ablate.data, "Dataset directory")->required();
  ablate_cmd->add_option("--split", ablate.splits, "Split file (repeatable)")->required();
  ablate_cmd->add_option("--rankings", ablate.rankings, "Directory of .rank files (default: store order)");
  ablate_cmd->add_option("--variants", ablate.variants, "Comma list of AD-only, VC-only, AD+VC, optional +CIM");
  ablate_cmd->add_option("--alphas", ablate.alphas, "Comma list of alpha values for AD+VC variants");
  ablate_cmd->add_option("--ks", ablate.ks, "Comma list of k values for variants using descriptions");
  ablate_cmd->add_option("--out", ablate.out, "Output directory (default: stdout only)");

  GradcheckArgs gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of the overall loss gradient");
  gc.common.add_to(gc_cmd, false);
  gc_cmd->add_option("--instances", gc.instances, "Random instances to check");
  gc_cmd->add_option("--step", gc.h, "Central-difference step");
  gc_cmd->add_option("--tolerance", gc.tolerance, "Maximum accepted relative error");

  ExportArgs ex;
  auto* ex_cmd = app.add_subcommand("export-embeddings", "Write projected video and class features");
  ex.common.add_to(ex_cmd, true);
  ex_cmd->add_option("--data", ex.data, "Dataset directory")->required();
  ex_cmd->add_option("--split", ex.split, "Split file selecting classes and videos")->required();
  ex_cmd->add_option("--checkpoint", ex.checkpoint, "Checkpoint")->required();
  ex_cmd->add_option("--rankings", ex.rankings, "Directory of .rank files (default: store order)");
  ex_cmd->add_option("--out", ex.out, "Output directory")->required();

  // Empty string options have no natural default to print.
  for (auto* sub : app.get_subcommands({})) {
    for (auto* opt : sub->get_options()) {
      if (!opt->get_required() && opt->get_expected_min() > 0 && opt->get_default_str().empty()) {
        opt->default_str("none");
      } else if (opt->get_expected_min() == 0 && opt != sub->get_help_ptr()) {
        opt->default_str("off");
      }
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*dedup_cmd) return run_dedup(dedup_cmd, dedup);
    if (*rank_cmd) return run_rank(rank_cmd, rank);
    if (*stats_cmd) return run_stats(stats_cmd, stats);
    if (*gen_cmd) return run_gen(gen_cmd, gen);
    if (*train_cmd) return run_train(train_cmd, train);
    if (*eval_cmd) return run_eval(eval_cmd, ev);
    if (*ablate_cmd) return run_ablate(ablate_cmd, ablate);
    if (*gc_cmd) return run_gradcheck(gc_cmd, gc);
    if (*ex_cmd) return run_export(ex_cmd, ex);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitUsage;
}
