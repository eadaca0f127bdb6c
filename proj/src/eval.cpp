#include "zsar/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "zsar/io.hpp"
#include "zsar/optim.hpp"

namespace zsar::eval {

double topk_accuracy(const Matrix& scores, std::span<const int> labels, int k) {
  if (k < 1) throw Error("topk_accuracy: k must be >= 1");
  if (static_cast<Eigen::Index>(labels.size()) != scores.rows()) {
    throw Error("topk_accuracy: one label per row required");
  }
  if (labels.empty()) return 0.0;
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= scores.cols()) {
      throw Error("topk_accuracy: label " + std::to_string(y) + " outside the unseen class set");
    }
    // Rank of the true class = number of classes placed ahead of it.
    Eigen::Index ahead = 0;
    const double sy = scores(i, y);
    for (Eigen::Index j = 0; j < scores.cols(); ++j) {
      if (scores(i, j) > sy || (scores(i, j) == sy && j < y)) ++ahead;
    }
    if (ahead < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

MeanStd aggregate(std::span<const double> values, StdMode mode) {
  if (values.empty()) throw Error("aggregate: no values");
  double sum = 0.0;
  for (double v : values) sum += v;
  MeanStd out;
  out.mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - out.mean) * (v - out.mean);
  const double denom = mode == StdMode::kPopulation ? static_cast<double>(values.size())
                                                    : static_cast<double>(values.size()) - 1.0;
  out.std = denom > 0.0 ? std::sqrt(sq / denom) : 0.0;
  return out;
}

std::string format_mean_std(const MeanStd& m) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.1f ± %.1f", m.mean, m.std);
  return buf;
}

AggregateMetrics aggregate_splits(std::span<const SplitMetrics> per_split, StdMode mode) {
  std::vector<double> top1;
  std::vector<double> top5;
  for (const auto& s : per_split) {
    top1.push_back(100.0 * s.top1);
    top5.push_back(100.0 * s.top5);
  }
  return {aggregate(top1, mode), aggregate(top5, mode)};
}

SplitMetrics evaluate_items(const align::AlignmentParams& params, const Dataset& data,
                            const std::set<std::string>& items, const std::vector<ClassId>& classes,
                            const RunConfig& config, const DescriptionOrder* order) {
  const auto settings = align::LossSettings::from(config);
  const auto bank_raw = make_text_bank(data, classes, config.k, settings.uses_definitions(),
                                       settings.uses_content(), order);
  const auto bank = align::build_class_bank(bank_raw, params, settings);
  const auto rows = gather_items(data.videos, items, classes);
  Matrix v = align::encode_visual(rows.features, params);
  if (settings.l2_normalize) v = align::normalize_rows(v);
  const auto pred = align::predict(v, bank.z);

  SplitMetrics m;
  m.items = rows.labels.size();
  m.top1 = topk_accuracy(pred.scores, rows.labels, 1);
  m.top5 = topk_accuracy(pred.scores, rows.labels, std::min<int>(5, static_cast<int>(classes.size())));
  return m;
}

SplitMetrics evaluate_split(const align::AlignmentParams& params, const Dataset& data,
                            const ZsarSplit& split, const RunConfig& config,
                            const DescriptionOrder* order) {
  io::validate_split_items(split, data.videos);
  const std::vector<ClassId> unseen(split.unseen_classes.begin(), split.unseen_classes.end());
  auto m = evaluate_items(params, data, split.test_items, unseen, config, order);
  m.split_id = split.split_id;
  return m;
}

std::string render_metrics_table(std::span<const SplitMetrics> per_split,
                                 const AggregateMetrics& agg) {
  std::ostringstream out;
  out << "split\titems\ttop1\ttop5\ttop1_raw\ttop5_raw\n";
  char buf[128];
  for (const auto& s : per_split) {
    std::snprintf(buf, sizeof(buf), "%.1f\t%.1f\t%.17g\t%.17g", 100.0 * s.top1, 100.0 * s.top5,
                  s.top1, s.top5);
    out << s.split_id << '\t' << s.items << '\t' << buf << '\n';
  }
  out << "mean\t-\t" << format_mean_std(agg.top1) << '\t' << format_mean_std(agg.top5) << "\t-\t-\n";
  return out.str();
}

std::string metrics_json(std::span<const SplitMetrics> per_split, const AggregateMetrics& agg) {
  nlohmann::ordered_json j;
  j["splits"] = nlohmann::ordered_json::array();
  for (const auto& s : per_split) {
    j["splits"].push_back(
        {{"split_id", s.split_id}, {"items", s.items}, {"top1", s.top1}, {"top5", s.top5}});
  }
  j["top1_mean"] = agg.top1.mean;
  j["top1_std"] = agg.top1.std;
  j["top5_mean"] = agg.top5.mean;
  j["top5_std"] = agg.top5.std;
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------

Variant parse_variant(const std::string& name, const RunConfig& base) {
  Variant v;
  v.name = name;
  v.k = base.k;
  std::string body = name;
  const std::string suffix = "+CIM";
  if (body.size() > suffix.size() && body.compare(body.size() - suffix.size(), suffix.size(), suffix) == 0) {
    v.cim = true;
    body.resize(body.size() - suffix.size());
  }
  if (body == "AD-only") v.alpha = 1.0;
  else if (body == "VC-only") v.alpha = 0.0;
  else if (body == "AD+VC") v.alpha = base.alpha;
  else throw Error("unknown ablation variant '" + name + "' (expected AD-only, VC-only or AD+VC, optionally +CIM)");
  return v;
}

std::vector<Variant> parse_variants(const std::string& comma_list, const RunConfig& base) {
  std::vector<Variant> out;
  std::stringstream ss(comma_list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(parse_variant(item, base));
  }
  if (out.empty()) throw Error("no ablation variants given");
  return out;
}

std::vector<Variant> expand_sweeps(const std::vector<Variant>& variants,
                                   const std::vector<double>& alphas, const std::vector<int>& ks) {
  std::vector<Variant> out;
  char buf[64];
  for (const auto& v : variants) {
    std::vector<Variant> stage{v};
    const bool fused = v.alpha > 0.0 && v.alpha < 1.0;
    if (!alphas.empty() && fused) {
      stage.clear();
      for (double a : alphas) {
        Variant s = v;
        s.alpha = a;
        std::snprintf(buf, sizeof(buf), "[alpha=%g]", a);
        s.name += buf;
        stage.push_back(s);
      }
    }
    for (const auto& s : stage) {
      if (!ks.empty() && s.alpha < 1.0) {
        for (int k : ks) {
          Variant t = s;
          t.k = k;
          t.name += "[k=" + std::to_string(k) + "]";
          out.push_back(t);
        }
      } else {
        out.push_back(s);
      }
    }
  }
  return out;
}

RunConfig apply_variant(const RunConfig& base, const Variant& v) {
  RunConfig c = base;
  c.alpha = v.alpha;
  c.cim = v.cim;
  c.k = v.k;
  c.validate();
  return c;
}

AblationTable run_ablation(const RunConfig& base, const std::vector<Variant>& variants,
                           const std::vector<SplitInput>& splits) {
  if (splits.empty()) throw Error("run_ablation: no splits");
  AblationTable table;
  for (const auto& variant : variants) {
    const RunConfig config = apply_variant(base, variant);
    AblationRow row;
    row.variant = variant;
    for (const auto& input : splits) {
      const auto td = optim::make_training_data(*input.data, input.split, config, input.order);
      const auto trained = optim::train(config, td);
      row.per_split.push_back(evaluate_split(trained.params, *input.data, input.split, config, input.order));
    }
    row.aggregate = aggregate_splits(row.per_split);
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::string render_ablation(const AblationTable& table) {
  std::ostringstream out;
  out << "variant\talpha\tcim\tk";
  if (!table.rows.empty()) {
    for (const auto& s : table.rows.front().per_split) out << '\t' << s.split_id << "_top1\t" << s.split_id << "_top5";
  }
  out << "\ttop1\ttop5\n";
  char buf[64];
  for (const auto& row : table.rows) {
    std::snprintf(buf, sizeof(buf), "%g", row.variant.alpha);
    out << row.variant.name << '\t' << buf << '\t' << (row.variant.cim ? "on" : "off") << '\t'
        << row.variant.k;
    for (const auto& s : row.per_split) {
      std::snprintf(buf, sizeof(buf), "\t%.1f\t%.1f", 100.0 * s.top1, 100.0 * s.top5);
      out << buf;
    }
    out << '\t' << format_mean_std(row.aggregate.top1) << '\t' << format_mean_std(row.aggregate.top5)
        << '\n';
  }
  return out.str();
}

}  // namespace zsar::eval
