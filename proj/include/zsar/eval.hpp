#pragma once

#include <span>
#include <string>
#include <vector>

#include "zsar/align.hpp"
#include "zsar/dataset.hpp"
#include "zsar/types.hpp"

namespace zsar::eval {

/// Fraction of rows whose true label is among the k highest scores. Equal
/// scores rank the lower class index first.
double topk_accuracy(const Matrix& scores, std::span<const int> labels, int k);

enum class StdMode { kPopulation, kSample };

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

MeanStd aggregate(std::span<const double> values, StdMode mode = StdMode::kPopulation);

/// "42.0 ± 1.6": one decimal, values already in percent.
std::string format_mean_std(const MeanStd& m);

struct SplitMetrics {
  std::string split_id;
  double top1 = 0.0;  // fractions in [0, 1]
  double top5 = 0.0;
  std::size_t items = 0;
};

struct AggregateMetrics {
  MeanStd top1;  // percent
  MeanStd top5;
};

AggregateMetrics aggregate_splits(std::span<const SplitMetrics> per_split,
                                  StdMode mode = StdMode::kPopulation);

/// Scores `items` against the fused features of `classes`.
SplitMetrics evaluate_items(const align::AlignmentParams& params, const Dataset& data,
                            const std::set<std::string>& items, const std::vector<ClassId>& classes,
                            const RunConfig& config, const DescriptionOrder* order = nullptr);

/// Test-set metrics over the split's unseen classes.
SplitMetrics evaluate_split(const align::AlignmentParams& params, const Dataset& data,
                            const ZsarSplit& split, const RunConfig& config,
                            const DescriptionOrder* order = nullptr);

/// Delimited table of per-split rows plus the aggregate row.
std::string render_metrics_table(std::span<const SplitMetrics> per_split,
                                 const AggregateMetrics& agg);
std::string metrics_json(std::span<const SplitMetrics> per_split, const AggregateMetrics& agg);

// ---------------------------------------------------------------------------
// Ablations

struct Variant {
  std::string name;
  double alpha = 0.5;
  bool cim = false;
  int k = 100;
};

/// Parses "AD-only", "VC-only", "AD+VC", each optionally suffixed "+CIM".
/// AD+VC variants take alpha from the base config.
Variant parse_variant(const std::string& name, const RunConfig& base);
std::vector<Variant> parse_variants(const std::string& comma_list, const RunConfig& base);

/// Expands AD+VC variants over alpha values and every variant using
/// descriptions over k values. Empty lists leave variants unchanged.
std::vector<Variant> expand_sweeps(const std::vector<Variant>& variants,
                                   const std::vector<double>& alphas, const std::vector<int>& ks);

RunConfig apply_variant(const RunConfig& base, const Variant& v);

struct SplitInput {
  const Dataset* data = nullptr;
  ZsarSplit split;
  const DescriptionOrder* order = nullptr;
};

struct AblationRow {
  Variant variant;
  std::vector<SplitMetrics> per_split;
  AggregateMetrics aggregate;
};

struct AblationTable {
  std::vector<AblationRow> rows;
};

AblationTable run_ablation(const RunConfig& base, const std::vector<Variant>& variants,
                           const std::vector<SplitInput>& splits);

std::string render_ablation(const AblationTable& table);

}  // namespace zsar::eval
