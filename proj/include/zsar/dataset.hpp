#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <vector>

#include "zsar/align.hpp"
#include "zsar/types.hpp"

namespace zsar {

/// The three feature stores a run consumes. Definition features carry one row
/// per class; description rows are grouped by label, and a description's index
/// is its ordinal among rows of the same class.
struct Dataset {
  FeatureStore videos;
  FeatureStore definitions;
  std::optional<FeatureStore> descriptions;
};

/// Reads videos.zsf, definitions.zsf and (when present) descriptions.zsf from a
/// dataset directory.
Dataset load_dataset(const std::filesystem::path& dir);
void save_dataset(const Dataset& data, const std::filesystem::path& dir);

/// Per-class description order (e.g. from relevance ranking); classes missing
/// from the map keep store order.
using DescriptionOrder = std::map<ClassId, std::vector<std::size_t>>;

/// Loads every "<class_id>.rank" file in a directory.
DescriptionOrder load_rankings(const std::filesystem::path& dir, std::size_t k);

/// Gathers definition rows and the mean of the first k selected description
/// rows for each class, in the given class order.
align::TextBank make_text_bank(const Dataset& data, const std::vector<ClassId>& classes, int k,
                               bool need_definitions, bool need_content,
                               const DescriptionOrder* order = nullptr);

/// Same selection, but returns every selected description row per class.
std::vector<Matrix> selected_descriptions(const Dataset& data, const std::vector<ClassId>& classes,
                                          int k, const DescriptionOrder* order = nullptr);

struct LabeledRows {
  Matrix features;
  std::vector<int> labels;  // index into the class list the rows were gathered for
};

/// Rows of `store` whose ids are in `items`, in store order, labels remapped to
/// positions in `classes`.
LabeledRows gather_items(const FeatureStore& store, const std::set<std::string>& items,
                         const std::vector<ClassId>& classes);

}  // namespace zsar
