#include "zsar/dataset.hpp"

#include "zsar/io.hpp"
#include "zsar/textproc.hpp"

namespace zsar {

namespace fs = std::filesystem;

Dataset load_dataset(const fs::path& dir) {
  Dataset data;
  data.videos = io::load_feature_store(dir / "videos.zsf");
  data.definitions = io::load_feature_store(dir / "definitions.zsf");
  if (fs::exists(dir / "descriptions.zsf")) {
    data.descriptions = io::load_feature_store(dir / "descriptions.zsf");
  }
  return data;
}

void save_dataset(const Dataset& data, const fs::path& dir) {
  fs::create_directories(dir);
  io::save_feature_store(data.videos, dir / "videos.zsf");
  io::save_feature_store(data.definitions, dir / "definitions.zsf");
  if (data.descriptions) io::save_feature_store(*data.descriptions, dir / "descriptions.zsf");
}

DescriptionOrder load_rankings(const fs::path& dir, std::size_t k) {
  DescriptionOrder order;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".rank") continue;
    const auto ranking = text::parse_ranking(io::read_file(entry.path()), entry.path().string());
    if (ranking.scored.empty()) continue;
    order[ranking.class_id] = text::select_top_k(ranking, k);
  }
  return order;
}

namespace {

std::map<ClassId, std::vector<Eigen::Index>> rows_by_class(const FeatureStore& store) {
  std::map<ClassId, std::vector<Eigen::Index>> rows;
  for (std::size_t i = 0; i < store.rows(); ++i) {
    rows[store.labels[i]].push_back(static_cast<Eigen::Index>(i));
  }
  return rows;
}

std::vector<Eigen::Index> pick_rows(const std::vector<Eigen::Index>& class_rows, ClassId c, int k,
                                    const DescriptionOrder* order) {
  std::vector<Eigen::Index> picked;
  const auto limit = static_cast<std::size_t>(k);
  if (order) {
    auto it = order->find(c);
    if (it != order->end()) {
      for (std::size_t idx : it->second) {
        if (picked.size() >= limit) break;
        if (idx >= class_rows.size()) {
          throw Error("ranking for class " + std::to_string(c) + " references description " +
                      std::to_string(idx) + " but only " + std::to_string(class_rows.size()) +
                      " exist");
        }
        picked.push_back(class_rows[idx]);
      }
      return picked;
    }
  }
  for (std::size_t i = 0; i < class_rows.size() && picked.size() < limit; ++i) {
    picked.push_back(class_rows[i]);
  }
  return picked;
}

}  // namespace

std::vector<Matrix> selected_descriptions(const Dataset& data, const std::vector<ClassId>& classes,
                                          int k, const DescriptionOrder* order) {
  if (!data.descriptions) throw Error("dataset has no description features");
  const auto rows = rows_by_class(*data.descriptions);
  std::vector<Matrix> out;
  for (ClassId c : classes) {
    auto it = rows.find(c);
    const std::vector<Eigen::Index> empty;
    const auto picked = pick_rows(it == rows.end() ? empty : it->second, c, k, order);
    Matrix m(static_cast<Eigen::Index>(picked.size()), data.descriptions->matrix.cols());
    for (std::size_t i = 0; i < picked.size(); ++i) {
      m.row(static_cast<Eigen::Index>(i)) = data.descriptions->matrix.row(picked[i]);
    }
    out.push_back(std::move(m));
  }
  return out;
}

align::TextBank make_text_bank(const Dataset& data, const std::vector<ClassId>& classes, int k,
                               bool need_definitions, bool need_content,
                               const DescriptionOrder* order) {
  align::TextBank bank;
  bank.class_ids = classes;
  const auto n = static_cast<Eigen::Index>(classes.size());
  if (need_definitions) {
    const auto rows = rows_by_class(data.definitions);
    bank.definitions.resize(n, data.definitions.matrix.cols());
    for (Eigen::Index j = 0; j < n; ++j) {
      const ClassId c = classes[static_cast<std::size_t>(j)];
      auto it = rows.find(c);
      if (it == rows.end()) throw Error("no definition feature for class " + std::to_string(c));
      if (it->second.size() != 1) {
        throw Error("class " + std::to_string(c) + " has " + std::to_string(it->second.size()) +
                    " definition rows, expected 1");
      }
      bank.definitions.row(j) = data.definitions.matrix.row(it->second.front());
    }
  }
  if (need_content) {
    const auto per_class = selected_descriptions(data, classes, k, order);
    bank.description_means.resize(n, data.descriptions->matrix.cols());
    for (Eigen::Index j = 0; j < n; ++j) {
      const Matrix& rows = per_class[static_cast<std::size_t>(j)];
      if (rows.rows() == 0) {
        throw Error("class " + std::to_string(classes[static_cast<std::size_t>(j)]) +
                    " has no selected descriptions; use alpha=1 (definition-only) for it");
      }
      bank.description_means.row(j) = rows.colwise().sum() / static_cast<double>(rows.rows());
    }
  }
  return bank;
}

LabeledRows gather_items(const FeatureStore& store, const std::set<std::string>& items,
                         const std::vector<ClassId>& classes) {
  std::map<ClassId, int> position;
  for (std::size_t j = 0; j < classes.size(); ++j) position[classes[j]] = static_cast<int>(j);
  std::vector<Eigen::Index> picked;
  LabeledRows out;
  for (std::size_t i = 0; i < store.rows(); ++i) {
    if (!items.count(store.item_ids[i])) continue;
    auto it = position.find(store.labels[i]);
    if (it == position.end()) {
      throw Error("item '" + store.item_ids[i] + "' has label " + std::to_string(store.labels[i]) +
                  " outside the evaluated class set");
    }
    picked.push_back(static_cast<Eigen::Index>(i));
    out.labels.push_back(it->second);
  }
  out.features.resize(static_cast<Eigen::Index>(picked.size()), store.matrix.cols());
  for (std::size_t i = 0; i < picked.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) = store.matrix.row(picked[i]);
  }
  return out;
}

}  // namespace zsar
