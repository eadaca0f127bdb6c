#include "zsar/io.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "zsar/textproc.hpp"

namespace zsar {

void RunConfig::validate() const {
  if (!(tau > 0.0)) throw Error("tau must be > 0");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error("alpha must lie in [0, 1]");
  if (!(gamma >= 0.0)) throw Error("gamma must be >= 0");
  if (k < 1) throw Error("k must be >= 1");
  if (d < 1) throw Error("d must be >= 1");
  if (!(lr >= 0.0)) throw Error("lr must be >= 0");
  if (!(weight_decay >= 0.0)) throw Error("weight_decay must be >= 0");
  if (batch_size < 1) throw Error("batch_size must be >= 1");
  if (epochs < 0) throw Error("epochs must be >= 0");
  if (patience < 0) throw Error("patience must be >= 0");
  if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) {
    throw Error("warmup_fraction must lie in [0, 1]");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw Error("adam betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw Error("eps must be > 0");
}

}  // namespace zsar

namespace zsar::io {

namespace {

constexpr std::array<char, 4> kMagic{'Z', 'S', 'F', '1'};
constexpr std::size_t kHeaderBytes = 12;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(std::string_view bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  }
  return v;
}

double get_f64(std::string_view bytes, std::size_t offset) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) {
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  }
  return std::bit_cast<double>(bits);
}

fs::path ids_path(const fs::path& path) {
  fs::path ids = path;
  ids += ".ids";
  return ids;
}

std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string line(text.substr(start, end - start));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    start = end + 1;
  }
  return lines;
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

template <typename T>
T parse_number(const std::string& text, const std::string& what) {
  T value{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw LoadError(what + ": cannot parse '" + text + "'");
  }
  return value;
}

bool parse_bool(const std::string& text, const std::string& what) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw LoadError(what + ": expected true/false, got '" + text + "'");
}

}  // namespace

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file_atomic(const fs::path& path, std::string_view bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// ZSF1

std::string encode_zsf1(const FeatureStore& store) {
  const std::size_t n = store.rows();
  const std::size_t d = store.dim();
  if (static_cast<std::size_t>(store.matrix.rows()) != n || store.item_ids.size() != n) {
    throw Error("feature store rows, ids and labels disagree");
  }
  std::string out;
  out.reserve(kHeaderBytes + n * d * 8 + n * 4);
  out.append(kMagic.data(), kMagic.size());
  put_u32(out, static_cast<std::uint32_t>(n));
  put_u32(out, static_cast<std::uint32_t>(d));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) put_f64(out, store.matrix(i, j));
  }
  for (ClassId label : store.labels) put_u32(out, label);
  return out;
}

FeatureStore decode_zsf1(std::string_view bytes, std::string_view ids_text,
                         const std::string& origin) {
  if (bytes.size() < kHeaderBytes) {
    throw LoadError(origin + ": truncated header (" + std::to_string(bytes.size()) + " bytes)");
  }
  if (std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0) {
    throw LoadError(origin + ": bad magic at byte offset 0, expected ZSF1");
  }
  const std::size_t n = get_u32(bytes, 4);
  const std::size_t d = get_u32(bytes, 8);
  if (d == 0) throw LoadError(origin + ": dimension at byte offset 8 must be positive");
  const std::size_t expected = kHeaderBytes + n * d * 8 + n * 4;
  if (bytes.size() != expected) {
    throw LoadError(origin + ": size mismatch, header declares n=" + std::to_string(n) +
                    " d=" + std::to_string(d) + " (" + std::to_string(expected) +
                    " bytes) but file has " + std::to_string(bytes.size()) + " bytes");
  }

  FeatureStore store;
  store.matrix.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  std::size_t offset = kHeaderBytes;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j, offset += 8) {
      const double v = get_f64(bytes, offset);
      if (!std::isfinite(v)) {
        throw LoadError(origin + ": non-finite value in row " + std::to_string(i) + ", column " +
                        std::to_string(j) + " (byte offset " + std::to_string(offset) + ")");
      }
      store.matrix(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
    }
  }
  store.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i, offset += 4) store.labels.push_back(get_u32(bytes, offset));

  store.item_ids = split_lines(ids_text);
  if (store.item_ids.size() != n) {
    throw LoadError(origin + ".ids: expected " + std::to_string(n) + " ids, found " +
                    std::to_string(store.item_ids.size()));
  }
  return store;
}

FeatureStore load_feature_store(const fs::path& path) {
  const std::string bytes = read_file(path);
  const std::string ids = read_file(ids_path(path));
  return decode_zsf1(bytes, ids, path.string());
}

void save_feature_store(const FeatureStore& store, const fs::path& path) {
  std::string ids;
  for (const auto& id : store.item_ids) {
    if (id.find('\n') != std::string::npos) throw Error("item id contains a newline: " + id);
    ids += id;
    ids += '\n';
  }
  const std::string bytes = encode_zsf1(store);
  write_file_atomic(ids_path(path), ids);
  write_file_atomic(path, bytes);
}

// ---------------------------------------------------------------------------
// Embeddings

EmbeddingTable parse_embedding_table(std::istream& in, const std::string& origin) {
  std::string line;
  if (!std::getline(in, line)) throw LoadError(origin + ": missing header line");
  std::istringstream header(line);
  std::size_t count = 0;
  std::size_t dim = 0;
  if (!(header >> count >> dim) || dim == 0) {
    throw LoadError(origin + ": header must be 'count dim', got '" + line + "'");
  }

  EmbeddingTable table;
  table.dim = dim;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::istringstream row(line);
    std::string token;
    row >> token;
    std::vector<double> values;
    std::string field;
    while (row >> field) values.push_back(parse_number<double>(field, origin + ":" + std::to_string(line_no)));
    if (values.size() != dim) {
      throw LoadError(origin + ":" + std::to_string(line_no) + ": token '" + token +
                      "' vector length " + std::to_string(values.size()) + " != " +
                      std::to_string(dim));
    }
    for (char& c : token) {
      if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
    Vector vec(static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < dim; ++i) vec(static_cast<Eigen::Index>(i)) = values[i];
    if (!vec.allFinite()) throw LoadError(origin + ": non-finite value for token '" + token + "'");
    if (!table.entries.emplace(token, std::move(vec)).second) {
      throw LoadError(origin + ":" + std::to_string(line_no) + ": duplicate token '" + token + "'");
    }
  }
  if (table.entries.size() != count) {
    throw LoadError(origin + ": entry count mismatch, header says " + std::to_string(count) +
                    " but found " + std::to_string(table.entries.size()));
  }
  return table;
}

EmbeddingTable load_embedding_table(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  return parse_embedding_table(in, path.string());
}

// ---------------------------------------------------------------------------
// Splits

std::string encode_split(const ZsarSplit& split) {
  nlohmann::ordered_json j;
  j["split_id"] = split.split_id;
  j["seen_classes"] = std::vector<ClassId>(split.seen_classes.begin(), split.seen_classes.end());
  j["unseen_classes"] =
      std::vector<ClassId>(split.unseen_classes.begin(), split.unseen_classes.end());
  if (!split.cim_classes.empty()) {
    j["cim_classes"] = std::vector<ClassId>(split.cim_classes.begin(), split.cim_classes.end());
  }
  j["train_items"] = std::vector<std::string>(split.train_items.begin(), split.train_items.end());
  j["val_items"] = std::vector<std::string>(split.val_items.begin(), split.val_items.end());
  j["test_items"] = std::vector<std::string>(split.test_items.begin(), split.test_items.end());
  return j.dump(1) + "\n";
}

ZsarSplit parse_split(std::string_view text, const std::string& origin) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(origin + ": " + e.what());
  }
  if (!j.is_object()) throw LoadError(origin + ": split must be an object");

  ZsarSplit split;
  try {
    split.split_id = j.at("split_id").get<std::string>();
    for (ClassId c : j.at("seen_classes").get<std::vector<ClassId>>()) split.seen_classes.insert(c);
    for (ClassId c : j.at("unseen_classes").get<std::vector<ClassId>>()) {
      split.unseen_classes.insert(c);
    }
    if (j.contains("cim_classes")) {
      for (ClassId c : j.at("cim_classes").get<std::vector<ClassId>>()) split.cim_classes.insert(c);
    }
    auto items = [&](const char* key, std::set<std::string>& out) {
      if (!j.contains(key)) return;
      for (auto& id : j.at(key).get<std::vector<std::string>>()) out.insert(std::move(id));
    };
    items("train_items", split.train_items);
    items("val_items", split.val_items);
    items("test_items", split.test_items);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(origin + ": " + e.what());
  }

  for (ClassId c : split.seen_classes) {
    if (split.unseen_classes.count(c)) {
      throw LoadError(origin + ": class " + std::to_string(c) + " in both partitions");
    }
  }
  for (ClassId c : split.cim_classes) {
    if (!split.unseen_classes.count(c)) {
      throw LoadError(origin + ": cim class " + std::to_string(c) + " is not an unseen class");
    }
  }
  return split;
}

ZsarSplit load_split(const fs::path& path) { return parse_split(read_file(path), path.string()); }

void save_split(const ZsarSplit& split, const fs::path& path) {
  write_file_atomic(path, encode_split(split));
}

void validate_split_items(const ZsarSplit& split, const FeatureStore& videos) {
  std::map<std::string, ClassId> label_of;
  for (std::size_t i = 0; i < videos.rows(); ++i) label_of[videos.item_ids[i]] = videos.labels[i];

  std::map<std::string, std::string> owner;
  auto check = [&](const std::set<std::string>& items, const char* set_name,
                   const std::set<ClassId>& allowed, const char* partition) {
    for (const auto& id : items) {
      auto it = label_of.find(id);
      if (it == label_of.end()) {
        throw LoadError(std::string(set_name) + " item '" + id + "' not found in feature store");
      }
      const ClassId c = it->second;
      if (!split.seen_classes.count(c) && !split.unseen_classes.count(c)) {
        throw LoadError("item '" + id + "' labeled with class " + std::to_string(c) +
                        " outside both partitions");
      }
      if (!allowed.count(c)) {
        throw LoadError(std::string(set_name) + " item '" + id + "' labeled class " +
                        std::to_string(c) + ", which is not a " + partition + " class");
      }
      auto [pos, fresh] = owner.emplace(id, set_name);
      if (!fresh) {
        throw LoadError("item '" + id + "' appears in both " + pos->second + " and " + set_name);
      }
    }
  };
  check(split.train_items, "train", split.seen_classes, "seen");
  check(split.val_items, "val", split.unseen_classes, "unseen");
  check(split.test_items, "test", split.unseen_classes, "unseen");
}

// ---------------------------------------------------------------------------
// RunConfig

void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  const std::string what = "config key '" + key + "'";
  if (key == "d") c.d = parse_number<int>(value, what);
  else if (key == "k") c.k = parse_number<int>(value, what);
  else if (key == "tau") c.tau = parse_number<double>(value, what);
  else if (key == "alpha") c.alpha = parse_number<double>(value, what);
  else if (key == "gamma") c.gamma = parse_number<double>(value, what);
  else if (key == "cim") c.cim = parse_bool(value, what);
  else if (key == "lr") c.lr = parse_number<double>(value, what);
  else if (key == "weight_decay") c.weight_decay = parse_number<double>(value, what);
  else if (key == "weight_decay_mode") {
    if (value == "coupled") c.weight_decay_mode = WeightDecayMode::kCoupled;
    else if (value == "decoupled") c.weight_decay_mode = WeightDecayMode::kDecoupled;
    else throw LoadError(what + ": expected coupled|decoupled, got '" + value + "'");
  } else if (key == "beta1") c.beta1 = parse_number<double>(value, what);
  else if (key == "beta2") c.beta2 = parse_number<double>(value, what);
  else if (key == "eps") c.eps = parse_number<double>(value, what);
  else if (key == "batch_size") c.batch_size = parse_number<int>(value, what);
  else if (key == "epochs") c.epochs = parse_number<int>(value, what);
  else if (key == "patience") c.patience = parse_number<int>(value, what);
  else if (key == "warmup_fraction") c.warmup_fraction = parse_number<double>(value, what);
  else if (key == "reduction") {
    if (value == "mean") c.reduction = LossReduction::kMean;
    else if (value == "sum") c.reduction = LossReduction::kSum;
    else throw LoadError(what + ": expected mean|sum, got '" + value + "'");
  } else if (key == "l2_normalize") c.l2_normalize = parse_bool(value, what);
  else if (key == "seed") c.seed = parse_number<std::uint64_t>(value, what);
  else throw LoadError("unknown config key '" + key + "'");
}

RunConfig parse_run_config(std::string_view text, const std::string& origin) {
  RunConfig config;
  std::size_t line_no = 0;
  for (const auto& raw : split_lines(text)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw LoadError(origin + ":" + std::to_string(line_no) + ": expected key=value");
    }
    try {
      set_config_value(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const LoadError& e) {
      throw LoadError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  try {
    config.validate();
  } catch (const Error& e) {
    throw LoadError(origin + ": " + e.what());
  }
  return config;
}

RunConfig load_run_config(const fs::path& path) {
  return parse_run_config(read_file(path), path.string());
}

std::string encode_run_config(const RunConfig& c) {
  std::ostringstream out;
  out << "d=" << c.d << '\n'
      << "k=" << c.k << '\n'
      << "tau=" << format_double(c.tau) << '\n'
      << "alpha=" << format_double(c.alpha) << '\n'
      << "gamma=" << format_double(c.gamma) << '\n'
      << "cim=" << (c.cim ? "true" : "false") << '\n'
      << "lr=" << format_double(c.lr) << '\n'
      << "weight_decay=" << format_double(c.weight_decay) << '\n'
      << "weight_decay_mode="
      << (c.weight_decay_mode == WeightDecayMode::kCoupled ? "coupled" : "decoupled") << '\n'
      << "beta1=" << format_double(c.beta1) << '\n'
      << "beta2=" << format_double(c.beta2) << '\n'
      << "eps=" << format_double(c.eps) << '\n'
      << "batch_size=" << c.batch_size << '\n'
      << "epochs=" << c.epochs << '\n'
      << "patience=" << c.patience << '\n'
      << "warmup_fraction=" << format_double(c.warmup_fraction) << '\n'
      << "reduction=" << (c.reduction == LossReduction::kMean ? "mean" : "sum") << '\n'
      << "l2_normalize=" << (c.l2_normalize ? "true" : "false") << '\n'
      << "seed=" << c.seed << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------
// Class metadata

std::vector<ActionClass> load_classes(const fs::path& path) {
  const std::string text = read_file(path);
  const fs::path base = path.parent_path();
  std::vector<ActionClass> classes;
  std::set<ClassId> ids;
  std::size_t line_no = 0;
  for (const auto& line : split_lines(text)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw LoadError(where + ": " + e.what());
    }
    if (!j.is_object()) throw LoadError(where + ": record must be an object");
    ActionClass action;
    try {
      action.class_id = j.at("class_id").get<ClassId>();
      action.name = j.at("name").get<std::string>();
      if (j.contains("definition")) action.definition = j.at("definition").get<std::string>();
      if (j.contains("descriptions")) {
        const fs::path desc_path = base / j.at("descriptions").get<std::string>();
        for (auto& d : split_lines(read_file(desc_path))) {
          if (!trim(d).empty()) action.descriptions.push_back(std::move(d));
        }
      }
    } catch (const nlohmann::json::exception& e) {
      throw LoadError(where + ": " + e.what());
    }
    for (const auto& [key, value] : j.items()) {
      if (key != "class_id" && key != "name" && key != "definition" && key != "descriptions") {
        std::cerr << "warning: " << where << ": ignoring unknown field '" << key << "'\n";
      }
    }
    if (!ids.insert(action.class_id).second) {
      throw LoadError(where + ": duplicate class_id " + std::to_string(action.class_id));
    }
    action.canonical_name = text::normalize_action_name(action.name);
    classes.push_back(std::move(action));
  }
  return classes;
}

void save_classes(const std::vector<ActionClass>& classes, const fs::path& path) {
  const fs::path base = path.parent_path();
  std::string records;
  for (const auto& action : classes) {
    nlohmann::ordered_json j;
    j["class_id"] = action.class_id;
    j["name"] = action.name;
    j["definition"] = action.definition;
    if (!action.descriptions.empty()) {
      const std::string rel = "descriptions/" + std::to_string(action.class_id) + ".txt";
      fs::create_directories(base / "descriptions");
      std::string body;
      for (const auto& d : action.descriptions) {
        std::string line = d;
        for (char& ch : line) {
          if (ch == '\n' || ch == '\r') ch = ' ';
        }
        body += line;
        body += '\n';
      }
      write_file_atomic(base / rel, body);
      j["descriptions"] = rel;
    }
    records += j.dump();
    records += '\n';
  }
  write_file_atomic(path, records);
}

}  // namespace zsar::io
