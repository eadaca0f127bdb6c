#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "zsar/types.hpp"

namespace zsar::io {

namespace fs = std::filesystem;

// ZSF1 layout: "ZSF1", u32 n, u32 d, n*d f64 row-major, n u32 labels, all
// little-endian. Item ids live in the sidecar "<path>.ids", one per line.
std::string encode_zsf1(const FeatureStore& store);
FeatureStore decode_zsf1(std::string_view bytes, std::string_view ids_text,
                         const std::string& origin = "<memory>");

FeatureStore load_feature_store(const fs::path& path);
void save_feature_store(const FeatureStore& store, const fs::path& path);

/// word2vec text format: "count dim" header, then "token v1 .. v_dim" lines.
EmbeddingTable parse_embedding_table(std::istream& in, const std::string& origin = "<stream>");
EmbeddingTable load_embedding_table(const fs::path& path);

std::string encode_split(const ZsarSplit& split);
ZsarSplit parse_split(std::string_view text, const std::string& origin = "<memory>");
ZsarSplit load_split(const fs::path& path);
void save_split(const ZsarSplit& split, const fs::path& path);

/// Checks item membership against a video store: train items must carry a seen
/// label, val/test items an unseen label, and every item must exist.
void validate_split_items(const ZsarSplit& split, const FeatureStore& videos);

RunConfig parse_run_config(std::string_view text, const std::string& origin = "<memory>");
RunConfig load_run_config(const fs::path& path);
std::string encode_run_config(const RunConfig& config);
/// Applies one key=value assignment; unknown keys and unparsable values throw.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);

/// Line-delimited JSON records: class_id, name, definition, descriptions (path to
/// a per-class text file with one description per line, relative to the
/// classes file). canonical_name is recomputed on load.
std::vector<ActionClass> load_classes(const fs::path& path);
/// Writes records plus per-class description files under `<dir>/descriptions/`.
void save_classes(const std::vector<ActionClass>& classes, const fs::path& path);

std::string read_file(const fs::path& path);
/// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const fs::path& path, std::string_view bytes);

}  // namespace zsar::io
