#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "zsar/types.hpp"

namespace zsar::text {

/// The built-in English stop-word list (127 words).
const std::set<std::string>& default_stop_words();
std::set<std::string> load_stop_words(const std::string& path);

/// Splits on every ASCII non-alphanumeric byte and ASCII-lowercases each token.
/// Bytes >= 0x80 are treated as token characters so UTF-8 text passes through.
std::vector<std::string> tokenize(std::string_view text);

/// Rule-based suffix stripping, iterated until no rule fires:
///   1. "ies" -> "y"                      (token length >= 4)
///   2. "es"  -> ""  after s, x, z, ch, sh (token length >= 4)
///      "s"   -> ""  unless preceded by s, u or i (token length >= 4)
///   3. "ing" -> ""  when the stem keeps >= 3 characters
///   4. "ed"  -> ""  when the stem keeps >= 3 characters
/// Only the first matching rule fires per pass.
std::string lemmatize(std::string token);

std::string normalize_action_name(std::string_view name,
                                  const std::set<std::string>& stop_words = default_stop_words());

/// Keeps the earliest class (by class_id) for every canonical name, in order of
/// first occurrence.
std::vector<ActionClass> dedup_actions(const std::vector<ActionClass>& classes);

/// Mean word vector of all in-vocabulary tokens; nullopt when none are found.
std::optional<Vector> embed_text(std::string_view text, const EmbeddingTable& table,
                                 const std::set<std::string>* stop_words = nullptr);

struct ScoredDescription {
  std::size_t description_index = 0;
  std::optional<double> score;  // nullopt == EXCLUDED
};

struct RelevanceRanking {
  ClassId class_id = 0;
  std::vector<ScoredDescription> scored;
};

/// Cosine similarity; nullopt when either vector has zero norm.
std::optional<double> cosine(const Vector& a, const Vector& b);

RelevanceRanking rank_descriptions(const ActionClass& action, const EmbeddingTable& table,
                                   const std::set<std::string>* stop_words = nullptr);

std::vector<std::size_t> select_top_k(const RelevanceRanking& ranking, std::size_t k);

/// "class_id, description_index, score" per line; EXCLUDED entries print the
/// literal EXCLUDED.
std::string encode_ranking(const RelevanceRanking& ranking);
RelevanceRanking parse_ranking(std::string_view text, const std::string& origin = "<memory>");

std::size_t count_sentences(std::string_view text);

struct ClassStats {
  ClassId class_id = 0;
  std::string name;
  std::size_t description_count = 0;
  std::size_t sentence_count = 0;
};

struct Histogram {
  std::vector<std::size_t> edges;   // bucket i covers [edges[i], edges[i+1]); last is open
  std::vector<std::size_t> counts;  // one per edge
};

struct CorpusStats {
  std::vector<ClassStats> per_class;
  std::size_t total_descriptions = 0;
  std::size_t total_sentences = 0;
  Histogram description_histogram;
  Histogram sentence_histogram;
  std::vector<ClassStats> most_described;   // descending count, ties by class_id
  std::vector<ClassStats> least_described;  // ascending count, ties by class_id
};

CorpusStats corpus_stats(const std::vector<ActionClass>& classes, std::size_t top_n = 40,
                         std::size_t bottom_n = 20);

std::string render_stats(const CorpusStats& stats);

}  // namespace zsar::text
