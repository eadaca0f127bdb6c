#include "zsar/textproc.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_set>

#include "zsar/io.hpp"

namespace zsar::text {

namespace {

bool is_token_byte(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c >= 0x80;
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// One pass of the suffix rules; returns false when nothing fired.
bool strip_once(std::string& t) {
  if (t.size() >= 4 && ends_with(t, "ies")) {
    t.replace(t.size() - 3, 3, "y");
    return true;
  }
  if (t.size() >= 4 && ends_with(t, "es")) {
    const std::string stem = t.substr(0, t.size() - 2);
    if (ends_with(stem, "s") || ends_with(stem, "x") || ends_with(stem, "z") ||
        ends_with(stem, "ch") || ends_with(stem, "sh")) {
      t = stem;
      return true;
    }
  }
  if (t.size() >= 4 && t.back() == 's') {
    const char prev = t[t.size() - 2];
    if (prev != 's' && prev != 'u' && prev != 'i') {
      t.pop_back();
      return true;
    }
  }
  if (ends_with(t, "ing") && t.size() - 3 >= 3) {
    t.resize(t.size() - 3);
    return true;
  }
  if (ends_with(t, "ed") && t.size() - 2 >= 3) {
    t.resize(t.size() - 2);
    return true;
  }
  return false;
}

}  // namespace

const std::set<std::string>& default_stop_words() {
  static const std::set<std::string> words = {
      "i",       "me",         "my",      "myself",  "we",      "our",      "ours",
      "ourselves", "you",      "your",    "yours",   "yourself", "yourselves", "he",
      "him",     "his",        "himself", "she",     "her",     "hers",     "herself",
      "it",      "its",        "itself",  "they",    "them",    "their",    "theirs",
      "themselves", "what",    "which",   "who",     "whom",    "this",     "that",
      "these",   "those",      "am",      "is",      "are",     "was",      "were",
      "be",      "been",       "being",   "have",    "has",     "had",      "having",
      "do",      "does",       "did",     "doing",   "a",       "an",       "the",
      "and",     "but",        "if",      "or",      "because", "as",       "until",
      "while",   "of",         "at",      "by",      "for",     "with",     "about",
      "against", "between",    "into",    "through", "during",  "before",   "after",
      "above",   "below",      "to",      "from",    "up",      "down",     "in",
      "out",     "on",         "off",     "over",    "under",   "again",    "further",
      "then",    "once",       "here",    "there",   "when",    "where",    "why",
      "how",     "all",        "any",     "both",    "each",    "few",      "more",
      "most",    "other",      "some",    "such",    "no",      "nor",      "not",
      "only",    "own",        "same",    "so",      "than",    "too",      "very",
      "s",       "t",          "can",     "will",    "just",    "don",      "should",
      "now"};
  return words;
}

std::set<std::string> load_stop_words(const std::string& path) {
  std::set<std::string> words;
  for (const auto& token : tokenize(io::read_file(path))) words.insert(token);
  return words;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_token_byte(c)) {
      current.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a') : ch);
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

std::string lemmatize(std::string token) {
  while (strip_once(token)) {
  }
  return token;
}

std::string normalize_action_name(std::string_view name, const std::set<std::string>& stop_words) {
  std::string out;
  for (auto& token : tokenize(name)) {
    if (stop_words.count(token)) continue;
    std::string lemma = lemmatize(std::move(token));
    // A lemma can itself be a stop word ("others" -> "other").
    if (lemma.empty() || stop_words.count(lemma)) continue;
    if (!out.empty()) out += ' ';
    out += lemma;
  }
  return out;
}

std::vector<ActionClass> dedup_actions(const std::vector<ActionClass>& classes) {
  std::map<std::string, std::size_t> winner;  // canonical -> index into classes
  std::vector<std::string> order;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const auto& key = classes[i].canonical_name;
    auto it = winner.find(key);
    if (it == winner.end()) {
      winner.emplace(key, i);
      order.push_back(key);
    } else if (classes[i].class_id < classes[it->second].class_id) {
      it->second = i;
    }
  }
  std::vector<ActionClass> out;
  out.reserve(order.size());
  for (const auto& key : order) out.push_back(classes[winner.at(key)]);
  return out;
}

std::optional<Vector> embed_text(std::string_view text, const EmbeddingTable& table,
                                 const std::set<std::string>* stop_words) {
  Vector sum = Vector::Zero(static_cast<Eigen::Index>(table.dim));
  std::size_t found = 0;
  for (const auto& token : tokenize(text)) {
    if (stop_words && stop_words->count(token)) continue;
    auto it = table.entries.find(token);
    if (it == table.entries.end()) continue;
    sum += it->second;
    ++found;
  }
  if (found == 0) return std::nullopt;
  return Vector(sum / static_cast<double>(found));
}

std::optional<double> cosine(const Vector& a, const Vector& b) {
  // Index-order sums, so scores (and ranking ties) do not depend on vectorization.
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    ab += a(i) * b(i);
    aa += a(i) * a(i);
    bb += b(i) * b(i);
  }
  const double na = std::sqrt(aa);
  const double nb = std::sqrt(bb);
  if (na == 0.0 || nb == 0.0) return std::nullopt;
  const double c = ab / (na * nb);
  return std::clamp(c, -1.0, 1.0);
}

RelevanceRanking rank_descriptions(const ActionClass& action, const EmbeddingTable& table,
                                   const std::set<std::string>* stop_words) {
  RelevanceRanking ranking;
  ranking.class_id = action.class_id;
  const auto name_vec = embed_text(action.name, table, stop_words);
  ranking.scored.reserve(action.descriptions.size());
  for (std::size_t i = 0; i < action.descriptions.size(); ++i) {
    ScoredDescription entry{i, std::nullopt};
    if (name_vec) {
      if (auto desc_vec = embed_text(action.descriptions[i], table, stop_words)) {
        entry.score = cosine(*desc_vec, *name_vec);
      }
    }
    ranking.scored.push_back(entry);
  }
  std::stable_sort(ranking.scored.begin(), ranking.scored.end(),
                   [](const ScoredDescription& a, const ScoredDescription& b) {
                     if (a.score.has_value() != b.score.has_value()) return a.score.has_value();
                     if (a.score && *a.score != *b.score) return *a.score > *b.score;
                     return a.description_index < b.description_index;
                   });
  return ranking;
}

std::vector<std::size_t> select_top_k(const RelevanceRanking& ranking, std::size_t k) {
  std::vector<std::size_t> out;
  for (const auto& entry : ranking.scored) {
    if (out.size() >= k || !entry.score) break;
    out.push_back(entry.description_index);
  }
  return out;
}

std::string encode_ranking(const RelevanceRanking& ranking) {
  std::string out;
  for (const auto& entry : ranking.scored) {
    out += std::to_string(ranking.class_id);
    out += ", ";
    out += std::to_string(entry.description_index);
    out += ", ";
    if (entry.score) {
      char buf[64];
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), *entry.score);
      out.append(buf, ptr);
    } else {
      out += "EXCLUDED";
    }
    out += '\n';
  }
  return out;
}

RelevanceRanking parse_ranking(std::string_view text, const std::string& origin) {
  RelevanceRanking ranking;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream row(line);
    std::string a, b, c;
    if (!std::getline(row, a, ',') || !std::getline(row, b, ',') || !std::getline(row, c)) {
      throw LoadError(origin + ":" + std::to_string(line_no) + ": expected 3 fields");
    }
    auto strip = [](std::string s) {
      const auto f = s.find_first_not_of(" \t\r");
      const auto l = s.find_last_not_of(" \t\r");
      return f == std::string::npos ? std::string() : s.substr(f, l - f + 1);
    };
    a = strip(a);
    b = strip(b);
    c = strip(c);
    try {
      const auto class_id = static_cast<ClassId>(std::stoul(a));
      if (first) {
        ranking.class_id = class_id;
        first = false;
      } else if (class_id != ranking.class_id) {
        throw LoadError(origin + ":" + std::to_string(line_no) + ": mixed class ids");
      }
      ScoredDescription entry{std::stoul(b), std::nullopt};
      if (c != "EXCLUDED") entry.score = std::stod(c);
      ranking.scored.push_back(entry);
    } catch (const std::logic_error&) {
      throw LoadError(origin + ":" + std::to_string(line_no) + ": unparsable field");
    }
  }
  return ranking;
}

std::size_t count_sentences(std::string_view text) {
  std::size_t count = 0;
  bool has_content = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    const bool terminator = c == '.' || c == '!' || c == '?';
    const bool boundary =
        terminator && (i + 1 == text.size() || std::isspace(static_cast<unsigned char>(text[i + 1])));
    if (boundary) {
      if (has_content) ++count;
      has_content = false;
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      has_content = true;
    }
  }
  if (has_content) ++count;
  return count;
}

namespace {

Histogram make_histogram(std::vector<std::size_t> edges, const std::vector<std::size_t>& values) {
  Histogram h;
  h.edges = std::move(edges);
  h.counts.assign(h.edges.size(), 0);
  for (std::size_t v : values) {
    auto it = std::upper_bound(h.edges.begin(), h.edges.end(), v);
    ++h.counts[static_cast<std::size_t>(it - h.edges.begin()) - 1];
  }
  return h;
}

}  // namespace

CorpusStats corpus_stats(const std::vector<ActionClass>& classes, std::size_t top_n,
                         std::size_t bottom_n) {
  CorpusStats stats;
  std::vector<std::size_t> desc_counts;
  std::vector<std::size_t> sent_counts;
  for (const auto& action : classes) {
    ClassStats cs{action.class_id, action.name, action.descriptions.size(), 0};
    for (const auto& d : action.descriptions) cs.sentence_count += count_sentences(d);
    stats.total_descriptions += cs.description_count;
    stats.total_sentences += cs.sentence_count;
    desc_counts.push_back(cs.description_count);
    sent_counts.push_back(cs.sentence_count);
    stats.per_class.push_back(std::move(cs));
  }
  stats.description_histogram = make_histogram({0, 100, 500, 1000, 2000, 3000, 5000}, desc_counts);
  stats.sentence_histogram =
      make_histogram({0, 300, 1500, 3000, 6000, 9000, 15000}, sent_counts);

  auto sorted = stats.per_class;
  std::stable_sort(sorted.begin(), sorted.end(), [](const ClassStats& a, const ClassStats& b) {
    if (a.description_count != b.description_count) return a.description_count > b.description_count;
    return a.class_id < b.class_id;
  });
  stats.most_described.assign(sorted.begin(),
                              sorted.begin() + static_cast<std::ptrdiff_t>(std::min(top_n, sorted.size())));
  std::stable_sort(sorted.begin(), sorted.end(), [](const ClassStats& a, const ClassStats& b) {
    if (a.description_count != b.description_count) return a.description_count < b.description_count;
    return a.class_id < b.class_id;
  });
  stats.least_described.assign(
      sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(std::min(bottom_n, sorted.size())));
  return stats;
}

std::string render_stats(const CorpusStats& stats) {
  std::ostringstream out;
  out << "classes\t" << stats.per_class.size() << '\n'
      << "descriptions\t" << stats.total_descriptions << '\n'
      << "sentences\t" << stats.total_sentences << '\n';
  if (stats.total_descriptions > 0) {
    out << "sentences_per_description\t"
        << static_cast<double>(stats.total_sentences) / static_cast<double>(stats.total_descriptions)
        << '\n';
  }
  auto hist = [&](const char* title, const Histogram& h) {
    out << '\n' << title << '\n';
    for (std::size_t i = 0; i < h.edges.size(); ++i) {
      out << h.edges[i] << '-';
      if (i + 1 < h.edges.size()) out << h.edges[i + 1];
      out << '\t' << h.counts[i] << '\n';
    }
  };
  hist("# actions by description count", stats.description_histogram);
  hist("# actions by sentence count", stats.sentence_histogram);
  auto list = [&](const char* title, const std::vector<ClassStats>& rows) {
    out << '\n' << title << '\n';
    for (const auto& r : rows) out << r.class_id << '\t' << r.name << '\t' << r.description_count << '\n';
  };
  list("# most described", stats.most_described);
  list("# least described", stats.least_described);
  out << "\n# per class (class_id, descriptions, sentences)\n";
  for (const auto& r : stats.per_class) {
    out << r.class_id << '\t' << r.description_count << '\t' << r.sentence_count << '\n';
  }
  return out.str();
}

}  // namespace zsar::text
