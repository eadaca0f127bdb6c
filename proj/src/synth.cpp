#include "zsar/synth.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>
#include <sstream>

#include "zsar/io.hpp"
#include "zsar/rng.hpp"

namespace zsar::synth {

namespace {

// Sub-stream ids keep each kind of draw independent of the others, so e.g.
// changing definition_fidelity never shifts the video noise.
enum Stream : std::uint64_t {
  kConcepts = 1,
  kBackbones = 2,
  kClassConcepts = 3,
  kClassBase = 1000,
};

enum ClassStream : std::uint64_t {
  kDefinitionNoise = 1,
  kDescriptionNoise = 2,
  kVideoNoise = 3,
  kValNoise = 4,
};

Matrix gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  }
  return m;
}

RowVector noisy(const RowVector& base, Rng& rng, double sigma) {
  RowVector out = base;
  // Always consume the draws so sigma = 0 keeps later streams aligned.
  for (Eigen::Index j = 0; j < out.size(); ++j) out(j) += sigma * rng.normal();
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

void SynthSpec::validate() const {
  if (n_concepts < 1 || n_seen < 1 || n_unseen < 1 || concepts_per_class < 1 ||
      videos_per_class < 1 || descriptions_per_class < 1 || d_latent < 1 || d_in_visual < 1 ||
      d_in_text < 1) {
    throw Error("synth spec: all counts must be >= 1");
  }
  if (val_videos_per_class < 0) throw Error("synth spec: val_videos_per_class must be >= 0");
  if (concepts_per_class > n_concepts) throw Error("synth spec: concepts_per_class > n_concepts");
  if (visual_noise_sigma < 0.0 || text_noise_sigma < 0.0) throw Error("synth spec: sigmas must be >= 0");
  if (!(definition_fidelity >= 0.0 && definition_fidelity <= 1.0)) {
    throw Error("synth spec: definition_fidelity must lie in [0, 1]");
  }
  if (d_latent < n_concepts) {
    throw Error("synth spec: d_latent (" + std::to_string(d_latent) + ") < n_concepts (" +
                std::to_string(n_concepts) + ")");
  }
}

int SynthSpec::definition_concepts() const {
  return static_cast<int>(std::lround(definition_fidelity * concepts_per_class));
}

SynthSpec parse_spec(std::string_view text, const std::string& origin) {
  SynthSpec s;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw LoadError(origin + ":" + std::to_string(line_no) + ": expected key=value");
    auto strip = [](std::string v) {
      const auto f = v.find_first_not_of(" \t\r");
      const auto l = v.find_last_not_of(" \t\r");
      return f == std::string::npos ? std::string() : v.substr(f, l - f + 1);
    };
    const std::string key = strip(line.substr(0, eq));
    const std::string value = strip(line.substr(eq + 1));
    auto as_int = [&] {
      int v = 0;
      auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
      if (ec != std::errc() || p != value.data() + value.size()) {
        throw LoadError(origin + ":" + std::to_string(line_no) + ": bad integer '" + value + "'");
      }
      return v;
    };
    auto as_double = [&] {
      double v = 0;
      auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
      if (ec != std::errc() || p != value.data() + value.size()) {
        throw LoadError(origin + ":" + std::to_string(line_no) + ": bad number '" + value + "'");
      }
      return v;
    };
    if (key == "n_concepts") s.n_concepts = as_int();
    else if (key == "n_seen") s.n_seen = as_int();
    else if (key == "n_unseen") s.n_unseen = as_int();
    else if (key == "concepts_per_class") s.concepts_per_class = as_int();
    else if (key == "videos_per_class") s.videos_per_class = as_int();
    else if (key == "val_videos_per_class") s.val_videos_per_class = as_int();
    else if (key == "descriptions_per_class") s.descriptions_per_class = as_int();
    else if (key == "visual_noise_sigma") s.visual_noise_sigma = as_double();
    else if (key == "text_noise_sigma") s.text_noise_sigma = as_double();
    else if (key == "definition_fidelity") s.definition_fidelity = as_double();
    else if (key == "d_latent") s.d_latent = as_int();
    else if (key == "d_in_visual") s.d_in_visual = as_int();
    else if (key == "d_in_text") s.d_in_text = as_int();
    else if (key == "seed") {
      auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), s.seed);
      if (ec != std::errc() || p != value.data() + value.size()) {
        throw LoadError(origin + ":" + std::to_string(line_no) + ": bad seed '" + value + "'");
      }
    } else {
      throw LoadError(origin + ":" + std::to_string(line_no) + ": unknown spec key '" + key + "'");
    }
  }
  try {
    s.validate();
  } catch (const Error& e) {
    throw LoadError(origin + ": " + e.what());
  }
  return s;
}

SynthSpec load_spec(const std::string& path) { return parse_spec(io::read_file(path), path); }

std::string encode_spec(const SynthSpec& s) {
  std::ostringstream out;
  out << "n_concepts=" << s.n_concepts << '\n'
      << "n_seen=" << s.n_seen << '\n'
      << "n_unseen=" << s.n_unseen << '\n'
      << "concepts_per_class=" << s.concepts_per_class << '\n'
      << "videos_per_class=" << s.videos_per_class << '\n'
      << "val_videos_per_class=" << s.val_videos_per_class << '\n'
      << "descriptions_per_class=" << s.descriptions_per_class << '\n'
      << "visual_noise_sigma=" << format_double(s.visual_noise_sigma) << '\n'
      << "text_noise_sigma=" << format_double(s.text_noise_sigma) << '\n'
      << "definition_fidelity=" << format_double(s.definition_fidelity) << '\n'
      << "d_latent=" << s.d_latent << '\n'
      << "d_in_visual=" << s.d_in_visual << '\n'
      << "d_in_text=" << s.d_in_text << '\n'
      << "seed=" << s.seed << '\n';
  return out.str();
}

SynthProblem generate(const SynthSpec& spec) {
  spec.validate();
  SynthProblem p;
  const int n_classes = spec.n_seen + spec.n_unseen;

  {
    Rng rng(derive_seed(spec.seed, kConcepts));
    const Matrix g = gaussian(rng, spec.d_latent, spec.d_latent, 1.0);
    const Matrix q = Eigen::HouseholderQR<Matrix>(g).householderQ();
    p.concepts = q.transpose().topRows(spec.n_concepts);
  }
  Matrix visual_backbone;
  Matrix text_backbone;
  {
    Rng rng(derive_seed(spec.seed, kBackbones));
    visual_backbone = gaussian(rng, spec.d_latent, spec.d_in_visual, 1.0 / std::sqrt(spec.d_latent));
    text_backbone = gaussian(rng, spec.d_latent, spec.d_in_text, 1.0 / std::sqrt(spec.d_latent));
  }

  // Distinct concept sets per class; the concept order within a set is the
  // order in which a definition reveals them.
  {
    Rng rng(derive_seed(spec.seed, kClassConcepts));
    std::set<std::vector<int>> used;
    for (int c = 0; c < n_classes; ++c) {
      for (int attempt = 0;; ++attempt) {
        if (attempt > 10000) throw Error("synth: cannot draw distinct concept sets; enlarge n_concepts");
        std::vector<int> pool(static_cast<std::size_t>(spec.n_concepts));
        for (int i = 0; i < spec.n_concepts; ++i) pool[static_cast<std::size_t>(i)] = i;
        rng.shuffle(pool);
        pool.resize(static_cast<std::size_t>(spec.concepts_per_class));
        std::vector<int> key = pool;
        std::sort(key.begin(), key.end());
        if (used.insert(key).second) {
          p.class_concepts.push_back(pool);
          break;
        }
      }
    }
  }

  p.class_vectors = Matrix::Zero(n_classes, spec.d_latent);
  for (int c = 0; c < n_classes; ++c) {
    for (int concept_id : p.class_concepts[static_cast<std::size_t>(c)]) {
      p.class_vectors.row(c) += p.concepts.row(concept_id);
    }
  }

  const int def_concepts = spec.definition_concepts();
  std::vector<RowVector> video_rows, def_rows, desc_rows;
  FeatureStore& videos = p.data.videos;
  FeatureStore& defs = p.data.definitions;
  FeatureStore descs;

  for (int c = 0; c < n_classes; ++c) {
    const auto cid = static_cast<ClassId>(c);
    const bool seen = c < spec.n_seen;
    const RowVector full = p.class_vectors.row(c);
    RowVector partial = RowVector::Zero(spec.d_latent);
    for (int i = 0; i < def_concepts; ++i) {
      partial += p.concepts.row(p.class_concepts[static_cast<std::size_t>(c)][static_cast<std::size_t>(i)]);
    }

    Rng def_rng(derive_seed(spec.seed, kClassBase + 10 * static_cast<std::uint64_t>(c) + kDefinitionNoise));
    def_rows.push_back(noisy(partial, def_rng, spec.text_noise_sigma) * text_backbone);
    defs.item_ids.push_back("def" + std::to_string(c));
    defs.labels.push_back(cid);

    Rng desc_rng(derive_seed(spec.seed, kClassBase + 10 * static_cast<std::uint64_t>(c) + kDescriptionNoise));
    for (int i = 0; i < spec.descriptions_per_class; ++i) {
      desc_rows.push_back(noisy(full, desc_rng, spec.text_noise_sigma) * text_backbone);
      descs.item_ids.push_back("desc" + std::to_string(c) + "_" + std::to_string(i));
      descs.labels.push_back(cid);
    }

    Rng video_rng(derive_seed(spec.seed, kClassBase + 10 * static_cast<std::uint64_t>(c) + kVideoNoise));
    for (int i = 0; i < spec.videos_per_class; ++i) {
      const std::string id = "v" + std::to_string(c) + "_" + std::to_string(i);
      video_rows.push_back(noisy(full, video_rng, spec.visual_noise_sigma) * visual_backbone);
      videos.item_ids.push_back(id);
      videos.labels.push_back(cid);
      (seen ? p.split.train_items : p.split.test_items).insert(id);
    }
    if (!seen) {
      Rng val_rng(derive_seed(spec.seed, kClassBase + 10 * static_cast<std::uint64_t>(c) + kValNoise));
      for (int i = 0; i < spec.val_videos_per_class; ++i) {
        const std::string id = "val" + std::to_string(c) + "_" + std::to_string(i);
        video_rows.push_back(noisy(full, val_rng, spec.visual_noise_sigma) * visual_backbone);
        videos.item_ids.push_back(id);
        videos.labels.push_back(cid);
        p.split.val_items.insert(id);
      }
    }
    (seen ? p.split.seen_classes : p.split.unseen_classes).insert(cid);

    ActionClass action;
    action.class_id = cid;
    action.name = "synthetic action " + std::to_string(c);
    std::string concept_list;
    for (int concept_id : p.class_concepts[static_cast<std::size_t>(c)]) {
      if (!concept_list.empty()) concept_list += ' ';
      concept_list += std::to_string(concept_id);
    }
    action.definition = "concepts " + concept_list;
    action.canonical_name = action.name;
    p.classes.push_back(std::move(action));
  }

  auto stack = [](const std::vector<RowVector>& rows, Eigen::Index cols) {
    Matrix m(static_cast<Eigen::Index>(rows.size()), cols);
    for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = rows[i];
    return m;
  };
  videos.matrix = stack(video_rows, spec.d_in_visual);
  defs.matrix = stack(def_rows, spec.d_in_text);
  descs.matrix = stack(desc_rows, spec.d_in_text);
  p.data.descriptions = std::move(descs);
  p.split.split_id = "synth-" + std::to_string(spec.seed);
  return p;
}

void write_problem(const SynthProblem& problem, const SynthSpec& spec,
                   const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_dataset(problem.data, dir);
  io::save_classes(problem.classes, dir / "classes.jsonl");
  io::save_split(problem.split, dir / "split.json");
  io::write_file_atomic(dir / "spec.cfg", encode_spec(spec));
}

Matrix oracle_scores(const Matrix& videos, const Matrix& class_feats) {
  Matrix scores(videos.rows(), class_feats.rows());
  for (Eigen::Index i = 0; i < videos.rows(); ++i) {
    for (Eigen::Index j = 0; j < class_feats.rows(); ++j) {
      double s = 0.0;
      for (Eigen::Index t = 0; t < videos.cols(); ++t) s += videos(i, t) * class_feats(j, t);
      scores(i, j) = s;
    }
  }
  return scores;
}

std::vector<int> oracle_argmax(const Matrix& scores) {
  std::vector<int> out;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    int best = 0;
    for (Eigen::Index j = 1; j < scores.cols(); ++j) {
      if (scores(i, j) > scores(i, best)) best = static_cast<int>(j);
    }
    out.push_back(best);
  }
  return out;
}

}  // namespace zsar::synth
