#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "zsar/dataset.hpp"
#include "zsar/types.hpp"

namespace zsar::synth {

/// A planted zero-shot problem. Classes are sparse combinations of a shared,
/// orthonormal concept pool; seen and unseen classes draw from the same pool.
struct SynthSpec {
  int n_concepts = 12;
  int n_seen = 10;
  int n_unseen = 5;
  int concepts_per_class = 3;
  int videos_per_class = 40;
  int val_videos_per_class = 10;
  int descriptions_per_class = 20;
  double visual_noise_sigma = 0.3;
  double text_noise_sigma = 0.1;
  // Fraction of a class's concepts (a prefix of its concept list) that its
  // definition feature expresses.
  double definition_fidelity = 0.4;
  int d_latent = 16;
  int d_in_visual = 32;
  int d_in_text = 32;
  std::uint64_t seed = 0;

  void validate() const;
  int definition_concepts() const;
};

SynthSpec parse_spec(std::string_view text, const std::string& origin = "<memory>");
SynthSpec load_spec(const std::string& path);
std::string encode_spec(const SynthSpec& spec);

struct SynthProblem {
  Dataset data;
  std::vector<ActionClass> classes;
  ZsarSplit split;
  Matrix concepts;        // n_concepts x d_latent, orthonormal rows
  Matrix class_vectors;   // classes x d_latent, latent class semantics
  std::vector<std::vector<int>> class_concepts;
};

SynthProblem generate(const SynthSpec& spec);

/// Writes the dataset stores, classes.jsonl, split.json and spec.cfg.
void write_problem(const SynthProblem& problem, const SynthSpec& spec,
                   const std::filesystem::path& dir);

/// Scalar-loop table of every video . class dot product (test oracle).
Matrix oracle_scores(const Matrix& videos, const Matrix& class_feats);

/// Argmax per row of an oracle table with lowest-index tie-break.
std::vector<int> oracle_argmax(const Matrix& scores);

}  // namespace zsar::synth
