#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include "ebr/energy.hpp"
#include "ebr/rerank.hpp"
#include "json.hpp"

namespace ebr {

/// 20 equal bins on [-1, 1]; the last bin is closed on the right.
struct Histogram {
  static constexpr std::size_t kBins = 20;

  std::vector<std::size_t> counts = std::vector<std::size_t>(kBins, 0);
  std::vector<double> values;  // the per-sentence correlations, in corpus order
  std::size_t excluded = 0;    // sentences whose scores or BLEU were all tied

  static double lower_edge(std::size_t bin);
  static std::size_t bin_of(double rho);
  void add(double rho);
  double mean() const;

  nlohmann::json to_json() const;
  void write_csv(std::ostream& out) const;
  /// Two columns: bin centre, count.
  void write_gnuplot(std::ostream& out) const;
};

/// Higher-is-better candidate scores for correlation analysis.
using RankScorer = std::function<double(const Candidate&)>;

RankScorer base_logprob_scorer();
/// Negated energy, so that higher means preferred.
RankScorer energy_scorer(const EnergyModel& m);

/// Per source sentence: k candidates (seeded as in evaluate), then Spearman
/// correlation between sentence-BLEU and scorer values. Throws InvalidConfig for k < 3.
Histogram spearman_distribution(const ParallelCorpus& corpus, const BaseTranslator& base, const RankScorer& scorer,
                                std::size_t k, std::uint64_t seed, double temperature = 1.0);

struct LengthBin {
  std::size_t lower = 0;                // exclusive
  std::optional<std::size_t> upper;     // inclusive; none means unbounded
  std::size_t sentences = 0;
  BleuStats stats;
  std::optional<double> bleu;           // absent for an empty bin
};

/// Corpus BLEU of the report's choices grouped by reference length into
/// (0, b1], (b1, b2], ..., (bn, inf). Bounds must be strictly increasing.
std::vector<LengthBin> length_binned_bleu(const RerankReport& report, const std::vector<std::size_t>& bounds);

nlohmann::json length_bins_to_json(const std::vector<LengthBin>& bins);
void write_length_bins_csv(const std::vector<LengthBin>& bins, std::ostream& out);

struct ShuffleResult {
  std::size_t sentences = 0;
  std::size_t local_evaluated = 0;
  std::size_t local_skipped = 0;  // shorter than the window
  double mean_original = 0.0;
  double mean_local = 0.0;   // over locally shuffled sentences
  double mean_global = 0.0;
  /// Fraction of sentences whose original energy is strictly below the shuffled one.
  double local_preference = 0.0;
  double global_preference = 0.0;

  nlohmann::json to_json() const;
  void write_csv(std::ostream& out) const;
};

/// Energy of each target against a random permutation of one window of
/// `window` consecutive tokens (local) and of the whole sentence (global).
ShuffleResult shuffle_energy_test(const EnergyModel& energy, const std::vector<TokenSeq>& targets,
                                  std::size_t window, std::uint64_t seed);

struct DiffRow {
  std::size_t index = 0;
  TokenSeq source;
  TokenSeq choice_a;
  TokenSeq choice_b;
  double bleu_a = 0.0;
  double bleu_b = 0.0;
};

/// Sentences where the two reports chose different hypotheses, largest BLEU
/// gap first. Throws AlignmentError unless both cover the same sentences.
std::vector<DiffRow> choice_diff(const RerankReport& a, const RerankReport& b);

nlohmann::json diff_to_json(const std::vector<DiffRow>& rows, const Vocabulary& vocab);
void write_diff_csv(const std::vector<DiffRow>& rows, const Vocabulary& vocab, std::ostream& out);

}  // namespace ebr
