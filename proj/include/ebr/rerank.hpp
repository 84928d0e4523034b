#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ebr/basemodel.hpp"
#include "ebr/corpus.hpp"
#include "ebr/energy.hpp"
#include "ebr/lm.hpp"
#include "ebr/metrics.hpp"
#include "json.hpp"

namespace ebr {

enum class StrategyKind { Beam, SampleLogprob, LmFusion, MlmFusion, Ebr, NceEbr, Oracle };

struct Strategy {
  StrategyKind kind = StrategyKind::SampleLogprob;
  std::size_t beam_width = 5;
  /// Fusion weight for LmFusion and MlmFusion.
  double lambda = 0.01;
  /// Fusion variants only: divide the base log-probability by (length + 1).
  bool length_normalize = false;

  static Strategy beam(std::size_t width = 5) { return {StrategyKind::Beam, width, 0.01, false}; }
  static Strategy sample() { return {StrategyKind::SampleLogprob}; }
  static Strategy lm_fusion(double lambda = 0.01) { return {StrategyKind::LmFusion, 5, lambda, false}; }
  static Strategy mlm_fusion(double lambda = 0.01) { return {StrategyKind::MlmFusion, 5, lambda, false}; }
  static Strategy ebr() { return {StrategyKind::Ebr}; }
  static Strategy nce_ebr() { return {StrategyKind::NceEbr}; }
  static Strategy oracle() { return {StrategyKind::Oracle}; }

  /// One of beam, sample, lm, mlm, ebr, nce-ebr, oracle.
  std::string name() const;
  static Strategy parse(std::string_view name);
  bool uses_candidates() const { return kind != StrategyKind::Beam; }
  void validate() const;
};

/// Replacement energy for Ebr/NceEbr (lower is better). Used to inject
/// reference-aware stubs in tests and diagnostics.
using CandidateScorer = std::function<double(const Candidate&)>;

struct Models {
  const BaseTranslator* base = nullptr;
  const NgramLM* lm = nullptr;
  const MaskedScorer* mlm = nullptr;
  const EnergyModel* energy = nullptr;      // Ebr
  const EnergyModel* nce_energy = nullptr;  // NceEbr
  CandidateScorer energy_stub;              // overrides both energies when set
};

struct Selection {
  /// Index into the candidate set; empty for Beam.
  std::optional<std::size_t> index;
  TokenSeq chosen;
  /// Per-candidate scores under the strategy (energies for Ebr/NceEbr,
  /// sentence BLEU for Oracle, fused log-probabilities otherwise).
  std::vector<double> scores;
};

/// Picks one hypothesis. Ebr/NceEbr take the lowest score, the others the
/// highest; ties go to the lowest index. Throws MissingModel when the
/// strategy's model is absent and MissingReference for Oracle without ref.
Selection select(const CandidateSet& cands, const Strategy& strategy, const Models& models,
                 const TokenSeq* ref = nullptr);

TokenSeq rerank_one(const CandidateSet& cands, const Strategy& strategy, const Models& models,
                    const TokenSeq* ref = nullptr);

struct EvalConfig {
  std::size_t k = 100;
  double temperature = 1.0;
  std::uint64_t seed = 1;
};

struct SentenceResult {
  TokenSeq source;
  TokenSeq reference;
  TokenSeq chosen;
  std::optional<std::size_t> chosen_index;
  std::vector<double> scores;
  double sentence_bleu = 0.0;
  double seconds = 0.0;
};

struct RerankReport {
  std::string strategy;
  std::string corpus;
  std::size_t k = 0;
  double bleu = 0.0;
  std::vector<SentenceResult> per_sentence;
  double mean_seconds_per_sentence = 0.0;

  std::vector<TokenSeq> chosen() const;
  std::vector<TokenSeq> references() const;

  /// Timing fields are omitted when include_timing is false, which makes the
  /// output a pure function of models, data and seed.
  nlohmann::json to_json(const Vocabulary& vocab, bool include_timing = true) const;
  static RerankReport from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path, const Vocabulary& vocab) const;
  static RerankReport load(const std::filesystem::path& path);
};

/// Candidate set of sentence i of an evaluation run; shared by every strategy.
CandidateSet eval_candidates(const BaseTranslator& base, const SentencePair& pair, std::size_t i,
                             const EvalConfig& cfg);

/// Samples k candidates per source (except for Beam), applies the strategy
/// and reports corpus BLEU plus per-sentence wall-clock time.
RerankReport evaluate(const ParallelCorpus& corpus, const Strategy& strategy, const Models& models,
                      const EvalConfig& cfg);

/// Several strategies over one shared set of candidates. Each report's timing
/// counts the sampling time once plus that strategy's own scoring.
std::vector<RerankReport> evaluate_all(const ParallelCorpus& corpus, const std::vector<Strategy>& strategies,
                                       const Models& models, const EvalConfig& cfg);

}  // namespace ebr
