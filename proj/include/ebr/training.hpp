#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "ebr/basemodel.hpp"
#include "ebr/corpus.hpp"
#include "ebr/energy.hpp"
#include "ebr/metrics.hpp"
#include "ebr/params.hpp"

namespace ebr {

/// max(alpha * (bleu_h - bleu_l) + e_h - e_l, 0). Zero exactly when the
/// higher-BLEU hypothesis sits at least alpha * dBLEU below the other in
/// energy. Throws ContractViolation if bleu_h < bleu_l.
double hinge_loss(double bleu_h, double bleu_l, double e_h, double e_l, double alpha);

struct RankTrainConfig {
  double alpha = 10.0;
  double temperature = 1000.0;
  /// Candidates sampled per source.
  std::size_t k = 100;
  /// Probability of replacing the first resampled hypothesis with the gold target.
  double gamma = 0.0;
  AdamConfig adam{0.01, 0.9, 0.98, 1e-8};
  std::size_t batch_size = 16;
  int epochs = 1;
  /// Steps per epoch; 0 means ceil(total training pairs / batch_size).
  std::size_t steps_per_epoch = 0;
  /// Temperature of the base-model sampler.
  double sample_temperature = 1.0;
  /// Reuse one candidate set per training sentence instead of resampling it
  /// at every visit. Faster, but the pairs seen are less diverse.
  bool cache_candidates = false;
  BleuConfig bleu = BleuConfig::sentence();
  std::uint64_t seed = 1;

  void validate() const;
};

struct ScheduleEntry {
  std::string language_pair;
  const ParallelCorpus* corpus = nullptr;
  const BaseTranslator* base = nullptr;
};

/// Language pairs trained together. A pair is picked with probability
/// proportional to its corpus size.
class MultiCorpusSchedule {
 public:
  MultiCorpusSchedule() = default;
  MultiCorpusSchedule(const ParallelCorpus& corpus, const BaseTranslator& base);

  /// Throws EmptyInput for an empty corpus.
  void add(const ParallelCorpus& corpus, const BaseTranslator& base);

  const std::vector<ScheduleEntry>& entries() const { return entries_; }
  std::vector<double> probabilities() const;
  std::size_t total_pairs() const;

  /// Index of the next language. With a single entry no randomness is consumed.
  std::size_t pick(Rng& rng) const;

  /// Throws VocabularyMismatch unless every base model shares one target
  /// vocabulary of `vocab_size` entries.
  void check_vocab(std::size_t vocab_size) const;

 private:
  std::vector<ScheduleEntry> entries_;
};

struct LossRecord {
  long step = 0;
  int epoch = 0;
  std::string language_pair;
  /// Sum of hinge losses over the batch.
  double batch_loss = 0.0;
  /// Fraction of pairs with a non-zero hinge.
  double violation_rate = 0.0;
};

struct RankTrainResult {
  std::vector<LossRecord> trace;
  std::size_t pairs = 0;
  /// Pairs in which the gold target replaced a sampled hypothesis.
  std::size_t gold_pairs = 0;
};

/// Rank-based training: each step picks a language, draws batch_size training
/// pairs, samples k candidates per source from its base model, resamples two
/// of them under exp(-E/T), orders them by sentence BLEU against the gold
/// target and takes one Adam step on the summed hinge loss. Deterministic in
/// cfg.seed regardless of EBR_THREADS. Throws DivergedTraining on NaN.
RankTrainResult rank_train(EnergyModel& energy, const MultiCorpusSchedule& schedule, const RankTrainConfig& cfg,
                           const std::function<void(const LossRecord&)>& on_step = {});

void write_loss_trace(const std::vector<LossRecord>& trace, std::ostream& out);
void write_loss_trace(const std::vector<LossRecord>& trace, const std::filesystem::path& path);

struct NceConfig {
  /// Noise samples per gold target.
  std::size_t noise_ratio = 1;
  /// Residual form s(y) = -E(y) - log nu treats the energy as a correction to
  /// the base model; otherwise s(y) = -E(y) - log P_base(y) - log nu.
  bool residual = true;
  AdamConfig adam{0.01, 0.9, 0.98, 1e-8};
  std::size_t batch_size = 16;
  int epochs = 1;
  std::uint64_t seed = 1;

  void validate() const;
};

/// NCE logit of y: log of (model density / (nu * noise density)).
double nce_score(double energy, double base_logprob, const NceConfig& cfg);

/// -log sigmoid(s(gold)) - sum over noise of log sigmoid(-s(noise)); adds the
/// gradient into grad when non-null. Empty noise hypotheses are skipped.
double nce_example_loss(const EnergyModel& m, const TokenSeq& gold, double gold_base_logprob,
                        const std::vector<Candidate>& noise, const NceConfig& cfg, ParamStore* grad);

struct NceTrainResult {
  std::vector<double> epoch_loss;  // mean per example
  double initial_loss = 0.0;       // mean per example before the first update
};

/// Binary NCE with gold targets as data and base-model samples (temperature 1) as noise.
NceTrainResult nce_train(EnergyModel& energy, const ParallelCorpus& corpus, const BaseTranslator& base,
                         const NceConfig& cfg);

/// Fraction of gold targets with s > 0 and noise samples with s < 0.
double nce_accuracy(const EnergyModel& energy, const ParallelCorpus& corpus, const BaseTranslator& base,
                    const NceConfig& cfg, std::uint64_t seed);

}  // namespace ebr
