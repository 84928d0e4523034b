#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ebr/checkpoint.hpp"
#include "ebr/corpus.hpp"
#include "ebr/metrics.hpp"
#include "ebr/rng.hpp"

namespace ebr {

/// Saturated stand-in for log(0). Finite so it survives sorting and JSON.
inline constexpr double kLogZero = std::numeric_limits<double>::lowest();

/// Sampling and beam search stop after this many target tokens; EOS is then appended.
inline std::size_t max_target_length(std::size_t source_len) { return 2 * source_len + 8; }

struct Candidate {
  TokenSeq hypothesis;  // without EOS
  double base_logprob = 0.0;
  std::optional<double> sentence_bleu;
};

/// k hypotheses for one source. sentence_bleu is set iff a reference was given.
struct CandidateSet {
  TokenSeq source;
  std::vector<Candidate> candidates;

  std::size_t size() const { return candidates.size(); }
  bool has_bleu() const { return !candidates.empty() && candidates.front().sentence_bleu.has_value(); }
};

/// P(y | x) over a shared vocabulary. Implementations are immutable once
/// built, so concurrent scoring and sampling from one instance is safe.
class BaseTranslator {
 public:
  struct Draw {
    std::vector<TokenId> tokens;  // without EOS
    double logprob = 0.0;
  };

  virtual ~BaseTranslator() = default;

  virtual std::string kind() const = 0;
  virtual const Vocabulary& vocab() const = 0;

  /// log P(tgt + EOS | src). A trailing EOS on tgt is accepted and not
  /// scored twice. Impossible targets give kLogZero.
  virtual double logprob(const TokenSeq& src, const TokenSeq& tgt) const = 0;

  /// One ancestral sample at temperature temp; logprob is the untempered model
  /// log-probability and equals logprob(src, tokens) bit for bit.
  virtual Draw sample_one(const TokenSeq& src, double temp, Rng& rng) const = 0;

  /// Best completed hypothesis by length-normalized log-probability among
  /// those kept by a width-limited search.
  virtual TokenSeq beam_decode(const TokenSeq& src, std::size_t width) const = 0;

  TokenSeq greedy(const TokenSeq& src) const { return beam_decode(src, 1); }

  virtual Checkpoint to_checkpoint() const = 0;
};

/// k samples seeded by `seed`. When ref is given every candidate carries its
/// sentence BLEU against it.
CandidateSet sample(const BaseTranslator& model, const TokenSeq& src, std::size_t k, double temp,
                    std::uint64_t seed, const TokenSeq* ref = nullptr,
                    const BleuConfig& bleu = BleuConfig::sentence());

/// Rebuilds a translator from its checkpoint. Throws VocabularyMismatch if the
/// checkpoint was written against a different vocabulary.
std::unique_ptr<BaseTranslator> load_translator(const Checkpoint& ck, const Vocabulary& vocab);

}  // namespace ebr
