#pragma once

#include <map>
#include <memory>
#include <span>
#include <vector>

#include "ebr/checkpoint.hpp"
#include "ebr/corpus.hpp"
#include "ebr/params.hpp"

namespace ebr {

/// Ids an LM predicts over: everything except PAD, BOS and MASK.
std::vector<TokenId> prediction_set(std::size_t vocab_size);

/// Add-k smoothed n-gram model over BOS-padded, EOS-terminated sentences.
/// Only the highest order is estimated (no backoff); an unseen context gets
/// the uniform distribution over the prediction set.
class NgramLM {
 public:
  NgramLM(std::size_t vocab_size, int order, double k);

  int order() const { return order_; }
  double k() const { return k_; }
  std::size_t vocab_size() const { return vocab_size_; }
  std::size_t prediction_size() const { return prediction_size_; }

  void observe(std::span<const TokenId> sentence);

  /// p(word | context); context holds the most recent tokens, oldest first,
  /// already BOS-padded to at least order-1 entries.
  double prob(std::span<const TokenId> context, TokenId word) const;

  /// Context for predicting position i of `sentence` (BOS-padded).
  std::vector<TokenId> context_at(std::span<const TokenId> sentence, std::size_t i) const;

  Checkpoint to_checkpoint(const std::string& vocab_ref) const;
  static NgramLM from_checkpoint(const Checkpoint& ck, const std::string& tensor = "counts");
  void append_tensor(Checkpoint& ck, const std::string& name) const;

 private:
  std::size_t vocab_size_;
  std::size_t prediction_size_;
  int order_;
  double k_;
  std::map<std::vector<TokenId>, std::map<TokenId, double>> counts_;
  std::map<std::vector<TokenId>, double> context_totals_;
};

/// Counts over every target sentence. Throws InvalidConfig for order < 1,
/// k <= 0 or no sentences.
NgramLM train_ngram(const std::vector<TokenSeq>& targets, int order, double k, std::size_t vocab_size);

/// Sum of log p(y_i | context) over y followed by EOS.
double lm_logprob(const NgramLM& lm, const TokenSeq& y);

/// A bidirectional scorer: log p(y_i | y without position i).
class MaskedScorer {
 public:
  virtual ~MaskedScorer() = default;
  virtual double masked_log_prob(std::span<const TokenId> y, std::size_t i) const = 0;
  virtual Checkpoint to_checkpoint(const std::string& vocab_ref) const = 0;
};

/// Masked conditional from a forward and a backward n-gram model: the
/// geometric mean of the two conditionals, renormalized over the prediction set.
class BidirectionalNgramScorer final : public MaskedScorer {
 public:
  BidirectionalNgramScorer(NgramLM forward, NgramLM backward);

  static BidirectionalNgramScorer train(const std::vector<TokenSeq>& targets, int order, double k,
                                        std::size_t vocab_size);

  const NgramLM& forward() const { return forward_; }
  const NgramLM& backward() const { return backward_; }

  double masked_log_prob(std::span<const TokenId> y, std::size_t i) const override;
  /// Full masked distribution at position i, indexed by token id (zeros outside the prediction set).
  std::vector<double> masked_distribution(std::span<const TokenId> y, std::size_t i) const;

  Checkpoint to_checkpoint(const std::string& vocab_ref) const override;
  static BidirectionalNgramScorer from_checkpoint(const Checkpoint& ck);

 private:
  NgramLM forward_;
  NgramLM backward_;
};

struct MaskedPredictorConfig {
  std::size_t window = 2;
  std::size_t embed_dim = 32;
  std::size_t hidden_dim = 64;
  int epochs = 2;
  std::size_t batch_size = 32;
  AdamConfig adam{0.01, 0.9, 0.98, 1e-8};
  std::uint64_t seed = 1;
};

/// Small trainable masked-token predictor over a fixed window:
///   hidden = tanh(sum_o W_o e(y_{i+o}) + b), o in [-window, window] \ {0}
///   p(. | y without i) = softmax(W_out hidden + b_out) over the prediction set
/// Positions outside the sentence read BOS (left) or EOS (right).
class MaskedTokenPredictor final : public MaskedScorer {
 public:
  MaskedTokenPredictor(std::size_t vocab_size, MaskedPredictorConfig cfg);

  double masked_log_prob(std::span<const TokenId> y, std::size_t i) const override;
  Vector masked_log_distribution(std::span<const TokenId> y, std::size_t i) const;

  /// Cross-entropy of predicting y_i; adds its gradient into grad when non-null.
  double loss(std::span<const TokenId> y, std::size_t i, ParamStore* grad) const;

  /// Adam over every position of every target, for cfg.epochs epochs.
  /// Returns the mean loss per epoch.
  std::vector<double> train(const std::vector<TokenSeq>& targets);

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const MaskedPredictorConfig& config() const { return cfg_; }

  Checkpoint to_checkpoint(const std::string& vocab_ref) const override;
  static MaskedTokenPredictor from_checkpoint(const Checkpoint& ck);

 private:
  TokenId token_at(std::span<const TokenId> y, long pos) const;

  std::size_t vocab_size_;
  MaskedPredictorConfig cfg_;
  ParamStore params_;
  std::size_t emb_, hidden_b_, out_w_, out_b_;
  std::vector<std::size_t> offset_w_;
};

/// Length-normalized pseudo-log-likelihood: mean over positions of the masked log-probability.
double pll_score(const MaskedScorer& scorer, const TokenSeq& y);

std::unique_ptr<MaskedScorer> load_masked_scorer(const Checkpoint& ck);

}  // namespace ebr
