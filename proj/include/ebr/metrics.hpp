#pragma once

#include <span>
#include <vector>

#include "ebr/corpus.hpp"

namespace ebr {

enum class Smoothing { None, AddK, Exponential };

/// BLEU settings. Scores are on the 0-100 scale.
struct BleuConfig {
  int max_order = 4;
  Smoothing smoothing = Smoothing::None;
  /// Added to matches and totals of orders >= 2 under AddK.
  double k = 1.0;

  /// add-1 smoothing; what training and oracle selection use.
  static BleuConfig sentence() { return {4, Smoothing::AddK, 1.0}; }
  /// Unsmoothed corpus BLEU.
  static BleuConfig corpus() { return {4, Smoothing::None, 1.0}; }

  void validate() const;
};

/// Sufficient statistics of BLEU; additive across sentences.
struct BleuStats {
  std::vector<double> matches;  // clipped matches per order (index n-1)
  std::vector<double> totals;   // hypothesis n-grams per order
  double hyp_len = 0;
  double ref_len = 0;

  explicit BleuStats(int max_order = 4) : matches(max_order, 0.0), totals(max_order, 0.0) {}

  BleuStats& operator+=(const BleuStats& other);
};

BleuStats bleu_stats(std::span<const TokenId> hyp, std::span<const TokenId> ref, int max_order);

/// Score from accumulated statistics under cfg's smoothing.
double bleu_from_stats(const BleuStats& stats, const BleuConfig& cfg);

/// Sentence BLEU in [0, 100]. An empty hypothesis scores 0.
double sentence_bleu(const TokenSeq& hyp, const TokenSeq& ref, const BleuConfig& cfg = BleuConfig::sentence());
double sentence_bleu(std::span<const TokenId> hyp, std::span<const TokenId> ref,
                     const BleuConfig& cfg = BleuConfig::sentence());

/// Micro-averaged corpus BLEU. Throws AlignmentError on length mismatch or no pairs.
double corpus_bleu(const std::vector<TokenSeq>& hyps, const std::vector<TokenSeq>& refs,
                   const BleuConfig& cfg = BleuConfig::corpus());

/// Fractional (tie-averaged) ranks, 1-based.
struct RankVector {
  std::vector<double> values;
  std::vector<double> ranks;

  explicit RankVector(std::vector<double> v);
};

/// Pearson correlation of tie-averaged ranks. Throws AlignmentError on length
/// mismatch or n < 2 and UndefinedCorrelation if either side is constant.
double spearman(std::span<const double> a, std::span<const double> b);

}  // namespace ebr
