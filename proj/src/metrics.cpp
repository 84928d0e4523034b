#include "ebr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "ebr/error.hpp"

namespace ebr {

void BleuConfig::validate() const {
  if (max_order < 1) throw InvalidConfig("BLEU max_order must be >= 1");
  if (smoothing == Smoothing::AddK && !(k > 0.0)) throw InvalidConfig("BLEU add-k smoothing needs k > 0");
}

BleuStats& BleuStats::operator+=(const BleuStats& other) {
  if (other.matches.size() != matches.size()) throw ContractViolation("BleuStats: order mismatch");
  for (std::size_t n = 0; n < matches.size(); ++n) {
    matches[n] += other.matches[n];
    totals[n] += other.totals[n];
  }
  hyp_len += other.hyp_len;
  ref_len += other.ref_len;
  return *this;
}

namespace {

using Ngram = std::span<const TokenId>;

struct NgramLess {
  bool operator()(Ngram a, Ngram b) const {
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
  }
};

std::map<Ngram, int, NgramLess> count_order(std::span<const TokenId> seq, std::size_t n) {
  std::map<Ngram, int, NgramLess> counts;
  if (seq.size() < n) return counts;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) ++counts[seq.subspan(i, n)];
  return counts;
}

}  // namespace

BleuStats bleu_stats(std::span<const TokenId> hyp, std::span<const TokenId> ref, int max_order) {
  BleuStats s(max_order);
  s.hyp_len = static_cast<double>(hyp.size());
  s.ref_len = static_cast<double>(ref.size());
  for (int n = 1; n <= max_order; ++n) {
    auto h = count_order(hyp, static_cast<std::size_t>(n));
    auto r = count_order(ref, static_cast<std::size_t>(n));
    double matched = 0;
    for (const auto& [gram, c] : h) {
      auto it = r.find(gram);
      if (it != r.end()) matched += std::min(c, it->second);
    }
    s.matches[n - 1] = matched;
    s.totals[n - 1] = hyp.size() >= static_cast<std::size_t>(n) ? static_cast<double>(hyp.size() - n + 1) : 0.0;
  }
  return s;
}

double bleu_from_stats(const BleuStats& stats, const BleuConfig& cfg) {
  cfg.validate();
  if (stats.hyp_len <= 0) return 0.0;

  double log_sum = 0.0;
  int used_orders = 0;
  double exp_divisor = 1.0;
  for (int n = 1; n <= cfg.max_order; ++n) {
    double m = stats.matches[n - 1];
    double t = stats.totals[n - 1];
    double p = 0.0;
    switch (cfg.smoothing) {
      case Smoothing::None:
        if (t <= 0 || m <= 0) return 0.0;
        p = m / t;
        break;
      case Smoothing::AddK:
        if (n >= 2) {
          m += cfg.k;
          t += cfg.k;
        }
        if (t <= 0 || m <= 0) return 0.0;
        p = m / t;
        break;
      case Smoothing::Exponential:
        // Orders the hypothesis is too short for are dropped from the mean.
        if (t <= 0) continue;
        if (m <= 0) {
          exp_divisor *= 2.0;
          p = 1.0 / (exp_divisor * t);
        } else {
          p = m / t;
        }
        break;
    }
    log_sum += std::log(p);
    ++used_orders;
  }
  if (used_orders == 0) return 0.0;

  double bp = 1.0;
  if (stats.hyp_len < stats.ref_len) bp = std::exp(1.0 - stats.ref_len / stats.hyp_len);
  double score = 100.0 * bp * std::exp(log_sum / used_orders);
  return std::clamp(score, 0.0, 100.0);
}

double sentence_bleu(std::span<const TokenId> hyp, std::span<const TokenId> ref, const BleuConfig& cfg) {
  cfg.validate();
  if (hyp.empty()) return 0.0;
  return bleu_from_stats(bleu_stats(hyp, ref, cfg.max_order), cfg);
}

double sentence_bleu(const TokenSeq& hyp, const TokenSeq& ref, const BleuConfig& cfg) {
  return sentence_bleu(hyp.view(), ref.view(), cfg);
}

double corpus_bleu(const std::vector<TokenSeq>& hyps, const std::vector<TokenSeq>& refs, const BleuConfig& cfg) {
  cfg.validate();
  if (hyps.size() != refs.size())
    throw AlignmentError("corpus_bleu: " + std::to_string(hyps.size()) + " hypotheses vs " +
                         std::to_string(refs.size()) + " references");
  if (hyps.empty()) throw AlignmentError("corpus_bleu: no sentence pairs");
  BleuStats total(cfg.max_order);
  for (std::size_t i = 0; i < hyps.size(); ++i) total += bleu_stats(hyps[i].view(), refs[i].view(), cfg.max_order);
  return bleu_from_stats(total, cfg);
}

RankVector::RankVector(std::vector<double> v) : values(std::move(v)), ranks(values.size(), 0.0) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    // positions i..j (0-based) share the average of ranks i+1..j+1
    double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = avg;
    i = j + 1;
  }
}

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw AlignmentError("spearman: length mismatch");
  if (a.size() < 2) throw AlignmentError("spearman: need at least two observations");
  RankVector ra(std::vector<double>(a.begin(), a.end()));
  RankVector rb(std::vector<double>(b.begin(), b.end()));
  const double n = static_cast<double>(a.size());
  const double mean = (n + 1.0) / 2.0;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double da = ra.ranks[i] - mean;
    double db = rb.ranks[i] - mean;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) throw UndefinedCorrelation("spearman: constant input");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

}  // namespace ebr
