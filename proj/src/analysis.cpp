#include "ebr/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "ebr/error.hpp"
#include "ebr/parallel.hpp"

namespace ebr {

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

double Histogram::lower_edge(std::size_t bin) { return -1.0 + 2.0 * static_cast<double>(bin) / kBins; }

std::size_t Histogram::bin_of(double rho) {
  const auto b = static_cast<long>(std::floor((rho + 1.0) * kBins / 2.0));
  return static_cast<std::size_t>(std::clamp(b, 0L, static_cast<long>(kBins) - 1));
}

void Histogram::add(double rho) {
  values.push_back(rho);
  ++counts[bin_of(rho)];
}

double Histogram::mean() const {
  if (values.empty()) return 0.0;
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

nlohmann::json Histogram::to_json() const {
  nlohmann::json bins = nlohmann::json::array();
  for (std::size_t b = 0; b < kBins; ++b)
    bins.push_back({{"lower", lower_edge(b)}, {"upper", lower_edge(b + 1)}, {"count", counts[b]}});
  return {{"bins", bins}, {"sentences", values.size() + excluded}, {"excluded", excluded}, {"mean", mean()}};
}

void Histogram::write_csv(std::ostream& out) const {
  out << "lower,upper,count\n";
  for (std::size_t b = 0; b < kBins; ++b) out << lower_edge(b) << ',' << lower_edge(b + 1) << ',' << counts[b] << '\n';
}

void Histogram::write_gnuplot(std::ostream& out) const {
  out << "# bin_centre count\n";
  for (std::size_t b = 0; b < kBins; ++b) out << (lower_edge(b) + lower_edge(b + 1)) / 2.0 << ' ' << counts[b] << '\n';
}

RankScorer base_logprob_scorer() {
  return [](const Candidate& c) { return c.base_logprob; };
}

RankScorer energy_scorer(const EnergyModel& m) {
  return [&m](const Candidate& c) { return -candidate_energy(m, c.hypothesis); };
}

Histogram spearman_distribution(const ParallelCorpus& corpus, const BaseTranslator& base, const RankScorer& scorer,
                                std::size_t k, std::uint64_t seed, double temperature) {
  if (k < 3) throw InvalidConfig("spearman distribution: k must be >= 3");
  EvalConfig cfg{k, temperature, seed};
  std::vector<std::optional<double>> rho(corpus.size());
  parallel_for(corpus.size(), [&](std::size_t i) {
    const auto cands = eval_candidates(base, corpus[i], i, cfg);
    std::vector<double> bleu, score;
    for (const auto& c : cands.candidates) {
      bleu.push_back(*c.sentence_bleu);
      score.push_back(scorer(c));
    }
    try {
      rho[i] = spearman(bleu, score);
    } catch (const UndefinedCorrelation&) {
    }
  });
  Histogram h;
  for (const auto& r : rho) {
    if (r) h.add(*r);
    else ++h.excluded;
  }
  return h;
}

// ---------------------------------------------------------------------------

std::vector<LengthBin> length_binned_bleu(const RerankReport& report, const std::vector<std::size_t>& bounds) {
  for (std::size_t i = 1; i < bounds.size(); ++i)
    if (bounds[i] <= bounds[i - 1]) throw InvalidConfig("length bins: bounds must be strictly increasing");
  std::vector<LengthBin> bins(bounds.size() + 1);
  for (std::size_t b = 0; b < bins.size(); ++b) {
    bins[b].lower = b == 0 ? 0 : bounds[b - 1];
    if (b < bounds.size()) bins[b].upper = bounds[b];
  }
  const BleuConfig cfg = BleuConfig::corpus();
  for (const auto& s : report.per_sentence) {
    const std::size_t len = s.reference.size();
    std::size_t b = 0;
    while (b < bounds.size() && len > bounds[b]) ++b;
    bins[b].stats += bleu_stats(s.chosen.tokens, s.reference.tokens, cfg.max_order);
    ++bins[b].sentences;
  }
  for (auto& bin : bins)
    if (bin.sentences > 0) bin.bleu = bleu_from_stats(bin.stats, cfg);
  return bins;
}

nlohmann::json length_bins_to_json(const std::vector<LengthBin>& bins) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& b : bins) {
    out.push_back({{"lower", b.lower},
                   {"upper", b.upper ? nlohmann::json(*b.upper) : nlohmann::json(nullptr)},
                   {"sentences", b.sentences},
                   {"bleu", b.bleu ? nlohmann::json(*b.bleu) : nlohmann::json(nullptr)}});
  }
  return out;
}

void write_length_bins_csv(const std::vector<LengthBin>& bins, std::ostream& out) {
  out << "lower,upper,sentences,bleu\n";
  for (const auto& b : bins) {
    out << b.lower << ',' << (b.upper ? std::to_string(*b.upper) : "") << ',' << b.sentences << ',';
    if (b.bleu) out << *b.bleu;
    out << '\n';
  }
}

// ---------------------------------------------------------------------------

ShuffleResult shuffle_energy_test(const EnergyModel& energy, const std::vector<TokenSeq>& targets, std::size_t window,
                                  std::uint64_t seed) {
  if (window < 2) throw InvalidConfig("shuffle test: window must be >= 2");
  if (targets.empty()) throw EmptyInput("shuffle test: no targets");

  struct Row {
    double original = 0, global = 0, local = 0;
    bool has_local = false;
  };
  std::vector<Row> rows(targets.size());
  parallel_for(targets.size(), [&](std::size_t i) {
    const auto& y = targets[i].tokens;
    Rng rng(derive_seed(seed, {0x5BF, i}));
    Row& r = rows[i];
    r.original = energy.energy(y);
    std::vector<TokenId> g = y;
    rng.shuffle(g);
    r.global = energy.energy(g);
    if (y.size() >= window) {
      std::vector<TokenId> l = y;
      const std::size_t start = rng.below(y.size() - window + 1);
      rng.shuffle(std::span<TokenId>(l.data() + start, window));
      r.local = energy.energy(l);
      r.has_local = true;
    }
  });

  ShuffleResult res;
  res.sentences = targets.size();
  std::size_t local_pref = 0, global_pref = 0;
  for (const auto& r : rows) {
    res.mean_original += r.original;
    res.mean_global += r.global;
    if (r.original < r.global) ++global_pref;
    if (r.has_local) {
      ++res.local_evaluated;
      res.mean_local += r.local;
      if (r.original < r.local) ++local_pref;
    } else {
      ++res.local_skipped;
    }
  }
  const double n = static_cast<double>(res.sentences);
  res.mean_original /= n;
  res.mean_global /= n;
  res.global_preference = static_cast<double>(global_pref) / n;
  if (res.local_evaluated > 0) {
    res.mean_local /= static_cast<double>(res.local_evaluated);
    res.local_preference = static_cast<double>(local_pref) / static_cast<double>(res.local_evaluated);
  }
  return res;
}

nlohmann::json ShuffleResult::to_json() const {
  return {{"sentences", sentences},
          {"local_evaluated", local_evaluated},
          {"local_skipped", local_skipped},
          {"mean_original", mean_original},
          {"mean_local", mean_local},
          {"mean_global", mean_global},
          {"local_preference", local_preference},
          {"global_preference", global_preference}};
}

void ShuffleResult::write_csv(std::ostream& out) const {
  out << "sentences,local_evaluated,local_skipped,mean_original,mean_local,mean_global,local_preference,"
         "global_preference\n";
  out << sentences << ',' << local_evaluated << ',' << local_skipped << ',' << mean_original << ',' << mean_local
      << ',' << mean_global << ',' << local_preference << ',' << global_preference << '\n';
}

// ---------------------------------------------------------------------------

std::vector<DiffRow> choice_diff(const RerankReport& a, const RerankReport& b) {
  if (a.per_sentence.size() != b.per_sentence.size())
    throw AlignmentError("choice diff: reports cover different numbers of sentences");
  std::vector<DiffRow> rows;
  for (std::size_t i = 0; i < a.per_sentence.size(); ++i) {
    const auto& sa = a.per_sentence[i];
    const auto& sb = b.per_sentence[i];
    if (sa.source != sb.source || sa.reference != sb.reference)
      throw AlignmentError("choice diff: reports cover different sentences");
    if (sa.chosen == sb.chosen) continue;
    rows.push_back({i, sa.source, sa.chosen, sb.chosen, sa.sentence_bleu, sb.sentence_bleu});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const DiffRow& x, const DiffRow& y) {
    return std::abs(x.bleu_a - x.bleu_b) > std::abs(y.bleu_a - y.bleu_b);
  });
  return rows;
}

nlohmann::json diff_to_json(const std::vector<DiffRow>& rows, const Vocabulary& vocab) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows)
    out.push_back({{"index", r.index},
                   {"src", detokenize(r.source.tokens, vocab)},
                   {"choice_a", detokenize(r.choice_a.tokens, vocab)},
                   {"choice_b", detokenize(r.choice_b.tokens, vocab)},
                   {"bleu_a", r.bleu_a},
                   {"bleu_b", r.bleu_b}});
  return out;
}

void write_diff_csv(const std::vector<DiffRow>& rows, const Vocabulary& vocab, std::ostream& out) {
  out << "index,src,choice_a,choice_b,bleu_a,bleu_b\n";
  for (const auto& r : rows)
    out << r.index << ',' << csv_field(detokenize(r.source.tokens, vocab)) << ','
        << csv_field(detokenize(r.choice_a.tokens, vocab)) << ',' << csv_field(detokenize(r.choice_b.tokens, vocab))
        << ',' << r.bleu_a << ',' << r.bleu_b << '\n';
}

}  // namespace ebr
