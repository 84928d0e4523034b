#include "ebr/training.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <ostream>

#include "ebr/error.hpp"
#include "ebr/parallel.hpp"

namespace ebr {

namespace {

double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

double hinge_loss(double bleu_h, double bleu_l, double e_h, double e_l, double alpha) {
  if (bleu_h < bleu_l) throw ContractViolation("hinge_loss: bleu_h must be >= bleu_l");
  return std::max(alpha * (bleu_h - bleu_l) + e_h - e_l, 0.0);
}

void RankTrainConfig::validate() const {
  if (!(alpha > 0.0)) throw InvalidConfig("rank training: alpha must be positive");
  if (!(temperature > 0.0)) throw InvalidConfig("rank training: T must be positive");
  if (k < 2) throw InvalidConfig("rank training: k must be >= 2");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw InvalidConfig("rank training: gamma must lie in [0, 1]");
  if (!(adam.lr >= 0.0)) throw InvalidConfig("rank training: learning rate must be non-negative");
  if (batch_size < 1) throw InvalidConfig("rank training: batch size must be positive");
  if (epochs < 0) throw InvalidConfig("rank training: epochs must be non-negative");
  if (!(sample_temperature > 0.0)) throw InvalidConfig("rank training: sample temperature must be positive");
  bleu.validate();
}

// ---------------------------------------------------------------------------

MultiCorpusSchedule::MultiCorpusSchedule(const ParallelCorpus& corpus, const BaseTranslator& base) {
  add(corpus, base);
}

void MultiCorpusSchedule::add(const ParallelCorpus& corpus, const BaseTranslator& base) {
  if (corpus.empty()) throw EmptyInput("schedule: empty corpus for " + corpus.language_pair());
  entries_.push_back({corpus.language_pair(), &corpus, &base});
}

std::size_t MultiCorpusSchedule::total_pairs() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.corpus->size();
  return n;
}

std::vector<double> MultiCorpusSchedule::probabilities() const {
  const double total = static_cast<double>(total_pairs());
  std::vector<double> p;
  for (const auto& e : entries_) p.push_back(static_cast<double>(e.corpus->size()) / total);
  return p;
}

std::size_t MultiCorpusSchedule::pick(Rng& rng) const {
  if (entries_.size() == 1) return 0;
  std::vector<double> w;
  for (const auto& e : entries_) w.push_back(static_cast<double>(e.corpus->size()));
  return rng.categorical(w);
}

void MultiCorpusSchedule::check_vocab(std::size_t vocab_size) const {
  if (entries_.empty()) throw EmptyInput("schedule: no language pairs");
  const std::string fp = entries_.front().base->vocab().fingerprint();
  for (const auto& e : entries_) {
    if (e.base->vocab().fingerprint() != fp)
      throw VocabularyMismatch("schedule: base models do not share a target vocabulary");
    if (e.base->vocab().size() != vocab_size)
      throw VocabularyMismatch("schedule: energy model and base model vocabularies differ");
    for (const auto& p : e.corpus->pairs())
      for (TokenId t : p.reference.tokens)
        if (t < 0 || static_cast<std::size_t>(t) >= vocab_size)
          throw VocabularyMismatch("schedule: reference token outside the vocabulary");
  }
}

// ---------------------------------------------------------------------------

RankTrainResult rank_train(EnergyModel& energy, const MultiCorpusSchedule& schedule, const RankTrainConfig& cfg,
                           const std::function<void(const LossRecord&)>& on_step) {
  cfg.validate();
  schedule.check_vocab(energy.vocab_size());

  const std::size_t steps_per_epoch = cfg.steps_per_epoch > 0
                                          ? cfg.steps_per_epoch
                                          : (schedule.total_pairs() + cfg.batch_size - 1) / cfg.batch_size;

  struct Item {
    TokenSeq high, low;
    double bleu_high = 0, bleu_low = 0;
    bool gold = false;
    bool usable = false;
  };

  std::mutex cache_mutex;
  std::map<std::pair<std::size_t, std::size_t>, std::shared_ptr<const CandidateSet>> cache;

  auto candidates_for = [&](std::size_t lang, std::size_t idx, std::uint64_t fresh_seed) {
    const auto& entry = schedule.entries()[lang];
    const auto& pair = (*entry.corpus)[idx];
    if (!cfg.cache_candidates)
      return std::make_shared<const CandidateSet>(
          sample(*entry.base, pair.source, cfg.k, cfg.sample_temperature, fresh_seed, &pair.reference, cfg.bleu));
    {
      std::lock_guard<std::mutex> lock(cache_mutex);
      auto it = cache.find({lang, idx});
      if (it != cache.end()) return it->second;
    }
    const std::uint64_t fixed = derive_seed(cfg.seed, {0xCAC4E, lang, idx});
    auto set = std::make_shared<const CandidateSet>(
        sample(*entry.base, pair.source, cfg.k, cfg.sample_temperature, fixed, &pair.reference, cfg.bleu));
    std::lock_guard<std::mutex> lock(cache_mutex);
    return cache.emplace(std::make_pair(lang, idx), set).first->second;
  };

  Adam adam(energy.params(), cfg.adam);
  ParamStore grad = energy.params().zeros_like();
  RankTrainResult result;
  long step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
      const auto ustep = static_cast<std::uint64_t>(step);
      Rng step_rng(derive_seed(cfg.seed, {0x57E9, ustep}));
      const std::size_t lang = schedule.pick(step_rng);
      const auto& entry = schedule.entries()[lang];
      const ParallelCorpus& corpus = *entry.corpus;

      std::vector<Item> items(cfg.batch_size);
      parallel_for(cfg.batch_size, [&](std::size_t b) {
        Rng rng(derive_seed(cfg.seed, {0x17E3, ustep, b}));
        const std::size_t idx = rng.below(corpus.size());
        const auto& gold = corpus[idx].reference;
        const auto cands = candidates_for(lang, idx, derive_seed(cfg.seed, {0x5A3, ustep, b}));

        std::vector<double> energies;
        energies.reserve(cands->size());
        for (const auto& c : cands->candidates) energies.push_back(candidate_energy(energy, c.hypothesis));
        const auto [i1, i2] = resample_indices(energies, cfg.temperature, rng);

        Item& item = items[b];
        TokenSeq y1 = cands->candidates[i1].hypothesis;
        double b1 = *cands->candidates[i1].sentence_bleu;
        if (cfg.gamma > 0.0 && rng.bernoulli(cfg.gamma)) {
          y1 = gold;
          b1 = sentence_bleu(gold, gold, cfg.bleu);
          item.gold = true;
        }
        const TokenSeq& y2 = cands->candidates[i2].hypothesis;
        const double b2 = *cands->candidates[i2].sentence_bleu;
        if (b1 >= b2) {
          item.high = std::move(y1), item.bleu_high = b1;
          item.low = y2, item.bleu_low = b2;
        } else {
          item.high = y2, item.bleu_high = b2;
          item.low = std::move(y1), item.bleu_low = b1;
        }
        item.usable = !item.high.empty() && !item.low.empty();
      });

      grad.set_zero();
      LossRecord rec;
      rec.step = step;
      rec.epoch = epoch;
      rec.language_pair = entry.language_pair;
      std::size_t counted = 0, violated = 0;
      for (const auto& item : items) {
        if (item.gold) ++result.gold_pairs;
        if (!item.usable) continue;
        ++counted;
        ++result.pairs;
        const double e_h = energy.energy(item.high);
        const double e_l = energy.energy(item.low);
        const double loss = hinge_loss(item.bleu_high, item.bleu_low, e_h, e_l, cfg.alpha);
        rec.batch_loss += loss;
        if (loss > 0.0) {
          ++violated;
          energy.accumulate_grad(item.high.view(), 1.0, grad);
          energy.accumulate_grad(item.low.view(), -1.0, grad);
        }
      }
      rec.violation_rate = counted == 0 ? 0.0 : static_cast<double>(violated) / static_cast<double>(counted);
      energy.add_l2_grad(grad);
      if (!std::isfinite(rec.batch_loss) || !grad.all_finite()) throw DivergedTraining(epoch, step);
      adam.step(energy.params(), grad);
      if (!energy.params().all_finite()) throw DivergedTraining(epoch, step);
      if (on_step) on_step(rec);
      result.trace.push_back(std::move(rec));
    }
  }
  return result;
}

void write_loss_trace(const std::vector<LossRecord>& trace, std::ostream& out) {
  out << "step,epoch,language_pair,batch_loss,violation_rate\n";
  out.precision(17);
  for (const auto& r : trace)
    out << r.step << ',' << r.epoch << ',' << r.language_pair << ',' << r.batch_loss << ',' << r.violation_rate
        << '\n';
}

void write_loss_trace(const std::vector<LossRecord>& trace, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  write_loss_trace(trace, out);
}

// ---------------------------------------------------------------------------

void NceConfig::validate() const {
  if (noise_ratio < 1) throw InvalidConfig("nce: noise ratio must be >= 1");
  if (!(adam.lr >= 0.0)) throw InvalidConfig("nce: learning rate must be non-negative");
  if (batch_size < 1) throw InvalidConfig("nce: batch size must be positive");
  if (epochs < 0) throw InvalidConfig("nce: epochs must be non-negative");
}

double nce_score(double energy, double base_logprob, const NceConfig& cfg) {
  const double log_nu = std::log(static_cast<double>(cfg.noise_ratio));
  if (cfg.residual) return -energy - log_nu;
  return -energy - base_logprob - log_nu;
}

double nce_example_loss(const EnergyModel& m, const TokenSeq& gold, double gold_base_logprob,
                        const std::vector<Candidate>& noise, const NceConfig& cfg, ParamStore* grad) {
  // ds/dE = -1, so d(-log sig(s))/dE = 1 - sig(s) and d(-log sig(-s))/dE = -sig(s).
  const double e_pos = m.energy(gold);
  const double s_pos = nce_score(e_pos, gold_base_logprob, cfg);
  double loss = -log_sigmoid(s_pos);
  if (grad != nullptr) m.accumulate_grad(gold.view(), 1.0 - sigmoid(s_pos), *grad);
  for (const auto& c : noise) {
    if (c.hypothesis.empty()) continue;
    const double s = nce_score(m.energy(c.hypothesis), c.base_logprob, cfg);
    loss -= log_sigmoid(-s);
    if (grad != nullptr) m.accumulate_grad(c.hypothesis.view(), -sigmoid(s), *grad);
  }
  return loss;
}

namespace {

struct NceItem {
  double gold_logprob = 0.0;
  std::vector<Candidate> noise;
};

NceItem nce_item(const BaseTranslator& base, const SentencePair& pair, const NceConfig& cfg, std::uint64_t seed) {
  NceItem item;
  if (!cfg.residual) item.gold_logprob = base.logprob(pair.source, pair.reference);
  item.noise = sample(base, pair.source, cfg.noise_ratio, 1.0, seed).candidates;
  return item;
}

}  // namespace

NceTrainResult nce_train(EnergyModel& energy, const ParallelCorpus& corpus, const BaseTranslator& base,
                         const NceConfig& cfg) {
  cfg.validate();
  if (corpus.empty()) throw EmptyInput("nce: empty corpus");
  if (base.vocab().size() != energy.vocab_size())
    throw VocabularyMismatch("nce: energy model and base model vocabularies differ");

  Adam adam(energy.params(), cfg.adam);
  ParamStore grad = energy.params().zeros_like();
  NceTrainResult result;
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, {0x5F1, static_cast<std::uint64_t>(epoch)}));
    shuffle_rng.shuffle(order);
    double epoch_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++step) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<NceItem> items(end - start);
      parallel_for(items.size(), [&](std::size_t b) {
        const std::size_t idx = order[start + b];
        items[b] = nce_item(base, corpus[idx], cfg,
                            derive_seed(cfg.seed, {0x9C1, static_cast<std::uint64_t>(epoch), idx}));
      });
      grad.set_zero();
      double batch_loss = 0.0;
      for (std::size_t b = 0; b < items.size(); ++b)
        batch_loss += nce_example_loss(energy, corpus[order[start + b]].reference, items[b].gold_logprob,
                                       items[b].noise, cfg, &grad);
      if (step == 0) result.initial_loss = batch_loss / static_cast<double>(items.size());
      energy.add_l2_grad(grad);
      if (!std::isfinite(batch_loss) || !grad.all_finite()) throw DivergedTraining(epoch, step);
      adam.step(energy.params(), grad);
      epoch_total += batch_loss;
    }
    result.epoch_loss.push_back(epoch_total / static_cast<double>(corpus.size()));
  }
  return result;
}

double nce_accuracy(const EnergyModel& energy, const ParallelCorpus& corpus, const BaseTranslator& base,
                    const NceConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::vector<std::pair<std::size_t, std::size_t>> tally(corpus.size());
  parallel_for(corpus.size(), [&](std::size_t i) {
    const auto item = nce_item(base, corpus[i], cfg, derive_seed(seed, {0xACC, i}));
    std::size_t right = 0, seen = 1;
    if (nce_score(energy.energy(corpus[i].reference), item.gold_logprob, cfg) > 0) ++right;
    for (const auto& c : item.noise) {
      if (c.hypothesis.empty()) continue;
      ++seen;
      if (nce_score(energy.energy(c.hypothesis), c.base_logprob, cfg) < 0) ++right;
    }
    tally[i] = {right, seen};
  });
  std::size_t right = 0, seen = 0;
  for (const auto& [r, s] : tally) right += r, seen += s;
  return seen == 0 ? 0.0 : static_cast<double>(right) / static_cast<double>(seen);
}

}  // namespace ebr
