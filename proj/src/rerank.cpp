#include "ebr/rerank.hpp"

#include <chrono>
#include <fstream>

#include "ebr/error.hpp"
#include "ebr/parallel.hpp"

namespace ebr {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

double fused(const Candidate& c, double lm_score, const Strategy& s) {
  double base = c.base_logprob;
  if (s.length_normalize) base /= static_cast<double>(c.hypothesis.size() + 1);
  return base + s.lambda * lm_score;
}

const EnergyModel* energy_for(const Strategy& s, const Models& m) {
  return s.kind == StrategyKind::Ebr ? m.energy : m.nce_energy;
}

}  // namespace

std::string Strategy::name() const {
  switch (kind) {
    case StrategyKind::Beam: return "beam";
    case StrategyKind::SampleLogprob: return "sample";
    case StrategyKind::LmFusion: return "lm";
    case StrategyKind::MlmFusion: return "mlm";
    case StrategyKind::Ebr: return "ebr";
    case StrategyKind::NceEbr: return "nce-ebr";
    case StrategyKind::Oracle: return "oracle";
  }
  return "unknown";
}

Strategy Strategy::parse(std::string_view name) {
  for (auto kind : {StrategyKind::Beam, StrategyKind::SampleLogprob, StrategyKind::LmFusion, StrategyKind::MlmFusion,
                    StrategyKind::Ebr, StrategyKind::NceEbr, StrategyKind::Oracle}) {
    Strategy s;
    s.kind = kind;
    if (s.name() == name) return s;
  }
  throw InvalidConfig("unknown strategy: " + std::string(name));
}

void Strategy::validate() const {
  if (beam_width < 1) throw InvalidConfig("strategy: beam width must be >= 1");
  if (!(lambda >= 0.0)) throw InvalidConfig("strategy: lambda must be non-negative");
}

Selection select(const CandidateSet& cands, const Strategy& strategy, const Models& models, const TokenSeq* ref) {
  strategy.validate();
  Selection sel;
  if (strategy.kind == StrategyKind::Beam) {
    if (models.base == nullptr) throw MissingModel("beam search needs a base model");
    sel.chosen = models.base->beam_decode(cands.source, strategy.beam_width);
    return sel;
  }
  if (cands.candidates.empty()) throw InsufficientCandidates("rerank: empty candidate set");

  bool lower_is_better = false;
  auto& scores = sel.scores;
  scores.reserve(cands.size());
  switch (strategy.kind) {
    case StrategyKind::SampleLogprob:
      for (const auto& c : cands.candidates) scores.push_back(c.base_logprob);
      break;
    case StrategyKind::LmFusion:
      if (models.lm == nullptr) throw MissingModel("lm fusion needs a language model");
      for (const auto& c : cands.candidates)
        scores.push_back(c.hypothesis.empty() ? kLogZero : fused(c, lm_logprob(*models.lm, c.hypothesis), strategy));
      break;
    case StrategyKind::MlmFusion:
      if (models.mlm == nullptr) throw MissingModel("mlm fusion needs a masked scorer");
      for (const auto& c : cands.candidates)
        scores.push_back(c.hypothesis.empty() ? kLogZero : fused(c, pll_score(*models.mlm, c.hypothesis), strategy));
      break;
    case StrategyKind::Ebr:
    case StrategyKind::NceEbr: {
      lower_is_better = true;
      if (models.energy_stub) {
        for (const auto& c : cands.candidates) scores.push_back(models.energy_stub(c));
        break;
      }
      const EnergyModel* m = energy_for(strategy, models);
      if (m == nullptr) throw MissingModel(strategy.name() + " needs an energy model");
      for (const auto& c : cands.candidates) scores.push_back(candidate_energy(*m, c.hypothesis));
      break;
    }
    case StrategyKind::Oracle:
      if (ref == nullptr) throw MissingReference("oracle ranking needs the reference");
      for (const auto& c : cands.candidates) scores.push_back(sentence_bleu(c.hypothesis, *ref));
      break;
    case StrategyKind::Beam:
      break;
  }

  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (lower_is_better ? scores[i] < scores[best] : scores[i] > scores[best]) best = i;
  sel.index = best;
  sel.chosen = cands.candidates[best].hypothesis;
  return sel;
}

TokenSeq rerank_one(const CandidateSet& cands, const Strategy& strategy, const Models& models, const TokenSeq* ref) {
  return select(cands, strategy, models, ref).chosen;
}

// ---------------------------------------------------------------------------

std::vector<TokenSeq> RerankReport::chosen() const {
  std::vector<TokenSeq> out;
  for (const auto& s : per_sentence) out.push_back(s.chosen);
  return out;
}

std::vector<TokenSeq> RerankReport::references() const {
  std::vector<TokenSeq> out;
  for (const auto& s : per_sentence) out.push_back(s.reference);
  return out;
}

nlohmann::json RerankReport::to_json(const Vocabulary& vocab, bool include_timing) const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& s : per_sentence) {
    nlohmann::json row = {{"src", detokenize(s.source.tokens, vocab)},
                          {"ref", detokenize(s.reference.tokens, vocab)},
                          {"chosen", detokenize(s.chosen.tokens, vocab)},
                          {"src_ids", s.source.tokens},
                          {"ref_ids", s.reference.tokens},
                          {"chosen_ids", s.chosen.tokens},
                          {"sentence_bleu", s.sentence_bleu},
                          {"scores", s.scores}};
    row["chosen_index"] = s.chosen_index ? nlohmann::json(*s.chosen_index) : nlohmann::json(nullptr);
    if (include_timing) row["seconds"] = s.seconds;
    rows.push_back(std::move(row));
  }
  nlohmann::json j = {{"strategy", strategy}, {"corpus", corpus}, {"k", k}, {"bleu", bleu}, {"per_sentence", rows}};
  if (include_timing) j["mean_seconds_per_sentence"] = mean_seconds_per_sentence;
  return j;
}

RerankReport RerankReport::from_json(const nlohmann::json& j) {
  try {
    RerankReport r;
    r.strategy = j.at("strategy").get<std::string>();
    r.corpus = j.at("corpus").get<std::string>();
    r.k = j.at("k").get<std::size_t>();
    r.bleu = j.at("bleu").get<double>();
    r.mean_seconds_per_sentence = j.value("mean_seconds_per_sentence", 0.0);
    for (const auto& row : j.at("per_sentence")) {
      SentenceResult s;
      s.source = TokenSeq(row.at("src_ids").get<std::vector<TokenId>>(), row.at("src").get<std::string>());
      s.reference = TokenSeq(row.at("ref_ids").get<std::vector<TokenId>>(), row.at("ref").get<std::string>());
      s.chosen = TokenSeq(row.at("chosen_ids").get<std::vector<TokenId>>(), row.at("chosen").get<std::string>());
      if (!row.at("chosen_index").is_null()) s.chosen_index = row.at("chosen_index").get<std::size_t>();
      s.scores = row.at("scores").get<std::vector<double>>();
      s.sentence_bleu = row.at("sentence_bleu").get<double>();
      s.seconds = row.value("seconds", 0.0);
      r.per_sentence.push_back(std::move(s));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig(std::string("malformed report: ") + e.what());
  }
}

void RerankReport::save(const std::filesystem::path& path, const Vocabulary& vocab) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json(vocab).dump(2) << '\n';
}

RerankReport RerankReport::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidConfig(std::string("malformed report: ") + e.what());
  }
}

CandidateSet eval_candidates(const BaseTranslator& base, const SentencePair& pair, std::size_t i,
                             const EvalConfig& cfg) {
  return sample(base, pair.source, cfg.k, cfg.temperature, derive_seed(cfg.seed, {0xE7A1, i}), &pair.reference);
}

std::vector<RerankReport> evaluate_all(const ParallelCorpus& corpus, const std::vector<Strategy>& strategies,
                                       const Models& models, const EvalConfig& cfg) {
  if (corpus.split() == Split::Train) throw InvalidConfig("evaluate: expected a held-out split");
  if (corpus.empty()) throw EmptyInput("evaluate: empty corpus");
  if (models.base == nullptr) throw MissingModel("evaluate needs a base model");
  for (const auto& s : strategies) s.validate();
  bool any_sampling = false;
  for (const auto& s : strategies) any_sampling = any_sampling || s.uses_candidates();
  if (any_sampling && cfg.k < 1) throw InvalidConfig("evaluate: k must be >= 1");

  const std::size_t n = corpus.size();
  std::vector<RerankReport> reports(strategies.size());
  for (std::size_t s = 0; s < strategies.size(); ++s) {
    reports[s].strategy = strategies[s].name();
    reports[s].corpus = corpus.language_pair() + "/" + to_string(corpus.split());
    reports[s].k = strategies[s].uses_candidates() ? cfg.k : 0;
    reports[s].per_sentence.resize(n);
  }

  parallel_for(n, [&](std::size_t i) {
    const auto& pair = corpus[i];
    CandidateSet cands;
    cands.source = pair.source;
    double sampling_seconds = 0.0;
    if (any_sampling) {
      const auto start = Clock::now();
      cands = eval_candidates(*models.base, pair, i, cfg);
      sampling_seconds = seconds_since(start);
    }
    for (std::size_t s = 0; s < strategies.size(); ++s) {
      const auto start = Clock::now();
      Selection sel = select(cands, strategies[s], models, &pair.reference);
      const double own = seconds_since(start);
      SentenceResult& r = reports[s].per_sentence[i];
      r.source = pair.source;
      r.reference = pair.reference;
      r.chosen = with_surface(std::move(sel.chosen), models.base->vocab());
      r.chosen_index = sel.index;
      r.scores = std::move(sel.scores);
      r.sentence_bleu = sentence_bleu(r.chosen, pair.reference);
      r.seconds = own + (strategies[s].uses_candidates() ? sampling_seconds : 0.0);
    }
  });

  for (auto& report : reports) {
    report.bleu = corpus_bleu(report.chosen(), report.references());
    double total = 0.0;
    for (const auto& r : report.per_sentence) total += r.seconds;
    report.mean_seconds_per_sentence = total / static_cast<double>(n);
  }
  return reports;
}

RerankReport evaluate(const ParallelCorpus& corpus, const Strategy& strategy, const Models& models,
                      const EvalConfig& cfg) {
  return std::move(evaluate_all(corpus, {strategy}, models, cfg).front());
}

}  // namespace ebr
