#include "doctest.h"
#include "ebr/error.hpp"
#include "ebr/rerank.hpp"
#include "support.hpp"

using namespace ebr;
using testing::seq;

namespace {

struct World {
  SyntheticTask task = testing::task(TaskKind::Cipher);
  ChannelModel base{task, ChannelParams{}};
  ParallelCorpus train = gen_synthetic(task, 300, 1, Split::Train);
  ParallelCorpus test = gen_synthetic(task, 40, 1, Split::Test);
  NgramLM lm = train_ngram(train.references(), 3, 1.0, task.vocab().size());
  BidirectionalNgramScorer mlm = BidirectionalNgramScorer::train(train.references(), 2, 1.0, task.vocab().size());
  EnergyModel energy{task.vocab().size(), [] {
                       EnergyConfig c;
                       c.embed_dim = 8;
                       c.hidden_dim = 16;
                       return c;
                     }()};

  Models models() const {
    Models m;
    m.base = &base;
    m.lm = &lm;
    m.mlm = &mlm;
    m.energy = &energy;
    m.nce_energy = &energy;
    return m;
  }
};

CandidateSet three_candidates() {
  CandidateSet c;
  c.source = seq({5, 6});
  c.candidates.push_back({seq({5}), -3.0, 10.0});
  c.candidates.push_back({seq({6}), -1.0, 30.0});
  c.candidates.push_back({seq({7}), -2.0, 20.0});
  return c;
}

std::vector<Strategy> sampling_strategies() {
  return {Strategy::sample(), Strategy::lm_fusion(), Strategy::mlm_fusion(), Strategy::ebr(), Strategy::nce_ebr(),
          Strategy::oracle()};
}

}  // namespace

TEST_CASE("strategy names round-trip") {
  for (const char* name : {"beam", "sample", "lm", "mlm", "ebr", "nce-ebr", "oracle"})
    CHECK(Strategy::parse(name).name() == name);
  CHECK_THROWS_AS(Strategy::parse("mbr"), InvalidConfig);
  CHECK_THROWS_AS(Strategy::beam(0).validate(), InvalidConfig);
  CHECK_THROWS_AS(Strategy::lm_fusion(-0.1).validate(), InvalidConfig);
}

TEST_CASE("ebr picks the lowest energy") {
  const auto c = three_candidates();
  const std::vector<double> energies = {-1.0, 0.0, 2.0};
  Models m;
  m.energy_stub = [&](const Candidate& cand) { return energies[static_cast<std::size_t>(cand.hypothesis.tokens[0] - 5)]; };
  const auto sel = select(c, Strategy::ebr(), m);
  CHECK(*sel.index == 0);
  CHECK(sel.scores == energies);
  CHECK(rerank_one(c, Strategy::ebr(), m) == seq({5}));
}

TEST_CASE("sample picks the highest base log-probability, oracle the highest BLEU") {
  const auto c = three_candidates();
  Models m;
  CHECK(*select(c, Strategy::sample(), m).index == 1);
  const auto ref = seq({6});
  CHECK(*select(c, Strategy::oracle(), m, &ref).index == 1);
}

TEST_CASE("ties go to the lowest index") {
  CandidateSet c;
  for (int i = 0; i < 4; ++i) c.candidates.push_back({seq({5 + i}), -1.0, 0.0});
  Models m;
  m.energy_stub = [](const Candidate&) { return 0.5; };
  CHECK(*select(c, Strategy::sample(), m).index == 0);
  CHECK(*select(c, Strategy::ebr(), m).index == 0);
}

TEST_CASE("missing models and references") {
  const auto c = three_candidates();
  Models none;
  CHECK_THROWS_AS(select(c, Strategy::lm_fusion(), none), MissingModel);
  CHECK_THROWS_AS(select(c, Strategy::mlm_fusion(), none), MissingModel);
  CHECK_THROWS_AS(select(c, Strategy::ebr(), none), MissingModel);
  CHECK_THROWS_AS(select(c, Strategy::nce_ebr(), none), MissingModel);
  CHECK_THROWS_AS(select(c, Strategy::beam(), none), MissingModel);
  CHECK_THROWS_AS(select(c, Strategy::oracle(), none), MissingReference);
  CHECK_THROWS_AS(select(CandidateSet{}, Strategy::sample(), none), InsufficientCandidates);
}

TEST_CASE("fusion with zero weight collapses to base log-probability ranking") {
  World w;
  const auto models = w.models();
  for (std::size_t i = 0; i < w.test.size(); ++i) {
    const auto cands = eval_candidates(w.base, w.test[i], i, {30, 1.0, 2});
    const auto base = select(cands, Strategy::sample(), models);
    CHECK(select(cands, Strategy::lm_fusion(0.0), models).index == base.index);
    CHECK(select(cands, Strategy::mlm_fusion(0.0), models).index == base.index);
  }
}

TEST_CASE("fusion scores") {
  World w;
  const auto models = w.models();
  const auto cands = eval_candidates(w.base, w.test[0], 0, {5, 1.0, 2});
  auto s = Strategy::lm_fusion(0.5);
  const auto sel = select(cands, s, models);
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const auto& c = cands.candidates[i];
    if (c.hypothesis.empty()) continue;
    CHECK(sel.scores[i] == doctest::Approx(c.base_logprob + 0.5 * lm_logprob(w.lm, c.hypothesis)));
  }
  s.length_normalize = true;
  const auto norm = select(cands, s, models);
  const auto& c0 = cands.candidates[0];
  if (!c0.hypothesis.empty())
    CHECK(norm.scores[0] == doctest::Approx(c0.base_logprob / static_cast<double>(c0.hypothesis.size() + 1) +
                                            0.5 * lm_logprob(w.lm, c0.hypothesis)));
}

TEST_CASE("oracle dominates every strategy on every sentence") {
  World w;
  auto strategies = sampling_strategies();
  strategies.push_back(Strategy::beam());
  const auto reports = evaluate_all(w.test, strategies, w.models(), {30, 1.0, 4});
  const auto& oracle = reports[5];
  REQUIRE(oracle.strategy == "oracle");
  for (std::size_t i = 0; i < w.test.size(); ++i)
    for (std::size_t s = 0; s < reports.size(); ++s) {
      if (reports[s].strategy == "beam") continue;
      CHECK(oracle.per_sentence[i].sentence_bleu >= reports[s].per_sentence[i].sentence_bleu);
    }
}

TEST_CASE("choices are invariant under positive affine rescaling of energies") {
  World w;
  for (std::size_t i = 0; i < 10; ++i) {
    const auto cands = eval_candidates(w.base, w.test[i], i, {25, 1.0, 6});
    Models plain = w.models();
    const auto base_choice = select(cands, Strategy::ebr(), plain).index;
    for (auto [a, b] : std::vector<std::pair<double, double>>{{3.0, 0.0}, {0.25, -7.0}, {1000.0, 5.0}}) {
      Models scaled = w.models();
      scaled.energy_stub = [&, a = a, b = b](const Candidate& c) { return a * candidate_energy(w.energy, c.hypothesis) + b; };
      CHECK(select(cands, Strategy::ebr(), scaled).index == base_choice);
    }
  }
}

TEST_CASE("stub energy of negative sentence BLEU reproduces the oracle") {
  World w;
  Models m = w.models();
  m.energy_stub = [](const Candidate& c) { return -*c.sentence_bleu; };
  const EvalConfig cfg{40, 1.0, 8};
  const auto ebr = evaluate(w.test, Strategy::ebr(), m, cfg);
  const auto oracle = evaluate(w.test, Strategy::oracle(), m, cfg);
  CHECK(ebr.bleu == oracle.bleu);
  for (std::size_t i = 0; i < w.test.size(); ++i) {
    CHECK(ebr.per_sentence[i].chosen == oracle.per_sentence[i].chosen);
    CHECK(ebr.per_sentence[i].chosen_index == oracle.per_sentence[i].chosen_index);
    CHECK(ebr.per_sentence[i].sentence_bleu == oracle.per_sentence[i].sentence_bleu);
  }
}

TEST_CASE("evaluation is deterministic, shares candidates and ignores the worker count") {
  World w;
  const EvalConfig cfg{20, 1.0, 3};
  std::vector<RerankReport> one, many;
  {
    testing::ThreadsEnv env(1);
    one = evaluate_all(w.test, sampling_strategies(), w.models(), cfg);
  }
  {
    testing::ThreadsEnv env(3);
    many = evaluate_all(w.test, sampling_strategies(), w.models(), cfg);
  }
  for (std::size_t s = 0; s < one.size(); ++s)
    CHECK(one[s].to_json(w.task.vocab(), false) == many[s].to_json(w.task.vocab(), false));

  const auto single = evaluate(w.test, Strategy::ebr(), w.models(), cfg);
  CHECK(single.to_json(w.task.vocab(), false) == one[3].to_json(w.task.vocab(), false));
  for (std::size_t i = 0; i < w.test.size(); ++i) {
    const auto cands = eval_candidates(w.base, w.test[i], i, cfg);
    CHECK(cands.candidates[*one[0].per_sentence[i].chosen_index].hypothesis == one[0].per_sentence[i].chosen);
  }
}

TEST_CASE("evaluate rejects the training split") {
  World w;
  CHECK_THROWS_AS(evaluate(w.train, Strategy::sample(), w.models(), {}), InvalidConfig);
}

TEST_CASE("report JSON round-trip") {
  World w;
  const auto r = evaluate(w.test, Strategy::mlm_fusion(), w.models(), {10, 1.0, 1});
  const auto j = r.to_json(w.task.vocab());
  CHECK(j.contains("mean_seconds_per_sentence"));
  CHECK(j["per_sentence"].size() == w.test.size());
  CHECK(j["per_sentence"][0].contains("src"));
  CHECK(j["per_sentence"][0].contains("chosen"));
  CHECK(j["per_sentence"][0].contains("scores"));
  CHECK_FALSE(r.to_json(w.task.vocab(), false).contains("mean_seconds_per_sentence"));

  testing::TempDir dir("ebr_report");
  r.save(dir / "r.json", w.task.vocab());
  const auto back = RerankReport::load(dir / "r.json");
  CHECK(back.strategy == "mlm");
  CHECK(back.bleu == r.bleu);
  for (std::size_t i = 0; i < w.test.size(); ++i) {
    CHECK(back.per_sentence[i].chosen == r.per_sentence[i].chosen);
    CHECK(back.per_sentence[i].reference == r.per_sentence[i].reference);
    CHECK(back.per_sentence[i].scores == r.per_sentence[i].scores);
  }
}

TEST_CASE("ebr time per sentence grows with k") {
  World w;
  EnergyConfig c;
  c.embed_dim = 32;
  EnergyModel big(w.task.vocab().size(), c);
  Models m = w.models();
  m.energy = &big;
  double prev = 0.0;
  for (std::size_t k : {2, 40, 400}) {
    const auto r = evaluate(w.test, Strategy::ebr(), m, {k, 1.0, 1});
    CHECK(r.mean_seconds_per_sentence > prev);
    prev = r.mean_seconds_per_sentence;
  }
}
