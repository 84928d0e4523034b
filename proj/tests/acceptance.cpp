// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "ebr/analysis.hpp"
#include "ebr/channel.hpp"
#include "ebr/cli.hpp"
#include "ebr/error.hpp"
#include "ebr/lm.hpp"
#include "ebr/seq2seq.hpp"
#include "ebr/training.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace ebr;
using testing::seq;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const char* name, const std::function<Outcome()>& check) {
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::printf("[%s] %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome c1_bleu() {
  const auto t0 = Clock::now();
  Rng rng(2024);
  double worst = 0;
  std::vector<TokenSeq> hyps, refs;
  oracle::Counts total;
  for (int i = 0; i < 50; ++i) {
    std::vector<TokenId> h, r;
    const std::size_t hl = rng.below(9), rl = 1 + rng.below(8);
    for (std::size_t j = 0; j < hl; ++j) h.push_back(static_cast<TokenId>(5 + rng.below(6)));
    for (std::size_t j = 0; j < rl; ++j) r.push_back(static_cast<TokenId>(5 + rng.below(6)));
    const auto counts = oracle::count(testing::ints(h), testing::ints(r), 4);
    oracle::add(total, counts);
    worst = std::max(worst, std::abs(sentence_bleu(seq(h), seq(r)) - oracle::bleu(counts, 1.0)));
    worst = std::max(worst, std::abs(sentence_bleu(seq(h), seq(r), BleuConfig::corpus()) - oracle::bleu(counts, 0)));
    hyps.push_back(seq(h));
    refs.push_back(seq(r));
  }
  worst = std::max(worst, std::abs(corpus_bleu(hyps, refs) - oracle::bleu(total, 0)));
  const double secs = seconds_since(t0);
  return {worst <= 1e-9 && secs < 1.0, fmt("max |diff| %.2e over 50 pairs, %.3f s", worst, secs)};
}

Outcome c2_gradients() {
  const auto t0 = Clock::now();
  const auto task = testing::task(TaskKind::Cipher, 12);

  EnergyConfig ec;
  ec.embed_dim = 6;
  ec.hidden_dim = 10;
  ec.l2 = 0.1;
  ec.seed = 17;
  EnergyModel e(12, ec);
  const std::vector<std::pair<TokenSeq, double>> batch = {{seq({5, 6, 7, 8}), 1.0}, {seq({9, 11, 10}), -1.0}};
  auto energy_obj = [&] {
    double f = e.l2_penalty();
    for (const auto& [y, w] : batch) f += w * e.energy(y);
    return f;
  };
  const auto ge = energy_grad(e, batch);
  Rng rng(31);
  std::vector<std::size_t> ecoords;
  for (int i = 0; i < 20; ++i) ecoords.push_back(rng.below(e.params().num_scalars()));
  const double energy_err = testing::max_relative_error(e.params(), ge, ecoords, energy_obj);

  Seq2SeqConfig sc;
  sc.embed_dim = 6;
  sc.hidden_dim = 8;
  sc.attn_dim = 5;
  sc.seed = 19;
  NeuralSeq2Seq s(task.vocab(), sc);
  const std::vector<std::pair<TokenSeq, TokenSeq>> pairs = {{seq({5, 6, 7}), seq({8, 9})}, {seq({10, 11}), seq({7, 5, 6})}};
  auto s2s_obj = [&] {
    double l = 0;
    for (const auto& [x, y] : pairs) l += s.loss(x, y, nullptr);
    return l;
  };
  ParamStore gs = s.params().zeros_like();
  for (const auto& [x, y] : pairs) s.loss(x, y, &gs);
  std::vector<std::size_t> scoords;
  for (int i = 0; i < 20; ++i) scoords.push_back(rng.below(s.params().num_scalars()));
  const double s2s_err = testing::max_relative_error(s.params(), gs, scoords, s2s_obj);

  const double secs = seconds_since(t0);
  return {energy_err <= 1e-4 && s2s_err <= 1e-4 && secs < 10.0,
          fmt("energy %.2e, seq2seq %.2e (20 coords each), %.2f s", energy_err, s2s_err, secs)};
}

Outcome c3_sampler() {
  const ChannelModel m(testing::task(TaskKind::NoisyCopy), testing::channel_params(0.5, 0.5, 0, 0));
  const std::vector<TokenId> z = {5, 6, 7};
  std::map<std::vector<TokenId>, double> expected;
  for (int mask = 0; mask < 8; ++mask) {
    std::vector<TokenId> y;
    for (int j = 0; j < 3; ++j) y.push_back((mask >> j) & 1 ? m.confusions(z[j]).front() : z[j]);
    expected[y] = std::exp(m.logprob(seq(z), seq(y)));
  }
  const int n = 10000;
  const auto cands = sample(m, seq(z), n, 1.0, 99);
  std::map<std::vector<TokenId>, double> observed;
  for (const auto& c : cands.candidates) {
    if (!expected.count(c.hypothesis.tokens)) return {false, "sample outside the support"};
    observed[c.hypothesis.tokens] += 1;
  }
  double chi2 = 0;
  for (const auto& [y, p] : expected) chi2 += (observed[y] - p * n) * (observed[y] - p * n) / (p * n);
  const double p = testing::chi_square_p(chi2, static_cast<double>(expected.size() - 1));
  return {p > 0.01, fmt("chi2 %.2f, dof %zu, p %.3f", chi2, expected.size() - 1, p)};
}

Outcome c4_resampling() {
  const double T = 1000.0;
  const auto p = resample_distribution(std::vector<double>{0.0, T * std::log(3.0)}, T);
  const double exact_err = std::max(std::abs(p[0] - 0.75), std::abs(p[1] - 0.25));

  const std::vector<double> e = {0.0, 400.0, 900.0, -250.0};
  const auto law = resample_distribution(e, T);
  double law_err = 0;
  double z = 0;
  for (double x : e) z += std::exp(-x / T);
  for (std::size_t i = 0; i < e.size(); ++i) law_err = std::max(law_err, std::abs(law[i] - std::exp(-e[i] / T) / z));

  Rng rng(8);
  const int n = 20000;
  std::vector<double> counts(e.size(), 0);
  for (int i = 0; i < n / 2; ++i) {
    const auto [a, b] = resample_indices(e, T, rng);
    counts[a] += 1;
    counts[b] += 1;
  }
  double chi2 = 0;
  for (std::size_t i = 0; i < e.size(); ++i) chi2 += (counts[i] - law[i] * n) * (counts[i] - law[i] * n) / (law[i] * n);
  const double pval = testing::chi_square_p(chi2, 3);
  return {exact_err < 1e-12 && law_err < 1e-12 && pval > 0.01,
          fmt("(0.75, 0.25) err %.1e, Boltzmann err %.1e, empirical p %.3f", exact_err, law_err, pval)};
}

Outcome c5_hinge() {
  bool ok = hinge_loss(30, 30, 5, 5, 10) == 0.0;
  ok = ok && hinge_loss(40, 30, -50, 20, 10) == 30.0;
  ok = ok && hinge_loss(40, 30, -200, 0, 10) == 0.0;
  const double margin = 10 * (40 - 30);
  const double below = hinge_loss(40, 30, 0.0, margin - 1e-6, 10);
  ok = ok && below > 0.0 && std::abs(below - 1e-6) < 1e-9;
  ok = ok && hinge_loss(40, 30, 0.0, margin, 10) == 0.0;
  ok = ok && hinge_loss(40, 30, 0.0, margin + 1e-6, 10) == 0.0;
  bool threw = false;
  try {
    hinge_loss(30, 40, 0, 0, 10);
  } catch (const ContractViolation&) {
    threw = true;
  }
  return {ok && threw, fmt("examples and kink at margin %.0f +- 1e-6", margin)};
}

// Shared setup of criteria 7-9.
struct Experiment {
  SyntheticTask task{TaskKind::Cipher};
  ChannelModel base{task, ChannelParams{}};
  ParallelCorpus train = gen_synthetic(task, 2000, 11, Split::Train);
  ParallelCorpus test = gen_synthetic(task, 200, 11, Split::Test);
  EvalConfig eval{50, 1.0, 9};

  EnergyModel train_energy(double gamma) const {
    EnergyConfig ec;
    ec.embed_dim = 32;
    ec.seed = 3;
    EnergyModel m(task.vocab().size(), ec);
    RankTrainConfig rc;
    rc.k = 50;
    rc.batch_size = 16;
    rc.steps_per_epoch = 2000;
    rc.gamma = gamma;
    rc.seed = 5;
    rank_train(m, MultiCorpusSchedule(train, base), rc);
    return m;
  }

  double ebr_bleu(const EnergyModel& m) const {
    Models models;
    models.base = &base;
    models.energy = &m;
    return evaluate(test, Strategy::ebr(), models, eval).bleu;
  }
};

Outcome c6_oracle(const Experiment& x, const EnergyModel& energy) {
  const auto lm = train_ngram(x.train.references(), 3, 1.0, x.task.vocab().size());
  const auto mlm = BidirectionalNgramScorer::train(x.train.references(), 2, 1.0, x.task.vocab().size());
  EnergyConfig nc;
  nc.embed_dim = 16;
  nc.hidden_dim = 32;
  EnergyModel nce(x.task.vocab().size(), nc);
  nce_train(nce, gen_synthetic(x.task, 300, 12, Split::Train), x.base, NceConfig{});

  Models m;
  m.base = &x.base;
  m.lm = &lm;
  m.mlm = &mlm;
  m.energy = &energy;
  m.nce_energy = &nce;
  const std::vector<Strategy> strategies = {Strategy::sample(), Strategy::lm_fusion(), Strategy::mlm_fusion(),
                                            Strategy::ebr(), Strategy::nce_ebr(), Strategy::oracle()};
  const auto reports = evaluate_all(x.test, strategies, m, x.eval);
  const auto& oracle = reports.back();
  std::size_t violations = 0, checked = 0;
  for (std::size_t s = 0; s + 1 < reports.size(); ++s)
    for (std::size_t i = 0; i < x.test.size(); ++i) {
      ++checked;
      if (reports[s].per_sentence[i].sentence_bleu > oracle.per_sentence[i].sentence_bleu) ++violations;
    }
  return {violations == 0, fmt("%zu violations in %zu sentence comparisons over 5 strategies", violations, checked)};
}

Outcome c7_ebr(const Experiment& x, const EnergyModel& energy) {
  Models m;
  m.base = &x.base;
  m.energy = &energy;
  const auto reports = evaluate_all(x.test, {Strategy::sample(), Strategy::ebr()}, m, x.eval);
  const double sample_bleu = reports[0].bleu, ebr_bleu = reports[1].bleu;
  const auto rho_base = spearman_distribution(x.test, x.base, base_logprob_scorer(), x.eval.k, x.eval.seed);
  const auto rho_energy = spearman_distribution(x.test, x.base, energy_scorer(energy), x.eval.k, x.eval.seed);
  const bool pass = ebr_bleu >= sample_bleu + 1.0 && rho_energy.mean() > rho_base.mean();
  return {pass, fmt("EBR %.2f vs sample %.2f BLEU; mean rho energy %.3f vs base %.3f", ebr_bleu, sample_bleu,
                    rho_energy.mean(), rho_base.mean())};
}

Outcome c8_gamma(const Experiment& x, double bleu_gamma0) {
  std::string detail = fmt("gamma 0: %.2f", bleu_gamma0);
  double bleu_gamma1 = 0;
  for (double g : {0.25, 0.75, 1.0}) {
    const double b = x.ebr_bleu(x.train_energy(g));
    detail += fmt(", %.2f: %.2f", g, b);
    if (g == 1.0) bleu_gamma1 = b;
  }
  return {bleu_gamma0 >= bleu_gamma1, detail};
}

Outcome c9_shuffle(const Experiment& x, const EnergyModel& energy) {
  const auto r = shuffle_energy_test(energy, x.test.references(), 3, 4);
  return {r.global_preference >= 0.70,
          fmt("global preference %.3f (local %.3f over %zu sentences)", r.global_preference, r.local_preference,
              r.local_evaluated)};
}

Outcome c10_stub() {
  const auto task = testing::task(TaskKind::NoisyCopy);
  const ChannelModel base(task, ChannelParams{});
  const auto test = gen_synthetic(task, 100, 21, Split::Test);
  Models m;
  m.base = &base;
  m.energy_stub = [](const Candidate& c) { return -*c.sentence_bleu; };
  const EvalConfig cfg{40, 1.0, 6};
  const auto reports = evaluate_all(test, {Strategy::ebr(), Strategy::oracle()}, m, cfg);
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto& a = reports[0].per_sentence[i];
    const auto& b = reports[1].per_sentence[i];
    if (a.chosen != b.chosen || a.chosen_index != b.chosen_index || a.sentence_bleu != b.sentence_bleu) ++mismatches;
  }
  const bool same_bleu = reports[0].bleu == reports[1].bleu;
  return {mismatches == 0 && same_bleu,
          fmt("%zu mismatching sentences of %zu; corpus BLEU %.6f vs %.6f", mismatches, test.size(), reports[0].bleu,
              reports[1].bleu)};
}

// ---------------------------------------------------------------------------
// Criterion 11

void strip_timing(json& j) {
  if (j.is_object()) {
    j.erase("seconds");
    j.erase("mean_seconds_per_sentence");
    for (auto& [k, v] : j.items()) strip_timing(v);
  } else if (j.is_array()) {
    for (auto& v : j) strip_timing(v);
  }
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string drop_timing_column(const std::string& csv) {
  std::stringstream in(csv);
  std::string line, out;
  long drop = -1;
  bool header = true;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (header) {
      for (std::size_t i = 0; i < cells.size(); ++i)
        if (cells[i] == "mean_seconds_per_sentence") drop = static_cast<long>(i);
      header = false;
    }
    if (drop >= 0 && drop < static_cast<long>(cells.size())) cells.erase(cells.begin() + drop);
    for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + cells[i];
    out += '\n';
  }
  return out;
}

std::string comparable(const fs::path& p) {
  const auto ext = p.extension();
  if (ext == ".json") {
    json j = json::parse(slurp(p));
    strip_timing(j);
    return j.dump();
  }
  if (ext == ".csv") return drop_timing_column(slurp(p));
  return slurp(p);
}

std::map<std::string, fs::path> files_under(const fs::path& root) {
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = e.path();
  return out;
}

Outcome c11_reproducible() {
  testing::TempDir dir("ebr_acceptance");
  const fs::path a = dir / "A", b = dir / "B", snaps = dir / "snaps";
  fs::create_directories(snaps);
  {
    std::ofstream cfg(dir / "small.json");
    cfg << R"({"seed": 17,
      "data": {"train_size": 300, "valid_size": 20, "test_size": 30},
      "energy": {"embed_dim": 16, "hidden_dim": 32},
      "train": {"k": 10, "steps_per_epoch": 20},
      "eval": {"k": 20},
      "analysis": {"k": 10}})";
  }

  struct Stage {
    std::string name;
    std::vector<std::string> flags;
  };
  const std::vector<Stage> stages = {
      {"gen-data", {"--config", (dir / "small.json").string()}},
      {"train-base", {}},
      {"train-lm", {}},
      {"train-energy", {}},
      {"train-energy", {"--strategy", "nce-ebr"}},
      {"evaluate", {"--strategy", "all"}},
      {"analyze", {}},
      {"sweep", {"--gamma", "0,0.5,1"}},
      {"rerank", {"--strategy", "ebr"}},
  };

  std::streambuf* saved = std::cout.rdbuf();
  std::ostringstream sink;
  std::cout.rdbuf(sink.rdbuf());
  auto restore = [&] { std::cout.rdbuf(saved); };

  {
    testing::ThreadsEnv env(1);
    for (std::size_t i = 0; i < stages.size(); ++i) {
      std::vector<std::string> args = {stages[i].name, "--out", a.string()};
      args.insert(args.end(), stages[i].flags.begin(), stages[i].flags.end());
      if (const int rc = cli::run(args); rc != 0) {
        restore();
        return {false, fmt("stage %s failed in run A with exit %d", stages[i].name.c_str(), rc)};
      }
      fs::copy_file(a / "snapshots" / (stages[i].name + ".json"), snaps / (std::to_string(i) + ".json"));
    }
  }
  {
    testing::ThreadsEnv env(3);
    for (std::size_t i = 0; i < stages.size(); ++i) {
      const std::vector<std::string> args = {stages[i].name, "--out", b.string(), "--config",
                                             (snaps / (std::to_string(i) + ".json")).string()};
      if (const int rc = cli::run(args); rc != 0) {
        restore();
        return {false, fmt("stage %s failed in run B with exit %d", stages[i].name.c_str(), rc)};
      }
    }
  }
  restore();

  const auto fa = files_under(a), fb = files_under(b);
  std::vector<std::string> differing;
  for (const auto& [rel, path] : fa) {
    const auto it = fb.find(rel);
    if (it == fb.end() || comparable(path) != comparable(it->second)) differing.push_back(rel);
  }
  for (const auto& [rel, path] : fb)
    if (!fa.count(rel)) differing.push_back(rel);
  std::string detail = fmt("%zu files compared across 1 and 3 threads, %zu differ", fa.size(), differing.size());
  for (std::size_t i = 0; i < differing.size() && i < 5; ++i) detail += (i ? ", " : ": ") + differing[i];
  return {differing.empty() && fa.size() > 20, detail};
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  report(1, "BLEU matches brute-force n-gram counting", c1_bleu);
  report(2, "analytic gradients match finite differences", c2_gradients);
  report(3, "channel sampler matches its distribution", c3_sampler);
  report(4, "resampling follows exp(-E/T)", c4_resampling);
  report(5, "hinge loss examples and kink", c5_hinge);

  const Experiment x;
  std::optional<EnergyModel> energy;
  double bleu_gamma0 = 0;
  try {
    energy.emplace(x.train_energy(0.0));
    bleu_gamma0 = x.ebr_bleu(*energy);
  } catch (const std::exception& e) {
    std::printf("energy training failed: %s\n", e.what());
  }
  auto needs_energy = [&](auto fn) {
    return [&, fn]() -> Outcome {
      if (!energy) return {false, "no trained energy model"};
      return fn();
    };
  };
  report(6, "oracle dominates every strategy", needs_energy([&] { return c6_oracle(x, *energy); }));
  report(7, "EBR beats sampling on the cipher task", needs_energy([&] { return c7_ebr(x, *energy); }));
  report(8, "gold mixing does not help", needs_energy([&] { return c8_gamma(x, bleu_gamma0); }));
  report(9, "energy prefers original order to shuffles", needs_energy([&] { return c9_shuffle(x, *energy); }));
  report(10, "stub energy of -BLEU equals the oracle", c10_stub);
  report(11, "pipeline reproducible from snapshots", c11_reproducible);

  std::printf("%d of 11 criteria failed, %.0f s\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
