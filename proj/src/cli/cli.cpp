#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "ebr/analysis.hpp"
#include "ebr/channel.hpp"
#include "ebr/cli.hpp"
#include "ebr/error.hpp"
#include "ebr/parallel.hpp"
#include "ebr/seq2seq.hpp"
#include "ebr/training.hpp"

namespace ebr::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Flags {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> k;
  std::optional<double> temp, alpha, T, lambda;
  std::optional<std::string> gamma, strategy, task;
  std::string out = "runs/default";
  std::optional<std::string> input, reference;
};

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw InvalidConfig("not a number: " + item);
    }
  }
  if (out.empty()) throw InvalidConfig("empty list");
  return out;
}

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

template <typename Fn>
void write_text(const fs::path& path, Fn&& fn) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  fn(out);
}

std::string format_real(double v) {
  std::ostringstream ss;
  ss << std::setprecision(6) << v;
  return ss.str();
}

/// Resolved configuration: defaults < run-dir config < --config file < flags.
json resolve(const std::string& stage, const Flags& f) {
  json cfg = default_config();
  const fs::path current = fs::path(f.out) / "config.json";
  if (fs::exists(current)) merge_config(cfg, load_config_file(current));
  if (f.config) merge_config(cfg, load_config_file(*f.config));

  const bool trains = stage == "train-energy" || stage == "sweep";
  const bool evals = stage != "train-energy";
  if (f.seed) cfg["seed"] = *f.seed;
  if (f.task) cfg["task"] = *f.task;
  if (f.alpha) cfg["train"]["alpha"] = *f.alpha;
  if (f.T) cfg["train"]["T"] = *f.T;
  if (f.lambda) cfg["eval"]["lambda"] = *f.lambda;
  if (f.k) {
    if (trains) cfg["train"]["k"] = *f.k;
    if (evals) cfg["eval"]["k"] = *f.k;
    if (stage == "analyze") cfg["analysis"]["k"] = *f.k;
  }
  if (f.temp) {
    if (trains) cfg["train"]["sample_temp"] = *f.temp;
    if (evals) cfg["eval"]["temp"] = *f.temp;
  }
  if (f.gamma) {
    const auto values = parse_list(*f.gamma);
    if (stage == "sweep") {
      cfg["sweep"]["gamma"] = values;
    } else {
      if (values.size() != 1) throw InvalidConfig("--gamma takes a single value outside sweep");
      cfg["train"]["gamma"] = values.front();
    }
  }
  if (f.strategy) {
    if (stage == "train-energy") {
      if (*f.strategy == "ebr") cfg["energy"]["method"] = "rank";
      else if (*f.strategy == "nce-ebr") cfg["energy"]["method"] = "nce";
      else throw InvalidConfig("train-energy trains ebr or nce-ebr, not " + *f.strategy);
    } else {
      cfg["eval"]["strategy"] = *f.strategy;
    }
  }
  task_from_string(cfg["task"].get<std::string>());
  validate_config(cfg);
  return cfg;
}

// ---------------------------------------------------------------------------
// Run directory

class RunDir {
 public:
  RunDir(fs::path root, json cfg) : root_(std::move(root)), cfg_(std::move(cfg)) {}

  const json& cfg() const { return cfg_; }
  const fs::path& root() const { return root_; }
  fs::path path(const std::string& rel) const { return root_ / rel; }
  std::uint64_t seed(std::uint64_t purpose) const { return derive_seed(cfg_["seed"].get<std::uint64_t>(), {purpose}); }

  Vocabulary vocab() const {
    require("vocab.json", "run gen-data first");
    return Vocabulary::load(path("vocab.json"));
  }

  SyntheticTask task() const {
    require("task.json", "run gen-data with synthetic data first");
    std::ifstream in(path("task.json"));
    std::stringstream ss;
    ss << in.rdbuf();
    return SyntheticTask::from_json(ss.str());
  }

  ParallelCorpus split(const Vocabulary& vocab, Split s) const {
    const std::string name = to_string(s);
    require("data/" + name + ".src", "run gen-data first");
    const auto raw = read_parallel(path("data/" + name + ".src"), path("data/" + name + ".ref"));
    std::ifstream meta(path("data/meta.json"));
    const std::string lp = meta ? json::parse(meta).value("language_pair", "src-tgt") : "src-tgt";
    return ParallelCorpus::from_text(raw.sources, raw.references, vocab, lp, s);
  }

  Checkpoint checkpoint(const std::string& rel) const {
    if (!fs::exists(path(rel))) throw MissingModel("missing checkpoint " + path(rel).string());
    return Checkpoint::load(path(rel));
  }

  bool has(const std::string& rel) const { return fs::exists(path(rel)); }

 private:
  void require(const std::string& rel, const std::string& hint) const {
    if (!fs::exists(path(rel))) throw MissingModel("missing " + path(rel).string() + " (" + hint + ")");
  }

  fs::path root_;
  json cfg_;
};

Split split_of(const json& v) { return split_from_string(v.get<std::string>()); }

EnergyConfig energy_config(const RunDir& run) {
  const auto& e = run.cfg()["energy"];
  EnergyConfig c;
  c.embed_dim = e["embed_dim"].get<std::size_t>();
  c.hidden_dim = e["hidden_dim"].get<std::size_t>();
  c.pooling = pooling_from_string(e["pooling"].get<std::string>());
  c.freeze_embeddings = e["freeze_embeddings"].get<bool>();
  c.l2 = e["l2"].get<double>();
  c.seed = run.seed(0xE1);
  return c;
}

RankTrainConfig rank_config(const RunDir& run) {
  const auto& t = run.cfg()["train"];
  RankTrainConfig c;
  c.alpha = t["alpha"].get<double>();
  c.temperature = t["T"].get<double>();
  c.k = t["k"].get<std::size_t>();
  c.gamma = t["gamma"].get<double>();
  c.adam.lr = t["lr"].get<double>();
  c.batch_size = t["batch_size"].get<std::size_t>();
  c.epochs = t["epochs"].get<int>();
  c.steps_per_epoch = t["steps_per_epoch"].get<std::size_t>();
  c.sample_temperature = t["sample_temp"].get<double>();
  c.cache_candidates = t["cache_candidates"].get<bool>();
  c.seed = run.seed(0xE2);
  return c;
}

EvalConfig eval_config(const RunDir& run) {
  const auto& e = run.cfg()["eval"];
  return {e["k"].get<std::size_t>(), e["temp"].get<double>(), run.seed(0xE3)};
}

Strategy strategy_from(const RunDir& run, const std::string& name) {
  Strategy s = Strategy::parse(name);
  const auto& e = run.cfg()["eval"];
  s.beam_width = e["beam_width"].get<std::size_t>();
  s.lambda = e["lambda"].get<double>();
  s.length_normalize = e["length_normalize"].get<bool>();
  return s;
}

/// Models a strategy list needs, loaded from the run directory.
struct LoadedModels {
  std::unique_ptr<BaseTranslator> base;
  std::optional<NgramLM> lm;
  std::unique_ptr<MaskedScorer> mlm;
  std::optional<EnergyModel> energy, nce_energy;

  Models view() const {
    Models m;
    m.base = base.get();
    m.lm = lm ? &*lm : nullptr;
    m.mlm = mlm.get();
    m.energy = energy ? &*energy : nullptr;
    m.nce_energy = nce_energy ? &*nce_energy : nullptr;
    return m;
  }
};

LoadedModels load_models(const RunDir& run, const Vocabulary& vocab, const std::vector<Strategy>& strategies) {
  LoadedModels lm;
  lm.base = load_translator(run.checkpoint("base.ckpt"), vocab);
  auto check_ref = [&](const Checkpoint& ck) {
    if (ck.vocab_ref != vocab.fingerprint())
      throw VocabularyMismatch("checkpoint was built for another vocabulary");
    return ck;
  };
  for (const auto& s : strategies) {
    if (s.kind == StrategyKind::LmFusion && !lm.lm)
      lm.lm = NgramLM::from_checkpoint(check_ref(run.checkpoint("lm.ckpt")));
    if (s.kind == StrategyKind::MlmFusion && !lm.mlm) lm.mlm = load_masked_scorer(check_ref(run.checkpoint("mlm.ckpt")));
    if (s.kind == StrategyKind::Ebr && !lm.energy)
      lm.energy = EnergyModel::from_checkpoint(check_ref(run.checkpoint("energy.ckpt")));
    if (s.kind == StrategyKind::NceEbr && !lm.nce_energy)
      lm.nce_energy = EnergyModel::from_checkpoint(check_ref(run.checkpoint("nce_energy.ckpt")));
  }
  return lm;
}

// ---------------------------------------------------------------------------
// Stages

void gen_data(const RunDir& run) {
  const auto& d = run.cfg()["data"];
  fs::create_directories(run.path("data"));
  std::vector<std::pair<Split, ParallelCorpus>> splits;
  Vocabulary vocab;
  std::string language_pair;

  if (d["source"] == "synthetic") {
    SyntheticTaskOptions o;
    o.vocab_size = d["vocab_size"].get<std::size_t>();
    o.min_len = d["min_len"].get<std::size_t>();
    o.max_len = d["max_len"].get<std::size_t>();
    o.structure_seed = d["structure_seed"].get<std::uint64_t>();
    SyntheticTask task(task_from_string(run.cfg()["task"].get<std::string>()), o);
    const std::uint64_t seed = run.seed(0xDA7A);
    splits.emplace_back(Split::Train, gen_synthetic(task, d["train_size"].get<std::size_t>(), seed, Split::Train));
    if (d["valid_size"].get<std::size_t>() > 0)
      splits.emplace_back(Split::Valid, gen_synthetic(task, d["valid_size"].get<std::size_t>(), seed, Split::Valid));
    splits.emplace_back(Split::Test, gen_synthetic(task, d["test_size"].get<std::size_t>(), seed, Split::Test));
    vocab = task.vocab();
    language_pair = task.language_pair();
    std::ofstream(run.path("task.json")) << task.to_json() << '\n';
  } else {
    language_pair = d["language_pair"].get<std::string>();
    std::vector<std::pair<Split, RawParallel>> raw;
    for (Split s : {Split::Train, Split::Valid, Split::Test}) {
      const std::string name = to_string(s);
      const std::string src = d[name + "_src"].get<std::string>();
      const std::string ref = d[name + "_ref"].get<std::string>();
      if (src.empty() && s == Split::Valid) continue;
      if (src.empty() || ref.empty()) throw InvalidConfig("data." + name + "_src and _ref are required");
      raw.emplace_back(s, read_parallel(src, ref));
    }
    std::vector<std::string> text = raw.front().second.sources;
    text.insert(text.end(), raw.front().second.references.begin(), raw.front().second.references.end());
    vocab = Vocabulary::build(text);
    const std::size_t merges = d["bpe_merges"].get<std::size_t>();
    if (merges > 0) {
      const auto words = ParallelCorpus::from_text(raw.front().second.sources, raw.front().second.references, vocab,
                                                   language_pair, Split::Train);
      vocab = learn_bpe(words, merges);
    }
    for (auto& [s, r] : raw)
      splits.emplace_back(s, ParallelCorpus::from_text(r.sources, r.references, vocab, language_pair, s));
  }

  vocab.save(run.path("vocab.json"));
  write_json(run.path("data/meta.json"), {{"language_pair", language_pair}});
  json sizes = json::object();
  for (const auto& [s, corpus] : splits) {
    const std::string name = to_string(s);
    write_parallel(corpus, vocab, run.path("data/" + name + ".src"), run.path("data/" + name + ".ref"));
    sizes[name] = corpus.size();
  }
  std::cout << "wrote " << sizes.dump() << " pairs to " << run.path("data").string() << "\n";
}

void train_base(const RunDir& run) {
  const auto& b = run.cfg()["base"];
  const Vocabulary vocab = run.vocab();
  if (b["kind"] == "channel") {
    ChannelParams p;
    p.p_copy = b["p_copy"].get<double>();
    p.p_substitute = b["p_substitute"].get<double>();
    p.p_insert = b["p_insert"].get<double>();
    p.p_delete = b["p_delete"].get<double>();
    p.substitution_set = b["substitution_set"].get<std::size_t>();
    p.confusion_seed = b["confusion_seed"].get<std::uint64_t>();
    ChannelModel model(run.task(), p);
    model.to_checkpoint().save(run.path("base.ckpt"));
    std::cout << "wrote channel base model to " << run.path("base.ckpt").string() << "\n";
    return;
  }
  Seq2SeqConfig mc;
  mc.embed_dim = b["embed_dim"].get<std::size_t>();
  mc.hidden_dim = b["hidden_dim"].get<std::size_t>();
  mc.attn_dim = b["attn_dim"].get<std::size_t>();
  mc.seed = run.seed(0xB1);
  NeuralSeq2Seq model(vocab, mc);
  TrainConfig tc;
  tc.epochs = b["epochs"].get<int>();
  tc.batch_size = b["batch_size"].get<std::size_t>();
  tc.adam.lr = b["lr"].get<double>();
  tc.patience = b["patience"].get<int>();
  tc.clip_norm = b["clip_norm"].get<double>();
  tc.seed = run.seed(0xB2);
  const auto train = run.split(vocab, Split::Train);
  std::optional<ParallelCorpus> valid;
  if (fs::exists(run.path("data/valid.src"))) valid = run.split(vocab, Split::Valid);
  const auto log = train_mle(model, train, valid ? &*valid : nullptr, tc, [](const EpochLog& e) {
    std::cout << "epoch " << e.epoch << " loss " << e.train_loss << " valid_ppl " << e.valid_ppl << "\n";
  });
  model.to_checkpoint().save(run.path("base.ckpt"));
  write_text(run.path("base_log.csv"), [&](std::ostream& out) {
    out << "epoch,train_loss,valid_ppl\n";
    out.precision(17);
    for (const auto& e : log) out << e.epoch << ',' << e.train_loss << ',' << e.valid_ppl << '\n';
  });
}

void train_lm(const RunDir& run) {
  const auto& c = run.cfg()["lm"];
  const Vocabulary vocab = run.vocab();
  const auto targets = run.split(vocab, Split::Train).references();
  const int order = c["order"].get<int>();
  const double k = c["smoothing_k"].get<double>();
  train_ngram(targets, order, k, vocab.size()).to_checkpoint(vocab.fingerprint()).save(run.path("lm.ckpt"));
  if (c["masked"] == "ngram") {
    BidirectionalNgramScorer::train(targets, order, k, vocab.size())
        .to_checkpoint(vocab.fingerprint())
        .save(run.path("mlm.ckpt"));
  } else {
    MaskedPredictorConfig pc;
    pc.epochs = c["predictor_epochs"].get<int>();
    pc.window = c["predictor_window"].get<std::size_t>();
    pc.seed = run.seed(0x1A);
    MaskedTokenPredictor predictor(vocab.size(), pc);
    predictor.train(targets);
    predictor.to_checkpoint(vocab.fingerprint()).save(run.path("mlm.ckpt"));
  }
  std::cout << "wrote lm.ckpt and mlm.ckpt\n";
}

EnergyModel train_rank_energy(const RunDir& run, const Vocabulary& vocab, const BaseTranslator& base,
                              const ParallelCorpus& train, const RankTrainConfig& rc, const fs::path& trace) {
  EnergyModel energy(vocab.size(), energy_config(run));
  MultiCorpusSchedule schedule(train, base);
  const auto result = rank_train(energy, schedule, rc);
  write_loss_trace(result.trace, trace);
  return energy;
}

void train_energy(const RunDir& run) {
  const Vocabulary vocab = run.vocab();
  const auto base = load_translator(run.checkpoint("base.ckpt"), vocab);
  const auto train = run.split(vocab, Split::Train);
  if (run.cfg()["energy"]["method"] == "rank") {
    auto energy = train_rank_energy(run, vocab, *base, train, rank_config(run), run.path("loss_trace.csv"));
    energy.to_checkpoint(vocab.fingerprint()).save(run.path("energy.ckpt"));
    std::cout << "wrote energy.ckpt and loss_trace.csv\n";
    return;
  }
  const auto& t = run.cfg()["train"];
  NceConfig nc;
  nc.noise_ratio = t["noise_ratio"].get<std::size_t>();
  nc.residual = t["residual"].get<bool>();
  nc.adam.lr = t["lr"].get<double>();
  nc.batch_size = t["batch_size"].get<std::size_t>();
  nc.epochs = t["epochs"].get<int>();
  nc.seed = run.seed(0xE4);
  EnergyModel energy(vocab.size(), energy_config(run));
  const auto result = nce_train(energy, train, *base, nc);
  energy.to_checkpoint(vocab.fingerprint()).save(run.path("nce_energy.ckpt"));
  write_text(run.path("nce_log.csv"), [&](std::ostream& out) {
    out << "epoch,loss\n";
    out.precision(17);
    for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) out << e << ',' << result.epoch_loss[e] << '\n';
  });
  std::cout << "wrote nce_energy.ckpt and nce_log.csv\n";
}

std::vector<Strategy> strategies_for(const RunDir& run) {
  const std::string name = run.cfg()["eval"]["strategy"].get<std::string>();
  if (name != "all") return {strategy_from(run, name)};
  std::vector<Strategy> out;
  for (const char* n : {"beam", "sample", "lm", "mlm", "ebr", "nce-ebr", "oracle"}) out.push_back(strategy_from(run, n));
  return out;
}

void evaluate_stage(const RunDir& run) {
  const Vocabulary vocab = run.vocab();
  const auto strategies = strategies_for(run);
  const auto models = load_models(run, vocab, strategies);
  const auto corpus = run.split(vocab, split_of(run.cfg()["eval"]["split"]));
  const auto reports = evaluate_all(corpus, strategies, models.view(), eval_config(run));
  write_text(run.path("reports/summary.csv"), [&](std::ostream& out) {
    out << "strategy,bleu,mean_seconds_per_sentence\n";
    for (const auto& r : reports) out << r.strategy << ',' << r.bleu << ',' << r.mean_seconds_per_sentence << '\n';
  });
  for (const auto& r : reports) {
    r.save(run.path("reports/" + r.strategy + ".json"), vocab);
    std::cout << r.strategy << "\tBLEU " << format_real(r.bleu) << "\t" << format_real(r.mean_seconds_per_sentence)
              << " s/sentence\n";
  }
}

void rerank_stage(const RunDir& run, const Flags& f) {
  const Vocabulary vocab = run.vocab();
  const auto strategies = strategies_for(run);
  if (strategies.size() != 1) throw InvalidConfig("rerank takes a single strategy");
  const Strategy& strategy = strategies.front();
  const auto models = load_models(run, vocab, strategies);

  std::vector<TokenSeq> sources, refs;
  if (f.input) {
    for (const auto& line : read_lines(*f.input)) sources.push_back(tokenize(line, vocab));
    if (f.reference) {
      for (const auto& line : read_lines(*f.reference)) refs.push_back(tokenize(line, vocab));
      if (refs.size() != sources.size()) throw AlignmentError("rerank: input and reference line counts differ");
    }
  } else {
    const auto corpus = run.split(vocab, split_of(run.cfg()["eval"]["split"]));
    sources = corpus.sources();
    refs = corpus.references();
  }

  const EvalConfig ec = eval_config(run);
  std::vector<Selection> picks(sources.size());
  parallel_for(sources.size(), [&](std::size_t i) {
    const TokenSeq* ref = refs.empty() ? nullptr : &refs[i];
    CandidateSet cands;
    cands.source = sources[i];
    if (strategy.uses_candidates())
      cands = sample(*models.base, sources[i], ec.k, ec.temperature, derive_seed(ec.seed, {0xE7A1, i}), ref);
    picks[i] = select(cands, strategy, models.view(), ref);
  });

  json rows = json::array();
  for (std::size_t i = 0; i < sources.size(); ++i) {
    json row = {{"src", detokenize(sources[i].tokens, vocab)},
                {"chosen", detokenize(picks[i].chosen.tokens, vocab)},
                {"scores", picks[i].scores}};
    row["chosen_index"] = picks[i].index ? json(*picks[i].index) : json(nullptr);
    rows.push_back(std::move(row));
  }
  json out = {{"strategy", strategy.name()}, {"k", strategy.uses_candidates() ? ec.k : 0}, {"per_sentence", rows}};
  if (!refs.empty()) {
    std::vector<TokenSeq> chosen;
    for (const auto& p : picks) chosen.push_back(p.chosen);
    out["bleu"] = corpus_bleu(chosen, refs);
  }
  write_json(run.path("rerank/" + strategy.name() + ".json"), out);
  write_text(run.path("rerank/" + strategy.name() + ".txt"), [&](std::ostream& o) {
    for (const auto& p : picks) o << detokenize(p.chosen.tokens, vocab) << '\n';
  });
  std::cout << "wrote " << run.path("rerank/" + strategy.name() + ".txt").string() << "\n";
}

void analyze_stage(const RunDir& run) {
  const Vocabulary vocab = run.vocab();
  const auto base = load_translator(run.checkpoint("base.ckpt"), vocab);
  const auto energy = EnergyModel::from_checkpoint(run.checkpoint("energy.ckpt"));
  const auto& a = run.cfg()["analysis"];
  const std::size_t k = a["k"].get<std::size_t>();
  const std::uint64_t seed = run.seed(0xA1);
  const auto spearman_corpus = run.split(vocab, split_of(a["split"]));
  json summary = json::object();

  for (const auto& [name, scorer] : {std::pair<std::string, RankScorer>{"base_logprob", base_logprob_scorer()},
                                     std::pair<std::string, RankScorer>{"energy", energy_scorer(energy)}}) {
    const auto h = spearman_distribution(spearman_corpus, *base, scorer, k, seed, run.cfg()["eval"]["temp"]);
    write_json(run.path("analysis/spearman_" + name + ".json"), h.to_json());
    write_text(run.path("analysis/spearman_" + name + ".csv"), [&](std::ostream& o) { h.write_csv(o); });
    write_text(run.path("analysis/spearman_" + name + ".dat"), [&](std::ostream& o) { h.write_gnuplot(o); });
    summary["spearman_" + name] = {{"mean", h.mean()}, {"excluded", h.excluded}};
  }

  const auto corpus = run.split(vocab, split_of(run.cfg()["eval"]["split"]));
  Models models;
  models.base = base.get();
  models.energy = &energy;
  const auto reports =
      evaluate_all(corpus, {strategy_from(run, "sample"), strategy_from(run, "ebr")}, models, eval_config(run));
  std::vector<std::size_t> bounds;
  for (const auto& b : a["length_bins"]) bounds.push_back(b.get<std::size_t>());
  for (const auto& r : reports) {
    const auto bins = length_binned_bleu(r, bounds);
    write_json(run.path("analysis/length_bins_" + r.strategy + ".json"), length_bins_to_json(bins));
    write_text(run.path("analysis/length_bins_" + r.strategy + ".csv"),
               [&](std::ostream& o) { write_length_bins_csv(bins, o); });
    summary["bleu_" + r.strategy] = r.bleu;
  }

  const auto shuffle = shuffle_energy_test(energy, corpus.references(), a["window"].get<std::size_t>(), seed);
  write_json(run.path("analysis/shuffle.json"), shuffle.to_json());
  write_text(run.path("analysis/shuffle.csv"), [&](std::ostream& o) { shuffle.write_csv(o); });
  summary["shuffle"] = shuffle.to_json();

  const auto diff = choice_diff(reports[1], reports[0]);
  write_json(run.path("analysis/diff_ebr_vs_sample.json"), diff_to_json(diff, vocab));
  write_text(run.path("analysis/diff_ebr_vs_sample.csv"), [&](std::ostream& o) { write_diff_csv(diff, vocab, o); });
  summary["diff_rows"] = diff.size();

  write_json(run.path("analysis/summary.json"), summary);
  std::cout << summary.dump(2) << "\n";
}

void sweep_stage(const RunDir& run) {
  const Vocabulary vocab = run.vocab();
  const auto base = load_translator(run.checkpoint("base.ckpt"), vocab);
  const auto train = run.split(vocab, Split::Train);
  const auto corpus = run.split(vocab, split_of(run.cfg()["eval"]["split"]));
  json rows = json::array();
  std::vector<double> bleus;
  for (const auto& g : run.cfg()["sweep"]["gamma"]) {
    const double gamma = g.get<double>();
    const std::string dir = "sweep/gamma_" + format_real(gamma);
    fs::create_directories(run.path(dir));
    RankTrainConfig rc = rank_config(run);
    rc.gamma = gamma;
    const auto energy = train_rank_energy(run, vocab, *base, train, rc, run.path(dir + "/loss_trace.csv"));
    energy.to_checkpoint(vocab.fingerprint()).save(run.path(dir + "/energy.ckpt"));
    Models models;
    models.base = base.get();
    models.energy = &energy;
    const auto report = evaluate(corpus, strategy_from(run, "ebr"), models, eval_config(run));
    report.save(run.path(dir + "/report.json"), vocab);
    rows.push_back({{"gamma", gamma}, {"bleu", report.bleu}});
    bleus.push_back(report.bleu);
    std::cout << "gamma " << format_real(gamma) << "\tBLEU " << format_real(report.bleu) << "\n";
  }
  bool monotone = true;
  for (std::size_t i = 1; i < bleus.size(); ++i) monotone = monotone && bleus[i] <= bleus[i - 1];
  write_json(run.path("sweep/summary.json"), {{"rows", rows}, {"monotone_non_increasing", monotone}});
  write_text(run.path("sweep/summary.csv"), [&](std::ostream& o) {
    o << "gamma,bleu\n";
    for (const auto& r : rows) o << r["gamma"].get<double>() << ',' << r["bleu"].get<double>() << '\n';
  });
}

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "JSON or TOML configuration file");
  sub->add_option("--seed", f.seed, "Run seed");
  sub->add_option("--k", f.k, "Candidates per source");
  sub->add_option("--temp", f.temp, "Sampling temperature");
  sub->add_option("--alpha", f.alpha, "Margin weight");
  sub->add_option("--T", f.T, "Resampling temperature");
  sub->add_option("--gamma", f.gamma, "Gold-mixing probability (comma list for sweep)");
  sub->add_option("--lambda", f.lambda, "Fusion weight");
  sub->add_option("--strategy", f.strategy, "beam|sample|lm|mlm|ebr|nce-ebr|oracle|all");
  sub->add_option("--task", f.task, "reverse|cipher|noisy-copy");
  sub->add_option("--out", f.out, "Run directory");
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Energy-based re-ranking of sampled translation candidates"};
  app.name("ebr");
  app.require_subcommand(1);
  Flags flags;
  std::string stage;
  for (const char* name : {"gen-data", "train-base", "train-lm", "train-energy", "rerank", "evaluate", "analyze",
                           "sweep"}) {
    auto* sub = app.add_subcommand(name);
    add_common(sub, flags);
    if (std::string(name) == "rerank") {
      sub->add_option("--input", flags.input, "Source sentences, one per line");
      sub->add_option("--reference", flags.reference, "References aligned with --input");
    }
    sub->callback([&stage, name] { stage = name; });
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    const json cfg = resolve(stage, flags);
    const RunDir run(flags.out, cfg);
    fs::create_directories(run.root());
    write_json(run.path("config.json"), cfg);
    write_json(run.path("snapshots/" + stage + ".json"), cfg);
    if (stage == "gen-data") gen_data(run);
    else if (stage == "train-base") train_base(run);
    else if (stage == "train-lm") train_lm(run);
    else if (stage == "train-energy") train_energy(run);
    else if (stage == "rerank") rerank_stage(run, flags);
    else if (stage == "evaluate") evaluate_stage(run);
    else if (stage == "analyze") analyze_stage(run);
    else if (stage == "sweep") sweep_stage(run);
    return kExitOk;
  } catch (const InvalidConfig& e) {
    std::cerr << "ebr " << stage << ": configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "ebr " << stage << ": " << e.what() << "\n";
    return kExitRuntime;
  }
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace ebr::cli
