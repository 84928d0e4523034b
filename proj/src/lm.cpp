#include "ebr/lm.hpp"

#include <algorithm>
#include <cmath>

#include "ebr/error.hpp"
#include "ebr/rng.hpp"

namespace ebr {

namespace {

bool predictable(TokenId id) {
  return id != Vocabulary::kPad && id != Vocabulary::kBos && id != Vocabulary::kMask;
}

void check_range(std::span<const TokenId> y, std::size_t vocab_size) {
  for (TokenId t : y)
    if (t < 0 || static_cast<std::size_t>(t) >= vocab_size) throw VocabularyMismatch("lm: token id out of range");
}

}  // namespace

std::vector<TokenId> prediction_set(std::size_t vocab_size) {
  std::vector<TokenId> out;
  for (std::size_t i = 0; i < vocab_size; ++i)
    if (predictable(static_cast<TokenId>(i))) out.push_back(static_cast<TokenId>(i));
  return out;
}

NgramLM::NgramLM(std::size_t vocab_size, int order, double k)
    : vocab_size_(vocab_size), prediction_size_(prediction_set(vocab_size).size()), order_(order), k_(k) {
  if (order < 1) throw InvalidConfig("ngram: order must be >= 1");
  if (!(k > 0.0)) throw InvalidConfig("ngram: k must be positive");
  if (prediction_size_ == 0) throw InvalidConfig("ngram: empty vocabulary");
}

std::vector<TokenId> NgramLM::context_at(std::span<const TokenId> sentence, std::size_t i) const {
  const std::size_t n = static_cast<std::size_t>(order_ - 1);
  std::vector<TokenId> ctx(n, Vocabulary::kBos);
  for (std::size_t c = 0; c < n; ++c) {
    // ctx[c] is the token n - c positions back.
    const std::size_t back = n - c;
    if (i >= back) ctx[c] = sentence[i - back];
  }
  return ctx;
}

void NgramLM::observe(std::span<const TokenId> sentence) {
  check_range(sentence, vocab_size_);
  std::vector<TokenId> seq(sentence.begin(), sentence.end());
  seq.push_back(Vocabulary::kEos);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    auto ctx = context_at(seq, i);
    counts_[ctx][seq[i]] += 1.0;
    context_totals_[ctx] += 1.0;
  }
}

double NgramLM::prob(std::span<const TokenId> context, TokenId word) const {
  if (!predictable(word) || word < 0 || static_cast<std::size_t>(word) >= vocab_size_) return 0.0;
  const std::size_t n = static_cast<std::size_t>(order_ - 1);
  std::vector<TokenId> ctx(n, Vocabulary::kBos);
  const std::size_t have = std::min(n, context.size());
  std::copy(context.end() - static_cast<long>(have), context.end(), ctx.end() - static_cast<long>(have));
  const double denom_extra = k_ * static_cast<double>(prediction_size_);
  auto it = context_totals_.find(ctx);
  if (it == context_totals_.end()) return 1.0 / static_cast<double>(prediction_size_);
  const auto& row = counts_.at(ctx);
  auto w = row.find(word);
  const double c = w == row.end() ? 0.0 : w->second;
  return (c + k_) / (it->second + denom_extra);
}

void NgramLM::append_tensor(Checkpoint& ck, const std::string& name) const {
  // One row per (context, word) count: context ids, word id, count.
  const std::size_t width = static_cast<std::size_t>(order_) + 1;
  Tensor t;
  t.name = name;
  for (const auto& [ctx, row] : counts_) {
    for (const auto& [w, c] : row) {
      for (TokenId id : ctx) t.data.push_back(id);
      t.data.push_back(w);
      t.data.push_back(c);
    }
  }
  t.shape = {t.data.size() / width, width};
  ck.tensors.push_back(std::move(t));
}

Checkpoint NgramLM::to_checkpoint(const std::string& vocab_ref) const {
  Checkpoint ck;
  ck.model_kind = "ngram";
  ck.vocab_ref = vocab_ref;
  ck.hyperparams = {{"order", order_}, {"k", k_}, {"vocab_size", vocab_size_}};
  append_tensor(ck, "counts");
  return ck;
}

NgramLM NgramLM::from_checkpoint(const Checkpoint& ck, const std::string& tensor) {
  try {
    const auto& h = ck.hyperparams;
    NgramLM lm(h.at("vocab_size").get<std::size_t>(), h.at("order").get<int>(), h.at("k").get<double>());
    const auto& t = ck.tensor(tensor);
    const std::size_t width = static_cast<std::size_t>(lm.order_) + 1;
    if (t.shape.size() != 2 || t.shape[1] != width) throw CheckpointError("ngram: bad count table shape");
    for (std::size_t r = 0; r < t.shape[0]; ++r) {
      const double* row = t.data.data() + r * width;
      std::vector<TokenId> ctx;
      for (std::size_t c = 0; c + 2 < width; ++c) ctx.push_back(static_cast<TokenId>(row[c]));
      const auto w = static_cast<TokenId>(row[width - 2]);
      lm.counts_[ctx][w] += row[width - 1];
      lm.context_totals_[ctx] += row[width - 1];
    }
    return lm;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("ngram checkpoint: ") + e.what());
  }
}

NgramLM train_ngram(const std::vector<TokenSeq>& targets, int order, double k, std::size_t vocab_size) {
  if (targets.empty()) throw InvalidConfig("train_ngram: no sentences");
  NgramLM lm(vocab_size, order, k);
  for (const auto& y : targets) lm.observe(y.tokens);
  return lm;
}

double lm_logprob(const NgramLM& lm, const TokenSeq& y) {
  if (y.empty()) throw EmptyInput("lm_logprob: empty sentence");
  std::vector<TokenId> seq = y.tokens;
  seq.push_back(Vocabulary::kEos);
  double total = 0.0;
  for (std::size_t i = 0; i < seq.size(); ++i) total += std::log(lm.prob(lm.context_at(seq, i), seq[i]));
  return total;
}

// ---------------------------------------------------------------------------

BidirectionalNgramScorer::BidirectionalNgramScorer(NgramLM forward, NgramLM backward)
    : forward_(std::move(forward)), backward_(std::move(backward)) {
  if (forward_.vocab_size() != backward_.vocab_size())
    throw InvalidConfig("masked scorer: forward and backward vocabularies differ");
}

BidirectionalNgramScorer BidirectionalNgramScorer::train(const std::vector<TokenSeq>& targets, int order,
                                                         double k, std::size_t vocab_size) {
  std::vector<TokenSeq> reversed;
  reversed.reserve(targets.size());
  for (const auto& y : targets) reversed.emplace_back(std::vector<TokenId>(y.tokens.rbegin(), y.tokens.rend()));
  return {train_ngram(targets, order, k, vocab_size), train_ngram(reversed, order, k, vocab_size)};
}

std::vector<double> BidirectionalNgramScorer::masked_distribution(std::span<const TokenId> y, std::size_t i) const {
  const std::vector<TokenId> rev(y.rbegin(), y.rend());
  const auto left = forward_.context_at(y, i);
  const auto right = backward_.context_at(rev, y.size() - 1 - i);
  std::vector<double> dist(forward_.vocab_size(), 0.0);
  double total = 0.0;
  for (TokenId w : prediction_set(forward_.vocab_size())) {
    const double g = std::sqrt(forward_.prob(left, w) * backward_.prob(right, w));
    dist[static_cast<std::size_t>(w)] = g;
    total += g;
  }
  for (double& p : dist) p /= total;
  return dist;
}

double BidirectionalNgramScorer::masked_log_prob(std::span<const TokenId> y, std::size_t i) const {
  check_range(y, forward_.vocab_size());
  return std::log(masked_distribution(y, i)[static_cast<std::size_t>(y[i])]);
}

Checkpoint BidirectionalNgramScorer::to_checkpoint(const std::string& vocab_ref) const {
  Checkpoint ck;
  ck.model_kind = "ngram_pll";
  ck.vocab_ref = vocab_ref;
  ck.hyperparams = {{"order", forward_.order()}, {"k", forward_.k()}, {"vocab_size", forward_.vocab_size()}};
  forward_.append_tensor(ck, "forward");
  backward_.append_tensor(ck, "backward");
  return ck;
}

BidirectionalNgramScorer BidirectionalNgramScorer::from_checkpoint(const Checkpoint& ck) {
  if (ck.model_kind != "ngram_pll") throw CheckpointError("expected a bidirectional n-gram checkpoint");
  return {NgramLM::from_checkpoint(ck, "forward"), NgramLM::from_checkpoint(ck, "backward")};
}

// ---------------------------------------------------------------------------

MaskedTokenPredictor::MaskedTokenPredictor(std::size_t vocab_size, MaskedPredictorConfig cfg)
    : vocab_size_(vocab_size), cfg_(cfg) {
  if (cfg_.window < 1 || cfg_.embed_dim < 1 || cfg_.hidden_dim < 1)
    throw InvalidConfig("masked predictor: window and dimensions must be positive");
  Rng rng(derive_seed(cfg_.seed, {0x3A5C}));
  auto uniform = [&](std::size_t r, std::size_t c, double scale) {
    Matrix m(static_cast<long>(r), static_cast<long>(c));
    for (long j = 0; j < m.cols(); ++j)
      for (long i = 0; i < m.rows(); ++i) m(i, j) = (2.0 * rng.uniform() - 1.0) * scale;
    return m;
  };
  const std::size_t d = cfg_.embed_dim, h = cfg_.hidden_dim;
  emb_ = params_.add("embed", uniform(d, vocab_size_, 0.1));
  for (std::size_t o = 0; o < 2 * cfg_.window; ++o)
    offset_w_.push_back(params_.add("offset_" + std::to_string(o), uniform(h, d, 1.0 / std::sqrt(static_cast<double>(d)))));
  hidden_b_ = params_.add("hidden_b", Matrix::Zero(static_cast<long>(h), 1));
  out_w_ = params_.add("out_w", uniform(vocab_size_, h, 1.0 / std::sqrt(static_cast<double>(h))));
  out_b_ = params_.add("out_b", Matrix::Zero(static_cast<long>(vocab_size_), 1));
}

TokenId MaskedTokenPredictor::token_at(std::span<const TokenId> y, long pos) const {
  if (pos < 0) return Vocabulary::kBos;
  if (pos >= static_cast<long>(y.size())) return Vocabulary::kEos;
  return y[static_cast<std::size_t>(pos)];
}

Vector MaskedTokenPredictor::masked_log_distribution(std::span<const TokenId> y, std::size_t i) const {
  check_range(y, vocab_size_);
  const long w = static_cast<long>(cfg_.window);
  Vector pre = params_[hidden_b_].col(0);
  std::size_t slot = 0;
  for (long o = -w; o <= w; ++o) {
    if (o == 0) continue;
    pre += params_[offset_w_[slot++]] * params_[emb_].col(token_at(y, static_cast<long>(i) + o));
  }
  const Vector hidden = pre.array().tanh().matrix();
  Vector logits = params_[out_w_] * hidden + params_[out_b_].col(0);
  double top = -std::numeric_limits<double>::infinity();
  for (long v = 0; v < logits.size(); ++v)
    if (predictable(static_cast<TokenId>(v))) top = std::max(top, logits[v]);
  double z = 0.0;
  for (long v = 0; v < logits.size(); ++v)
    if (predictable(static_cast<TokenId>(v))) z += std::exp(logits[v] - top);
  const double lse = top + std::log(z);
  for (long v = 0; v < logits.size(); ++v)
    logits[v] = predictable(static_cast<TokenId>(v)) ? logits[v] - lse : -std::numeric_limits<double>::infinity();
  return logits;
}

double MaskedTokenPredictor::masked_log_prob(std::span<const TokenId> y, std::size_t i) const {
  return masked_log_distribution(y, i)[y[i]];
}

double MaskedTokenPredictor::loss(std::span<const TokenId> y, std::size_t i, ParamStore* grad) const {
  check_range(y, vocab_size_);
  const long w = static_cast<long>(cfg_.window);
  std::vector<TokenId> ctx;
  Vector pre = params_[hidden_b_].col(0);
  std::size_t slot = 0;
  for (long o = -w; o <= w; ++o) {
    if (o == 0) continue;
    ctx.push_back(token_at(y, static_cast<long>(i) + o));
    pre += params_[offset_w_[slot++]] * params_[emb_].col(ctx.back());
  }
  const Vector hidden = pre.array().tanh().matrix();
  Vector logits = params_[out_w_] * hidden + params_[out_b_].col(0);
  double top = -std::numeric_limits<double>::infinity();
  for (long v = 0; v < logits.size(); ++v)
    if (predictable(static_cast<TokenId>(v))) top = std::max(top, logits[v]);
  Vector probs = Vector::Zero(logits.size());
  double z = 0.0;
  for (long v = 0; v < logits.size(); ++v)
    if (predictable(static_cast<TokenId>(v))) z += (probs[v] = std::exp(logits[v] - top));
  probs /= z;
  const double value = -(logits[y[i]] - top - std::log(z));
  if (grad == nullptr) return value;

  Vector dlogits = probs;
  dlogits[y[i]] -= 1.0;
  (*grad)[out_w_] += dlogits * hidden.transpose();
  (*grad)[out_b_].col(0) += dlogits;
  const Vector dhidden = params_[out_w_].transpose() * dlogits;
  const Vector dpre = (dhidden.array() * (1.0 - hidden.array().square())).matrix();
  (*grad)[hidden_b_].col(0) += dpre;
  for (std::size_t s = 0; s < ctx.size(); ++s) {
    (*grad)[offset_w_[s]] += dpre * params_[emb_].col(ctx[s]).transpose();
    (*grad)[emb_].col(ctx[s]) += params_[offset_w_[s]].transpose() * dpre;
  }
  return value;
}

std::vector<double> MaskedTokenPredictor::train(const std::vector<TokenSeq>& targets) {
  std::vector<std::pair<std::size_t, std::size_t>> positions;
  for (std::size_t s = 0; s < targets.size(); ++s)
    for (std::size_t i = 0; i < targets[s].size(); ++i) positions.emplace_back(s, i);
  if (positions.empty()) throw EmptyInput("masked predictor: no training tokens");
  if (cfg_.batch_size < 1) throw InvalidConfig("masked predictor: batch size must be positive");

  Adam adam(params_, cfg_.adam);
  ParamStore grad = params_.zeros_like();
  std::vector<double> epoch_losses;
  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    Rng rng(derive_seed(cfg_.seed, {0x7E, static_cast<std::uint64_t>(epoch)}));
    rng.shuffle(positions);
    double total = 0.0;
    for (std::size_t start = 0; start < positions.size(); start += cfg_.batch_size) {
      const std::size_t end = std::min(positions.size(), start + cfg_.batch_size);
      grad.set_zero();
      for (std::size_t b = start; b < end; ++b) {
        const auto [s, i] = positions[b];
        total += loss(targets[s].tokens, i, &grad);
      }
      grad *= 1.0 / static_cast<double>(end - start);
      if (!grad.all_finite()) throw DivergedTraining(epoch, static_cast<long>(start));
      adam.step(params_, grad);
    }
    epoch_losses.push_back(total / static_cast<double>(positions.size()));
  }
  return epoch_losses;
}

Checkpoint MaskedTokenPredictor::to_checkpoint(const std::string& vocab_ref) const {
  Checkpoint ck;
  ck.model_kind = "masked_predictor";
  ck.vocab_ref = vocab_ref;
  ck.hyperparams = {{"vocab_size", vocab_size_},    {"window", cfg_.window},   {"embed_dim", cfg_.embed_dim},
                    {"hidden_dim", cfg_.hidden_dim}, {"epochs", cfg_.epochs},   {"batch_size", cfg_.batch_size},
                    {"lr", cfg_.adam.lr},            {"seed", cfg_.seed}};
  params_.to_checkpoint(ck);
  return ck;
}

MaskedTokenPredictor MaskedTokenPredictor::from_checkpoint(const Checkpoint& ck) {
  if (ck.model_kind != "masked_predictor") throw CheckpointError("expected a masked predictor checkpoint");
  try {
    const auto& h = ck.hyperparams;
    MaskedPredictorConfig cfg;
    cfg.window = h.at("window").get<std::size_t>();
    cfg.embed_dim = h.at("embed_dim").get<std::size_t>();
    cfg.hidden_dim = h.at("hidden_dim").get<std::size_t>();
    cfg.epochs = h.at("epochs").get<int>();
    cfg.batch_size = h.at("batch_size").get<std::size_t>();
    cfg.adam.lr = h.at("lr").get<double>();
    cfg.seed = h.at("seed").get<std::uint64_t>();
    MaskedTokenPredictor m(h.at("vocab_size").get<std::size_t>(), cfg);
    m.params_.from_checkpoint(ck);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("masked predictor checkpoint: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

double pll_score(const MaskedScorer& scorer, const TokenSeq& y) {
  if (y.empty()) throw EmptyInput("pll_score: empty sentence");
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) total += scorer.masked_log_prob(y.tokens, i);
  return total / static_cast<double>(y.size());
}

std::unique_ptr<MaskedScorer> load_masked_scorer(const Checkpoint& ck) {
  if (ck.model_kind == "ngram_pll")
    return std::make_unique<BidirectionalNgramScorer>(BidirectionalNgramScorer::from_checkpoint(ck));
  if (ck.model_kind == "masked_predictor")
    return std::make_unique<MaskedTokenPredictor>(MaskedTokenPredictor::from_checkpoint(ck));
  throw CheckpointError("not a masked scorer checkpoint: " + ck.model_kind);
}

}  // namespace ebr
