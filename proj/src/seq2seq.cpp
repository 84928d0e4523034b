#include "ebr/seq2seq.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ebr/error.hpp"

namespace ebr {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::vector<TokenId> strip_eos(const std::vector<TokenId>& tokens) {
  std::vector<TokenId> out = tokens;
  if (!out.empty() && out.back() == Vocabulary::kEos) out.pop_back();
  return out;
}

Matrix uniform_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale) {
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = scale * (2.0 * rng.uniform() - 1.0);
  return m;
}

Vector softmax(const Vector& x) {
  Vector e = (x.array() - x.maxCoeff()).exp();
  return e / e.sum();
}

}  // namespace

NeuralSeq2Seq::NeuralSeq2Seq(Vocabulary vocab, Seq2SeqConfig cfg) : vocab_(std::move(vocab)), cfg_(cfg) {
  if (cfg_.embed_dim == 0 || cfg_.hidden_dim == 0 || cfg_.attn_dim == 0)
    throw InvalidConfig("seq2seq: dimensions must be positive");
  const std::size_t V = vocab_.size(), d = cfg_.embed_dim, h = cfg_.hidden_dim, a = cfg_.attn_dim;
  Rng rng(derive_seed(cfg_.seed, {0x5E92}));
  auto fan = [](std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); };
  src_emb_ = params_.add("src_embed", uniform_matrix(rng, d, V, 0.1));
  tgt_emb_ = params_.add("tgt_embed", uniform_matrix(rng, d, V, 0.1));
  we_ = params_.add("enc_W", uniform_matrix(rng, h, d, fan(d)));
  ue_ = params_.add("enc_U", uniform_matrix(rng, h, h, fan(h)));
  be_ = params_.add("enc_b", Matrix::Zero(h, 1));
  wd_ = params_.add("dec_W", uniform_matrix(rng, h, d, fan(d)));
  ud_ = params_.add("dec_U", uniform_matrix(rng, h, h, fan(h)));
  bd_ = params_.add("dec_b", Matrix::Zero(h, 1));
  wa_ = params_.add("att_W", uniform_matrix(rng, a, h, fan(h)));
  ua_ = params_.add("att_U", uniform_matrix(rng, a, h, fan(h)));
  va_ = params_.add("att_v", uniform_matrix(rng, a, 1, fan(a)));
  wo_ = params_.add("out_W", uniform_matrix(rng, V, 2 * h, fan(2 * h)));
  bo_ = params_.add("out_b", Matrix::Zero(V, 1));
}

NeuralSeq2Seq::Encoded NeuralSeq2Seq::encode(const std::vector<TokenId>& src) const {
  std::vector<TokenId> xs = strip_eos(src);
  xs.push_back(Vocabulary::kEos);
  const auto& E = params_[src_emb_];
  const auto S = static_cast<Eigen::Index>(xs.size());
  Encoded enc;
  enc.states.resize(static_cast<Eigen::Index>(cfg_.hidden_dim), S);
  Vector h = Vector::Zero(static_cast<Eigen::Index>(cfg_.hidden_dim));
  for (Eigen::Index j = 0; j < S; ++j) {
    Vector pre = params_[we_] * E.col(xs[static_cast<std::size_t>(j)]) + params_[ue_] * h + params_[be_].col(0);
    h = pre.array().tanh();
    enc.states.col(j) = h;
  }
  enc.keys = params_[wa_] * enc.states;
  return enc;
}

Vector NeuralSeq2Seq::decoder_step(const Vector& prev_state, TokenId input) const {
  Vector pre = params_[wd_] * params_[tgt_emb_].col(input) + params_[ud_] * prev_state + params_[bd_].col(0);
  return pre.array().tanh();
}

Vector NeuralSeq2Seq::output_log_probs(const Encoded& enc, const Vector& state) const {
  const Vector q = params_[ua_] * state;
  const Matrix u = (enc.keys.colwise() + q).array().tanh();
  const Vector scores = u.transpose() * params_[va_].col(0);
  const Vector attn = softmax(scores);
  const Vector ctx = enc.states * attn;

  const auto h = static_cast<Eigen::Index>(cfg_.hidden_dim);
  Vector joined(2 * h);
  joined << state, ctx;
  Vector logits = params_[wo_] * joined + params_[bo_].col(0);
  for (TokenId m : {Vocabulary::kPad, Vocabulary::kBos, Vocabulary::kMask})
    if (m < logits.size()) logits[m] = kNegInf;
  const double top = logits.maxCoeff();
  const double lse = top + std::log((logits.array() - top).exp().sum());
  return logits.array() - lse;
}

Vector NeuralSeq2Seq::next_log_probs(const TokenSeq& src, const std::vector<TokenId>& prefix) const {
  const auto enc = encode(src.tokens);
  Vector state = enc.states.col(enc.states.cols() - 1);
  TokenId prev = Vocabulary::kBos;
  for (TokenId t : prefix) {
    state = decoder_step(state, prev);
    prev = t;
  }
  state = decoder_step(state, prev);
  return output_log_probs(enc, state);
}

double NeuralSeq2Seq::logprob(const TokenSeq& src, const TokenSeq& tgt) const {
  auto ys = strip_eos(tgt.tokens);
  ys.push_back(Vocabulary::kEos);
  const auto enc = encode(src.tokens);
  Vector state = enc.states.col(enc.states.cols() - 1);
  TokenId prev = Vocabulary::kBos;
  double lp = 0.0;
  for (TokenId y : ys) {
    if (y < 0 || static_cast<std::size_t>(y) >= vocab_.size()) return kLogZero;
    state = decoder_step(state, prev);
    lp += output_log_probs(enc, state)[y];
    prev = y;
  }
  return std::isfinite(lp) ? lp : kLogZero;
}

BaseTranslator::Draw NeuralSeq2Seq::sample_one(const TokenSeq& src, double temp, Rng& rng) const {
  if (!(temp > 0.0)) throw InvalidConfig("sample: temperature must be positive");
  const auto src_tokens = strip_eos(src.tokens);
  const std::size_t max_len = max_target_length(src_tokens.size());
  const auto enc = encode(src_tokens);
  Vector state = enc.states.col(enc.states.cols() - 1);
  TokenId prev = Vocabulary::kBos;
  Draw draw;
  std::vector<double> weights(vocab_.size());
  for (;;) {
    state = decoder_step(state, prev);
    const Vector logp = output_log_probs(enc, state);
    TokenId next = Vocabulary::kEos;
    if (draw.tokens.size() < max_len) {
      const double top = logp.maxCoeff();
      for (std::size_t i = 0; i < weights.size(); ++i) {
        const double l = logp[static_cast<Eigen::Index>(i)];
        weights[i] = l == kNegInf ? 0.0 : std::exp((l - top) / temp);
      }
      next = static_cast<TokenId>(rng.categorical(weights));
    }
    draw.logprob += logp[next];
    if (next == Vocabulary::kEos) break;
    draw.tokens.push_back(next);
    prev = next;
  }
  if (!std::isfinite(draw.logprob)) draw.logprob = kLogZero;
  return draw;
}

TokenSeq NeuralSeq2Seq::beam_decode(const TokenSeq& src, std::size_t width) const {
  if (width < 1) throw InvalidConfig("beam: width must be >= 1");
  const auto src_tokens = strip_eos(src.tokens);
  const std::size_t max_len = max_target_length(src_tokens.size());
  const auto enc = encode(src_tokens);

  struct Hyp {
    std::vector<TokenId> tokens;
    double score;
    Vector state;
  };
  struct Ext {
    std::size_t hyp;
    TokenId token;
    double score;
  };
  struct Done {
    std::vector<TokenId> tokens;
    double normalized;
  };

  std::vector<Hyp> beam{{{}, 0.0, enc.states.col(enc.states.cols() - 1)}};
  std::vector<Done> finished;
  while (!beam.empty()) {
    std::vector<Vector> states;
    std::vector<Ext> exts;
    for (std::size_t b = 0; b < beam.size(); ++b) {
      const TokenId prev = beam[b].tokens.empty() ? Vocabulary::kBos : beam[b].tokens.back();
      states.push_back(decoder_step(beam[b].state, prev));
      const Vector logp = output_log_probs(enc, states.back());
      if (beam[b].tokens.size() >= max_len) {
        exts.push_back({b, Vocabulary::kEos, beam[b].score + logp[Vocabulary::kEos]});
        continue;
      }
      for (Eigen::Index t = 0; t < logp.size(); ++t)
        if (logp[t] != kNegInf) exts.push_back({b, static_cast<TokenId>(t), beam[b].score + logp[t]});
    }
    std::stable_sort(exts.begin(), exts.end(), [](const Ext& a, const Ext& b) { return a.score > b.score; });
    if (exts.size() > width) exts.resize(width);

    std::vector<Hyp> next;
    for (const auto& e : exts) {
      auto tokens = beam[e.hyp].tokens;
      if (e.token == Vocabulary::kEos) {
        finished.push_back({std::move(tokens), e.score / static_cast<double>(beam[e.hyp].tokens.size() + 1)});
      } else {
        tokens.push_back(e.token);
        next.push_back({std::move(tokens), e.score, states[e.hyp]});
      }
    }
    beam = std::move(next);
  }

  const Done* best = &finished.front();
  for (const auto& f : finished)
    if (f.normalized > best->normalized) best = &f;
  return with_surface(TokenSeq(best->tokens), vocab_);
}

double NeuralSeq2Seq::loss(const TokenSeq& src, const TokenSeq& tgt, ParamStore* grad) const {
  std::vector<TokenId> xs = strip_eos(src.tokens);
  xs.push_back(Vocabulary::kEos);
  std::vector<TokenId> ys = strip_eos(tgt.tokens);
  ys.push_back(Vocabulary::kEos);

  const auto& Es = params_[src_emb_];
  const auto& Et = params_[tgt_emb_];
  const auto& We = params_[we_];
  const auto& Ue = params_[ue_];
  const auto& Wd = params_[wd_];
  const auto& Ud = params_[ud_];
  const auto& Wa = params_[wa_];
  const auto& Ua = params_[ua_];
  const Vector v = params_[va_].col(0);
  const auto& Wo = params_[wo_];
  const auto h = static_cast<Eigen::Index>(cfg_.hidden_dim);
  const auto S = static_cast<Eigen::Index>(xs.size());
  const std::size_t T = ys.size();

  // Forward with caches.
  Matrix H(h, S);
  {
    Vector prev = Vector::Zero(h);
    for (Eigen::Index j = 0; j < S; ++j) {
      Vector pre = We * Es.col(xs[static_cast<std::size_t>(j)]) + Ue * prev + params_[be_].col(0);
      prev = pre.array().tanh();
      H.col(j) = prev;
    }
  }
  const Matrix K = Wa * H;

  std::vector<Vector> s(T), attn(T), joined(T), probs(T);
  std::vector<Matrix> U(T);
  std::vector<TokenId> inputs(T);
  double total = 0.0;
  Vector state = H.col(S - 1);
  for (std::size_t t = 0; t < T; ++t) {
    inputs[t] = t == 0 ? Vocabulary::kBos : ys[t - 1];
    Vector pre = Wd * Et.col(inputs[t]) + Ud * state + params_[bd_].col(0);
    state = pre.array().tanh();
    s[t] = state;
    U[t] = (K.colwise() + Ua * state).array().tanh();
    attn[t] = softmax(U[t].transpose() * v);
    joined[t].resize(2 * h);
    joined[t] << state, H * attn[t];
    Vector logits = Wo * joined[t] + params_[bo_].col(0);
    for (TokenId m : {Vocabulary::kPad, Vocabulary::kBos, Vocabulary::kMask})
      if (m < logits.size()) logits[m] = kNegInf;
    const double top = logits.maxCoeff();
    Vector e = (logits.array() - top).exp();
    const double z = e.sum();
    probs[t] = e / z;
    total -= logits[ys[t]] - top - std::log(z);
  }
  if (grad == nullptr) return total;

  auto& g = *grad;
  Matrix dH = Matrix::Zero(h, S);
  Matrix dK = Matrix::Zero(K.rows(), S);
  Vector ds_next = Vector::Zero(h);
  for (std::size_t t = T; t-- > 0;) {
    Vector dlogits = probs[t];
    dlogits[ys[t]] -= 1.0;
    g[wo_].noalias() += dlogits * joined[t].transpose();
    g[bo_].col(0) += dlogits;
    const Vector djoined = Wo.transpose() * dlogits;
    Vector ds = djoined.head(h) + ds_next;
    const Vector dc = djoined.tail(h);

    dH.noalias() += dc * attn[t].transpose();
    const Vector dattn = H.transpose() * dc;
    const Vector dscore = attn[t].array() * (dattn.array() - attn[t].dot(dattn));
    g[va_].col(0) += U[t] * dscore;
    const Matrix dpre_att = (v * dscore.transpose()).array() * (1.0 - U[t].array().square());
    dK += dpre_att;
    const Vector dq = dpre_att.rowwise().sum();
    g[ua_].noalias() += dq * s[t].transpose();
    ds += Ua.transpose() * dq;

    const Vector dpre = ds.array() * (1.0 - s[t].array().square());
    const Vector prev_state = t == 0 ? Vector(H.col(S - 1)) : s[t - 1];
    g[wd_].noalias() += dpre * Et.col(inputs[t]).transpose();
    g[tgt_emb_].col(inputs[t]) += Wd.transpose() * dpre;
    g[ud_].noalias() += dpre * prev_state.transpose();
    g[bd_].col(0) += dpre;
    ds_next = Ud.transpose() * dpre;
  }
  dH.col(S - 1) += ds_next;
  g[wa_].noalias() += dK * H.transpose();
  dH.noalias() += Wa.transpose() * dK;

  Vector dh_next = Vector::Zero(h);
  for (Eigen::Index j = S; j-- > 0;) {
    const Vector dh = dH.col(j) + dh_next;
    const Vector dpre = dh.array() * (1.0 - H.col(j).array().square());
    const TokenId x = xs[static_cast<std::size_t>(j)];
    g[we_].noalias() += dpre * Es.col(x).transpose();
    g[src_emb_].col(x) += We.transpose() * dpre;
    if (j > 0) g[ue_].noalias() += dpre * H.col(j - 1).transpose();
    g[be_].col(0) += dpre;
    dh_next = Ue.transpose() * dpre;
  }
  return total;
}

Checkpoint NeuralSeq2Seq::to_checkpoint() const {
  Checkpoint ck;
  ck.model_kind = kind();
  ck.vocab_ref = vocab_.fingerprint();
  ck.hyperparams = {{"embed_dim", cfg_.embed_dim},
                    {"hidden_dim", cfg_.hidden_dim},
                    {"attn_dim", cfg_.attn_dim},
                    {"seed", cfg_.seed},
                    {"vocab_size", vocab_.size()}};
  params_.to_checkpoint(ck);
  return ck;
}

NeuralSeq2Seq NeuralSeq2Seq::from_checkpoint(const Checkpoint& ck, const Vocabulary& vocab) {
  if (ck.model_kind != "seq2seq") throw CheckpointError("expected a seq2seq checkpoint, got " + ck.model_kind);
  if (ck.vocab_ref != vocab.fingerprint()) throw VocabularyMismatch("seq2seq checkpoint was built for another vocabulary");
  Seq2SeqConfig cfg;
  try {
    cfg.embed_dim = ck.hyperparams.at("embed_dim").get<std::size_t>();
    cfg.hidden_dim = ck.hyperparams.at("hidden_dim").get<std::size_t>();
    cfg.attn_dim = ck.hyperparams.at("attn_dim").get<std::size_t>();
    cfg.seed = ck.hyperparams.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("seq2seq checkpoint: ") + e.what());
  }
  NeuralSeq2Seq model(vocab, cfg);
  model.params_.from_checkpoint(ck);
  return model;
}

double perplexity(const NeuralSeq2Seq& model, const ParallelCorpus& corpus) {
  double nll = 0.0, tokens = 0.0;
  for (const auto& p : corpus.pairs()) {
    nll += model.loss(p.source, p.reference, nullptr);
    tokens += static_cast<double>(p.reference.size() + 1);
  }
  if (tokens == 0) throw EmptyInput("perplexity: empty corpus");
  return std::exp(nll / tokens);
}

std::vector<EpochLog> train_mle(NeuralSeq2Seq& model, const ParallelCorpus& train, const ParallelCorpus* valid,
                                const TrainConfig& cfg, const std::function<void(const EpochLog&)>& on_epoch) {
  if (train.empty()) throw EmptyInput("train_mle: no training pairs");
  if (train.split() != Split::Train) throw InvalidConfig("train_mle: corpus must be the train split");
  if (cfg.epochs < 1 || cfg.batch_size < 1) throw InvalidConfig("train_mle: epochs and batch size must be >= 1");
  if (model.vocab().size() == 0) throw VocabularyMismatch("train_mle: empty vocabulary");
  for (const auto& p : train.pairs())
    for (const auto* seq : {&p.source, &p.reference})
      for (TokenId t : seq->tokens)
        if (t < 0 || static_cast<std::size_t>(t) >= model.vocab().size())
          throw VocabularyMismatch("train_mle: token id outside the model vocabulary");

  Adam adam(model.params(), cfg.adam);
  ParamStore grad = model.params().zeros_like();
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  std::vector<EpochLog> logs;
  double best_ppl = std::numeric_limits<double>::infinity();
  ParamStore best = model.params();
  int since_best = 0;
  long step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(epoch)}));
    rng.shuffle(order);
    double epoch_nll = 0.0, epoch_tokens = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      grad.set_zero();
      double nll = 0.0, tokens = 0.0;
      for (std::size_t b = start; b < end; ++b) {
        const auto& p = train[order[b]];
        nll += model.loss(p.source, p.reference, &grad);
        tokens += static_cast<double>(p.reference.size() + 1);
      }
      ++step;
      if (!std::isfinite(nll) || !grad.all_finite()) throw DivergedTraining(epoch, step);
      grad *= 1.0 / tokens;
      clip_grad_norm(grad, cfg.clip_norm);
      adam.step(model.params(), grad);
      epoch_nll += nll;
      epoch_tokens += tokens;
    }

    EpochLog log{epoch, epoch_nll / epoch_tokens, 0.0};
    if (valid != nullptr && !valid->empty()) {
      log.valid_ppl = perplexity(model, *valid);
      if (!std::isfinite(log.valid_ppl)) throw DivergedTraining(epoch, step);
    }
    logs.push_back(log);
    if (on_epoch) on_epoch(log);

    if (valid != nullptr && !valid->empty()) {
      if (log.valid_ppl < best_ppl) {
        best_ppl = log.valid_ppl;
        best = model.params();
        since_best = 0;
      } else if (++since_best >= cfg.patience) {
        break;
      }
    }
  }
  if (valid != nullptr && !valid->empty()) model.params() = best;
  return logs;
}

}  // namespace ebr
