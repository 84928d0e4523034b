#pragma once

#include <functional>
#include <vector>

#include "ebr/basemodel.hpp"
#include "ebr/params.hpp"

namespace ebr {

struct Seq2SeqConfig {
  std::size_t embed_dim = 32;
  std::size_t hidden_dim = 64;
  std::size_t attn_dim = 32;
  std::uint64_t seed = 1;
};

/// Recurrent encoder-decoder with additive attention.
///
///   encoder   h_j = tanh(We e(x_j) + Ue h_{j-1} + be), over source + EOS
///   decoder   s_t = tanh(Wd e(y_{t-1}) + Ud s_{t-1} + bd), s_{-1} = h_last, y_{-1} = BOS
///   attention a_t = softmax_j(v . tanh(Wa h_j + Ua s_t)), c_t = sum_j a_tj h_j
///   output    log_softmax(Wo [s_t; c_t] + bo), with PAD/BOS/MASK masked out
class NeuralSeq2Seq final : public BaseTranslator {
 public:
  NeuralSeq2Seq(Vocabulary vocab, Seq2SeqConfig cfg);

  std::string kind() const override { return "seq2seq"; }
  const Vocabulary& vocab() const override { return vocab_; }
  const Seq2SeqConfig& config() const { return cfg_; }

  double logprob(const TokenSeq& src, const TokenSeq& tgt) const override;
  Draw sample_one(const TokenSeq& src, double temp, Rng& rng) const override;
  TokenSeq beam_decode(const TokenSeq& src, std::size_t width) const override;
  Checkpoint to_checkpoint() const override;
  static NeuralSeq2Seq from_checkpoint(const Checkpoint& ck, const Vocabulary& vocab);

  /// Per-step output log-distribution for a prefix (no EOS). Test hook.
  Vector next_log_probs(const TokenSeq& src, const std::vector<TokenId>& prefix) const;

  /// Summed token cross-entropy of (src, tgt + EOS); adds d(loss)/d(params)
  /// into grad when non-null.
  double loss(const TokenSeq& src, const TokenSeq& tgt, ParamStore* grad) const;

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

 private:
  struct Encoded {
    Matrix states;  // hidden x S
    Matrix keys;    // attn x S
  };
  Encoded encode(const std::vector<TokenId>& src) const;
  Vector decoder_step(const Vector& prev_state, TokenId input) const;
  Vector output_log_probs(const Encoded& enc, const Vector& state) const;

  Vocabulary vocab_;
  Seq2SeqConfig cfg_;
  ParamStore params_;
  std::size_t src_emb_, tgt_emb_, we_, ue_, be_, wd_, ud_, bd_, wa_, ua_, va_, wo_, bo_;
};

struct TrainConfig {
  int epochs = 20;
  std::size_t batch_size = 16;
  AdamConfig adam{0.005, 0.9, 0.98, 1e-8};
  int patience = 3;
  double clip_norm = 5.0;
  std::uint64_t seed = 1;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0;  // mean per-token cross-entropy
  double valid_ppl = 0;   // 0 when no validation corpus
};

/// Perplexity exp(mean token cross-entropy, EOS included).
double perplexity(const NeuralSeq2Seq& model, const ParallelCorpus& corpus);

/// Adam on token cross-entropy with teacher forcing. With a validation corpus,
/// stops after `patience` epochs without improvement and restores the best
/// parameters. Throws EmptyInput for an empty corpus and DivergedTraining on NaN.
std::vector<EpochLog> train_mle(NeuralSeq2Seq& model, const ParallelCorpus& train, const ParallelCorpus* valid,
                                const TrainConfig& cfg,
                                const std::function<void(const EpochLog&)>& on_epoch = {});

}  // namespace ebr
