#pragma once

#include <unordered_map>
#include <vector>

#include "ebr/basemodel.hpp"

namespace ebr {

struct ChannelParams {
  double p_copy = 0.45;
  double p_substitute = 0.45;
  double p_insert = 0.05;
  double p_delete = 0.05;
  /// Size of each token's confusion set (substitutes are uniform over it).
  std::size_t substitution_set = 1;
  std::uint64_t confusion_seed = 7;

  void validate(std::size_t content_size) const;
};

/// Exact-likelihood translator: the task's noiseless output passed through a
/// per-token edit channel.
///
/// For each output position z_j, independently:
///   copy        emit z_j                                   p_copy
///   substitute  emit s, s uniform over confusions(z_j)     p_substitute
///   delete      emit nothing                               p_delete
///   insert      emit u then z_j, u uniform over content    p_insert
/// then EOS. logprob() marginalizes over edit paths with a forward pass.
class ChannelModel final : public BaseTranslator {
 public:
  ChannelModel(SyntheticTask task, ChannelParams params);

  std::string kind() const override { return "channel"; }
  const Vocabulary& vocab() const override { return task_.vocab(); }
  const SyntheticTask& task() const { return task_; }
  const ChannelParams& params() const { return params_; }
  const std::vector<TokenId>& confusions(TokenId token) const;

  double logprob(const TokenSeq& src, const TokenSeq& tgt) const override;
  Draw sample_one(const TokenSeq& src, double temp, Rng& rng) const override;
  TokenSeq beam_decode(const TokenSeq& src, std::size_t width) const override;
  Checkpoint to_checkpoint() const override;

  static ChannelModel from_checkpoint(const Checkpoint& ck);

 private:
  struct Outcome {
    double logp;
    TokenId first;   // -1 when nothing is emitted
    TokenId second;  // -1 unless two tokens are emitted
  };
  std::vector<Outcome> outcomes(TokenId z) const;

  SyntheticTask task_;
  ChannelParams params_;
  std::unordered_map<TokenId, std::vector<TokenId>> confusions_;
};

}  // namespace ebr
