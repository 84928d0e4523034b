#include "ebr/basemodel.hpp"

#include "ebr/channel.hpp"
#include "ebr/error.hpp"
#include "ebr/seq2seq.hpp"

namespace ebr {

CandidateSet sample(const BaseTranslator& model, const TokenSeq& src, std::size_t k, double temp,
                    std::uint64_t seed, const TokenSeq* ref, const BleuConfig& bleu) {
  if (k < 1) throw InvalidConfig("sample: k must be >= 1");
  if (!(temp > 0.0)) throw InvalidConfig("sample: temperature must be positive");
  CandidateSet set;
  set.source = src;
  set.candidates.reserve(k);
  Rng rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    auto draw = model.sample_one(src, temp, rng);
    Candidate c;
    c.hypothesis = with_surface(TokenSeq(std::move(draw.tokens)), model.vocab());
    c.base_logprob = draw.logprob;
    if (ref != nullptr) c.sentence_bleu = sentence_bleu(c.hypothesis, *ref, bleu);
    set.candidates.push_back(std::move(c));
  }
  return set;
}

std::unique_ptr<BaseTranslator> load_translator(const Checkpoint& ck, const Vocabulary& vocab) {
  if (ck.vocab_ref != vocab.fingerprint())
    throw VocabularyMismatch("base model checkpoint was built for another vocabulary");
  if (ck.model_kind == "channel") return std::make_unique<ChannelModel>(ChannelModel::from_checkpoint(ck));
  if (ck.model_kind == "seq2seq") return std::make_unique<NeuralSeq2Seq>(NeuralSeq2Seq::from_checkpoint(ck, vocab));
  throw CheckpointError("not a base model checkpoint: " + ck.model_kind);
}

}  // namespace ebr
