#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ebr/rng.hpp"

namespace ebr {

using TokenId = std::int32_t;

/// A tokenized sentence. `surface` is the text it came from (may be empty for
/// model output that has not been detokenized yet). Equality compares tokens.
struct TokenSeq {
  std::vector<TokenId> tokens;
  std::string surface;

  TokenSeq() = default;
  explicit TokenSeq(std::vector<TokenId> ids, std::string text = {})
      : tokens(std::move(ids)), surface(std::move(text)) {}

  std::size_t size() const { return tokens.size(); }
  bool empty() const { return tokens.empty(); }
  std::span<const TokenId> view() const { return tokens; }

  friend bool operator==(const TokenSeq& a, const TokenSeq& b) { return a.tokens == b.tokens; }
};

enum class TokenScheme { Word, Bpe };

using Merge = std::pair<std::string, std::string>;

/// Token <-> id map. Ids 0..4 are reserved and fixed; content ids start at 5.
///
/// Word scheme: whole words, plus single characters in two forms, "c" (ends a
/// word) and "c@@" (word continues), used when a word is out of vocabulary.
/// Bpe scheme: "▁" marks a word start and is itself a symbol; tokens are the
/// characters plus one merged symbol per learned merge.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr TokenId kMask = 4;
  static constexpr TokenId kNumReserved = 5;
  static constexpr int kFormatVersion = 1;

  static const std::vector<std::string>& reserved_tokens();

  /// Reserved tokens only.
  Vocabulary();

  /// Reserved ids followed by `tokens` in order (duplicates are dropped).
  static Vocabulary from_tokens(const std::vector<std::string>& tokens,
                                TokenScheme scheme = TokenScheme::Word,
                                std::vector<Merge> merges = {});

  /// Word-scheme vocabulary over every whitespace unit and character of `sentences`.
  static Vocabulary build(const std::vector<std::string>& sentences);

  std::size_t size() const { return tokens_.size(); }
  TokenScheme scheme() const { return scheme_; }
  const std::vector<Merge>& merges() const { return merges_; }

  std::optional<TokenId> find(std::string_view token) const;
  /// Id of `token`, or UNK.
  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;

  static bool is_reserved(TokenId id) { return id >= 0 && id < kNumReserved; }

  std::string to_json() const;
  static Vocabulary from_json(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  /// Stable fingerprint used to tie checkpoints to their vocabulary.
  std::string fingerprint() const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.scheme_ == b.scheme_ && a.tokens_ == b.tokens_ && a.merges_ == b.merges_;
  }

 private:
  TokenId push(const std::string& token);

  TokenScheme scheme_ = TokenScheme::Word;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  std::vector<Merge> merges_;
};

/// Splits UTF-8 text into code points (each returned as its byte string).
std::vector<std::string> utf8_chars(std::string_view text);

/// Collapses whitespace runs to single spaces and trims both ends.
std::string normalize_whitespace(std::string_view text);

/// Throws EmptyInput for empty or whitespace-only text.
TokenSeq tokenize(std::string_view text, const Vocabulary& vocab);

/// Inverse of tokenize for in-vocabulary text. Reserved ids other than UNK are dropped.
std::string detokenize(std::span<const TokenId> tokens, const Vocabulary& vocab);

/// Fills in `seq.surface` from its tokens.
TokenSeq with_surface(TokenSeq seq, const Vocabulary& vocab);

enum class Split { Train, Valid, Test };

std::string to_string(Split split);
Split split_from_string(std::string_view name);

struct SentencePair {
  TokenSeq source;
  TokenSeq reference;
};

/// Aligned (source, reference) pairs for one language pair and split.
/// Immutable after construction.
class ParallelCorpus {
 public:
  ParallelCorpus() = default;
  ParallelCorpus(std::vector<SentencePair> pairs, std::string language_pair, Split split);

  /// Tokenizes aligned raw sentences. Throws AlignmentError on a length mismatch.
  static ParallelCorpus from_text(const std::vector<std::string>& sources,
                                  const std::vector<std::string>& references,
                                  const Vocabulary& vocab, std::string language_pair, Split split);

  const std::vector<SentencePair>& pairs() const { return pairs_; }
  const SentencePair& operator[](std::size_t i) const { return pairs_[i]; }
  std::size_t size() const { return pairs_.size(); }
  bool empty() const { return pairs_.empty(); }
  const std::string& language_pair() const { return language_pair_; }
  Split split() const { return split_; }

  std::vector<TokenSeq> references() const;
  std::vector<TokenSeq> sources() const;

 private:
  std::vector<SentencePair> pairs_;
  std::string language_pair_;
  Split split_ = Split::Train;
};

/// Highest-frequency adjacent-pair merges over the words of both sides,
/// ties broken by the lexicographically smallest (left, right) pair. Stops
/// early once no adjacent pair remains.
Vocabulary learn_bpe(const ParallelCorpus& corpus, std::size_t num_merges);

// ---------------------------------------------------------------------------
// Synthetic tasks

enum class TaskKind { Reverse, Cipher, NoisyCopy };

std::string to_string(TaskKind kind);
TaskKind task_from_string(std::string_view name);

struct SyntheticTaskOptions {
  /// Total vocabulary size including the five reserved ids.
  std::size_t vocab_size = 30;
  std::size_t min_len = 6;
  std::size_t max_len = 12;
  /// Successors per token in the source Markov chain.
  std::size_t branching = 3;
  /// Fixes the language (chain and cipher); the data seed only picks sentences.
  std::uint64_t structure_seed = 20201;
  /// Explicit cipher entries; unlisted tokens map to themselves. Empty means a
  /// random permutation derived from structure_seed.
  std::map<TokenId, TokenId> cipher_map;
};

/// A synthetic language pair. Sources follow a sparse first-order Markov chain
/// so targets carry regularities an unconditional scorer can learn.
class SyntheticTask {
 public:
  explicit SyntheticTask(TaskKind kind, SyntheticTaskOptions options = {});

  TaskKind kind() const { return kind_; }
  const SyntheticTaskOptions& options() const { return options_; }
  const Vocabulary& vocab() const { return vocab_; }
  const std::vector<TokenId>& content_tokens() const { return content_; }
  std::string language_pair() const;

  /// The noiseless reference for a source.
  std::vector<TokenId> transform(std::span<const TokenId> source) const;
  TokenId cipher(TokenId id) const;

  std::vector<TokenId> sample_source(Rng& rng) const;

  std::string to_json() const;
  static SyntheticTask from_json(std::string_view text);

 private:
  TaskKind kind_;
  SyntheticTaskOptions options_;
  Vocabulary vocab_;
  std::vector<TokenId> content_;
  std::vector<double> start_weights_;
  // successors_[i] / successor_weights_[i] are indexed by content position.
  std::vector<std::vector<TokenId>> successors_;
  std::vector<std::vector<double>> successor_weights_;
  std::unordered_map<TokenId, TokenId> cipher_;
};

/// n pairs drawn deterministically from (task, seed).
ParallelCorpus gen_synthetic(const SyntheticTask& task, std::size_t n, std::uint64_t seed,
                             Split split = Split::Train);

// ---------------------------------------------------------------------------
// On-disk corpora

struct RawParallel {
  std::vector<std::string> sources;
  std::vector<std::string> references;
};

/// Two line-aligned UTF-8 files. Throws AlignmentError when line counts differ.
RawParallel read_parallel(const std::filesystem::path& source_file,
                          const std::filesystem::path& reference_file);
/// A two-column TSV (source<TAB>reference).
RawParallel read_tsv(const std::filesystem::path& file);
std::vector<std::string> read_lines(const std::filesystem::path& file);

void write_parallel(const ParallelCorpus& corpus, const Vocabulary& vocab,
                    const std::filesystem::path& source_file,
                    const std::filesystem::path& reference_file);

}  // namespace ebr
