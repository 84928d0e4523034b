#include "ebr/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "ebr/error.hpp"

namespace ebr {

using json = nlohmann::json;

namespace {

const std::string kWordStart = "\xE2\x96\x81";  // U+2581
const std::string kContinuation = "@@";

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

std::string fnv1a_hex(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<std::string> apply_merges(std::vector<std::string> symbols,
                                      const std::map<Merge, std::size_t>& ranks) {
  for (;;) {
    std::size_t best_rank = ranks.size();
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = ranks.find({symbols[i], symbols[i + 1]});
      if (it != ranks.end() && it->second < best_rank) best_rank = it->second;
    }
    if (best_rank == ranks.size()) return symbols;
    const Merge* chosen = nullptr;
    for (const auto& [pair, rank] : ranks) {
      if (rank == best_rank) {
        chosen = &pair;
        break;
      }
    }
    std::vector<std::string> merged;
    merged.reserve(symbols.size());
    for (std::size_t i = 0; i < symbols.size();) {
      if (i + 1 < symbols.size() && symbols[i] == chosen->first && symbols[i + 1] == chosen->second) {
        merged.push_back(symbols[i] + symbols[i + 1]);
        i += 2;
      } else {
        merged.push_back(symbols[i]);
        ++i;
      }
    }
    symbols = std::move(merged);
  }
}

std::vector<std::string> bpe_symbols(const std::string& word) {
  std::vector<std::string> symbols{kWordStart};
  for (auto& c : utf8_chars(word)) symbols.push_back(std::move(c));
  return symbols;
}

}  // namespace

// ---------------------------------------------------------------------------
// Vocabulary

const std::vector<std::string>& Vocabulary::reserved_tokens() {
  static const std::vector<std::string> kReserved{"<pad>", "<s>", "</s>", "<unk>", "<mask>"};
  return kReserved;
}

Vocabulary::Vocabulary() {
  for (const auto& t : reserved_tokens()) push(t);
}

TokenId Vocabulary::push(const std::string& token) {
  auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  TokenId id = static_cast<TokenId>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens, TokenScheme scheme,
                                   std::vector<Merge> merges) {
  Vocabulary v;
  v.scheme_ = scheme;
  for (const auto& t : tokens) v.push(t);
  v.merges_ = std::move(merges);
  return v;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& sentences) {
  std::set<std::string> words;
  std::set<std::string> chars;
  for (const auto& s : sentences) {
    for (auto& w : split_whitespace(s)) {
      for (auto& c : utf8_chars(w)) chars.insert(c);
      words.insert(std::move(w));
    }
  }
  std::vector<std::string> tokens(words.begin(), words.end());
  for (const auto& c : chars) {
    tokens.push_back(c);
    tokens.push_back(c + kContinuation);
  }
  return from_tokens(tokens, TokenScheme::Word);
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::id(std::string_view token) const { return find(token).value_or(kUnk); }

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) return tokens_[kUnk];
  return tokens_[static_cast<std::size_t>(id)];
}

std::string Vocabulary::to_json() const {
  json j;
  j["version"] = kFormatVersion;
  j["scheme"] = scheme_ == TokenScheme::Bpe ? "bpe" : "word";
  j["reserved"] = reserved_tokens();
  j["tokens"] = std::vector<std::string>(tokens_.begin() + kNumReserved, tokens_.end());
  json merges = json::array();
  for (const auto& [a, b] : merges_) merges.push_back({a, b});
  j["merges"] = merges;
  return j.dump(1);
}

Vocabulary Vocabulary::from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("vocabulary: ") + e.what());
  }
  try {
    if (j.at("version").get<int>() != kFormatVersion) throw CheckpointError("vocabulary: unsupported version");
    if (j.at("reserved").get<std::vector<std::string>>() != reserved_tokens())
      throw CheckpointError("vocabulary: reserved ids differ");
    std::vector<Merge> merges;
    for (const auto& m : j.value("merges", json::array()))
      merges.emplace_back(m.at(0).get<std::string>(), m.at(1).get<std::string>());
    TokenScheme scheme = j.value("scheme", std::string("word")) == "bpe" ? TokenScheme::Bpe : TokenScheme::Word;
    return from_tokens(j.at("tokens").get<std::vector<std::string>>(), scheme, std::move(merges));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("vocabulary: ") + e.what());
  }
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json() << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

std::string Vocabulary::fingerprint() const {
  std::string all = scheme_ == TokenScheme::Bpe ? "bpe\n" : "word\n";
  for (const auto& t : tokens_) all += t + '\n';
  for (const auto& [a, b] : merges_) all += a + ' ' + b + '\n';
  return fnv1a_hex(all);
}

// ---------------------------------------------------------------------------
// Tokenization

std::vector<std::string> utf8_chars(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    auto lead = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if (lead >= 0xF0) len = 4;
    else if (lead >= 0xE0) len = 3;
    else if (lead >= 0xC0) len = 2;
    len = std::min(len, text.size() - i);
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

std::string normalize_whitespace(std::string_view text) {
  std::string out;
  for (const auto& w : split_whitespace(text)) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

TokenSeq tokenize(std::string_view text, const Vocabulary& vocab) {
  auto words = split_whitespace(text);
  if (words.empty()) throw EmptyInput("tokenize: empty input");

  std::vector<TokenId> ids;
  if (vocab.scheme() == TokenScheme::Bpe) {
    std::map<Merge, std::size_t> ranks;
    for (std::size_t r = 0; r < vocab.merges().size(); ++r) ranks.emplace(vocab.merges()[r], r);
    for (const auto& w : words)
      for (const auto& sym : apply_merges(bpe_symbols(w), ranks)) ids.push_back(vocab.id(sym));
  } else {
    for (const auto& w : words) {
      if (auto id = vocab.find(w); id && !Vocabulary::is_reserved(*id)) {
        ids.push_back(*id);
        continue;
      }
      auto chars = utf8_chars(w);
      for (std::size_t i = 0; i < chars.size(); ++i) {
        bool last = i + 1 == chars.size();
        ids.push_back(vocab.id(last ? chars[i] : chars[i] + kContinuation));
      }
    }
  }
  return TokenSeq(std::move(ids), normalize_whitespace(text));
}

std::string detokenize(std::span<const TokenId> tokens, const Vocabulary& vocab) {
  std::string out;
  if (vocab.scheme() == TokenScheme::Bpe) {
    for (TokenId id : tokens) {
      if (Vocabulary::is_reserved(id) && id != Vocabulary::kUnk) continue;
      out += vocab.token(id);
    }
    std::string spaced;
    for (std::size_t pos = 0; pos < out.size();) {
      if (out.compare(pos, kWordStart.size(), kWordStart) == 0) {
        spaced += ' ';
        pos += kWordStart.size();
      } else {
        spaced += out[pos++];
      }
    }
    return normalize_whitespace(spaced);
  }

  bool glue = false;
  for (TokenId id : tokens) {
    if (Vocabulary::is_reserved(id) && id != Vocabulary::kUnk) continue;
    std::string_view piece = vocab.token(id);
    if (!out.empty() && !glue) out += ' ';
    if (!Vocabulary::is_reserved(id) && ends_with(piece, kContinuation) && piece.size() > kContinuation.size()) {
      out += piece.substr(0, piece.size() - kContinuation.size());
      glue = true;
    } else {
      out += piece;
      glue = false;
    }
  }
  return out;
}

TokenSeq with_surface(TokenSeq seq, const Vocabulary& vocab) {
  seq.surface = detokenize(seq.tokens, vocab);
  return seq;
}

// ---------------------------------------------------------------------------
// ParallelCorpus

std::string to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
  }
  return "train";
}

Split split_from_string(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "valid") return Split::Valid;
  if (name == "test") return Split::Test;
  throw InvalidConfig("unknown split '" + std::string(name) + "'");
}

ParallelCorpus::ParallelCorpus(std::vector<SentencePair> pairs, std::string language_pair, Split split)
    : pairs_(std::move(pairs)), language_pair_(std::move(language_pair)), split_(split) {
  for (std::size_t i = 0; i < pairs_.size(); ++i)
    if (pairs_[i].reference.empty()) throw EmptyInput("corpus: empty reference at pair " + std::to_string(i));
}

ParallelCorpus ParallelCorpus::from_text(const std::vector<std::string>& sources,
                                         const std::vector<std::string>& references,
                                         const Vocabulary& vocab, std::string language_pair, Split split) {
  if (sources.size() != references.size())
    throw AlignmentError("corpus: " + std::to_string(sources.size()) + " sources vs " +
                         std::to_string(references.size()) + " references");
  std::vector<SentencePair> pairs;
  pairs.reserve(sources.size());
  for (std::size_t i = 0; i < sources.size(); ++i)
    pairs.push_back({tokenize(sources[i], vocab), tokenize(references[i], vocab)});
  return ParallelCorpus(std::move(pairs), std::move(language_pair), split);
}

std::vector<TokenSeq> ParallelCorpus::references() const {
  std::vector<TokenSeq> out;
  out.reserve(pairs_.size());
  for (const auto& p : pairs_) out.push_back(p.reference);
  return out;
}

std::vector<TokenSeq> ParallelCorpus::sources() const {
  std::vector<TokenSeq> out;
  out.reserve(pairs_.size());
  for (const auto& p : pairs_) out.push_back(p.source);
  return out;
}

// ---------------------------------------------------------------------------
// BPE

Vocabulary learn_bpe(const ParallelCorpus& corpus, std::size_t num_merges) {
  std::map<std::string, long> word_freq;
  for (const auto& p : corpus.pairs()) {
    for (const auto* seq : {&p.source, &p.reference})
      for (auto& w : split_whitespace(seq->surface)) ++word_freq[w];
  }

  std::vector<std::pair<std::vector<std::string>, long>> words;
  std::set<std::string> chars;
  for (const auto& [w, f] : word_freq) {
    auto symbols = bpe_symbols(w);
    chars.insert(symbols.begin(), symbols.end());
    words.emplace_back(std::move(symbols), f);
  }

  std::vector<std::string> tokens(chars.begin(), chars.end());
  std::vector<Merge> merges;
  for (std::size_t m = 0; m < num_merges; ++m) {
    std::map<Merge, long> counts;
    for (const auto& [symbols, f] : words)
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i) counts[{symbols[i], symbols[i + 1]}] += f;
    if (counts.empty()) break;

    auto best = counts.begin();
    for (auto it = counts.begin(); it != counts.end(); ++it)
      if (it->second > best->second) best = it;
    const Merge merge = best->first;
    merges.push_back(merge);
    tokens.push_back(merge.first + merge.second);

    for (auto& [symbols, f] : words) {
      std::vector<std::string> merged;
      merged.reserve(symbols.size());
      for (std::size_t i = 0; i < symbols.size();) {
        if (i + 1 < symbols.size() && symbols[i] == merge.first && symbols[i + 1] == merge.second) {
          merged.push_back(merge.first + merge.second);
          i += 2;
        } else {
          merged.push_back(symbols[i++]);
        }
      }
      symbols = std::move(merged);
    }
  }
  return Vocabulary::from_tokens(tokens, TokenScheme::Bpe, std::move(merges));
}

// ---------------------------------------------------------------------------
// Synthetic tasks

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::Reverse: return "reverse";
    case TaskKind::Cipher: return "cipher";
    case TaskKind::NoisyCopy: return "noisycopy";
  }
  return "cipher";
}

TaskKind task_from_string(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "reverse") return TaskKind::Reverse;
  if (lower == "cipher") return TaskKind::Cipher;
  if (lower == "noisycopy" || lower == "noisy-copy" || lower == "noisy_copy") return TaskKind::NoisyCopy;
  throw InvalidConfig("unknown task '" + std::string(name) + "'");
}

SyntheticTask::SyntheticTask(TaskKind kind, SyntheticTaskOptions options)
    : kind_(kind), options_(std::move(options)) {
  if (options_.vocab_size < Vocabulary::kNumReserved + 2)
    throw InvalidConfig("synthetic task: vocab_size must leave at least two content tokens");
  if (options_.min_len < 1 || options_.max_len < options_.min_len)
    throw InvalidConfig("synthetic task: need 1 <= min_len <= max_len");
  const std::size_t n_content = options_.vocab_size - Vocabulary::kNumReserved;
  if (options_.branching < 1 || options_.branching > n_content)
    throw InvalidConfig("synthetic task: branching out of range");

  std::vector<std::string> names;
  for (std::size_t i = 0; i < n_content; ++i) names.push_back("w" + std::to_string(i));
  vocab_ = Vocabulary::from_tokens(names);
  for (std::size_t i = 0; i < n_content; ++i) content_.push_back(static_cast<TokenId>(i) + Vocabulary::kNumReserved);

  Rng rng(derive_seed(options_.structure_seed, {1}));
  for (std::size_t i = 0; i < n_content; ++i) start_weights_.push_back(0.1 + 0.9 * rng.uniform());
  for (std::size_t i = 0; i < n_content; ++i) {
    std::vector<TokenId> pool = content_;
    std::vector<TokenId> succ;
    std::vector<double> w;
    for (std::size_t b = 0; b < options_.branching; ++b) {
      std::size_t j = b + rng.below(pool.size() - b);
      std::swap(pool[b], pool[j]);
      succ.push_back(pool[b]);
      w.push_back(0.2 + 0.8 * rng.uniform());
    }
    successors_.push_back(std::move(succ));
    successor_weights_.push_back(std::move(w));
  }

  if (options_.cipher_map.empty()) {
    std::vector<TokenId> perm = content_;
    Rng crng(derive_seed(options_.structure_seed, {2}));
    crng.shuffle(perm);
    for (std::size_t i = 0; i < n_content; ++i) cipher_[content_[i]] = perm[i];
  } else {
    for (auto [from, to] : options_.cipher_map) cipher_[from] = to;
  }
}

std::string SyntheticTask::language_pair() const { return "syn-" + to_string(kind_); }

TokenId SyntheticTask::cipher(TokenId id) const {
  auto it = cipher_.find(id);
  return it == cipher_.end() ? id : it->second;
}

std::vector<TokenId> SyntheticTask::transform(std::span<const TokenId> source) const {
  std::vector<TokenId> out(source.begin(), source.end());
  switch (kind_) {
    case TaskKind::Reverse: std::reverse(out.begin(), out.end()); break;
    case TaskKind::Cipher:
      for (auto& t : out) t = cipher(t);
      break;
    case TaskKind::NoisyCopy: break;
  }
  return out;
}

std::vector<TokenId> SyntheticTask::sample_source(Rng& rng) const {
  const std::size_t len = options_.min_len + rng.below(options_.max_len - options_.min_len + 1);
  std::vector<TokenId> out;
  out.reserve(len);
  std::size_t cur = rng.categorical(start_weights_);
  out.push_back(content_[cur]);
  while (out.size() < len) {
    std::size_t k = rng.categorical(successor_weights_[cur]);
    TokenId next = successors_[cur][k];
    out.push_back(next);
    cur = static_cast<std::size_t>(next - Vocabulary::kNumReserved);
  }
  return out;
}

std::string SyntheticTask::to_json() const {
  json j;
  j["kind"] = to_string(kind_);
  j["vocab_size"] = options_.vocab_size;
  j["min_len"] = options_.min_len;
  j["max_len"] = options_.max_len;
  j["branching"] = options_.branching;
  j["structure_seed"] = options_.structure_seed;
  json cm = json::array();
  for (auto [a, b] : options_.cipher_map) cm.push_back({a, b});
  j["cipher_map"] = cm;
  return j.dump(1);
}

SyntheticTask SyntheticTask::from_json(std::string_view text) {
  try {
    json j = json::parse(text);
    SyntheticTaskOptions o;
    o.vocab_size = j.value("vocab_size", o.vocab_size);
    o.min_len = j.value("min_len", o.min_len);
    o.max_len = j.value("max_len", o.max_len);
    o.branching = j.value("branching", o.branching);
    o.structure_seed = j.value("structure_seed", o.structure_seed);
    for (const auto& e : j.value("cipher_map", json::array())) o.cipher_map[e.at(0).get<TokenId>()] = e.at(1).get<TokenId>();
    return SyntheticTask(task_from_string(j.at("kind").get<std::string>()), o);
  } catch (const json::exception& e) {
    throw InvalidConfig(std::string("task description: ") + e.what());
  }
}

ParallelCorpus gen_synthetic(const SyntheticTask& task, std::size_t n, std::uint64_t seed, Split split) {
  if (n == 0) throw InvalidConfig("gen_synthetic: n must be at least 1");
  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(split), 0x5EED}));
  std::vector<SentencePair> pairs;
  pairs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto src = task.sample_source(rng);
    auto ref = task.transform(src);
    pairs.push_back({with_surface(TokenSeq(std::move(src)), task.vocab()),
                     with_surface(TokenSeq(std::move(ref)), task.vocab())});
  }
  return ParallelCorpus(std::move(pairs), task.language_pair(), split);
}

// ---------------------------------------------------------------------------
// I/O

std::vector<std::string> read_lines(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot read " + file.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

RawParallel read_parallel(const std::filesystem::path& source_file, const std::filesystem::path& reference_file) {
  RawParallel raw{read_lines(source_file), read_lines(reference_file)};
  if (raw.sources.size() != raw.references.size())
    throw AlignmentError(source_file.string() + " and " + reference_file.string() + " have different line counts");
  return raw;
}

RawParallel read_tsv(const std::filesystem::path& file) {
  RawParallel raw;
  std::size_t lineno = 0;
  for (auto& line : read_lines(file)) {
    ++lineno;
    auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos)
      throw AlignmentError(file.string() + ":" + std::to_string(lineno) + ": expected two tab-separated columns");
    raw.sources.push_back(line.substr(0, tab));
    raw.references.push_back(line.substr(tab + 1));
  }
  return raw;
}

void write_parallel(const ParallelCorpus& corpus, const Vocabulary& vocab,
                    const std::filesystem::path& source_file, const std::filesystem::path& reference_file) {
  std::ofstream src(source_file, std::ios::binary), ref(reference_file, std::ios::binary);
  if (!src || !ref) throw IoError("cannot write " + source_file.string());
  for (const auto& p : corpus.pairs()) {
    src << detokenize(p.source.tokens, vocab) << '\n';
    ref << detokenize(p.reference.tokens, vocab) << '\n';
  }
}

}  // namespace ebr
