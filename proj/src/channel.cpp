#include "ebr/channel.hpp"

#include <algorithm>
#include <cmath>

#include "ebr/error.hpp"

namespace ebr {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_or_neginf(double p) { return p > 0.0 ? std::log(p) : kNegInf; }

void log_add(double& acc, double x) {
  if (x == kNegInf) return;
  if (acc == kNegInf) {
    acc = x;
    return;
  }
  const double hi = std::max(acc, x);
  const double lo = std::min(acc, x);
  acc = hi + std::log1p(std::exp(lo - hi));
}

std::vector<TokenId> strip_eos(const std::vector<TokenId>& tokens) {
  std::vector<TokenId> out = tokens;
  if (!out.empty() && out.back() == Vocabulary::kEos) out.pop_back();
  return out;
}

}  // namespace

void ChannelParams::validate(std::size_t content_size) const {
  for (double p : {p_copy, p_substitute, p_insert, p_delete})
    if (!(p >= 0.0) || p > 1.0) throw InvalidConfig("channel: edit probabilities must lie in [0, 1]");
  if (std::abs(p_copy + p_substitute + p_insert + p_delete - 1.0) > 1e-12)
    throw InvalidConfig("channel: edit probabilities must sum to 1");
  if (substitution_set < 1 || substitution_set + 1 > content_size)
    throw InvalidConfig("channel: substitution set size out of range");
}

ChannelModel::ChannelModel(SyntheticTask task, ChannelParams params)
    : task_(std::move(task)), params_(params) {
  const auto& content = task_.content_tokens();
  params_.validate(content.size());
  Rng rng(derive_seed(task_.options().structure_seed, {0xC0F, params_.confusion_seed}));
  for (TokenId t : content) {
    std::vector<TokenId> pool;
    for (TokenId u : content)
      if (u != t) pool.push_back(u);
    for (std::size_t b = 0; b < params_.substitution_set; ++b) {
      std::size_t j = b + rng.below(pool.size() - b);
      std::swap(pool[b], pool[j]);
    }
    pool.resize(params_.substitution_set);
    confusions_.emplace(t, std::move(pool));
  }
}

const std::vector<TokenId>& ChannelModel::confusions(TokenId token) const {
  static const std::vector<TokenId> kNone;
  auto it = confusions_.find(token);
  return it == confusions_.end() ? kNone : it->second;
}

std::vector<ChannelModel::Outcome> ChannelModel::outcomes(TokenId z) const {
  std::vector<Outcome> out;
  const auto& content = task_.content_tokens();
  const auto& subs = confusions(z);
  if (params_.p_copy > 0) out.push_back({std::log(params_.p_copy), z, -1});
  if (params_.p_substitute > 0)
    for (TokenId s : subs) out.push_back({std::log(params_.p_substitute / static_cast<double>(subs.size())), s, -1});
  if (params_.p_delete > 0) out.push_back({std::log(params_.p_delete), -1, -1});
  if (params_.p_insert > 0)
    for (TokenId u : content) out.push_back({std::log(params_.p_insert / static_cast<double>(content.size())), u, z});
  return out;
}

double ChannelModel::logprob(const TokenSeq& src, const TokenSeq& tgt) const {
  const auto z = task_.transform(strip_eos(src.tokens));
  const auto t = strip_eos(tgt.tokens);
  const std::size_t J = z.size();
  const std::size_t I = t.size();
  const auto& content = task_.content_tokens();
  const double lc = log_or_neginf(params_.p_copy);
  const double ld = log_or_neginf(params_.p_delete);
  const double li = log_or_neginf(params_.p_insert / static_cast<double>(content.size()));

  auto is_content = [&](TokenId id) { return std::binary_search(content.begin(), content.end(), id); };

  std::vector<double> alpha((J + 1) * (I + 1), kNegInf);
  auto at = [&](std::size_t j, std::size_t i) -> double& { return alpha[j * (I + 1) + i]; };
  at(0, 0) = 0.0;
  for (std::size_t j = 0; j < J; ++j) {
    const auto& subs = confusions(z[j]);
    const double ls = subs.empty() ? kNegInf : log_or_neginf(params_.p_substitute / static_cast<double>(subs.size()));
    for (std::size_t i = 0; i <= I; ++i) {
      const double base = at(j, i);
      if (base == kNegInf) continue;
      log_add(at(j + 1, i), base + ld);
      if (i < I) {
        if (t[i] == z[j]) {
          log_add(at(j + 1, i + 1), base + lc);
        } else if (std::find(subs.begin(), subs.end(), t[i]) != subs.end()) {
          log_add(at(j + 1, i + 1), base + ls);
        }
      }
      if (i + 1 < I && t[i + 1] == z[j] && is_content(t[i])) log_add(at(j + 1, i + 2), base + li);
    }
  }
  const double lp = at(J, I);
  return std::isfinite(lp) ? std::min(lp, 0.0) : kLogZero;
}

BaseTranslator::Draw ChannelModel::sample_one(const TokenSeq& src, double temp, Rng& rng) const {
  if (!(temp > 0.0)) throw InvalidConfig("sample: temperature must be positive");
  const auto z = task_.transform(strip_eos(src.tokens));
  Draw draw;
  std::vector<double> weights;
  for (TokenId zj : z) {
    const auto outs = outcomes(zj);
    double top = kNegInf;
    for (const auto& o : outs) top = std::max(top, o.logp / temp);
    weights.clear();
    for (const auto& o : outs) weights.push_back(std::exp(o.logp / temp - top));
    const auto& o = outs[rng.categorical(weights)];
    if (o.first >= 0) draw.tokens.push_back(o.first);
    if (o.second >= 0) draw.tokens.push_back(o.second);
  }
  draw.logprob = logprob(src, TokenSeq(draw.tokens));
  return draw;
}

TokenSeq ChannelModel::beam_decode(const TokenSeq& src, std::size_t width) const {
  if (width < 1) throw InvalidConfig("beam: width must be >= 1");
  const auto z = task_.transform(strip_eos(src.tokens));
  struct Hyp {
    std::vector<TokenId> tokens;
    double score;
  };
  std::vector<Hyp> beam{{{}, 0.0}};
  for (TokenId zj : z) {
    const auto outs = outcomes(zj);
    std::vector<Hyp> next;
    next.reserve(beam.size() * outs.size());
    for (const auto& h : beam) {
      for (const auto& o : outs) {
        Hyp e{h.tokens, h.score + o.logp};
        if (o.first >= 0) e.tokens.push_back(o.first);
        if (o.second >= 0) e.tokens.push_back(o.second);
        next.push_back(std::move(e));
      }
    }
    std::stable_sort(next.begin(), next.end(), [](const Hyp& a, const Hyp& b) { return a.score > b.score; });
    if (next.size() > width) next.resize(width);
    beam = std::move(next);
  }

  const Hyp* best = nullptr;
  double best_score = kNegInf;
  for (const auto& h : beam) {
    const double lp = logprob(src, TokenSeq(h.tokens));
    const double norm = lp / static_cast<double>(h.tokens.size() + 1);
    if (best == nullptr || norm > best_score) {
      best = &h;
      best_score = norm;
    }
  }
  return with_surface(TokenSeq(best->tokens), vocab());
}

Checkpoint ChannelModel::to_checkpoint() const {
  Checkpoint ck;
  ck.model_kind = kind();
  ck.vocab_ref = vocab().fingerprint();
  ck.hyperparams = {{"task", nlohmann::json::parse(task_.to_json())},
                    {"p_copy", params_.p_copy},
                    {"p_substitute", params_.p_substitute},
                    {"p_insert", params_.p_insert},
                    {"p_delete", params_.p_delete},
                    {"substitution_set", params_.substitution_set},
                    {"confusion_seed", params_.confusion_seed}};
  return ck;
}

ChannelModel ChannelModel::from_checkpoint(const Checkpoint& ck) {
  if (ck.model_kind != "channel") throw CheckpointError("expected a channel checkpoint, got " + ck.model_kind);
  try {
    const auto& h = ck.hyperparams;
    ChannelParams p;
    p.p_copy = h.at("p_copy").get<double>();
    p.p_substitute = h.at("p_substitute").get<double>();
    p.p_insert = h.at("p_insert").get<double>();
    p.p_delete = h.at("p_delete").get<double>();
    p.substitution_set = h.at("substitution_set").get<std::size_t>();
    p.confusion_seed = h.at("confusion_seed").get<std::uint64_t>();
    return ChannelModel(SyntheticTask::from_json(h.at("task").dump()), p);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("channel checkpoint: ") + e.what());
  }
}

}  // namespace ebr
