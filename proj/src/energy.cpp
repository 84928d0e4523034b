#include "ebr/energy.hpp"

#include <algorithm>
#include <cmath>

#include "ebr/error.hpp"

namespace ebr {

std::string to_string(Pooling pooling) { return pooling == Pooling::Conv ? "conv" : "mean"; }

Pooling pooling_from_string(std::string_view name) {
  if (name == "conv") return Pooling::Conv;
  if (name == "mean") return Pooling::Mean;
  throw InvalidConfig("unknown pooling: " + std::string(name));
}

EnergyModel::EnergyModel(std::size_t vocab_size, EnergyConfig cfg) : vocab_size_(vocab_size), cfg_(cfg) {
  if (vocab_size_ <= static_cast<std::size_t>(Vocabulary::kEos)) throw InvalidConfig("energy: vocabulary too small");
  if (cfg_.embed_dim < 1 || cfg_.hidden_dim < 1) throw InvalidConfig("energy: dimensions must be positive");
  if (!(cfg_.l2 >= 0.0)) throw InvalidConfig("energy: l2 must be non-negative");

  Rng rng(derive_seed(cfg_.seed, {0xE4E5}));
  auto uniform = [&](std::size_t r, std::size_t c, double scale) {
    Matrix m(static_cast<long>(r), static_cast<long>(c));
    for (long j = 0; j < m.cols(); ++j)
      for (long i = 0; i < m.rows(); ++i) m(i, j) = (2.0 * rng.uniform() - 1.0) * scale;
    return m;
  };
  const std::size_t d = cfg_.embed_dim, h = cfg_.hidden_dim;
  emb_ = params_.add("embed", uniform(d, vocab_size_, 0.1));
  if (cfg_.pooling == Pooling::Conv) {
    conv_w_ = params_.add("conv_w", uniform(d, 3 * d, 1.0 / std::sqrt(3.0 * static_cast<double>(d))));
    conv_b_ = params_.add("conv_b", Matrix::Zero(static_cast<long>(d), 1));
  }
  w1_ = params_.add("w1", uniform(h, d, 1.0 / std::sqrt(static_cast<double>(d))));
  b1_ = params_.add("b1", Matrix::Zero(static_cast<long>(h), 1));
  w2_ = params_.add("w2", uniform(1, h, 1.0 / std::sqrt(static_cast<double>(h))));
  b2_ = params_.add("b2", Matrix::Zero(1, 1));
}

void EnergyModel::check_tokens(std::span<const TokenId> y) const {
  if (y.empty()) throw EmptyInput("energy: empty sentence");
  for (TokenId t : y)
    if (t < 0 || static_cast<std::size_t>(t) >= vocab_size_) throw VocabularyMismatch("energy: token id out of range");
}

EnergyModel::Forward EnergyModel::forward(std::span<const TokenId> y) const {
  check_tokens(y);
  const long d = static_cast<long>(cfg_.embed_dim);
  const double inv_len = 1.0 / static_cast<double>(y.size());
  Forward f;
  f.pooled = Vector::Zero(d);
  if (cfg_.pooling == Pooling::Mean) {
    for (TokenId t : y) f.pooled += params_[emb_].col(t);
  } else {
    const Matrix& wc = params_[conv_w_];
    const auto bc = params_[conv_b_].col(0);
    for (std::size_t i = 0; i < y.size(); ++i) {
      const TokenId left = i == 0 ? Vocabulary::kBos : y[i - 1];
      const TokenId right = i + 1 == y.size() ? Vocabulary::kEos : y[i + 1];
      Vector win(3 * d);
      win << params_[emb_].col(left), params_[emb_].col(y[i]), params_[emb_].col(right);
      Vector u = (wc * win + bc).array().tanh().matrix();
      f.pooled += u;
      f.windows.push_back(std::move(win));
      f.units.push_back(std::move(u));
    }
  }
  f.pooled *= inv_len;
  f.hidden = (params_[w1_] * f.pooled + params_[b1_].col(0)).array().tanh().matrix();
  f.value = params_[w2_].row(0).dot(f.hidden) + params_[b2_](0, 0);
  return f;
}

double EnergyModel::energy(std::span<const TokenId> y) const { return forward(y).value; }

double EnergyModel::accumulate_grad(std::span<const TokenId> y, double weight, ParamStore& grad) const {
  const Forward f = forward(y);
  const long d = static_cast<long>(cfg_.embed_dim);
  const double inv_len = 1.0 / static_cast<double>(y.size());

  grad[b2_](0, 0) += weight;
  grad[w2_].row(0) += weight * f.hidden.transpose();
  const Vector dpre1 =
      (weight * params_[w2_].row(0).transpose().array() * (1.0 - f.hidden.array().square())).matrix();
  grad[b1_].col(0) += dpre1;
  grad[w1_] += dpre1 * f.pooled.transpose();
  const Vector dpooled = params_[w1_].transpose() * dpre1 * inv_len;

  if (cfg_.pooling == Pooling::Mean) {
    if (!cfg_.freeze_embeddings)
      for (TokenId t : y) grad[emb_].col(t) += dpooled;
    return f.value;
  }

  const Matrix& wc = params_[conv_w_];
  for (std::size_t i = 0; i < y.size(); ++i) {
    const Vector dpre = (dpooled.array() * (1.0 - f.units[i].array().square())).matrix();
    grad[conv_b_].col(0) += dpre;
    grad[conv_w_] += dpre * f.windows[i].transpose();
    if (cfg_.freeze_embeddings) continue;
    const Vector dwin = wc.transpose() * dpre;
    const TokenId left = i == 0 ? Vocabulary::kBos : y[i - 1];
    const TokenId right = i + 1 == y.size() ? Vocabulary::kEos : y[i + 1];
    grad[emb_].col(left) += dwin.segment(0, d);
    grad[emb_].col(y[i]) += dwin.segment(d, d);
    grad[emb_].col(right) += dwin.segment(2 * d, d);
  }
  return f.value;
}

double EnergyModel::l2_penalty() const {
  if (cfg_.l2 == 0.0) return 0.0;
  double s = params_[w1_].squaredNorm() + params_[w2_].squaredNorm();
  if (cfg_.pooling == Pooling::Conv) s += params_[conv_w_].squaredNorm();
  return 0.5 * cfg_.l2 * s;
}

void EnergyModel::add_l2_grad(ParamStore& grad) const {
  if (cfg_.l2 == 0.0) return;
  grad[w1_] += cfg_.l2 * params_[w1_];
  grad[w2_] += cfg_.l2 * params_[w2_];
  if (cfg_.pooling == Pooling::Conv) grad[conv_w_] += cfg_.l2 * params_[conv_w_];
}

Checkpoint EnergyModel::to_checkpoint(const std::string& vocab_ref) const {
  Checkpoint ck;
  ck.model_kind = "energy";
  ck.vocab_ref = vocab_ref;
  ck.hyperparams = {{"vocab_size", vocab_size_},
                    {"embed_dim", cfg_.embed_dim},
                    {"hidden_dim", cfg_.hidden_dim},
                    {"pooling", to_string(cfg_.pooling)},
                    {"freeze_embeddings", cfg_.freeze_embeddings},
                    {"l2", cfg_.l2},
                    {"seed", cfg_.seed}};
  params_.to_checkpoint(ck);
  return ck;
}

EnergyModel EnergyModel::from_checkpoint(const Checkpoint& ck) {
  if (ck.model_kind != "energy") throw CheckpointError("expected an energy checkpoint, got " + ck.model_kind);
  try {
    const auto& h = ck.hyperparams;
    EnergyConfig cfg;
    cfg.embed_dim = h.at("embed_dim").get<std::size_t>();
    cfg.hidden_dim = h.at("hidden_dim").get<std::size_t>();
    cfg.pooling = pooling_from_string(h.at("pooling").get<std::string>());
    cfg.freeze_embeddings = h.at("freeze_embeddings").get<bool>();
    cfg.l2 = h.at("l2").get<double>();
    cfg.seed = h.at("seed").get<std::uint64_t>();
    EnergyModel m(h.at("vocab_size").get<std::size_t>(), cfg);
    m.params_.from_checkpoint(ck);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("energy checkpoint: ") + e.what());
  }
}

ParamStore energy_grad(const EnergyModel& m, const std::vector<std::pair<TokenSeq, double>>& batch) {
  if (batch.empty()) throw EmptyInput("energy_grad: empty batch");
  ParamStore grad = m.params().zeros_like();
  for (const auto& [y, w] : batch) m.accumulate_grad(y.view(), w, grad);
  m.add_l2_grad(grad);
  return grad;
}

std::vector<double> resample_distribution(std::span<const double> energies, double temperature) {
  if (!(temperature > 0.0)) throw InvalidConfig("resample: temperature must be positive");
  if (energies.empty()) throw InsufficientCandidates("resample: no candidates");
  const double lo = *std::min_element(energies.begin(), energies.end());
  std::vector<double> p(energies.size());
  double total = 0.0;
  for (std::size_t i = 0; i < energies.size(); ++i) total += p[i] = std::exp(-(energies[i] - lo) / temperature);
  for (double& x : p) x /= total;
  return p;
}

std::pair<std::size_t, std::size_t> resample_indices(std::span<const double> energies, double temperature, Rng& rng) {
  if (energies.size() < 2) throw InsufficientCandidates("resample: need at least 2 candidates");
  const auto p = resample_distribution(energies, temperature);
  const std::size_t a = rng.categorical(p);
  const std::size_t b = rng.categorical(p);
  return {a, b};
}

std::pair<TokenSeq, TokenSeq> resample_pair(const CandidateSet& cands, const EnergyModel& m,
                                            const ResampleConfig& cfg) {
  if (cands.size() < 2) throw InsufficientCandidates("resample: need at least 2 candidates");
  std::vector<double> e;
  e.reserve(cands.size());
  for (const auto& c : cands.candidates) e.push_back(candidate_energy(m, c.hypothesis));
  Rng rng(cfg.seed);
  const auto [a, b] = resample_indices(e, cfg.temperature, rng);
  return {cands.candidates[a].hypothesis, cands.candidates[b].hypothesis};
}

}  // namespace ebr
