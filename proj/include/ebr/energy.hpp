#pragma once

#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ebr/basemodel.hpp"
#include "ebr/checkpoint.hpp"
#include "ebr/params.hpp"
#include "ebr/rng.hpp"

namespace ebr {

enum class Pooling {
  /// Mean over tanh(conv) outputs of a width-3 window of embeddings; order-sensitive.
  Conv,
  /// Mean of token embeddings; permutation-invariant.
  Mean,
};

std::string to_string(Pooling pooling);
Pooling pooling_from_string(std::string_view name);

struct EnergyConfig {
  std::size_t embed_dim = 64;
  std::size_t hidden_dim = 256;
  Pooling pooling = Pooling::Conv;
  bool freeze_embeddings = false;
  /// Coefficient of 0.5 * l2 * ||W||^2 over the non-embedding weight matrices.
  double l2 = 0.0;
  std::uint64_t seed = 1;
};

/// Unconditional scalar energy of a target sentence:
///   pooled = pool(embeddings of y)
///   E(y)   = w2 . tanh(W1 pooled + b1) + b2
/// In Conv mode each position reads a window (y_{i-1}, y_i, y_{i+1}) with BOS
/// and EOS embeddings beyond the edges, passed through tanh(Wc [..] + bc).
class EnergyModel {
 public:
  EnergyModel(std::size_t vocab_size, EnergyConfig cfg);

  const EnergyConfig& config() const { return cfg_; }
  std::size_t vocab_size() const { return vocab_size_; }

  /// Throws EmptyInput for an empty sentence and VocabularyMismatch for an
  /// out-of-range id.
  double energy(std::span<const TokenId> y) const;
  double energy(const TokenSeq& y) const { return energy(y.view()); }

  /// Adds weight * dE(y)/dtheta into grad and returns E(y). Embedding
  /// gradients are skipped when embeddings are frozen.
  double accumulate_grad(std::span<const TokenId> y, double weight, ParamStore& grad) const;

  /// 0.5 * l2 * ||W||^2 over non-embedding weight matrices.
  double l2_penalty() const;
  void add_l2_grad(ParamStore& grad) const;

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  Checkpoint to_checkpoint(const std::string& vocab_ref) const;
  static EnergyModel from_checkpoint(const Checkpoint& ck);

 private:
  struct Forward {
    std::vector<Vector> windows;  // Conv: stacked window inputs
    std::vector<Vector> units;    // Conv: tanh outputs per position
    Vector pooled;
    Vector hidden;
    double value = 0.0;
  };
  Forward forward(std::span<const TokenId> y) const;
  void check_tokens(std::span<const TokenId> y) const;
  const Vector embedding(TokenId id) const { return params_[emb_].col(id); }

  std::size_t vocab_size_;
  EnergyConfig cfg_;
  ParamStore params_;
  std::size_t emb_ = 0, conv_w_ = 0, conv_b_ = 0, w1_ = 0, b1_ = 0, w2_ = 0, b2_ = 0;
};

inline double energy(const EnergyModel& m, const TokenSeq& y) { return m.energy(y); }

/// Energy of a sampled candidate. An empty hypothesis has no energy; it gets
/// the largest finite value so it is never preferred and has zero resampling mass.
inline double candidate_energy(const EnergyModel& m, const TokenSeq& y) {
  return y.empty() ? std::numeric_limits<double>::max() : m.energy(y);
}

/// Gradient of sum_b weight_b * E(y_b) plus the L2 term.
ParamStore energy_grad(const EnergyModel& m, const std::vector<std::pair<TokenSeq, double>>& batch);

struct ResampleConfig {
  double temperature = 1000.0;
  std::uint64_t seed = 0;
};

/// P(i) = exp(-E_i / T) / sum_j exp(-E_j / T), computed after subtracting the
/// minimum energy.
std::vector<double> resample_distribution(std::span<const double> energies, double temperature);

/// Two independent draws (with replacement) of candidate indices from the
/// distribution above. Throws InsufficientCandidates for fewer than 2.
std::pair<std::size_t, std::size_t> resample_indices(std::span<const double> energies, double temperature, Rng& rng);

std::pair<TokenSeq, TokenSeq> resample_pair(const CandidateSet& cands, const EnergyModel& m,
                                            const ResampleConfig& cfg);

}  // namespace ebr
