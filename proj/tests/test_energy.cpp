#include "doctest.h"
#include "ebr/energy.hpp"
#include "ebr/error.hpp"
#include "support.hpp"

using namespace ebr;
using testing::seq;

namespace {

EnergyConfig small(Pooling pooling, std::uint64_t seed = 1, double l2 = 0.0) {
  EnergyConfig c;
  c.embed_dim = 5;
  c.hidden_dim = 7;
  c.pooling = pooling;
  c.l2 = l2;
  c.seed = seed;
  return c;
}

void zero_output(EnergyModel& m) {
  auto& p = m.params();
  p[p.index("w2")].setZero();
  p[p.index("b2")].setZero();
}

void fill(EnergyModel& m, double v) {
  auto& p = m.params();
  for (std::size_t i = 0; i < p.size(); ++i) p[i].setConstant(v);
}

}  // namespace

TEST_CASE("zero output layer gives zero energy") {
  for (auto pooling : {Pooling::Conv, Pooling::Mean}) {
    EnergyModel m(20, small(pooling));
    zero_output(m);
    for (const auto& y : {seq({5}), seq({5, 9, 12}), seq({19, 19, 6, 7})}) CHECK(m.energy(y) == 0.0);
  }
}

TEST_CASE("mean pooling is permutation-invariant, conv pooling is not") {
  EnergyModel mean(20, small(Pooling::Mean, 3));
  EnergyModel conv(20, small(Pooling::Conv, 3));
  const auto y = seq({5, 9, 12, 6});
  const auto p = seq({12, 6, 5, 9});
  CHECK(mean.energy(y) == doctest::Approx(mean.energy(p)).epsilon(1e-14));
  CHECK(conv.energy(y) != doctest::Approx(conv.energy(p)).epsilon(1e-9));
}

TEST_CASE("tiny model forward values by hand") {
  EnergyConfig c;
  c.embed_dim = 2;
  c.hidden_dim = 2;

  SUBCASE("mean pooling") {
    c.pooling = Pooling::Mean;
    EnergyModel m(6, c);
    fill(m, 0.1);
    // pooled = (0.1, 0.1); hidden_j = tanh(0.1*0.1 + 0.1*0.1 + 0.1) = tanh(0.12).
    const double expected = 2 * 0.1 * std::tanh(0.12) + 0.1;
    CHECK(m.energy(seq({5})) == doctest::Approx(expected).epsilon(1e-15));
  }
  SUBCASE("conv pooling") {
    c.pooling = Pooling::Conv;
    EnergyModel m(6, c);
    fill(m, 0.1);
    // The window (BOS, y, EOS) stacks six entries of 0.1: unit = tanh(6 * 0.01 + 0.1).
    const double unit = std::tanh(0.16);
    const double hidden = std::tanh(2 * 0.1 * unit + 0.1);
    CHECK(m.energy(seq({5})) == doctest::Approx(2 * 0.1 * hidden + 0.1).epsilon(1e-15));
  }
}

TEST_CASE("parameter count") {
  const std::size_t V = 30, d = 8, H = 256;
  EnergyConfig c;
  c.embed_dim = d;
  c.pooling = Pooling::Mean;
  CHECK(EnergyModel(V, c).params().num_scalars() == V * d + (d * H + H) + (H + 1));
  c.pooling = Pooling::Conv;
  CHECK(EnergyModel(V, c).params().num_scalars() == V * d + (3 * d * d + d) + (d * H + H) + (H + 1));
}

TEST_CASE("initialization ranges") {
  EnergyConfig c;
  c.embed_dim = 16;
  const EnergyModel m(30, c);
  const auto& p = m.params();
  CHECK(p[p.index("embed")].cwiseAbs().maxCoeff() <= 0.1);
  CHECK(p[p.index("w1")].cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(16.0));
  CHECK(p[p.index("w2")].cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(256.0));
  CHECK(p[p.index("b2")](0, 0) == 0.0);
  CHECK(EnergyModel(30, c).params().identical(p));
}

TEST_CASE("energy errors") {
  const EnergyModel m(10, small(Pooling::Conv));
  CHECK_THROWS_AS(m.energy(seq({})), EmptyInput);
  CHECK_THROWS_AS(m.energy(seq({5, 10})), VocabularyMismatch);
  CHECK(candidate_energy(m, seq({})) == std::numeric_limits<double>::max());
  CHECK_THROWS_AS(energy_grad(m, {}), EmptyInput);
}

TEST_CASE("zero weights give a zero gradient") {
  const EnergyModel m(12, small(Pooling::Conv));
  const auto g = energy_grad(m, {{seq({5, 6, 7}), 0.0}, {seq({9}), 0.0}});
  CHECK(g.squared_norm() == 0.0);
}

TEST_CASE("absent tokens get no embedding gradient") {
  for (auto pooling : {Pooling::Conv, Pooling::Mean}) {
    const EnergyModel m(12, small(pooling, 4));
    const auto g = energy_grad(m, {{seq({5, 6, 5}), 1.0}});
    const auto& emb = g[g.index("embed")];
    for (TokenId t : {0, 3, 4, 7, 8, 11}) CHECK(emb.col(t).squaredNorm() == 0.0);
    CHECK(emb.col(5).squaredNorm() > 0.0);
    if (pooling == Pooling::Conv) CHECK(emb.col(Vocabulary::kBos).squaredNorm() > 0.0);
  }
}

TEST_CASE("frozen embeddings receive no gradient") {
  auto c = small(Pooling::Conv);
  c.freeze_embeddings = true;
  const EnergyModel m(12, c);
  const auto g = energy_grad(m, {{seq({5, 6, 7}), 1.0}});
  CHECK(g[g.index("embed")].squaredNorm() == 0.0);
  CHECK(g[g.index("w1")].squaredNorm() > 0.0);
}

TEST_CASE("energy gradients match finite differences") {
  for (auto pooling : {Pooling::Conv, Pooling::Mean}) {
    for (double l2 : {0.0, 0.3}) {
      EnergyModel m(12, small(pooling, 6, l2));
      const std::vector<std::pair<TokenSeq, double>> batch = {
          {seq({5, 6, 7, 5}), 1.0}, {seq({9, 11}), -1.0}, {seq({8}), 0.5}};
      auto objective = [&] {
        double f = m.l2_penalty();
        for (const auto& [y, w] : batch) f += w * m.energy(y);
        return f;
      };
      const auto g = energy_grad(m, batch);
      Rng rng(10);
      std::vector<std::size_t> coords;
      for (int i = 0; i < 20; ++i) coords.push_back(rng.below(m.params().num_scalars()));
      // Also probe coordinates that are guaranteed to matter.
      const std::size_t w1_start = m.params().num_scalars() - m.params()[m.params().index("b2")].size() -
                                   m.params()[m.params().index("w2")].size() -
                                   m.params()[m.params().index("b1")].size() -
                                   m.params()[m.params().index("w1")].size();
      for (std::size_t i = 0; i < 5; ++i) coords.push_back(w1_start + i);
      CHECK(testing::max_relative_error(m.params(), g, coords, objective) <= 1e-4);
    }
  }
}

TEST_CASE("energy checkpoint round-trip") {
  const EnergyModel m(12, small(Pooling::Conv, 8, 0.1));
  const auto back = EnergyModel::from_checkpoint(Checkpoint::deserialize(m.to_checkpoint("v").serialize()));
  CHECK(back.params().identical(m.params()));
  CHECK(back.config().pooling == Pooling::Conv);
  CHECK(back.config().l2 == 0.1);
  CHECK(back.energy(seq({5, 9})) == m.energy(seq({5, 9})));
  CHECK(pooling_from_string(to_string(Pooling::Mean)) == Pooling::Mean);
  CHECK_THROWS_AS(pooling_from_string("max"), InvalidConfig);
}

TEST_CASE("resampling law") {
  const double T = 1000.0;
  SUBCASE("hand-computed pair") {
    const std::vector<double> e = {0.0, T * std::log(3.0)};
    const auto p = resample_distribution(e, T);
    CHECK(std::abs(p[0] - 0.75) < 1e-12);
    CHECK(std::abs(p[1] - 0.25) < 1e-12);
  }
  SUBCASE("equal energies are uniform") {
    const std::vector<double> e(8, 3.7);
    for (double p : resample_distribution(e, 0.01)) CHECK(std::abs(p - 0.125) < 1e-12);

    Rng rng(12);
    const std::vector<double> four(4, -2.0);
    std::vector<double> counts(4, 0);
    for (int i = 0; i < 10000; ++i) {
      const auto [a, b] = resample_indices(four, T, rng);
      counts[a] += 1;
      counts[b] += 1;
    }
    double chi2 = 0;
    for (double c : counts) chi2 += (c - 5000) * (c - 5000) / 5000;
    CHECK(testing::chi_square_p(chi2, 3) > 0.01);
  }
  SUBCASE("shift invariance and normalization") {
    const std::vector<double> e = {-3.0, 250.0, 1000.0, 12.5, 0.0};
    const auto p = resample_distribution(e, T);
    double total = 0;
    for (double x : p) total += x;
    CHECK(std::abs(total - 1.0) < 1e-9);
    for (double c : {-1e4, 17.0, 5e5}) {
      std::vector<double> shifted;
      for (double x : e) shifted.push_back(x + c);
      const auto q = resample_distribution(shifted, T);
      for (std::size_t i = 0; i < e.size(); ++i) CHECK(std::abs(p[i] - q[i]) < 1e-12);
    }
  }
  SUBCASE("large temperature flattens the distribution") {
    const std::vector<double> e = {-5.0, 0.0, 40.0};
    for (double p : resample_distribution(e, 1e15)) CHECK(std::abs(p - 1.0 / 3.0) < 1e-12);
  }
  SUBCASE("maximal energy has no mass") {
    const std::vector<double> e = {0.0, std::numeric_limits<double>::max()};
    const auto p = resample_distribution(e, T);
    CHECK(p[0] == 1.0);
    CHECK(p[1] == 0.0);
  }
}

TEST_CASE("resample_pair") {
  const EnergyModel m(30, small(Pooling::Conv));
  CandidateSet one;
  one.candidates.push_back({seq({5}), -1.0, std::nullopt});
  CHECK_THROWS_AS(resample_pair(one, m, {}), InsufficientCandidates);

  CandidateSet cands;
  for (TokenId t = 5; t < 15; ++t) cands.candidates.push_back({seq({t, 6}), -1.0, std::nullopt});
  ResampleConfig cfg{1000.0, 21};
  const auto a = resample_pair(cands, m, cfg);
  const auto b = resample_pair(cands, m, cfg);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}
