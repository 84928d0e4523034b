#include <atomic>
#include <cstring>
#include <set>

#include "doctest.h"
#include "ebr/checkpoint.hpp"
#include "ebr/error.hpp"
#include "ebr/parallel.hpp"
#include "ebr/params.hpp"
#include "ebr/rng.hpp"
#include "support.hpp"

using namespace ebr;

TEST_CASE("checkpoint serialization is bit-exact") {
  Checkpoint ck;
  ck.model_kind = "toy";
  ck.vocab_ref = "abc";
  ck.hyperparams = {{"order", 3}, {"name", "x"}};
  ck.tensors.push_back({"w", {2, 2}, {0.1, -0.0, 1e-300, 3.14159265358979}});
  ck.tensors.push_back({"b", {3}, {1.0 / 3.0, 2.0, -7.5}});
  const auto back = Checkpoint::deserialize(ck.serialize());
  CHECK(back.model_kind == "toy");
  CHECK(back.vocab_ref == "abc");
  CHECK(back.hyperparams == ck.hyperparams);
  REQUIRE(back.tensors.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back.tensors[i].shape == ck.tensors[i].shape);
    CHECK(std::memcmp(back.tensors[i].data.data(), ck.tensors[i].data.data(), ck.tensors[i].data.size() * 8) == 0);
  }
  CHECK(back.serialize() == ck.serialize());
  CHECK(back.tensor("b").data[2] == -7.5);
  CHECK_THROWS_AS(back.tensor("missing"), CheckpointError);

  testing::TempDir dir("ebr_ckpt");
  ck.save(dir / "m.ckpt");
  CHECK(Checkpoint::load(dir / "m.ckpt").serialize() == ck.serialize());
  CHECK(Checkpoint::peek_kind(dir / "m.ckpt") == "toy");
  CHECK_THROWS_AS(Checkpoint::load(dir / "absent.ckpt"), CheckpointError);
}

TEST_CASE("corrupt checkpoints are rejected") {
  Checkpoint ck;
  ck.model_kind = "toy";
  ck.tensors.push_back({"w", {2}, {1.0, 2.0}});
  const std::string bytes = ck.serialize();
  CHECK_THROWS_AS(Checkpoint::deserialize("NOTACKPT" + bytes.substr(8)), CheckpointError);
  CHECK_THROWS_AS(Checkpoint::deserialize(bytes.substr(0, bytes.size() - 3)), CheckpointError);
  CHECK_THROWS_AS(Checkpoint::deserialize(bytes + "x"), CheckpointError);
  Checkpoint bad = ck;
  bad.tensors[0].shape = {3};
  CHECK_THROWS_AS(bad.serialize(), CheckpointError);
}

TEST_CASE("param store flat coordinates and checkpoints") {
  ParamStore p;
  p.add("a", Matrix::Constant(2, 3, 1.0));
  p.add("b", Matrix::Constant(4, 1, 2.0));
  CHECK(p.num_scalars() == 10);
  p.coord(7) = 9.0;
  CHECK(p[1](1, 0) == 9.0);
  p.coord(1) = -1.0;
  CHECK(p[0](1, 0) == -1.0);
  CHECK(p.index("b") == 1);

  Checkpoint ck;
  p.to_checkpoint(ck);
  ParamStore q;
  q.add("a", Matrix::Zero(2, 3));
  q.add("b", Matrix::Zero(4, 1));
  q.from_checkpoint(ck);
  CHECK(q.identical(p));

  ParamStore wrong;
  wrong.add("a", Matrix::Zero(3, 3));
  wrong.add("b", Matrix::Zero(4, 1));
  CHECK_THROWS_AS(wrong.from_checkpoint(ck), CheckpointError);
}

TEST_CASE("adam first step moves each coordinate by lr against the gradient sign") {
  ParamStore p;
  p.add("w", Matrix::Zero(3, 1));
  ParamStore g = p.zeros_like();
  g[0] << 2.0, -0.5, 0.0;
  Adam adam(p, {0.1, 0.9, 0.98, 1e-8});
  adam.step(p, g);
  CHECK(p[0](0) == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(p[0](1) == doctest::Approx(0.1).epsilon(1e-6));
  CHECK(p[0](2) == 0.0);
  CHECK(adam.steps() == 1);
}

TEST_CASE("adam with zero learning rate leaves parameters untouched") {
  ParamStore p;
  p.add("w", Matrix::Constant(2, 2, 0.3));
  const ParamStore before = p;
  ParamStore g = p.zeros_like();
  g[0].setConstant(1.5);
  Adam adam(p, {0.0, 0.9, 0.98, 1e-8});
  for (int i = 0; i < 5; ++i) adam.step(p, g);
  CHECK(p.identical(before));
}

TEST_CASE("gradient clipping") {
  ParamStore g;
  g.add("w", Matrix::Zero(2, 1));
  g[0] << 3.0, 4.0;
  clip_grad_norm(g, 1.0);
  CHECK(std::sqrt(g.squared_norm()) == doctest::Approx(1.0));
  CHECK(g[0](0) == doctest::Approx(0.6));
  clip_grad_norm(g, 10.0);
  CHECK(g[0](0) == doctest::Approx(0.6));
}

TEST_CASE("rng is reproducible and seeds are independent") {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 10; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(Rng(42).next_u64() != c.next_u64());
  CHECK(derive_seed(1, {2, 3}) != derive_seed(1, {3, 2}));
  CHECK(derive_seed(1, {2}) == derive_seed(1, {2}));

  Rng r(7);
  std::vector<double> counts(3, 0);
  const std::vector<double> w = {1.0, 0.0, 3.0};
  for (int i = 0; i < 4000; ++i) counts[r.categorical(w)] += 1;
  CHECK(counts[1] == 0);
  CHECK(counts[2] / 4000 == doctest::Approx(0.75).epsilon(0.05));
}

TEST_CASE("parallel_for visits each index once for any worker count") {
  for (int threads : {1, 2, 5}) {
    testing::ThreadsEnv env(threads);
    CHECK(worker_count() == static_cast<std::size_t>(threads));
    std::vector<std::atomic<int>> hits(100);
    parallel_for(hits.size(), [&](std::size_t i) { hits[i]++; });
    for (auto& h : hits) CHECK(h.load() == 1);
    CHECK_THROWS_AS(parallel_for(10, [](std::size_t i) {
                      if (i == 3) throw InvalidConfig("boom");
                    }),
                    InvalidConfig);
  }
}
