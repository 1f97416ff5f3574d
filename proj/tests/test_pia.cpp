// Copyright 2026 The easkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <doctest.h>

#include <Eigen/LU>

#include "easkit/errors.hpp"
#include "easkit/gradcheck.hpp"
#include "easkit/graph.hpp"
#include "easkit/pia.hpp"
#include "support.hpp"

using namespace easkit;
using namespace easkit::testing;

using Md = Matrix<double>;
using Rd = RowVector<double>;

namespace {

/// d=2, r=1 adapter whose outputs are easy to compose by hand.
PiaParams<double> running_example() {
  auto p = PiaParams<double>::zeros(PiaMode::TwoPathSkip, 2, 1);
  p.w_d1 << 1, 1;
  p.w_d2 << 2, 0;
  p.w_u1 << 1, 0;
  p.w_u2 << 0, 1;
  return p;
}

Md identity2() { return Md::Identity(2, 2); }

std::vector<ParamRef<double>> refs_of(PiaParams<double>& p, const std::string& prefix) {
  std::vector<ParamRef<double>> out;
  p.visit(prefix, [&](const std::string& name, auto& t) {
    out.push_back({name, {t.data(), static_cast<size_t>(t.size())}});
  });
  return out;
}

}  // namespace

TEST_CASE("route") {
  auto p = running_example();
  const Rd x_hat = Rd::Constant(2, 0.3);
  CHECK(max_abs_diff(route<double>(x_hat, p), Rd::Constant(2, 0.5)) == 0.0);
  p.b_r << 2, 0;
  const double e2 = std::exp(2.0);
  const Rd a = route<double>(x_hat, p);
  CHECK(a(0) == doctest::Approx(e2 / (e2 + 1)).epsilon(1e-12));
  CHECK(a(0) == doctest::Approx(0.8808).epsilon(1e-4));
  p.b_r << 1, 0;
  p.tau = 1e-4;
  const Rd cold = route<double>(x_hat, p);
  CHECK(cold(0) == doctest::Approx(1.0));
  CHECK(cold(1) <= 1e-12);
  const auto single = PiaParams<double>::zeros(PiaMode::SinglePathAdapt, 2, 1);
  CHECK_THROWS_AS(route<double>(x_hat, single), ModeError);
}

TEST_CASE("pia_forward") {
  const auto p = running_example();
  const Md out = pia_forward<double>(identity2(), p);
  CHECK(max_abs_diff(out, Md::Ones(2, 2)) <= 1e-15);

  Rng rng(5);
  auto q = random_pia(rng, 6, 2);
  q.w_u1.setZero();
  q.w_u2.setZero();
  q.b_u1.setZero();
  q.b_u2.setZero();
  CHECK(pia_forward<double>(random_matrix(rng, 4, 6), q).cwiseAbs().maxCoeff() == 0.0);

  auto forced = random_pia(rng, 6, 2);
  forced.w_r.setZero();
  forced.b_r << 30, 0;
  const Md x = random_matrix(rng, 5, 6);
  const Rd pooled = average_pool_rows<double>(matmul_affine<double>(x, forced.w_d2, forced.b_d2));
  Md h = matmul_affine<double>(x, forced.w_d1, forced.b_d1);
  h.rowwise() += pooled;
  const Md up1 = matmul_affine<double>(h, forced.w_u1, forced.b_u1);
  CHECK(max_abs_diff(pia_forward<double>(x, forced), up1) <= 1e-9);

  CHECK_THROWS_AS(pia_forward<double>(random_matrix(rng, 2, 5), forced), ShapeError);
}

TEST_CASE("adaptation_forward") {
  Rng rng(6);
  auto a = PiaParams<double>::init(PiaMode::SinglePathAdapt, 4, 2, 1.0, rng);
  CHECK(adaptation_forward<double>(random_matrix(rng, 3, 4), a).cwiseAbs().maxCoeff() == 0.0);

  auto h = PiaParams<double>::zeros(PiaMode::SinglePathAdapt, 2, 1);
  h.w_d1 << 2, -1;
  h.b_d1 << 0.5;
  h.w_u1 << 1, 3;
  h.b_u1 << -1, 0;
  Md x(2, 2);
  x << 1, 2, 3, 4;
  const Md expect = matmul_affine<double>(matmul_affine<double>(x, h.w_d1, h.b_d1), h.w_u1, h.b_u1);
  CHECK(max_abs_diff(adaptation_forward<double>(x, h), expect) == 0.0);
  // Row 0: 2*1 - 1*2 + 0.5 = 0.5 -> [0.5 - 1, 1.5]
  CHECK(adaptation_forward<double>(x, h)(0, 0) == doctest::Approx(-0.5));
  CHECK(adaptation_forward<double>(x, h)(0, 1) == doctest::Approx(1.5));

  CHECK_THROWS_AS(adaptation_forward<double>(x, running_example()), ModeError);
}

TEST_CASE("freeze_dynamic_terms") {
  const auto frozen = freeze_dynamic_terms<double>(running_example(), identity2());
  REQUIRE(frozen.is_frozen());
  CHECK(frozen.frozen->b_d(0) == doctest::Approx(1.0));
  CHECK(max_abs_diff(frozen.frozen->alpha, Rd::Constant(2, 0.5)) == 0.0);
  CHECK_THROWS_AS(freeze_dynamic_terms<double>(frozen, identity2()), StateError);

  Rng rng(7);
  auto dead = random_pia(rng, 5, 2);
  dead.w_d2.setZero();
  const auto fd = freeze_dynamic_terms<double>(dead, random_matrix(rng, 3, 5));
  CHECK(max_abs_diff(fd.frozen->b_d, dead.b_d1 + dead.b_d2) == 0.0);
  dead.b_d2.setZero();
  CHECK(bit_equal(freeze_dynamic_terms<double>(dead, random_matrix(rng, 3, 5)).frozen->b_d, dead.b_d1));

  Md zero_row = Md::Zero(1, 2);
  CHECK(max_abs_diff(pia_forward<double>(zero_row, frozen), Rd::Constant(2, 0.5)) <= 1e-15);
}

TEST_CASE("frozen adapters ignore later inputs' statistics") {
  Rng rng(8);
  const auto live = random_pia(rng, 6, 3);
  const Md ref = random_matrix(rng, 4, 6);
  const auto frozen = freeze_dynamic_terms<double>(live, ref);
  const Md x = random_matrix(rng, 3, 6);
  const Md y1 = pia_forward<double>(x, frozen);
  Md x2 = x;
  x2.row(1) += random_row(rng, 6);
  CHECK(max_abs_diff(pia_forward<double>(x2, frozen).row(0), y1.row(0)) == 0.0);
  CHECK(max_abs_diff(pia_forward<double>(x.topRows(1), frozen), y1.topRows(1)) == 0.0);
}

TEST_CASE("freeze is idempotent on the freeze input") {
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const int d = 2 + static_cast<int>(rng.uniform_index(10));
    const int r = 1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(d - 1)));
    const auto live = random_pia(rng, d, r, std::exp(rng.normal(0.0, 0.5)));
    const Md ref = random_matrix(rng, 1 + static_cast<int>(rng.uniform_index(6)), d);
    const auto frozen = freeze_dynamic_terms<double>(live, ref);
    CHECK(max_abs_diff(pia_forward<double>(ref, live), pia_forward<double>(ref, frozen)) <= 1e-12);
    CHECK(frozen.frozen->alpha.minCoeff() >= 0.0);
    CHECK(std::abs(frozen.frozen->alpha.sum() - 1.0) <= 1e-12);
  }
}

TEST_CASE("fuse_to_linear") {
  const auto frozen = freeze_dynamic_terms<double>(running_example(), identity2());
  const auto fused = fuse_to_linear<double>(frozen);
  CHECK(max_abs_diff(fused.w_p, Md::Constant(2, 2, 0.5)) <= 1e-15);
  CHECK(max_abs_diff(fused.b_p, Rd::Constant(2, 0.5)) <= 1e-15);

  auto zero = PiaParams<double>::zeros(PiaMode::TwoPathSkip, 4, 2);
  const auto fz = fuse_to_linear<double>(freeze_dynamic_terms<double>(zero, Md::Ones(2, 4)));
  CHECK(fz.w_p.cwiseAbs().maxCoeff() == 0.0);
  CHECK(fz.b_p.cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(fuse_to_linear<double>(running_example()), StateError);
}

TEST_CASE("fused map rank is bounded by the bottleneck") {
  Rng rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const int d = 3 + static_cast<int>(rng.uniform_index(10));
    const int r = 1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(d - 2)));
    const auto frozen = freeze_dynamic_terms<double>(random_pia(rng, d, r), random_matrix(rng, 3, d));
    const auto fused = fuse_to_linear<double>(frozen);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(fused.w_p);
    lu.setThreshold(1e-10);
    CHECK(lu.rank() <= r);
  }
}

TEST_CASE("router convexity of the fused up projection") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    auto live = random_pia(rng, 5, 2);
    auto frozen = freeze_dynamic_terms<double>(live, random_matrix(rng, 3, 5));
    const double a1 = frozen.frozen->alpha(0);
    // W_p = W_d1 W_u with W_u on the segment [W_u2, W_u1].
    const Md w_u = a1 * live.w_u1 + (1 - a1) * live.w_u2;
    CHECK(max_abs_diff(fuse_to_linear<double>(frozen).w_p, live.w_d1 * w_u) <= 1e-12);
    frozen.frozen->alpha << 1, 0;
    CHECK(bit_equal(fuse_to_linear<double>(frozen).w_p, Md(live.w_d1 * live.w_u1)));
  }
}

TEST_CASE("fusion equivalence over random frozen adapters") {
  Rng rng(12);
  double worst = 0.0;
  for (int trial = 0; trial < 300; ++trial) {
    const int d = 2 + static_cast<int>(rng.uniform_index(40));
    const int r = 1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(std::min(d - 1, 16))));
    const int n = 1 + static_cast<int>(rng.uniform_index(32));
    const auto frozen = freeze_dynamic_terms<double>(random_pia(rng, d, r), random_matrix(rng, 1 + n / 2, d));
    const Md x = random_matrix(rng, n, d);
    worst = std::max(worst, max_abs_diff(pia_forward<double>(x, frozen), fuse_to_linear<double>(frozen).apply(x)));
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("fusion equivalence in single precision") {
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const int d = 4 + static_cast<int>(rng.uniform_index(12));
    const auto frozen = freeze_dynamic_terms<float>(random_pia<float>(rng, d, 3), random_matrix<float>(rng, 3, d));
    const auto x = random_matrix<float>(rng, 5, d);
    CHECK(max_abs_diff(pia_forward<float>(x, frozen), fuse_to_linear<float>(frozen).apply(x)) <= 1e-5);
  }
}

TEST_CASE("fold_into_ffn") {
  Rng rng(14);
  const auto ffn = random_ffn(rng, 2, 4);
  FusedLinear<double> id{Md::Zero(2, 2), Rd::Zero(2)};
  const auto same = fold_into_ffn<double>(id, ffn);
  CHECK(bit_equal(same.w1, ffn.w1));
  CHECK(bit_equal(same.b1, ffn.b1));
  CHECK(bit_equal(same.w2, ffn.w2));
  CHECK(bit_equal(same.b2, ffn.b2));

  const auto fused = fuse_to_linear<double>(freeze_dynamic_terms<double>(running_example(), identity2()));
  FfnWeights<double> eye{identity2(), Rd::Zero(2), identity2(), Rd::Zero(2)};
  const auto folded = fold_into_ffn<double>(fused, eye);
  Md expect(2, 2);
  expect << 1.5, 0.5, 0.5, 1.5;
  CHECK(max_abs_diff(folded.w1, expect) <= 1e-15);
  CHECK(max_abs_diff(folded.b1, Rd::Constant(2, 0.5)) <= 1e-15);

  FusedLinear<double> wrong{Md::Zero(3, 3), Rd::Zero(3)};
  CHECK_THROWS_AS(fold_into_ffn<double>(wrong, ffn), ShapeError);
}

TEST_CASE("folded FFN equals FFN of the eager adapter residual") {
  Rng rng(15);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int d = 2 + static_cast<int>(rng.uniform_index(24));
    const int r = 1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(std::min(d - 1, 8))));
    const int n = 1 + static_cast<int>(rng.uniform_index(12));
    const auto frozen = freeze_dynamic_terms<double>(random_pia(rng, d, r), random_matrix(rng, 2, d));
    const auto ffn = random_ffn(rng, d, 2 * d);
    const Md x = random_matrix(rng, n, d);
    const Md eager = ffn_forward<double>(x + pia_forward<double>(x, frozen), ffn);
    const Md folded = ffn_forward<double>(x, fold_into_ffn<double>(fuse_to_linear<double>(frozen), ffn));
    worst = std::max(worst, max_abs_diff(eager, folded));
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("ffn_forward") {
  Rng rng(16);
  FfnWeights<double> zero{Md::Zero(3, 5), Rd::Zero(5), Md::Zero(5, 3), Rd::Zero(3)};
  CHECK(ffn_forward<double>(random_matrix(rng, 2, 3), zero).cwiseAbs().maxCoeff() == 0.0);

  FfnWeights<double> pad{Md::Zero(2, 3), Rd::Zero(3), Md::Zero(3, 2), Rd::Zero(2)};
  pad.w1.leftCols(2) = identity2();
  pad.w2.topRows(2) = identity2();
  Md big(1, 2);
  big << 9, 12;
  CHECK(max_abs_diff(ffn_forward<double>(big, pad), big) <= 1e-12);

  FfnWeights<double> h{Md(2, 2), Rd(2), Md(2, 2), Rd(2)};
  h.w1 << 1, -1, 0.5, 2;
  h.b1 << 0.1, -0.2;
  h.w2 << 1, 0, -1, 3;
  h.b2 << 0, 1;
  Md x(1, 2);
  x << 0.4, -0.3;
  const double z0 = 0.4 * 1 + -0.3 * 0.5 + 0.1;
  const double z1 = 0.4 * -1 + -0.3 * 2 - 0.2;
  const double g0 = z0 * 0.5 * (1 + std::erf(z0 / std::sqrt(2.0)));
  const double g1 = z1 * 0.5 * (1 + std::erf(z1 / std::sqrt(2.0)));
  const Md y = ffn_forward<double>(x, h);
  CHECK(y(0, 0) == doctest::Approx(g0 * 1 + g1 * -1).epsilon(1e-14));
  CHECK(y(0, 1) == doctest::Approx(g0 * 0 + g1 * 3 + 1).epsilon(1e-14));
}

TEST_CASE("init is neutral and validate catches bad shapes") {
  Rng rng(17);
  const auto p = PiaParams<double>::init(PiaMode::TwoPathSkip, 8, 3, 1.0, rng);
  CHECK(pia_forward<double>(random_matrix(rng, 4, 8), p).cwiseAbs().maxCoeff() == 0.0);
  CHECK(p.w_d1.cwiseAbs().maxCoeff() > 0.0);
  CHECK_NOTHROW(p.validate());
  auto bad = p;
  bad.w_u2 = Md::Zero(2, 8);
  CHECK_THROWS(bad.validate());
  CHECK_THROWS_AS(PiaParams<double>::zeros(PiaMode::TwoPathSkip, 4, 4), ConfigError);
  CHECK(parse_pia_mode(to_string(PiaMode::SinglePathAdapt)) == PiaMode::SinglePathAdapt);
}

TEST_CASE("adapter gradients match finite differences") {
  Rng rng(18);
  for (int trial = 0; trial < 5; ++trial) {
    auto p = random_pia(rng, 5, 2, 0.8);
    const int n = 4;
    const Md x = random_matrix(rng, n, 5);
    const Md target = random_matrix(rng, n, 5);
    for (PoolingRule rule : {PoolingRule::global(), PoolingRule::causal(2)}) {
      LossBuilder<double> f = [&](GradTape<double>& t) {
        auto out = pia_forward_graph<double>(t, t.constant(x), p, "p.", true, n, rule);
        return t.square_sum(t.add(out, t.constant(-target)));
      };
      const auto refs = refs_of(p, "p.");
      CHECK(refs.size() == 10);
      const auto rep = finite_diff_check<double>(f, refs);
      CHECK(rep.passed);
    }
  }
}

TEST_CASE("graph adapter forward equals the plain one with global pooling") {
  Rng rng(19);
  const auto p = random_pia(rng, 6, 3);
  const Md x = random_matrix(rng, 5, 6);
  GradTape<double> t;
  const auto out = pia_forward_graph<double>(t, t.constant(x), p, "p.", false, 5, PoolingRule::global());
  CHECK(max_abs_diff(t.value(out), pia_forward<double>(x, p)) <= 1e-13);
}
