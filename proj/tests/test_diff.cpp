#include <catch2/catch_amalgamated.hpp>

#include <posekit/diff.hpp>
#include <posekit/gradcheck.hpp>

#include "test_support.hpp"

using namespace posekit;
using diff::Tape;
using pktest::random_matrix;
using pktest::random_rotation;

TEST_CASE("tape: d(x*x)/dx = 2x", "[diff]") {
  Tape t;
  auto x = t.leaf(3.0);
  auto y = t.mul(x, x);
  t.backward(y);
  CHECK(t.grad_scalar(x) == 6.0);
}

TEST_CASE("tape: gradient of trace is identity", "[diff]") {
  Tape t;
  Rng rng(1);
  auto m = t.leaf(MatX(random_matrix(rng)));
  auto tr = t.trace(m);
  t.backward(tr);
  CHECK((t.grad(m) - Mat3::Identity()).norm() == 0.0);
}

TEST_CASE("tape: backward requires a scalar output", "[diff]") {
  Tape t;
  auto m = t.leaf(MatX(Mat3::Identity()));
  CHECK_THROWS_AS(t.backward(m), ShapeError);
}

TEST_CASE("tape: checkpoint/rollback drops trailing nodes", "[diff]") {
  Tape t;
  auto x = t.leaf(2.0);
  auto mark = t.checkpoint();
  t.mul(x, x);
  t.rollback(mark);
  CHECK(t.size() == 1);
  auto y = t.scale(x, 4.0);
  t.backward(y);
  CHECK(t.grad_scalar(x) == 4.0);
}

TEST_CASE("tape: deterministic gradients", "[diff]") {
  auto run = [] {
    Rng rng(555);
    Tape t;
    auto m = t.leaf(MatX(random_matrix(rng)));
    auto loss = diff::Tape::NodeId{};
    auto r = t.svd_project(m);
    auto tr = t.dot(r, t.constant(MatX(random_rotation(rng).matrix())));
    loss = t.arccos_clamped(t.scale(t.add_const(tr, -1.0), 0.5));
    t.backward(loss);
    return MatX(t.grad(m));
  };
  const MatX a = run(), b = run();
  REQUIRE(a == b);  // bit identical
}

TEST_CASE("svd projection gradient: composite matches finite differences", "[diff][svd]") {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const Rot3 gt = diff::detail::random_rotation(rng);
    const Mat3 m = diff::detail::well_conditioned_nine(rng, gt);
    VecX x(9);
    for (int i = 0; i < 9; ++i) x(i) = m(i / 3, i % 3);
    auto f = [&](const VecX& p) { return diff::oracle::rotation_loss_value(p, gt); };
    auto a = [&](const VecX& p) {
      Tape t;
      auto leaf = t.leaf(MatX(p));
      auto loss = build_rotation_loss(t, leaf, gt);
      t.backward(loss);
      return VecX(t.grad(leaf).col(0));
    };
    REQUIRE(diff::fd_max_rel_err(f, a, x) < 1e-5);
  }
}

TEST_CASE("svd projection gradient near a perturbed identity is finite", "[diff][svd]") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    Mat3 skew = Mat3::Zero();
    const double a = rng.uniform(-0.05, 0.05), b = rng.uniform(-0.05, 0.05),
                 c = rng.uniform(-0.05, 0.05);
    skew << 0, -c, b, c, 0, -a, -b, a, 0;
    const Mat3 m = Mat3::Identity() + skew;
    const Rot3 gt = random_rotation(rng);
    // angle(project(m), gt) must stay away from 0/pi for FD conditioning
    const double d = geodesic_distance(svd_project_so3(m), gt);
    if (d < 0.2 || d > kPi - 0.2) continue;

    VecX x(9);
    for (int i = 0; i < 9; ++i) x(i) = m(i / 3, i % 3);
    auto f = [&](const VecX& p) { return diff::oracle::rotation_loss_value(p, gt); };
    auto an = [&](const VecX& p) {
      Tape t;
      auto leaf = t.leaf(MatX(p));
      auto loss = build_rotation_loss(t, leaf, gt);
      t.backward(loss);
      return VecX(t.grad(leaf).col(0));
    };
    REQUIRE(an(x).allFinite());
    REQUIRE(diff::fd_max_rel_err(f, an, x) < 1e-5);
  }
}

TEST_CASE("gradient at the loss minimum is zero by convention", "[diff][svd]") {
  Rng rng(31);
  const Rot3 r = random_rotation(rng);
  Tape t;
  MatX m9(9, 1);
  for (int i = 0; i < 9; ++i) m9(i, 0) = r.matrix()(i / 3, i % 3);
  auto leaf = t.leaf(m9);
  auto loss = build_rotation_loss(t, leaf, r);
  t.backward(loss);
  // arccos turns the ~1e-16 trace rounding into ~1e-8; the gradient sits in
  // the clamp's dead zone and is exactly zero.
  CHECK(t.value_scalar(loss) < 1e-7);
  CHECK(t.grad(leaf).norm() == 0.0);
}

TEST_CASE("svd gradient degeneracy guard", "[diff][svd]") {
  // Reflection with equal trailing singular values: genuinely singular.
  Tape t;
  auto bad = t.leaf(MatX(Mat3(Vec3(1.0, 0.5, -0.5).asDiagonal())));
  CHECK_THROWS_AS(t.svd_project(bad), NearDegenerateSVD);

  // Reflection with clear gaps is fine.
  auto ok = t.leaf(MatX(Mat3(Vec3(3.0, 2.0, -1.0).asDiagonal())));
  CHECK_NOTHROW(t.svd_project(ok));

  // Free-function form.
  CHECK_THROWS_AS(
      diff::svd_project_backward(Vec3(1.0, 0.5, -0.5).asDiagonal(), Mat3::Identity()),
      NearDegenerateSVD);
}

TEST_CASE("elementary op gradients match finite differences", "[diff]") {
  Rng rng(88);
  // f(x) = sum(sigmoid(A x) o tanh(x) + atan(x) / (1 + x^2-ish))  -- a mongrel
  // expression touching mul/div/min/max/sqrt/square paths.
  for (int trial = 0; trial < 25; ++trial) {
    MatX a = MatX::NullaryExpr(4, 4, [&](Eigen::Index, Eigen::Index) { return rng.normal(); });
    VecX x0(4);
    for (int i = 0; i < 4; ++i) {
      x0(i) = rng.uniform(0.2, 2.0);  // positive, away from min/max ties
    }
    auto build = [&](Tape& t, Tape::NodeId leaf) {
      auto ax = t.matmul(t.constant(a), leaf);
      auto s = t.sigmoid(ax);
      auto th = t.tanh(leaf);
      auto p = t.mul(s, th);
      auto q = t.div(t.atan(leaf), t.add_const(t.square(leaf), 1.0));
      auto r = t.max2(p, q);
      auto u = t.min2(p, t.scale(q, 2.0));
      auto sq = t.sqrt(t.add_const(t.square(leaf), 0.5));
      return t.add(t.add(t.sum(r), t.sum(u)), t.sum(sq));
    };
    auto f = [&](const VecX& x) {
      Tape t;
      auto leaf = t.leaf(MatX(x));
      return t.value_scalar(build(t, leaf));
    };
    auto an = [&](const VecX& x) {
      Tape t;
      auto leaf = t.leaf(MatX(x));
      t.backward(build(t, leaf));
      return VecX(t.grad(leaf).col(0));
    };
    REQUIRE(diff::fd_max_rel_err(f, an, x0) < 1e-6);
  }
}

TEST_CASE("matrix plumbing ops (block/reshape/add_colvec) backprop", "[diff]") {
  Rng rng(13);
  // Small MLP: y = sum(tanh(W2 tanh(W1 X + b1) + b2)) over a 3-column batch.
  MatX x(3, 3);
  for (int i = 0; i < 9; ++i) x(i / 3, i % 3) = rng.normal();
  const int h = 5;
  VecX w0(h * 3 + h);
  for (Eigen::Index i = 0; i < w0.size(); ++i) w0(i) = rng.normal(0, 0.5);

  auto build = [&](Tape& t, Tape::NodeId wleaf) {
    auto w1 = t.reshape(t.block(wleaf, 0, 0, h * 3, 1), h, 3);
    auto b1 = t.block(wleaf, h * 3, 0, h, 1);
    auto hidden = t.tanh(t.add_colvec(t.matmul(w1, t.constant(x)), b1));
    return t.sum(hidden);
  };
  auto f = [&](const VecX& w) {
    Tape t;
    return t.value_scalar(build(t, t.leaf(MatX(w))));
  };
  auto an = [&](const VecX& w) {
    Tape t;
    auto leaf = t.leaf(MatX(w));
    t.backward(build(t, leaf));
    return VecX(t.grad(leaf).col(0));
  };
  REQUIRE(diff::fd_max_rel_err(f, an, w0) < 1e-6);
}

TEST_CASE("grad_check registry covers every op below 1e-5", "[diff][gradcheck]") {
  for (const auto& op : diff::grad_check_ops()) {
    auto rep = diff::grad_check(op, 30, 17);
    INFO(op << " max_rel_err=" << rep.max_rel_err);
    CHECK(rep.max_rel_err < 1e-5);
    CHECK(rep.trials == 30);
  }
  CHECK_THROWS_AS(diff::grad_check("nope", 1, 0), LookupError);
  CHECK_THROWS_AS(diff::grad_check("geodesic", 0, 0), Error);
}

TEST_CASE("smooth_l1 gradient away from the kink is very accurate", "[diff][gradcheck]") {
  auto rep = diff::grad_check("smooth_l1", 200, 3);
  CHECK(rep.max_rel_err < 1e-7);
}
