#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "enfode/geometry.hpp"
#include "enfode/geometry_diff.hpp"
#include "enfode/tape.hpp"
#include "test_helpers.hpp"

using namespace enfode;
using namespace enfode::geom;
using namespace enfode::testutil;

namespace {
constexpr double kPi = 3.14159265358979323846264338328;
}

TEST_CASE("act: identity and basic cases") {
  Rng rng(1);
  for (auto g : all_geometries()) {
    Coordinate x = random_coordinate(g, rng);
    CHECK(coord_dist(act(identity_element(g), x), x) < 1e-15);
  }
  // SE(2) pure translation
  Coordinate moved = act(GroupElement{plane_se2(), {1.0, 0.0, 0.0}},
                         make_coordinate(plane_se2(), {2.0, 3.0}));
  CHECK(moved.x[0] == doctest::Approx(3.0));
  CHECK(moved.x[1] == doctest::Approx(3.0));
  // torus wrap
  Coordinate wrapped = act(GroupElement{torus2(), {0.7, 0.0}},
                           make_coordinate(torus2(), {0.6, 0.5}));
  CHECK(wrapped.x[0] == doctest::Approx(0.3));
  CHECK(wrapped.x[1] == doctest::Approx(0.5));
}

TEST_CASE("act: geometry mismatch errors") {
  Rng rng(2);
  Coordinate x = random_coordinate(torus2(), rng);
  GroupElement g = random_group_element(plane_se2(), rng);
  CHECK_THROWS_AS(act(g, x), std::invalid_argument);
}

TEST_CASE("group axioms: composition law to 1e-12") {
  Rng rng(3);
  for (auto geo : all_geometries()) {
    for (int it = 0; it < 50; ++it) {
      GroupElement g = random_group_element(geo, rng);
      GroupElement h = random_group_element(geo, rng);
      Coordinate x = random_coordinate(geo, rng);
      CHECK(coord_dist(act(g, act(h, x)), act(compose(g, h), x)) < 1e-12);
      // inverse
      CHECK(coord_dist(act(inverse(g), act(g, x)), x) < 1e-12);
    }
  }
}

TEST_CASE("act_latent: contexts bitwise, poses move") {
  Rng rng(4);
  for (auto geo : all_geometries()) {
    LatentSet z;
    z.geometry = geo;
    for (int i = 0; i < 4; ++i) z.poses.push_back(random_pose(geo, rng));
    z.contexts = Tensor(Shape{4, 5});
    for (auto& v : z.contexts.data) v = rng.normal();
    GroupElement g = random_group_element(geo, rng);
    LatentSet gz = act_latent(g, z);
    for (size_t i = 0; i < z.contexts.data.size(); ++i)
      CHECK(gz.contexts.data[i] == z.contexts.data[i]);
    LatentSet ez = act_latent(identity_element(geo), z);
    for (size_t i = 0; i < z.poses.size(); ++i) CHECK(pose_dist(ez.poses[i], z.poses[i]) < 1e-12);
  }
  // SE(2): rotation by pi about the origin sends pose position (1,0) to (-1,0)
  LatentSet z;
  z.geometry = plane_se2();
  z.poses.push_back(make_pose(plane_se2(), {1.0, 0.0, 0.0}));
  z.contexts = Tensor(Shape{1, 1});
  LatentSet gz = act_latent(GroupElement{plane_se2(), {0.0, 0.0, kPi}}, z);
  CHECK(gz.poses[0].p[0] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(std::fabs(gz.poses[0].p[1]) < 1e-12);
}

TEST_CASE("bi_invariant: hand-derived examples") {
  // SE(2) identity pose
  auto a = bi_invariant(make_pose(plane_se2(), {0.0, 0.0, 0.0}),
                        make_coordinate(plane_se2(), {1.0, 2.0}));
  CHECK(a[0] == doctest::Approx(1.0));
  CHECK(a[1] == doctest::Approx(2.0));
  // SE(2) quarter turn: R^T (x - t)
  a = bi_invariant(make_pose(plane_se2(), {1.0, 0.0, kPi / 2}),
                   make_coordinate(plane_se2(), {1.0, 1.0}));
  CHECK(a[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::fabs(a[1]) < 1e-12);
  // torus wrap + cosine
  a = bi_invariant(make_pose(torus2(), {0.9, 0.0}), make_coordinate(torus2(), {0.1, 0.0}));
  CHECK(a[0] == doctest::Approx(std::cos(2.0 * kPi * 0.8)).epsilon(1e-12));
  CHECK(a[1] == doctest::Approx(1.0));
  CHECK(a[0] == doctest::Approx(0.309017).epsilon(1e-5));
  // shallow-water wrap rule
  a = bi_invariant(make_pose(sphere_sw(), {0.1, 1.0, 2.0}),
                   make_coordinate(sphere_sw(), {6.2, 1.5}));
  CHECK(a[0] == doctest::Approx(0.1 - 6.2 + 2.0 * kPi).epsilon(1e-10));
  CHECK(a[0] == doctest::Approx(0.18319).epsilon(1e-3));
  CHECK(a[1] == doctest::Approx(1.0));
  CHECK(a[2] == doctest::Approx(2.0));
  CHECK(a[3] == doctest::Approx(1.5));
}

TEST_CASE("bi-invariance under the group action (1e-10)") {
  Rng rng(5);
  for (auto geo : equivariant_geometries()) {
    CAPTURE(geometry_name(geo));
    for (int it = 0; it < 300; ++it) {
      Pose p = random_pose(geo, rng);
      Coordinate x = random_coordinate(geo, rng);
      GroupElement g = random_group_element(geo, rng);
      auto a1 = bi_invariant(p, x);
      auto a2 = bi_invariant(act_pose(g, p), act(g, x));
      CHECK(max_abs_diff(a1, a2) < 1e-10);
    }
  }
}

TEST_CASE("nosym attribute is NOT invariant") {
  Rng rng(6);
  auto geo = nosym(2);
  Pose p = random_pose(geo, rng);
  Coordinate x = random_coordinate(geo, rng);
  GroupElement g{geo, {0.37, -0.81}};
  auto a1 = bi_invariant(p, x);
  auto a2 = bi_invariant(act_pose(g, p), act(g, x));
  CHECK(max_abs_diff(a1, a2) > 1e-3);
}

TEST_CASE("pair attribute: identity and invariance") {
  Rng rng(7);
  for (auto geo : equivariant_geometries()) {
    CAPTURE(geometry_name(geo));
    Pose p = random_pose(geo, rng);
    auto self = bi_invariant_pair(p, p);
    // canonical identity attribute: relative pose is the identity
    switch (geo.tag) {
      case Tag::PlaneSE2:
        CHECK(max_abs(self) < 1e-12);
        break;
      case Tag::Torus2:
        CHECK(self[0] == doctest::Approx(1.0));
        CHECK(std::fabs(self[1]) < 1e-12);
        CHECK(self[2] == doctest::Approx(1.0));
        CHECK(std::fabs(self[3]) < 1e-12);
        break;
      case Tag::SphereSO3:
      case Tag::SphereSW:
      case Tag::Ball3: {
        for (int r = 0; r < 3; ++r)
          for (int c = 0; c < 3; ++c)
            CHECK(self[static_cast<size_t>(r * 3 + c)] ==
                  doctest::Approx(r == c ? 1.0 : 0.0).epsilon(1e-12));
        break;
      }
      default:
        break;
    }
    for (int it = 0; it < 200; ++it) {
      Pose pi = random_pose(geo, rng), pj = random_pose(geo, rng);
      GroupElement g = random_group_element(geo, rng);
      CHECK(max_abs_diff(bi_invariant_pair(pi, pj),
                         bi_invariant_pair(act_pose(g, pi), act_pose(g, pj))) < 1e-10);
    }
  }
  // SE(2): unchanged when both poses translate by the same t
  Pose pi = random_pose(plane_se2(), rng), pj = random_pose(plane_se2(), rng);
  GroupElement shift{plane_se2(), {0.63, -1.2, 0.0}};
  CHECK(max_abs_diff(bi_invariant_pair(pi, pj),
                     bi_invariant_pair(act_pose(shift, pi), act_pose(shift, pj))) < 1e-12);
}

TEST_CASE("log/exp: stated examples") {
  Rng rng(8);
  for (auto geo : all_geometries()) {
    Pose p = random_pose(geo, rng);
    CHECK(max_abs(log_map(p, p)) < 1e-12);                 // log_p(p) = 0
    CHECK(pose_dist(exp_map(p, log_map(p, p)), p) < 1e-12);  // exp_p(0) = p
  }
  // torus shortest wrap: +0.2, not -0.8
  auto v = log_map(make_pose(torus2(), {0.9, 0.9}), make_pose(torus2(), {0.1, 0.1}));
  CHECK(v[0] == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(v[1] == doctest::Approx(0.2).epsilon(1e-12));
  // Euclidean case reduces to q - p
  auto ve = log_map(make_pose(nosym(3), {1.0, 2.0, 3.0}), make_pose(nosym(3), {1.5, 1.0, 3.25}));
  CHECK(ve[0] == doctest::Approx(0.5));
  CHECK(ve[1] == doctest::Approx(-1.0));
  CHECK(ve[2] == doctest::Approx(0.25));
  // SO(3): p = I, q = rotation by alpha about z -> (0,0,alpha)
  for (double alpha : {0.3, 1.5, 3.0}) {
    auto vl = log_map(make_pose(sphere_so3(), {0.0, 0.0, 0.0}),
                      make_pose(sphere_so3(), {alpha, 0.0, 0.0}));
    CHECK(std::fabs(vl[0]) < 1e-12);
    CHECK(std::fabs(vl[1]) < 1e-12);
    CHECK(vl[2] == doctest::Approx(alpha).epsilon(1e-10));
  }
}

TEST_CASE("exp(log) round trip: 1000 random pairs under 1e-9") {
  Rng rng(9);
  double worst = 0.0;
  for (auto geo : all_geometries()) {
    const int iters = 1000 / 6 + 1;
    for (int it = 0; it < iters; ++it) {
      Pose p = random_pose(geo, rng), q = random_pose(geo, rng);
      std::vector<double> v;
      try {
        v = log_map(p, q);
      } catch (const std::domain_error&) {
        continue;  // cut locus draw; the caller is expected to perturb
      }
      worst = std::max(worst, pose_dist(exp_map(p, v), q));
    }
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("so3 cut locus raises") {
  Pose p = make_pose(sphere_so3(), {0.0, 0.0, 0.0});
  Pose q = make_pose(sphere_so3(), {kPi, 0.0, 0.0});  // rotation by pi about z
  CHECK_THROWS_AS(log_map(p, q), std::domain_error);
}

TEST_CASE("random_group_element: determinism and structure") {
  Rng a(42), b(42);
  for (auto geo : all_geometries()) {
    GroupElement ga = random_group_element(geo, a);
    GroupElement gb = random_group_element(geo, b);
    CHECK(ga.g == gb.g);
  }
  Rng r(11);
  GroupElement sw = random_group_element(sphere_sw(), r);
  CHECK(sw.g.size() == 1);  // polar angle only
  // empirical mean of torus shifts ~ 0.5 per axis
  double mean0 = 0.0, mean1 = 0.0;
  const int n = 10000;
  Rng tr(123);
  for (int i = 0; i < n; ++i) {
    GroupElement g = random_group_element(torus2(), tr);
    mean0 += g.g[0];
    mean1 += g.g[1];
  }
  CHECK(std::fabs(mean0 / n - 0.5) < 0.02);
  CHECK(std::fabs(mean1 / n - 0.5) < 0.02);
}

TEST_CASE("window distance: examples and invariance") {
  Rng rng(12);
  // base point equals x -> 0
  Pose pp = make_pose(plane_se2(), {0.4, -0.7, 1.1});
  CHECK(window_distance_sq(pp, make_coordinate(plane_se2(), {0.4, -0.7})) == doctest::Approx(0.0));
  Pose ps = make_pose(sphere_so3(), {1.2, 0.7, 0.3});
  CHECK(window_distance_sq(ps, make_coordinate(sphere_so3(), {1.2, 0.7})) < 1e-12);
  // torus wrap arithmetic
  CHECK(window_distance_sq(make_pose(torus2(), {0.95, 0.0}),
                           make_coordinate(torus2(), {0.05, 0.0})) == doctest::Approx(0.01));
  // invariance under a common group action
  for (auto geo : equivariant_geometries()) {
    CAPTURE(geometry_name(geo));
    for (int it = 0; it < 200; ++it) {
      Pose p = random_pose(geo, rng);
      Coordinate x = random_coordinate(geo, rng);
      GroupElement g = random_group_element(geo, rng);
      CHECK(std::fabs(window_distance_sq(p, x) -
                      window_distance_sq(act_pose(g, p), act(g, x))) < 1e-10);
    }
  }
}

TEST_CASE("sphere coordinate unit cache has unit norm") {
  Rng rng(13);
  for (int i = 0; i < 100; ++i) {
    Coordinate x = random_coordinate(sphere_so3(), rng);
    const double n2 = x.unit[0] * x.unit[0] + x.unit[1] * x.unit[1] + x.unit[2] * x.unit[2];
    CHECK(std::fabs(n2 - 1.0) < 1e-12);
  }
}

// --------------------------------------------------------------------------
// Tape-side geometry agrees with the plain implementation and with FD.
// --------------------------------------------------------------------------

TEST_CASE("tape bi_invariant/window/pair match the plain route") {
  Rng rng(14);
  for (auto geo : all_geometries()) {
    CAPTURE(geometry_name(geo));
    const int n = 3, m = 5;
    std::vector<Pose> poses;
    for (int i = 0; i < n; ++i) poses.push_back(random_pose(geo, rng));
    std::vector<Coordinate> coords;
    for (int i = 0; i < m; ++i) coords.push_back(random_coordinate(geo, rng));

    Tape t;
    Value state = t.leaf(pose_state_tensor(geo, poses));
    auto batch = make_coord_batch(geo, coords);
    const Tensor attrs = bi_invariant_batch(t, geo, state, batch).val();
    const Tensor window = window_distance_sq_batch(t, geo, state, batch).val();
    const Tensor pairs = pair_attr_batch(t, geo, state).val();
    const Tensor logs = log_pairwise(t, geo, state).val();

    const int ad = attr_dim(geo), pd = pair_attr_dim(geo), td = tangent_dim(geo);
    for (int mm = 0; mm < m; ++mm)
      for (int i = 0; i < n; ++i) {
        auto ref = bi_invariant(poses[static_cast<size_t>(i)], coords[static_cast<size_t>(mm)]);
        for (int d = 0; d < ad; ++d)
          CHECK(attrs.at({mm * n + i, d}) == doctest::Approx(ref[static_cast<size_t>(d)]).epsilon(1e-11));
        CHECK(window.at({mm, i}) ==
              doctest::Approx(window_distance_sq(poses[static_cast<size_t>(i)],
                                                 coords[static_cast<size_t>(mm)]))
                  .epsilon(1e-10));
      }
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        auto refp = bi_invariant_pair(poses[static_cast<size_t>(i)], poses[static_cast<size_t>(j)]);
        auto refl = log_map(poses[static_cast<size_t>(i)], poses[static_cast<size_t>(j)]);
        for (int d = 0; d < pd; ++d)
          CHECK(pairs.at({i * n + j, d}) ==
                doctest::Approx(refp[static_cast<size_t>(d)]).epsilon(1e-11));
        for (int d = 0; d < td; ++d)
          CHECK(logs.at({i * n + j, d}) ==
                doctest::Approx(refl[static_cast<size_t>(d)]).epsilon(1e-10));
      }
  }
}

TEST_CASE("tape exp_update matches plain exp_map") {
  Rng rng(15);
  for (auto geo : all_geometries()) {
    CAPTURE(geometry_name(geo));
    const int n = 4;
    std::vector<Pose> poses;
    for (int i = 0; i < n; ++i) poses.push_back(random_pose(geo, rng));
    Tensor tangents(Shape{n, tangent_dim(geo)});
    for (auto& v : tangents.data) v = rng.uniform(-0.4, 0.4);

    Tape t;
    Value state = t.leaf(pose_state_tensor(geo, poses));
    Tensor moved = exp_update(t, geo, state, t.leaf(tangents)).val();
    auto new_poses = poses_from_state(geo, moved);
    for (int i = 0; i < n; ++i) {
      std::vector<double> v(tangents.data.begin() + i * tangent_dim(geo),
                            tangents.data.begin() + (i + 1) * tangent_dim(geo));
      CHECK(pose_dist(new_poses[static_cast<size_t>(i)],
                      exp_map(poses[static_cast<size_t>(i)], v)) < 1e-10);
    }
  }
}

TEST_CASE("tape geometry gradients match finite differences") {
  Rng rng(16);
  for (auto geo : all_geometries()) {
    CAPTURE(geometry_name(geo));
    const int n = 3, m = 4;
    std::vector<Pose> poses;
    for (int i = 0; i < n; ++i) poses.push_back(random_pose(geo, rng));
    std::vector<Coordinate> coords;
    for (int i = 0; i < m; ++i) coords.push_back(random_coordinate(geo, rng));
    auto batch = make_coord_batch(geo, coords);
    const Tensor params = pose_params_tensor(geo, poses);

    auto weighted = [&](Tape& t, Value y, uint64_t salt) {
      Tensor w(y.shape());
      Rng wr(salt);
      for (auto& v : w.data) v = wr.uniform(-1.0, 1.0);
      return t.sum_all(t.mul(y, t.constant(std::move(w))));
    };
    auto f_attr = [&](Tape& t, Value p) {
      Value st = pose_state_from_params(t, geo, p);
      return weighted(t, bi_invariant_batch(t, geo, st, batch), 21);
    };
    auto f_window = [&](Tape& t, Value p) {
      Value st = pose_state_from_params(t, geo, p);
      return weighted(t, window_distance_sq_batch(t, geo, st, batch), 22);
    };
    auto f_pair = [&](Tape& t, Value p) {
      Value st = pose_state_from_params(t, geo, p);
      return weighted(t, pair_attr_batch(t, geo, st), 23);
    };
    auto f_flow = [&](Tape& t, Value p) {
      Value st = pose_state_from_params(t, geo, p);
      Value logs = log_pairwise(t, geo, st);
      Value tang = t.mul_scalar(t.slice(logs, 0, 0, st.shape()[0]), 0.3);
      return weighted(t, exp_update(t, geo, st, tang), 24);
    };
    CHECK(check_gradient(f_attr, params, 1e-6) < 1e-5);
    CHECK(check_gradient(f_window, params, 1e-6) < 1e-5);
    CHECK(check_gradient(f_pair, params, 1e-6) < 1e-5);
    CHECK(check_gradient(f_flow, params, 1e-6) < 1e-5);
  }
}
