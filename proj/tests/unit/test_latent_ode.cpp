#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "enfode/latent_ode.hpp"
#include "test_helpers.hpp"

using namespace enfode;
using namespace enfode::testutil;

namespace {

OdeConfig small_ode() {
  OdeConfig cfg;
  cfg.layers = 2;
  cfg.hidden_dim = 12;
  cfg.steps_per_frame = 2;
  return cfg;
}

/// The zero-initialized output layers make F vanish; tests of dynamics
/// randomize them to get a nontrivial smooth field.
void randomize_flow(ParamStore& ps, const OdeConfig& cfg, Rng& rng, double scale = 0.15) {
  auto fill = [&](const std::string& name) {
    for (auto& v : ps.at(name).data) v = scale * rng.normal();
  };
  fill("ode.out_w");
  fill("ode.out_b");
  for (int l = 0; l < cfg.layers; ++l) {
    fill("ode.l" + std::to_string(l) + ".pose2_w");
    fill("ode.l" + std::to_string(l) + ".pose2_b");
  }
}

LatentSet random_latents(geom::GeometryId g, int n, int c, Rng& rng) {
  LatentSet z;
  z.geometry = g;
  for (int i = 0; i < n; ++i) z.poses.push_back(random_pose(g, rng));
  z.contexts = Tensor(Shape{n, c});
  for (auto& v : z.contexts.data) v = 0.5 * rng.normal();
  return z;
}

double latent_dist(const LatentSet& a, const LatentSet& b) {
  double d = max_abs_diff(a.contexts, b.contexts);
  for (size_t i = 0; i < a.poses.size(); ++i) d = std::max(d, pose_dist(a.poses[i], b.poses[i]));
  return d;
}

}  // namespace

TEST_CASE("mpnn_layer: single latent and zero hidden state") {
  Rng rng(1);
  for (auto g : all_geometries()) {
    CAPTURE(geom::geometry_name(g));
    OdeConfig cfg = small_ode();
    ParamStore ps;
    Rng pr(3);
    register_ode_params(ps, cfg, g, 4, pr);
    randomize_flow(ps, cfg, pr);

    // N = 1: log_p(p) = 0, pose must stay put
    LatentSet z1 = random_latents(g, 1, 4, rng);
    Tape t;
    BoundParams bp(t, ps, false);
    OdeVars v = bind_ode(bp, cfg);
    Value state = t.constant(geom::pose_state_tensor(g, z1.poses));
    Tensor h(Shape{1, cfg.hidden_dim});
    for (auto& e : h.data) e = rng.normal();
    auto [s1, h1] = mpnn_layer(t, v.layers[0], g, state, t.constant(h));
    CHECK(max_abs_diff(s1.val(), state.val()) < 1e-14);
    CHECK(h1.shape() == Shape{1, cfg.hidden_dim});

    // zero hidden state: pose update vanishes (weights multiply c_j)
    LatentSet z3 = random_latents(g, 3, 4, rng);
    Value state3 = t.constant(geom::pose_state_tensor(g, z3.poses));
    auto [s3, h3] = mpnn_layer(t, v.layers[0], g, state3,
                               t.constant(Tensor(Shape{3, cfg.hidden_dim})));
    CHECK(max_abs_diff(s3.val(), state3.val()) == 0.0);
    CHECK(h3.val().max_abs() == 0.0);
  }
}

TEST_CASE("vector_field is identically zero at initialization") {
  Rng rng(2);
  for (auto g : all_geometries()) {
    OdeConfig cfg = small_ode();
    ParamStore ps;
    Rng pr(5);
    register_ode_params(ps, cfg, g, 4, pr);  // zero-init output projections
    LatentSet z = random_latents(g, 4, 4, rng);
    Tape t;
    BoundParams bp(t, ps, false);
    OdeVars v = bind_ode(bp, cfg);
    LatentVar zv{t.constant(geom::pose_state_tensor(g, z.poses)), t.constant(z.contexts)};
    auto [dc, tang] = vector_field(t, v, cfg, g, zv);
    CHECK(dc.val().max_abs() == 0.0);
    CHECK(tang.val().max_abs() < 1e-14);
  }
}

TEST_CASE("vector_field is deterministic and translation invariant on the plane") {
  Rng rng(3);
  auto g = geom::plane_se2();
  OdeConfig cfg = small_ode();
  ParamStore ps;
  Rng pr(7);
  register_ode_params(ps, cfg, g, 4, pr);
  randomize_flow(ps, cfg, pr);
  LatentSet z = random_latents(g, 4, 4, rng);

  auto run = [&](const LatentSet& zz) {
    Tape t;
    BoundParams bp(t, ps, false);
    OdeVars v = bind_ode(bp, cfg);
    LatentVar zv{t.constant(geom::pose_state_tensor(g, zz.poses)), t.constant(zz.contexts)};
    auto [dc, tang] = vector_field(t, v, cfg, g, zv);
    return std::make_pair(dc.val(), tang.val());
  };
  auto [dc1, v1] = run(z);
  auto [dc2, v2] = run(z);
  CHECK(max_abs_diff(dc1, dc2) == 0.0);  // deterministic
  CHECK(max_abs_diff(v1, v2) == 0.0);

  geom::GroupElement shift{g, {0.7, -1.3, 0.0}};
  auto [dc3, v3] = run(geom::act_latent(shift, z));
  CHECK(max_abs_diff(dc1, dc3) < 1e-12);  // dc invariant
  CHECK(max_abs_diff(v1, v3) < 1e-12);    // translation differential is identity
}

TEST_CASE("mpnn layer equivariance across geometries") {
  Rng rng(4);
  for (auto g : equivariant_geometries()) {
    CAPTURE(geom::geometry_name(g));
    OdeConfig cfg = small_ode();
    ParamStore ps;
    Rng pr(9);
    register_ode_params(ps, cfg, g, 4, pr);
    randomize_flow(ps, cfg, pr);
    LatentSet z = random_latents(g, 4, 4, rng);

    auto layer_out = [&](const LatentSet& zz) {
      Tape t;
      BoundParams bp(t, ps, false);
      OdeVars v = bind_ode(bp, cfg);
      Value state = t.constant(geom::pose_state_tensor(g, zz.poses));
      Value hidden = t.linear(t.constant(zz.contexts), v.in_w, v.in_b);
      auto [s, h] = mpnn_layer(t, v.layers[0], g, state, hidden);
      LatentSet out;
      out.geometry = g;
      out.poses = geom::poses_from_state(g, s.val());
      out.contexts = h.val();
      return out;
    };

    double worst = 0.0;
    for (int it = 0; it < 30; ++it) {
      geom::GroupElement ge = geom::random_group_element(g, rng);
      LatentSet lhs = layer_out(geom::act_latent(ge, z));       // layer(g z)
      LatentSet rhs = geom::act_latent(ge, layer_out(z));       // g layer(z)
      worst = std::max(worst, latent_dist(lhs, rhs));
    }
    CHECK(worst < 1e-9);
  }
}

TEST_CASE("integrate: zero field holds z fixed; frames counted correctly") {
  Rng rng(5);
  auto g = geom::torus2();
  OdeConfig cfg = small_ode();
  ParamStore ps;
  Rng pr(11);
  register_ode_params(ps, cfg, g, 4, pr);  // F == 0
  LatentSet z = random_latents(g, 4, 4, rng);
  auto frames = integrate_latent(ps, cfg, z, 10, 4);
  REQUIRE(frames.size() == 10);
  for (const auto& f : frames) CHECK(latent_dist(f, z) < 1e-14);
}

TEST_CASE("commuting diagram: integrate(g z) == g integrate(z) over 10 frames") {
  Rng rng(6);
  for (auto g : equivariant_geometries()) {
    CAPTURE(geom::geometry_name(g));
    OdeConfig cfg = small_ode();
    ParamStore ps;
    Rng pr(13);
    register_ode_params(ps, cfg, g, 4, pr);
    randomize_flow(ps, cfg, pr, 0.01);
    LatentSet z = random_latents(g, 4, 4, rng);
    geom::GroupElement ge = geom::random_group_element(g, rng);

    auto a = integrate_latent(ps, cfg, geom::act_latent(ge, z), 10, 4);
    auto b = integrate_latent(ps, cfg, z, 10, 4);
    double worst = 0.0;
    for (size_t f = 0; f < a.size(); ++f)
      worst = std::max(worst, latent_dist(a[f], geom::act_latent(ge, b[f])));
    CHECK(worst < 1e-7);
    CHECK(latent_dist(b.front(), b.back()) > 1e-4);  // the flow actually moves
  }
}

TEST_CASE("nosym rollout is not equivariant") {
  Rng rng(7);
  auto g = geom::nosym(2);
  OdeConfig cfg = small_ode();
  ParamStore ps;
  Rng pr(15);
  register_ode_params(ps, cfg, g, 4, pr);
  randomize_flow(ps, cfg, pr);
  LatentSet z = random_latents(g, 4, 4, rng);
  geom::GroupElement ge{g, {1.1, -0.6}};
  auto a = integrate_latent(ps, cfg, geom::act_latent(ge, z), 6, 4);
  auto b = integrate_latent(ps, cfg, z, 6, 4);
  double worst = 0.0;
  for (size_t f = 0; f < a.size(); ++f)
    worst = std::max(worst, latent_dist(a[f], geom::act_latent(ge, b[f])));
  CHECK(worst > 1e-4);
}

TEST_CASE("permutation equivariance in the latent index") {
  Rng rng(8);
  auto g = geom::plane_se2();
  OdeConfig cfg = small_ode();
  ParamStore ps;
  Rng pr(17);
  register_ode_params(ps, cfg, g, 4, pr);
  randomize_flow(ps, cfg, pr);
  LatentSet z = random_latents(g, 4, 4, rng);
  const std::vector<size_t> perm = {2, 0, 3, 1};
  LatentSet zp;
  zp.geometry = g;
  zp.contexts = Tensor(Shape{4, 4});
  for (size_t i = 0; i < 4; ++i) {
    zp.poses.push_back(z.poses[perm[i]]);
    for (int64_t k = 0; k < 4; ++k)
      zp.contexts.at({static_cast<int64_t>(i), k}) =
          z.contexts.at({static_cast<int64_t>(perm[i]), k});
  }
  auto a = integrate_latent(ps, cfg, z, 5, 4);
  auto b = integrate_latent(ps, cfg, zp, 5, 4);
  for (size_t f = 0; f < a.size(); ++f)
    for (size_t i = 0; i < 4; ++i) {
      CHECK(pose_dist(b[f].poses[i], a[f].poses[perm[i]]) < 1e-11);
      for (int64_t k = 0; k < 4; ++k)
        CHECK(b[f].contexts.at({static_cast<int64_t>(i), k}) ==
              doctest::Approx(a[f].contexts.at({static_cast<int64_t>(perm[i]), k}))
                  .epsilon(1e-11));
    }
}

TEST_CASE("LieEuler endpoint error scales linearly in dt (Richardson)") {
  Rng rng(9);
  auto g = geom::torus2();
  OdeConfig cfg = small_ode();
  cfg.layers = 2;
  ParamStore ps;
  Rng pr(19);
  register_ode_params(ps, cfg, g, 4, pr);
  randomize_flow(ps, cfg, pr, 0.05);
  LatentSet z = random_latents(g, 4, 4, rng);

  auto endpoint = [&](int steps) {
    OdeConfig c = cfg;
    c.steps_per_frame = steps;
    return integrate_latent(ps, c, z, 2, 4).back();
  };
  // compare in the asymptotic regime: halving dt should halve the change
  LatentSet e1 = endpoint(4), e2 = endpoint(8), e4 = endpoint(16);
  const double d12 = latent_dist(e1, e2), d24 = latent_dist(e2, e4);
  CHECK(d12 > 1e-12);
  const double ratio = d12 / d24;
  CHECK(ratio > 1.5);
  CHECK(ratio < 2.8);
}

TEST_CASE("Heun integrates more accurately than LieEuler on a smooth field") {
  Rng rng(10);
  auto g = geom::torus2();
  OdeConfig cfg = small_ode();
  ParamStore ps;
  Rng pr(21);
  register_ode_params(ps, cfg, g, 4, pr);
  randomize_flow(ps, cfg, pr, 0.2);
  LatentSet z = random_latents(g, 4, 4, rng);

  auto run = [&](SolverMethod m, int steps) {
    OdeConfig c = cfg;
    c.method = m;
    c.steps_per_frame = steps;
    return integrate_latent(ps, c, z, 2, 4).back();
  };
  LatentSet truth = run(SolverMethod::Heun, 64);
  const double err_euler = latent_dist(run(SolverMethod::LieEuler, 4), truth);
  const double err_heun = latent_dist(run(SolverMethod::Heun, 4), truth);
  CHECK(err_heun < err_euler);
}

TEST_CASE("rollout gradients w.r.t. flow parameters match finite differences") {
  Rng rng(11);
  auto g = geom::torus2();
  OdeConfig cfg = small_ode();
  cfg.layers = 1;
  cfg.steps_per_frame = 1;
  ParamStore ps;
  Rng pr(23);
  register_ode_params(ps, cfg, g, 2, pr);
  randomize_flow(ps, cfg, pr, 0.3);
  LatentSet z = random_latents(g, 2, 2, rng);

  // 2-latent, 2-frame toy: d(sum of frame-1 contexts + poses)/d(out_w)
  Tensor w0 = ps.at("ode.out_w");
  Shape w_shape = w0.shape;
  w0.shape = Shape{numel(w0.shape)};
  auto f = [&](Tape& t, Value w) {
    BoundParams bp(t, ps, false);
    OdeVars v = bind_ode(bp, cfg);
    v.out_w = t.reshape(w, w_shape);
    LatentVar zv{t.constant(geom::pose_state_tensor(g, z.poses)), t.constant(z.contexts)};
    auto frames = integrate(t, v, cfg, g, zv, 2);
    return t.add(t.sum_all(frames[1].contexts), t.sum_all(t.square(frames[1].pose_state)));
  };
  CHECK(check_gradient(f, w0, 1e-6) < 1e-4);

  // and w.r.t. a pose kernel weight, which moves poses
  Tensor pw = ps.at("ode.l0.pose2_w");
  Shape pw_shape = pw.shape;
  pw.shape = Shape{numel(pw.shape)};
  auto f2 = [&](Tape& t, Value w) {
    BoundParams bp(t, ps, false);
    OdeVars v = bind_ode(bp, cfg);
    v.layers[0].pose2_w = t.reshape(w, pw_shape);
    LatentVar zv{t.constant(geom::pose_state_tensor(g, z.poses)), t.constant(z.contexts)};
    auto frames = integrate(t, v, cfg, g, zv, 2);
    return t.add(t.sum_all(frames[1].contexts), t.sum_all(t.square(frames[1].pose_state)));
  };
  CHECK(check_gradient(f2, pw, 1e-6) < 1e-4);
}
