#include "enfode/latent_ode.hpp"

#include <cmath>
#include <stdexcept>

namespace enfode {

namespace {

Tensor uniform_fan_in(Shape s, int64_t fan_in, Rng& rng) {
  Tensor t(std::move(s));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.data) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

void register_ode_params(ParamStore& ps, const OdeConfig& cfg, geom::GeometryId g,
                         int context_dim, Rng& rng) {
  const int64_t d = cfg.hidden_dim, c = context_dim;
  const int64_t pa = geom::pair_attr_dim(g);
  ps.add("ode.in_w", uniform_fan_in({d, c}, c, rng));
  ps.add("ode.in_b", uniform_fan_in({d}, c, rng));
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "ode.l" + std::to_string(l) + ".";
    ps.add(p + "ctx1_w", uniform_fan_in({d, pa}, pa, rng));
    ps.add(p + "ctx1_b", uniform_fan_in({d}, pa, rng));
    ps.add(p + "ctx2_w", uniform_fan_in({d, d}, d, rng));
    ps.add(p + "ctx2_b", uniform_fan_in({d}, d, rng));
    ps.add(p + "pose1_w", uniform_fan_in({d, pa}, pa, rng));
    ps.add(p + "pose1_b", uniform_fan_in({d}, pa, rng));
    // zero output layer: pose updates vanish at initialization
    ps.add(p + "pose2_w", Tensor(Shape{d, d}));
    ps.add(p + "pose2_b", Tensor(Shape{d}));
  }
  // zero projection back to context space: the flow starts at identity
  ps.add("ode.out_w", Tensor(Shape{c, d}));
  ps.add("ode.out_b", Tensor(Shape{c}));
}

OdeVars bind_ode(const BoundParams& bp, const OdeConfig& cfg) {
  OdeVars v;
  v.in_w = bp.at("ode.in_w");
  v.in_b = bp.at("ode.in_b");
  v.out_w = bp.at("ode.out_w");
  v.out_b = bp.at("ode.out_b");
  v.layers.resize(static_cast<size_t>(cfg.layers));
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "ode.l" + std::to_string(l) + ".";
    auto& lv = v.layers[static_cast<size_t>(l)];
    lv.ctx1_w = bp.at(p + "ctx1_w");
    lv.ctx1_b = bp.at(p + "ctx1_b");
    lv.ctx2_w = bp.at(p + "ctx2_w");
    lv.ctx2_b = bp.at(p + "ctx2_b");
    lv.pose1_w = bp.at(p + "pose1_w");
    lv.pose1_b = bp.at(p + "pose1_b");
    lv.pose2_w = bp.at(p + "pose2_w");
    lv.pose2_b = bp.at(p + "pose2_b");
  }
  return v;
}

std::pair<Value, Value> mpnn_layer(Tape& t, const OdeLayerVars& lv, geom::GeometryId g,
                                   Value pose_state, Value hidden) {
  const int64_t n = hidden.shape()[0], d = hidden.shape()[1];
  Value attrs = geom::pair_attr_batch(t, g, pose_state);  // (N*N, pa), row i*N+j

  Value k_ctx = t.linear(t.gelu(t.linear(attrs, lv.ctx1_w, lv.ctx1_b)), lv.ctx2_w, lv.ctx2_b);
  Value k_pose = t.linear(t.gelu(t.linear(attrs, lv.pose1_w, lv.pose1_b)), lv.pose2_w, lv.pose2_b);

  Value h_j = geom::repeat_rows_inner(t, hidden, n);  // row i*N+j = h_j

  // context message: sum_j k_context(a_ij) (.) h_j, then nonlinearity + residual
  Value msg = t.sum(t.reshape(t.mul(k_ctx, h_j), Shape{n, n, d}), 1);
  Value new_hidden = t.add(hidden, t.gelu(msg));

  // pose update: exp_{p_i}( (1/N) sum_j <k_pose(a_ij), h_j> log_{p_i}(p_j) )
  Value w = t.sum(t.mul(k_pose, h_j), 1, true);  // (N*N, 1) scalar weights
  Value logs = geom::log_pairwise(t, g, pose_state);
  const int64_t td = logs.shape()[1];
  Value weighted = t.mul(t.broadcast_to(t.reshape(w, Shape{n, n, 1}), Shape{n, n, td}),
                         t.reshape(logs, Shape{n, n, td}));
  Value tangent = t.mul_scalar(t.sum(weighted, 1), 1.0 / static_cast<double>(n));
  Value new_state = geom::exp_update(t, g, pose_state, tangent);
  return {new_state, new_hidden};
}

std::pair<Value, Value> vector_field(Tape& t, const OdeVars& v, const OdeConfig& cfg,
                                     geom::GeometryId g, const LatentVar& z) {
  Value hidden = t.linear(z.contexts, v.in_w, v.in_b);
  Value state = z.pose_state;
  for (int l = 0; l < cfg.layers; ++l) {
    auto [s, h] = mpnn_layer(t, v.layers[static_cast<size_t>(l)], g, state, hidden);
    state = s;
    hidden = h;
  }
  Value dc = t.linear(hidden, v.out_w, v.out_b);          // zero at init
  Value tangent = geom::log_between(t, g, z.pose_state, state);  // zero at init
  return {dc, tangent};
}

std::vector<LatentVar> integrate(Tape& t, const OdeVars& v, const OdeConfig& cfg,
                                 geom::GeometryId g, const LatentVar& z0, int n_frames) {
  if (n_frames < 1) throw std::invalid_argument("integrate: need at least one frame");
  if (cfg.steps_per_frame < 1) throw std::invalid_argument("integrate: steps_per_frame >= 1");
  const double dt = cfg.frame_dt / cfg.steps_per_frame;
  std::vector<LatentVar> out;
  out.reserve(static_cast<size_t>(n_frames));
  out.push_back(z0);
  LatentVar z = z0;
  for (int f = 1; f < n_frames; ++f) {
    for (int s = 0; s < cfg.steps_per_frame; ++s) {
      auto [dc1, v1] = vector_field(t, v, cfg, g, z);
      if (cfg.method == SolverMethod::LieEuler) {
        z = LatentVar{geom::exp_update(t, g, z.pose_state, t.mul_scalar(v1, dt)),
                      t.add(z.contexts, t.mul_scalar(dc1, dt))};
      } else {
        // Heun: average the two stage derivatives; the stage-2 tangent is
        // applied at the original base point (naive transport)
        LatentVar ztilde{geom::exp_update(t, g, z.pose_state, t.mul_scalar(v1, dt)),
                         t.add(z.contexts, t.mul_scalar(dc1, dt))};
        auto [dc2, v2] = vector_field(t, v, cfg, g, ztilde);
        Value dc = t.mul_scalar(t.add(dc1, dc2), 0.5 * dt);
        Value tau = t.mul_scalar(t.add(v1, v2), 0.5 * dt);
        z = LatentVar{geom::exp_update(t, g, z.pose_state, tau), t.add(z.contexts, dc)};
      }
    }
    out.push_back(z);
  }
  return out;
}

std::vector<LatentSet> integrate_latent(const ParamStore& store, const OdeConfig& cfg,
                                        const LatentSet& z0, int n_frames, int) {
  Tape t;
  BoundParams bp(t, store, false);
  OdeVars v = bind_ode(bp, cfg);
  LatentVar z{t.constant(geom::pose_state_tensor(z0.geometry, z0.poses)),
              t.constant(z0.contexts)};
  auto frames = integrate(t, v, cfg, z0.geometry, z, n_frames);
  std::vector<LatentSet> out;
  out.reserve(frames.size());
  for (const auto& f : frames) {
    LatentSet ls;
    ls.geometry = z0.geometry;
    ls.poses = geom::poses_from_state(z0.geometry, f.pose_state.val());
    ls.contexts = f.contexts.val();
    out.push_back(std::move(ls));
  }
  return out;
}

}  // namespace enfode
