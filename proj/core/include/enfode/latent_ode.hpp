#pragma once

#include <string>
#include <vector>

#include "enfode/geometry_diff.hpp"
#include "enfode/latent_set.hpp"
#include "enfode/param_store.hpp"
#include "enfode/rng.hpp"
#include "enfode/tape.hpp"

namespace enfode {

enum class SolverMethod { LieEuler, Heun };

struct OdeConfig {
  int layers = 3;
  int hidden_dim = 64;  // message-passing width
  SolverMethod method = SolverMethod::LieEuler;
  int steps_per_frame = 2;
  double frame_dt = 1.0;  // unit time per dataset frame
};

/// Registers the vector-field parameters under the "ode." prefix: context
/// projections c<->d and, per layer, the two-layer k_context / k_pose MLPs
/// over pair attributes. The output projection and the k_pose output
/// layers start at zero so the flow starts at identity.
void register_ode_params(ParamStore& store, const OdeConfig& cfg, geom::GeometryId g,
                         int context_dim, Rng& rng);

struct OdeLayerVars {
  Value ctx1_w, ctx1_b, ctx2_w, ctx2_b;
  Value pose1_w, pose1_b, pose2_w, pose2_b;
};
struct OdeVars {
  Value in_w, in_b, out_w, out_b;
  std::vector<OdeLayerVars> layers;
};
OdeVars bind_ode(const BoundParams& bp, const OdeConfig& cfg);

/// On-tape latent state: evolving pose state plus contexts (N, c).
struct LatentVar {
  Value pose_state;
  Value contexts;
};

/// One message-passing update: contexts get kernel-weighted sums with a
/// residual nonlinearity, poses move along weighted log-map combinations.
/// Operates on hidden contexts (N, d).
std::pair<Value, Value> mpnn_layer(Tape& t, const OdeLayerVars& lv, geom::GeometryId g,
                                   Value pose_state, Value hidden);

/// dz/dtau: context derivative (N, c) and pose tangents (N, tangent_dim).
std::pair<Value, Value> vector_field(Tape& t, const OdeVars& v, const OdeConfig& cfg,
                                     geom::GeometryId g, const LatentVar& z);

/// Integrates n_frames - 1 frame intervals; returns latents at frame
/// times 0..n_frames-1 (the first entry is z0 itself).
std::vector<LatentVar> integrate(Tape& t, const OdeVars& v, const OdeConfig& cfg,
                                 geom::GeometryId g, const LatentVar& z0, int n_frames);

/// Plain-value wrapper used by audits/tools.
std::vector<LatentSet> integrate_latent(const ParamStore& store, const OdeConfig& cfg,
                                        const LatentSet& z0, int n_frames, int context_dim);

}  // namespace enfode
