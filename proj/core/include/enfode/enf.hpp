#pragma once

#include <string>
#include <vector>

#include "enfode/geometry_diff.hpp"
#include "enfode/latent_set.hpp"
#include "enfode/param_store.hpp"
#include "enfode/rng.hpp"
#include "enfode/tape.hpp"

namespace enfode {

struct EnfConfig {
  geom::GeometryId geometry;
  int n_latents = 4;
  int context_dim = 16;  // c
  int hidden_dim = 64;   // d
  int heads = 2;
  int rff_features = 32;  // frequencies per embedding (embedding dim 2F)
  double sigma_q = 0.05;
  double sigma_va = 0.2;
  double sigma_vb = 0.2;
  double sigma_att = 1.0;  // attention window scale
  int out_channels = 1;
  /// Half-extent and center of the planar domain; fixes the latent init
  /// grid and the translation box for random group draws.
  double domain_extent = 3.0;
  double domain_center = 0.0;
};

/// Registers all decoder parameters under the "enf." prefix: input
/// projection + layer norm, W_q/W_k/W_v/W_va/W_vb with biases, three
/// output linear layers, and the fixed (non-trainable) RFF frequency
/// banks drawn once from N(0, sigma^2).
void register_enf_params(ParamStore& store, const EnfConfig& cfg, Rng& rng);

/// Leaf handles for one tape.
struct EnfVars {
  Value w_in, b_in, ln_g, ln_b;
  Value w_q, b_q, w_k, b_k, w_v, b_v, w_va, b_va, w_vb, b_vb;
  Value out1_w, out1_b, out2_w, out2_b, out3_w, out3_b;
  Value rff_q, rff_va, rff_vb;
};
EnfVars bind_enf(Tape& t, const BoundParams& bp);

/// Gaussian RFF embedding [cos(2 pi a B^T), sin(2 pi a B^T)].
Value rff_embed(Tape& t, Value a, Value freq);

struct DecodeResult {
  Value output;                  // (M, out)
  std::vector<Value> attention;  // per head, (M, N)
};

/// Cross-attention field evaluation f_theta(x; z) over a coordinate batch.
DecodeResult decode_full(Tape& t, const EnfVars& v, const EnfConfig& cfg, Value pose_state,
                         Value contexts, const geom::CoordBatch& coords);
Value decode(Tape& t, const EnfVars& v, const EnfConfig& cfg, Value pose_state, Value contexts,
             const geom::CoordBatch& coords);

/// Convenience wrapper: plain latents in, plain values out.
Tensor decode_latent(const ParamStore& store, const EnfConfig& cfg, const LatentSet& z,
                     const std::vector<geom::Coordinate>& coords);

/// Meta-learned shared start: poses on a fixed uniform grid (orientation
/// zero; Fibonacci lattice on spheres), contexts all zero. Deterministic.
LatentSet init_latent(const EnfConfig& cfg);

}  // namespace enfode
