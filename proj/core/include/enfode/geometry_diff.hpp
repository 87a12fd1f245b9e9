#pragma once

#include <vector>

#include "enfode/geometry.hpp"
#include "enfode/tape.hpp"

namespace enfode::geom {

/// Per-frame coordinate data staged for tape use (constant inputs).
struct CoordBatch {
  GeometryId geom;
  Tensor params;  // (M, coord_dim)
  Tensor units;   // (M, 3) cached unit vectors for spheres/ball, else empty
  int64_t count() const { return params.shape.empty() ? 0 : params.shape[0]; }
};

CoordBatch make_coord_batch(GeometryId g, const std::vector<Coordinate>& xs);
CoordBatch coord_batch_subset(const CoordBatch& b, const std::vector<int64_t>& idx);

// Pose state layout on tape: PlaneSE2 (tx,ty,theta); Torus2 (u,v);
// spheres: flattened rotation matrix (9); Ball3: matrix + radius (10);
// NoSym: raw vector. Parameter form (Euler angles) exists only at tape
// boundaries; on-tape evolution stays in matrix form so no angle
// extraction is needed inside rollouts.

Tensor pose_params_tensor(GeometryId g, const std::vector<Pose>& poses);   // (N, pose_dim)
Value pose_state_from_params(Tape& t, GeometryId g, Value params);         // -> (N, state_dim)
Tensor pose_state_tensor(GeometryId g, const std::vector<Pose>& poses);    // plain (N, state_dim)
std::vector<Pose> poses_from_state(GeometryId g, const Tensor& state);     // canonicalizes

/// (M*N, attr_dim); row m*N + i holds a(p_i, x_m).
Value bi_invariant_batch(Tape& t, GeometryId g, Value state, const CoordBatch& xs);
/// (M, N) squared window distances.
Value window_distance_sq_batch(Tape& t, GeometryId g, Value state, const CoordBatch& xs);
/// (N*N, pair_attr_dim); row i*N + j holds a(p_i, p_j).
Value pair_attr_batch(Tape& t, GeometryId g, Value state);
/// (N*N, tangent_dim); row i*N + j holds log_{p_i}(p_j).
Value log_pairwise(Tape& t, GeometryId g, Value state);
/// (N, tangent_dim); rowwise log_{p_i}(q_i).
Value log_between(Tape& t, GeometryId g, Value state_p, Value state_q);
/// Rowwise exp_{p_i}(v_i) -> new state.
Value exp_update(Tape& t, GeometryId g, Value state, Value tangent);

// shared helpers (exposed for tests)
Value repeat_rows_outer(Tape& t, Value a, int64_t reps);  // row i*reps+j = a_i
Value repeat_rows_inner(Tape& t, Value a, int64_t reps);  // row i*reps+j = a_j
/// Adds a detached constant so values land in canonical wrapped ranges;
/// gradient passes through unchanged (the shift is piecewise constant).
Value wrap_detached_unit_half(Tape& t, Value x);
Value wrap_detached_angle(Tape& t, Value x);
/// acos(c)^2 with a series branch near c=1 (smooth there), branch chosen
/// from forward values.
Value geodesic_sq_from_cos(Tape& t, Value c);

}  // namespace enfode::geom
