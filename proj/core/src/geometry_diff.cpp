#include "enfode/geometry_diff.hpp"

#include <cmath>
#include <stdexcept>

namespace enfode::geom {

namespace {

constexpr double kPi = 3.14159265358979323846264338328;
constexpr double kTwoPi = 2.0 * kPi;

Value col(Tape& t, Value m, int64_t c) { return t.slice(m, 1, c, 1); }  // (N,1)

/// Detached elementwise additive shift: out = x + const(offset(x)).
Value add_detached_shift(Tape& t, Value x, double (*shift)(double)) {
  const Tensor& v = x.val();
  Tensor off(v.shape);
  bool any = false;
  for (size_t i = 0; i < v.data.size(); ++i) {
    off.data[i] = shift(v.data[i]);
    any = any || off.data[i] != 0.0;
  }
  if (!any) return x;
  return t.add(x, t.constant(std::move(off)));
}

/// Detached clamp into [lo, hi]: value clamped, gradient passed through.
Value clamp_detached(Tape& t, Value x, double lo, double hi) {
  const Tensor& v = x.val();
  Tensor off(v.shape);
  bool any = false;
  for (size_t i = 0; i < v.data.size(); ++i) {
    const double c = v.data[i] < lo ? lo : (v.data[i] > hi ? hi : v.data[i]);
    off.data[i] = c - v.data[i];
    any = any || off.data[i] != 0.0;
  }
  if (!any) return x;
  return t.add(x, t.constant(std::move(off)));
}

/// 0/1 mask from a forward-value predicate (detached).
Value mask_where(Tape& t, Value x, bool (*pred)(double)) {
  const Tensor& v = x.val();
  Tensor m(v.shape);
  for (size_t i = 0; i < v.data.size(); ++i) m.data[i] = pred(v.data[i]) ? 1.0 : 0.0;
  return t.constant(std::move(m));
}

Value select(Tape& t, Value mask, Value when_true, Value when_false) {
  Value one_minus = t.sub(t.scalar_const(1.0), mask);
  return t.add(t.mul(mask, when_true), t.mul(one_minus, when_false));
}

// ((N,k) x (M,k)) pairwise assembly pieces, shaped (M,N,1) each.
struct PairwisePlan {
  int64_t m, n;
  Tape* t;
  Value from_pose(Value pose_col) const {  // (N,1) -> (M,N,1)
    Value r = t->reshape(pose_col, Shape{1, n, 1});
    return t->broadcast_to(r, Shape{m, n, 1});
  }
  Value from_coord(Value coord_col) const {  // (M,1) -> (M,N,1)
    Value r = t->reshape(coord_col, Shape{m, 1, 1});
    return t->broadcast_to(r, Shape{m, n, 1});
  }
};

/// Rowwise 3x3 product, both operands (N,9): out = op(a)_i * op(b)_i
/// with optional transposition of the left factor.
Value rowwise_matmul(Tape& t, Value a, Value b, bool transpose_a) {
  std::vector<Value> entries;
  entries.reserve(9);
  for (int r = 0; r < 3; ++r)
    for (int cidx = 0; cidx < 3; ++cidx) {
      Value acc;
      for (int k = 0; k < 3; ++k) {
        const int64_t ai = transpose_a ? k * 3 + r : r * 3 + k;
        Value term = t.mul(col(t, a, ai), col(t, b, k * 3 + cidx));
        acc = k == 0 ? term : t.add(acc, term);
      }
      entries.push_back(acc);
    }
  return t.concat(entries, 1);
}

/// Pairwise R_i^T R_j over all (i,j): (N,9) -> (N*N,9).
Value pairwise_relative_rotation(Tape& t, Value r) {
  const int64_t n = r.shape()[0];
  std::vector<Value> entries;
  entries.reserve(9);
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) {
      Value acc;
      for (int c = 0; c < 3; ++c) {
        // (R_i^T R_j)[a,b] = sum_c R_i[c,a] R_j[c,b]
        Value ri = t.broadcast_to(t.reshape(col(t, r, c * 3 + a), Shape{n, 1, 1}), Shape{n, n, 1});
        Value rj = t.broadcast_to(t.reshape(col(t, r, c * 3 + b), Shape{1, n, 1}), Shape{n, n, 1});
        Value term = t.mul(ri, rj);
        acc = c == 0 ? term : t.add(acc, term);
      }
      entries.push_back(t.reshape(acc, Shape{n * n, 1}));
    }
  return t.concat(entries, 1);
}

/// Euler ZYZ (N,3) -> rotation matrices (N,9).
Value rotmat_from_euler(Tape& t, Value euler) {
  Value phi = col(t, euler, 0), theta = col(t, euler, 1), gamma = col(t, euler, 2);
  Value c1 = t.cos(phi), s1 = t.sin(phi);
  Value c2 = t.cos(theta), s2 = t.sin(theta);
  Value c3 = t.cos(gamma), s3 = t.sin(gamma);
  auto mul3 = [&](Value a, Value b, Value c) { return t.mul(t.mul(a, b), c); };
  std::vector<Value> e(9);
  e[0] = t.sub(mul3(c1, c2, c3), t.mul(s1, s3));
  e[1] = t.neg(t.add(mul3(c1, c2, s3), t.mul(s1, c3)));
  e[2] = t.mul(c1, s2);
  e[3] = t.add(mul3(s1, c2, c3), t.mul(c1, s3));
  e[4] = t.sub(t.mul(c1, c3), mul3(s1, c2, s3));
  e[5] = t.mul(s1, s2);
  e[6] = t.neg(t.mul(s2, c3));
  e[7] = t.mul(s2, s3);
  e[8] = c2;
  return t.concat(e, 1);
}

/// Rodrigues exponential of rowwise tangents (N,3) -> (N,9); series
/// branch (detached choice) keeps s = |v|^2 -> 0 smooth.
Value so3_exp_rows(Tape& t, Value v) {
  Value x = col(t, v, 0), y = col(t, v, 1), z = col(t, v, 2);
  Value s = t.add(t.add(t.square(x), t.square(y)), t.square(z));
  Value small = mask_where(t, s, [](double d) { return d < 1e-8; });
  Value s2 = t.square(s);
  Value a_series = t.add(t.sub(t.scalar_const(1.0), t.mul_scalar(s, 1.0 / 6.0)),
                         t.mul_scalar(s2, 1.0 / 120.0));
  Value b_series = t.add(t.sub(t.scalar_const(0.5), t.mul_scalar(s, 1.0 / 24.0)),
                         t.mul_scalar(s2, 1.0 / 720.0));
  Value sq = t.sqrt(t.add_scalar(s, 1e-300));
  Value a_direct = t.div(t.sin(sq), sq);
  Value b_direct = t.div(t.sub(t.scalar_const(1.0), t.cos(sq)), t.add_scalar(s, 1e-300));
  Value A = select(t, small, a_series, a_direct);
  Value B = select(t, small, b_series, b_direct);
  auto sq_sum = [&](Value u, Value w) { return t.add(t.square(u), t.square(w)); };
  std::vector<Value> e(9);
  e[0] = t.sub(t.scalar_const(1.0), t.mul(B, sq_sum(y, z)));
  e[1] = t.add(t.neg(t.mul(A, z)), t.mul(B, t.mul(x, y)));
  e[2] = t.add(t.mul(A, y), t.mul(B, t.mul(x, z)));
  e[3] = t.add(t.mul(A, z), t.mul(B, t.mul(x, y)));
  e[4] = t.sub(t.scalar_const(1.0), t.mul(B, sq_sum(x, z)));
  e[5] = t.add(t.neg(t.mul(A, x)), t.mul(B, t.mul(y, z)));
  e[6] = t.add(t.neg(t.mul(A, y)), t.mul(B, t.mul(x, z)));
  e[7] = t.add(t.mul(A, x), t.mul(B, t.mul(y, z)));
  e[8] = t.sub(t.scalar_const(1.0), t.mul(B, sq_sum(x, y)));
  return t.concat(e, 1);
}

/// Axis-angle log of rowwise rotation matrices (K,9) -> (K,3); throws
/// within 1e-6 of the pi cut locus.
Value so3_log_rows(Tape& t, Value m) {
  Value tr = t.add(t.add(col(t, m, 0), col(t, m, 4)), col(t, m, 8));
  Value q = t.mul_scalar(t.add_scalar(tr, -1.0), 0.5);
  q = clamp_detached(t, q, -1.0, 1.0);
  for (double c : q.val().data)
    if (std::acos(c) > kPi - 1e-6)
      throw std::domain_error("so3_log: rotation within 1e-6 of the pi cut locus");
  Value u = t.sub(t.scalar_const(1.0), q);
  Value small = mask_where(t, u, [](double d) { return d < 5e-9; });
  Value f_series = t.add(t.add_scalar(t.mul_scalar(u, 1.0 / 6.0), 0.5),
                         t.mul_scalar(t.square(u), 1.0 / 15.0));
  Value denom = t.sqrt(t.add_scalar(t.sub(t.scalar_const(1.0), t.square(q)), 1e-300));
  Value f_direct = t.div(t.acos(q), t.mul_scalar(denom, 2.0));
  Value f = select(t, small, f_series, f_direct);
  Value wx = t.sub(col(t, m, 7), col(t, m, 5));
  Value wy = t.sub(col(t, m, 2), col(t, m, 6));
  Value wz = t.sub(col(t, m, 3), col(t, m, 1));
  return t.concat({t.mul(f, wx), t.mul(f, wy), t.mul(f, wz)}, 1);
}

double shift_unit_half(double d) {
  return wrap_unit_half(d) - d;
}

double shift_angle(double d) { return wrap_angle(d) - d; }

double shift_two_pi(double d) { return wrap_two_pi(d) - d; }

}  // namespace

// ---------------------------------------------------------------------------

Value wrap_detached_unit_half(Tape& t, Value x) { return add_detached_shift(t, x, &shift_unit_half); }
Value wrap_detached_angle(Tape& t, Value x) { return add_detached_shift(t, x, &shift_angle); }

Value geodesic_sq_from_cos(Tape& t, Value c) {
  c = clamp_detached(t, c, -1.0, 1.0);
  Value u = t.sub(t.scalar_const(1.0), c);
  Value near_one = mask_where(t, u, [](double d) { return d < 1e-4; });
  // theta^2 = 2u + u^2/3 + 4u^3/45 + O(u^4) near u = 0
  Value u2 = t.square(u);
  Value series = t.add(t.add(t.mul_scalar(u, 2.0), t.mul_scalar(u2, 1.0 / 3.0)),
                       t.mul_scalar(t.mul(u2, u), 4.0 / 45.0));
  Value direct = t.square(t.acos(c));
  return select(t, near_one, series, direct);
}

Value repeat_rows_outer(Tape& t, Value a, int64_t reps) {
  const int64_t n = a.shape()[0], k = a.shape()[1];
  return t.reshape(t.broadcast_to(t.reshape(a, Shape{n, 1, k}), Shape{n, reps, k}),
                   Shape{n * reps, k});
}

Value repeat_rows_inner(Tape& t, Value a, int64_t reps) {
  const int64_t n = a.shape()[0], k = a.shape()[1];
  return t.reshape(t.broadcast_to(t.reshape(a, Shape{1, n, k}), Shape{reps, n, k}),
                   Shape{reps * n, k});
}

CoordBatch make_coord_batch(GeometryId g, const std::vector<Coordinate>& xs) {
  const int64_t m = static_cast<int64_t>(xs.size());
  const int cd = coord_dim(g);
  CoordBatch b;
  b.geom = g;
  b.params = Tensor(Shape{m, cd});
  for (int64_t i = 0; i < m; ++i) {
    if (!(xs[static_cast<size_t>(i)].geom == g))
      throw std::invalid_argument("make_coord_batch: geometry mismatch");
    for (int d = 0; d < cd; ++d)
      b.params.data[static_cast<size_t>(i * cd + d)] = xs[static_cast<size_t>(i)].x[static_cast<size_t>(d)];
  }
  if (g.tag == Tag::SphereSO3 || g.tag == Tag::SphereSW || g.tag == Tag::Ball3) {
    b.units = Tensor(Shape{m, 3});
    for (int64_t i = 0; i < m; ++i)
      for (int d = 0; d < 3; ++d)
        b.units.data[static_cast<size_t>(i * 3 + d)] =
            xs[static_cast<size_t>(i)].unit[static_cast<size_t>(d)];
  }
  return b;
}

CoordBatch coord_batch_subset(const CoordBatch& b, const std::vector<int64_t>& idx) {
  CoordBatch out;
  out.geom = b.geom;
  const int64_t cd = b.params.shape[1];
  out.params = Tensor(Shape{static_cast<int64_t>(idx.size()), cd});
  for (size_t r = 0; r < idx.size(); ++r)
    for (int64_t d = 0; d < cd; ++d)
      out.params.data[r * static_cast<size_t>(cd) + static_cast<size_t>(d)] =
          b.params.data[static_cast<size_t>(idx[r] * cd + d)];
  if (!b.units.data.empty()) {
    out.units = Tensor(Shape{static_cast<int64_t>(idx.size()), 3});
    for (size_t r = 0; r < idx.size(); ++r)
      for (int64_t d = 0; d < 3; ++d)
        out.units.data[r * 3 + static_cast<size_t>(d)] =
            b.units.data[static_cast<size_t>(idx[r] * 3 + d)];
  }
  return out;
}

Tensor pose_params_tensor(GeometryId g, const std::vector<Pose>& poses) {
  const int64_t n = static_cast<int64_t>(poses.size());
  const int pd = pose_dim(g);
  Tensor out(Shape{n, pd});
  for (int64_t i = 0; i < n; ++i)
    for (int d = 0; d < pd; ++d)
      out.data[static_cast<size_t>(i * pd + d)] = poses[static_cast<size_t>(i)].p[static_cast<size_t>(d)];
  return out;
}

Value pose_state_from_params(Tape& t, GeometryId g, Value params) {
  switch (g.tag) {
    case Tag::PlaneSE2:
    case Tag::Torus2:
    case Tag::NoSym:
      return params;
    case Tag::SphereSO3:
    case Tag::SphereSW:
      return rotmat_from_euler(t, params);
    case Tag::Ball3: {
      Value euler = t.slice(params, 1, 0, 3);
      Value r = t.slice(params, 1, 3, 1);
      return t.concat({rotmat_from_euler(t, euler), r}, 1);
    }
  }
  throw std::logic_error("pose_state_from_params: unreachable");
}

Tensor pose_state_tensor(GeometryId g, const std::vector<Pose>& poses) {
  const int64_t n = static_cast<int64_t>(poses.size());
  const int sd = pose_state_dim(g);
  Tensor out(Shape{n, sd});
  for (int64_t i = 0; i < n; ++i) {
    const Pose& p = poses[static_cast<size_t>(i)];
    double* row = out.data.data() + i * sd;
    switch (g.tag) {
      case Tag::PlaneSE2:
      case Tag::Torus2:
      case Tag::NoSym:
        for (int d = 0; d < sd; ++d) row[d] = p.p[static_cast<size_t>(d)];
        break;
      case Tag::SphereSO3:
      case Tag::SphereSW: {
        const Mat3 m = pose_rotation(p);
        for (int d = 0; d < 9; ++d) row[d] = m[static_cast<size_t>(d)];
        break;
      }
      case Tag::Ball3: {
        const Mat3 m = pose_rotation(p);
        for (int d = 0; d < 9; ++d) row[d] = m[static_cast<size_t>(d)];
        row[9] = p.p[3];
        break;
      }
    }
  }
  return out;
}

std::vector<Pose> poses_from_state(GeometryId g, const Tensor& state) {
  const int64_t n = state.shape[0];
  const int sd = pose_state_dim(g);
  std::vector<Pose> out;
  out.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const double* row = state.data.data() + i * sd;
    switch (g.tag) {
      case Tag::PlaneSE2:
        out.push_back(make_pose(g, {row[0], row[1], row[2]}));
        break;
      case Tag::Torus2:
        out.push_back(make_pose(g, {row[0], row[1]}));
        break;
      case Tag::NoSym:
        out.push_back(make_pose(g, std::vector<double>(row, row + sd)));
        break;
      case Tag::SphereSO3:
      case Tag::SphereSW: {
        Mat3 m;
        for (int d = 0; d < 9; ++d) m[static_cast<size_t>(d)] = row[d];
        double f, th, ga;
        mat_to_euler_zyz(m, f, th, ga);
        out.push_back(Pose{g, {f, th, ga}});
        break;
      }
      case Tag::Ball3: {
        Mat3 m;
        for (int d = 0; d < 9; ++d) m[static_cast<size_t>(d)] = row[d];
        double f, th, ga;
        mat_to_euler_zyz(m, f, th, ga);
        const double r = std::min(std::max(row[9], 1e-6), 1.0 - 1e-6);
        out.push_back(Pose{g, {f, th, ga, r}});
        break;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pairwise attribute assemblies
// ---------------------------------------------------------------------------

Value bi_invariant_batch(Tape& t, GeometryId g, Value state, const CoordBatch& xs) {
  if (!(xs.geom == g)) throw std::invalid_argument("bi_invariant_batch: geometry mismatch");
  const int64_t n = state.shape()[0], m = xs.count();
  PairwisePlan pw{m, n, &t};
  Value coords = t.constant(xs.params);
  switch (g.tag) {
    case Tag::PlaneSE2: {
      Value tx = col(t, state, 0), ty = col(t, state, 1), th = col(t, state, 2);
      Value c = pw.from_pose(t.cos(th)), s = pw.from_pose(t.sin(th));
      Value dx = t.sub(pw.from_coord(col(t, coords, 0)), pw.from_pose(tx));
      Value dy = t.sub(pw.from_coord(col(t, coords, 1)), pw.from_pose(ty));
      Value a0 = t.add(t.mul(c, dx), t.mul(s, dy));
      Value a1 = t.sub(t.mul(c, dy), t.mul(s, dx));
      return t.reshape(t.concat({a0, a1}, 2), Shape{m * n, 2});
    }
    case Tag::Torus2: {
      Value d0 = t.sub(pw.from_coord(col(t, coords, 0)), pw.from_pose(col(t, state, 0)));
      Value d1 = t.sub(pw.from_coord(col(t, coords, 1)), pw.from_pose(col(t, state, 1)));
      Value a0 = t.cos(t.mul_scalar(d0, kTwoPi));
      Value a1 = t.cos(t.mul_scalar(d1, kTwoPi));
      return t.reshape(t.concat({a0, a1}, 2), Shape{m * n, 2});
    }
    case Tag::SphereSO3: {
      Value units = t.constant(xs.units);
      std::vector<Value> pieces;
      pieces.reserve(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) {
        Value ri = t.reshape(t.slice(state, 0, i, 1), Shape{3, 3});
        pieces.push_back(t.reshape(t.matmul(units, ri), Shape{m, 1, 3}));  // rows R_i^T x
      }
      return t.reshape(t.concat(pieces, 1), Shape{m * n, 3});
    }
    case Tag::SphereSW: {
      // Euler angles of the pose extracted from its matrix state, shifted
      // into the canonical [0,2pi) ranges the attribute is defined over
      Value theta_p = t.acos(clamp_detached(t, col(t, state, 8), -1.0, 1.0));
      Value phi_p = add_detached_shift(t, t.atan2(col(t, state, 5), col(t, state, 2)),
                                       &shift_two_pi);
      Value gamma_p = add_detached_shift(
          t, t.atan2(col(t, state, 7), t.neg(col(t, state, 6))), &shift_two_pi);
      Value dphi = t.sub(pw.from_pose(phi_p), pw.from_coord(col(t, coords, 0)));
      dphi = wrap_detached_angle(t, dphi);
      Value a = t.concat({dphi, pw.from_pose(theta_p), pw.from_pose(gamma_p),
                          pw.from_coord(col(t, coords, 1))},
                         2);
      return t.reshape(a, Shape{m * n, 4});
    }
    case Tag::Ball3: {
      Value units = t.constant(xs.units);
      Value rot = t.slice(state, 1, 0, 9);
      std::vector<Value> pieces;
      pieces.reserve(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) {
        Value ri = t.reshape(t.slice(rot, 0, i, 1), Shape{3, 3});
        pieces.push_back(t.reshape(t.matmul(units, ri), Shape{m, 1, 3}));
      }
      Value dir = t.reshape(t.concat(pieces, 1), Shape{m * n, 3});
      Value rp = t.reshape(pw.from_pose(col(t, state, 9)), Shape{m * n, 1});
      Value rx = t.reshape(pw.from_coord(col(t, coords, 2)), Shape{m * n, 1});
      return t.concat({dir, rp, rx}, 1);
    }
    case Tag::NoSym: {
      Value p = repeat_rows_inner(t, state, m);
      Value x = repeat_rows_outer(t, coords, n);
      return t.concat({p, x}, 1);
    }
  }
  throw std::logic_error("bi_invariant_batch: unreachable");
}

Value window_distance_sq_batch(Tape& t, GeometryId g, Value state, const CoordBatch& xs) {
  const int64_t n = state.shape()[0], m = xs.count();
  PairwisePlan pw{m, n, &t};
  Value coords = t.constant(xs.params);
  switch (g.tag) {
    case Tag::PlaneSE2:
    case Tag::NoSym: {
      const int64_t cd = xs.params.shape[1];
      Value acc;
      for (int64_t d = 0; d < cd; ++d) {
        Value diff = t.sub(pw.from_pose(col(t, state, d)), pw.from_coord(col(t, coords, d)));
        Value sq = t.square(diff);
        acc = d == 0 ? sq : t.add(acc, sq);
      }
      return t.reshape(acc, Shape{m, n});
    }
    case Tag::Torus2: {
      Value acc;
      for (int64_t d = 0; d < 2; ++d) {
        Value diff = t.sub(pw.from_pose(col(t, state, d)), pw.from_coord(col(t, coords, d)));
        Value sq = t.square(wrap_detached_unit_half(t, diff));
        acc = d == 0 ? sq : t.add(acc, sq);
      }
      return t.reshape(acc, Shape{m, n});
    }
    case Tag::SphereSO3:
    case Tag::SphereSW: {
      Value units = t.constant(xs.units);
      Value acc;
      const int64_t base_cols[3] = {2, 5, 8};  // R z
      for (int k = 0; k < 3; ++k) {
        Value term = t.mul(pw.from_pose(col(t, state, base_cols[k])),
                           pw.from_coord(col(t, units, k)));
        acc = k == 0 ? term : t.add(acc, term);
      }
      return t.reshape(geodesic_sq_from_cos(t, acc), Shape{m, n});
    }
    case Tag::Ball3: {
      Value units = t.constant(xs.units);
      Value rp = col(t, state, 9);
      Value rx = col(t, coords, 2);
      Value acc;
      const int64_t base_cols[3] = {2, 5, 8};
      for (int k = 0; k < 3; ++k) {
        Value pk = pw.from_pose(t.mul(rp, col(t, state, base_cols[k])));
        Value xk = pw.from_coord(t.mul(rx, col(t, units, k)));
        Value sq = t.square(t.sub(pk, xk));
        acc = k == 0 ? sq : t.add(acc, sq);
      }
      return t.reshape(acc, Shape{m, n});
    }
  }
  throw std::logic_error("window_distance_sq_batch: unreachable");
}

Value pair_attr_batch(Tape& t, GeometryId g, Value state) {
  const int64_t n = state.shape()[0];
  switch (g.tag) {
    case Tag::PlaneSE2: {
      Value ti = repeat_rows_outer(t, t.slice(state, 1, 0, 2), n);  // (N*N,2) of p_i
      Value tj = repeat_rows_inner(t, t.slice(state, 1, 0, 2), n);
      Value thi = repeat_rows_outer(t, col(t, state, 2), n);
      Value thj = repeat_rows_inner(t, col(t, state, 2), n);
      Value c = t.cos(thi), s = t.sin(thi);
      Value dx = t.sub(col(t, tj, 0), col(t, ti, 0));
      Value dy = t.sub(col(t, tj, 1), col(t, ti, 1));
      Value a0 = t.add(t.mul(c, dx), t.mul(s, dy));
      Value a1 = t.sub(t.mul(c, dy), t.mul(s, dx));
      Value dth = wrap_detached_angle(t, t.sub(thj, thi));
      return t.concat({a0, a1, dth}, 1);
    }
    case Tag::Torus2: {
      Value pi_ = repeat_rows_outer(t, state, n);
      Value pj = repeat_rows_inner(t, state, n);
      Value du = t.mul_scalar(t.sub(col(t, pj, 0), col(t, pi_, 0)), kTwoPi);
      Value dv = t.mul_scalar(t.sub(col(t, pj, 1), col(t, pi_, 1)), kTwoPi);
      return t.concat({t.cos(du), t.sin(du), t.cos(dv), t.sin(dv)}, 1);
    }
    case Tag::SphereSO3:
    case Tag::SphereSW:
      return pairwise_relative_rotation(t, state);
    case Tag::Ball3: {
      Value rel = pairwise_relative_rotation(t, t.slice(state, 1, 0, 9));
      Value ri = repeat_rows_outer(t, col(t, state, 9), n);
      Value rj = repeat_rows_inner(t, col(t, state, 9), n);
      return t.concat({rel, ri, rj}, 1);
    }
    case Tag::NoSym: {
      Value pi_ = repeat_rows_outer(t, state, n);
      Value pj = repeat_rows_inner(t, state, n);
      return t.concat({pi_, pj}, 1);
    }
  }
  throw std::logic_error("pair_attr_batch: unreachable");
}

Value log_pairwise(Tape& t, GeometryId g, Value state) {
  const int64_t n = state.shape()[0];
  switch (g.tag) {
    case Tag::PlaneSE2: {
      Value pi_ = repeat_rows_outer(t, state, n);
      Value pj = repeat_rows_inner(t, state, n);
      Value dt = t.sub(t.slice(pj, 1, 0, 2), t.slice(pi_, 1, 0, 2));
      Value dth = wrap_detached_angle(t, t.sub(col(t, pj, 2), col(t, pi_, 2)));
      return t.concat({dt, dth}, 1);
    }
    case Tag::Torus2: {
      Value pi_ = repeat_rows_outer(t, state, n);
      Value pj = repeat_rows_inner(t, state, n);
      return wrap_detached_unit_half(t, t.sub(pj, pi_));
    }
    case Tag::SphereSO3:
    case Tag::SphereSW:
      return so3_log_rows(t, pairwise_relative_rotation(t, state));
    case Tag::Ball3: {
      Value rot = so3_log_rows(t, pairwise_relative_rotation(t, t.slice(state, 1, 0, 9)));
      Value ri = repeat_rows_outer(t, col(t, state, 9), n);
      Value rj = repeat_rows_inner(t, col(t, state, 9), n);
      return t.concat({rot, t.sub(rj, ri)}, 1);
    }
    case Tag::NoSym: {
      Value pi_ = repeat_rows_outer(t, state, n);
      Value pj = repeat_rows_inner(t, state, n);
      return t.sub(pj, pi_);
    }
  }
  throw std::logic_error("log_pairwise: unreachable");
}

Value log_between(Tape& t, GeometryId g, Value state_p, Value state_q) {
  switch (g.tag) {
    case Tag::PlaneSE2: {
      Value dt = t.sub(t.slice(state_q, 1, 0, 2), t.slice(state_p, 1, 0, 2));
      Value dth = wrap_detached_angle(t, t.sub(col(t, state_q, 2), col(t, state_p, 2)));
      return t.concat({dt, dth}, 1);
    }
    case Tag::Torus2:
      return wrap_detached_unit_half(t, t.sub(state_q, state_p));
    case Tag::SphereSO3:
    case Tag::SphereSW:
      return so3_log_rows(t, rowwise_matmul(t, state_p, state_q, /*transpose_a=*/true));
    case Tag::Ball3: {
      Value rel = rowwise_matmul(t, t.slice(state_p, 1, 0, 9), t.slice(state_q, 1, 0, 9), true);
      Value dr = t.sub(col(t, state_q, 9), col(t, state_p, 9));
      return t.concat({so3_log_rows(t, rel), dr}, 1);
    }
    case Tag::NoSym:
      return t.sub(state_q, state_p);
  }
  throw std::logic_error("log_between: unreachable");
}

Value exp_update(Tape& t, GeometryId g, Value state, Value tangent) {
  switch (g.tag) {
    case Tag::PlaneSE2:
    case Tag::Torus2:
    case Tag::NoSym:
      return t.add(state, tangent);
    case Tag::SphereSO3:
    case Tag::SphereSW:
      return rowwise_matmul(t, state, so3_exp_rows(t, tangent), /*transpose_a=*/false);
    case Tag::Ball3: {
      Value rot = rowwise_matmul(t, t.slice(state, 1, 0, 9),
                                 so3_exp_rows(t, t.slice(tangent, 1, 0, 3)), false);
      Value r = t.add(col(t, state, 9), col(t, tangent, 3));
      return t.concat({rot, r}, 1);
    }
  }
  throw std::logic_error("exp_update: unreachable");
}

}  // namespace enfode::geom
