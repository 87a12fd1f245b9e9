#include "enfode/geometry.hpp"

#include <cmath>
#include <stdexcept>

namespace enfode::geom {

namespace {

constexpr double kPi = 3.14159265358979323846264338328;
constexpr double kTwoPi = 2.0 * kPi;

void check_same_geometry(GeometryId a, GeometryId b, const char* where) {
  if (!(a == b))
    throw std::invalid_argument(std::string(where) + ": geometry mismatch (" + geometry_name(a) +
                                " vs " + geometry_name(b) + ")");
}

double clamp1(double v) { return v < -1.0 ? -1.0 : (v > 1.0 ? 1.0 : v); }

}  // namespace

// ---------------------------------------------------------------------------
// Dimension tables
// ---------------------------------------------------------------------------

int pose_dim(GeometryId g) {
  switch (g.tag) {
    case Tag::PlaneSE2: return 3;
    case Tag::Torus2: return 2;
    case Tag::SphereSO3:
    case Tag::SphereSW: return 3;
    case Tag::Ball3: return 4;
    case Tag::NoSym: return g.nosym_dim;
  }
  return 0;
}

int coord_dim(GeometryId g) {
  switch (g.tag) {
    case Tag::PlaneSE2: return 2;
    case Tag::Torus2: return 2;
    case Tag::SphereSO3:
    case Tag::SphereSW: return 2;
    case Tag::Ball3: return 3;
    case Tag::NoSym: return g.nosym_dim;
  }
  return 0;
}

int group_dim(GeometryId g) {
  switch (g.tag) {
    case Tag::PlaneSE2: return 3;
    case Tag::Torus2: return 2;
    case Tag::SphereSO3: return 3;
    case Tag::SphereSW: return 1;  // rotation about the polar axis
    case Tag::Ball3: return 3;     // rotations only; radius is not acted on
    case Tag::NoSym: return g.nosym_dim;
  }
  return 0;
}

int attr_dim(GeometryId g) {
  switch (g.tag) {
    case Tag::PlaneSE2: return 2;
    case Tag::Torus2: return 2;
    case Tag::SphereSO3: return 3;
    case Tag::SphereSW: return 4;
    case Tag::Ball3: return 5;
    case Tag::NoSym: return 2 * g.nosym_dim;
  }
  return 0;
}

int pair_attr_dim(GeometryId g) {
  switch (g.tag) {
    case Tag::PlaneSE2: return 3;
    case Tag::Torus2: return 4;
    case Tag::SphereSO3:
    case Tag::SphereSW: return 9;
    case Tag::Ball3: return 11;
    case Tag::NoSym: return 2 * g.nosym_dim;
  }
  return 0;
}

int tangent_dim(GeometryId g) {
  switch (g.tag) {
    case Tag::PlaneSE2: return 3;
    case Tag::Torus2: return 2;
    case Tag::SphereSO3:
    case Tag::SphereSW: return 3;
    case Tag::Ball3: return 4;
    case Tag::NoSym: return g.nosym_dim;
  }
  return 0;
}

int pose_state_dim(GeometryId g) {
  switch (g.tag) {
    case Tag::PlaneSE2: return 3;
    case Tag::Torus2: return 2;
    case Tag::SphereSO3:
    case Tag::SphereSW: return 9;   // flattened rotation matrix
    case Tag::Ball3: return 10;     // rotation matrix + radius
    case Tag::NoSym: return g.nosym_dim;
  }
  return 0;
}

std::string geometry_name(GeometryId g) {
  switch (g.tag) {
    case Tag::PlaneSE2: return "plane-se2";
    case Tag::Torus2: return "torus2";
    case Tag::SphereSO3: return "sphere-so3";
    case Tag::SphereSW: return "sphere-sw";
    case Tag::Ball3: return "ball3";
    case Tag::NoSym: return "nosym" + std::to_string(g.nosym_dim);
  }
  return "?";
}

GeometryId geometry_from_name(const std::string& name, int nosym_dim) {
  if (name == "plane-se2") return plane_se2();
  if (name == "torus2") return torus2();
  if (name == "sphere-so3") return sphere_so3();
  if (name == "sphere-sw") return sphere_sw();
  if (name == "ball3") return ball3();
  if (name.rfind("nosym", 0) == 0) {
    int d = nosym_dim;
    if (name.size() > 5) d = std::stoi(name.substr(5));
    return nosym(d);
  }
  throw std::invalid_argument("unknown geometry: " + name);
}

// ---------------------------------------------------------------------------
// Rotation toolbox
// ---------------------------------------------------------------------------

Mat3 mat_identity() { return {1, 0, 0, 0, 1, 0, 0, 0, 1}; }

Mat3 mat_mul(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) {
      const double av = a[i * 3 + k];
      for (int j = 0; j < 3; ++j) c[i * 3 + j] += av * b[k * 3 + j];
    }
  return c;
}

Mat3 mat_transpose(const Mat3& a) {
  return {a[0], a[3], a[6], a[1], a[4], a[7], a[2], a[5], a[8]};
}

Vec3 mat_apply(const Mat3& m, const Vec3& v) {
  return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
          m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
          m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
}

Mat3 euler_zyz_to_mat(double phi, double theta, double gamma) {
  const double c1 = std::cos(phi), s1 = std::sin(phi);
  const double c2 = std::cos(theta), s2 = std::sin(theta);
  const double c3 = std::cos(gamma), s3 = std::sin(gamma);
  // Rz(phi) Ry(theta) Rz(gamma)
  return {c1 * c2 * c3 - s1 * s3, -c1 * c2 * s3 - s1 * c3, c1 * s2,
          s1 * c2 * c3 + c1 * s3, -s1 * c2 * s3 + c1 * c3, s1 * s2,
          -s2 * c3,               s2 * s3,                 c2};
}

void mat_to_euler_zyz(const Mat3& m, double& phi, double& theta, double& gamma) {
  theta = std::acos(clamp1(m[8]));
  const double st = std::sqrt(std::max(0.0, 1.0 - m[8] * m[8]));
  if (st > 1e-12) {
    phi = std::atan2(m[5], m[2]);
    gamma = std::atan2(m[7], -m[6]);
  } else {
    // gimbal: rotation about z only; put everything into phi
    phi = std::atan2(m[3], m[0]);
    if (m[8] < 0.0) phi = std::atan2(-m[3], -m[0]);  // theta == pi branch
    gamma = 0.0;
  }
  phi = wrap_two_pi(phi);
  gamma = wrap_two_pi(gamma);
}

Mat3 so3_exp(const Vec3& v) {
  const double s = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
  double A, B;  // sin(a)/a and (1-cos(a))/a^2 as functions of a^2
  if (s < 1e-8) {
    A = 1.0 - s / 6.0 + s * s / 120.0;
    B = 0.5 - s / 24.0 + s * s / 720.0;
  } else {
    const double a = std::sqrt(s);
    A = std::sin(a) / a;
    B = (1.0 - std::cos(a)) / s;
  }
  const double x = v[0], y = v[1], z = v[2];
  // I + A [v]x + B [v]x^2
  return {1.0 - B * (y * y + z * z), -A * z + B * x * y,        A * y + B * x * z,
          A * z + B * x * y,         1.0 - B * (x * x + z * z), -A * x + B * y * z,
          -A * y + B * x * z,        A * x + B * y * z,         1.0 - B * (x * x + y * y)};
}

Vec3 so3_log(const Mat3& m) {
  const double tr = m[0] + m[4] + m[8];
  const double c = clamp1((tr - 1.0) * 0.5);
  const double angle = std::acos(c);
  if (angle > kPi - 1e-6)
    throw std::domain_error("so3_log: rotation within 1e-6 of the pi cut locus");
  const Vec3 w = {m[7] - m[5], m[2] - m[6], m[3] - m[1]};  // (R - R^T)^vee
  double f;                                                // angle / (2 sin angle)
  if (angle < 1e-4) {
    const double u = 1.0 - c;
    f = 0.5 + u / 6.0 + u * u / 15.0;
  } else {
    f = angle / (2.0 * std::sin(angle));
  }
  return {f * w[0], f * w[1], f * w[2]};
}

double wrap_angle(double a) {
  a = std::fmod(a, kTwoPi);
  if (a > kPi) a -= kTwoPi;
  if (a <= -kPi) a += kTwoPi;
  return a;
}

double wrap_two_pi(double a) {
  a = std::fmod(a, kTwoPi);
  if (a < 0.0) a += kTwoPi;
  if (a == kTwoPi) a = 0.0;
  return a;
}

double wrap_unit(double u) {
  u -= std::floor(u);
  if (u >= 1.0) u -= 1.0;
  return u;
}

double wrap_unit_half(double u) {
  u -= std::floor(u);
  if (u > 0.5) u -= 1.0;
  return u;
}

// ---------------------------------------------------------------------------
// Constructors
// ---------------------------------------------------------------------------

namespace {

Vec3 sphere_unit(double phi, double theta) {
  return {std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), std::cos(theta)};
}

void normalize_euler(std::vector<double>& p) {
  // theta outside [0,pi] folds back with phi/gamma shifts of pi:
  // Rz(phi)Ry(-t)Rz(gamma) == Rz(phi+pi)Ry(t)Rz(gamma-pi)
  double phi = p[0], theta = wrap_angle(p[1]), gamma = p[2];
  if (theta < 0.0) {
    theta = -theta;
    phi += kPi;
    gamma -= kPi;
  }
  p[0] = wrap_two_pi(phi);
  p[1] = theta;
  p[2] = wrap_two_pi(gamma);
}

}  // namespace

Coordinate make_coordinate(GeometryId g, std::vector<double> params) {
  if (static_cast<int>(params.size()) != coord_dim(g))
    throw std::invalid_argument("make_coordinate: expected " + std::to_string(coord_dim(g)) +
                                " params for " + geometry_name(g));
  Coordinate c{g, std::move(params), {0, 0, 0}};
  switch (g.tag) {
    case Tag::Torus2:
      c.x[0] = wrap_unit(c.x[0]);
      c.x[1] = wrap_unit(c.x[1]);
      break;
    case Tag::SphereSO3:
    case Tag::SphereSW:
      c.x[0] = wrap_two_pi(c.x[0]);
      c.unit = sphere_unit(c.x[0], c.x[1]);
      break;
    case Tag::Ball3:
      c.x[0] = wrap_two_pi(c.x[0]);
      c.unit = sphere_unit(c.x[0], c.x[1]);
      break;
    default:
      break;
  }
  return c;
}

Pose make_pose(GeometryId g, std::vector<double> params) {
  if (static_cast<int>(params.size()) != pose_dim(g))
    throw std::invalid_argument("make_pose: expected " + std::to_string(pose_dim(g)) +
                                " params for " + geometry_name(g));
  Pose p{g, std::move(params)};
  switch (g.tag) {
    case Tag::PlaneSE2:
      p.p[2] = wrap_angle(p.p[2]);
      break;
    case Tag::Torus2:
      p.p[0] = wrap_unit(p.p[0]);
      p.p[1] = wrap_unit(p.p[1]);
      break;
    case Tag::SphereSO3:
    case Tag::SphereSW:
      normalize_euler(p.p);
      break;
    case Tag::Ball3: {
      std::vector<double> e{p.p[0], p.p[1], p.p[2]};
      normalize_euler(e);
      p.p[0] = e[0];
      p.p[1] = e[1];
      p.p[2] = e[2];
      break;
    }
    default:
      break;
  }
  return p;
}

GroupElement identity_element(GeometryId g) {
  return GroupElement{g, std::vector<double>(static_cast<size_t>(group_dim(g)), 0.0)};
}

bool is_identity(const GroupElement& g, double tol) {
  for (double v : g.g)
    if (std::fabs(v) > tol) return false;
  return true;
}

Mat3 pose_rotation(const Pose& p) {
  switch (p.geom.tag) {
    case Tag::SphereSO3:
    case Tag::SphereSW:
    case Tag::Ball3:
      return euler_zyz_to_mat(p.p[0], p.p[1], p.p[2]);
    default:
      throw std::logic_error("pose_rotation: geometry has no rotation part");
  }
}

Mat3 group_rotation(const GroupElement& g) {
  switch (g.geom.tag) {
    case Tag::SphereSO3:
    case Tag::Ball3:
      return euler_zyz_to_mat(g.g[0], g.g[1], g.g[2]);
    case Tag::SphereSW:
      return euler_zyz_to_mat(g.g[0], 0.0, 0.0);
    default:
      throw std::logic_error("group_rotation: geometry has no rotation part");
  }
}

Vec3 pose_base_unit(const Pose& p) {
  const Mat3 r = pose_rotation(p);
  return {r[2], r[5], r[8]};  // R z
}

// ---------------------------------------------------------------------------
// Group structure
// ---------------------------------------------------------------------------

GroupElement compose(const GroupElement& a, const GroupElement& b) {
  check_same_geometry(a.geom, b.geom, "compose");
  GroupElement out{a.geom, {}};
  switch (a.geom.tag) {
    case Tag::PlaneSE2: {
      const double c = std::cos(a.g[2]), s = std::sin(a.g[2]);
      out.g = {a.g[0] + c * b.g[0] - s * b.g[1], a.g[1] + s * b.g[0] + c * b.g[1],
               wrap_angle(a.g[2] + b.g[2])};
      break;
    }
    case Tag::Torus2:
      out.g = {wrap_unit(a.g[0] + b.g[0]), wrap_unit(a.g[1] + b.g[1])};
      break;
    case Tag::SphereSO3: {
      const Mat3 m = mat_mul(group_rotation(a), group_rotation(b));
      double f, t, g;
      mat_to_euler_zyz(m, f, t, g);
      out.g = {f, t, g};
      break;
    }
    case Tag::SphereSW:
      out.g = {wrap_two_pi(a.g[0] + b.g[0])};
      break;
    case Tag::Ball3: {
      const Mat3 m = mat_mul(group_rotation(a), group_rotation(b));
      double f, t, g;
      mat_to_euler_zyz(m, f, t, g);
      out.g = {f, t, g};
      break;
    }
    case Tag::NoSym:
      out.g.resize(a.g.size());
      for (size_t i = 0; i < a.g.size(); ++i) out.g[i] = a.g[i] + b.g[i];
      break;
  }
  return out;
}

GroupElement inverse(const GroupElement& a) {
  GroupElement out{a.geom, {}};
  switch (a.geom.tag) {
    case Tag::PlaneSE2: {
      const double c = std::cos(a.g[2]), s = std::sin(a.g[2]);
      // (-R^T t, -theta)
      out.g = {-(c * a.g[0] + s * a.g[1]), -(-s * a.g[0] + c * a.g[1]), wrap_angle(-a.g[2])};
      break;
    }
    case Tag::Torus2:
      out.g = {wrap_unit(-a.g[0]), wrap_unit(-a.g[1])};
      break;
    case Tag::SphereSO3:
    case Tag::Ball3: {
      const Mat3 m = mat_transpose(group_rotation(a));
      double f, t, g;
      mat_to_euler_zyz(m, f, t, g);
      out.g = {f, t, g};
      break;
    }
    case Tag::SphereSW:
      out.g = {wrap_two_pi(-a.g[0])};
      break;
    case Tag::NoSym:
      out.g.resize(a.g.size());
      for (size_t i = 0; i < a.g.size(); ++i) out.g[i] = -a.g[i];
      break;
  }
  return out;
}

Coordinate act(const GroupElement& g, const Coordinate& x) {
  check_same_geometry(g.geom, x.geom, "act");
  switch (g.geom.tag) {
    case Tag::PlaneSE2: {
      const double c = std::cos(g.g[2]), s = std::sin(g.g[2]);
      return make_coordinate(x.geom,
                             {g.g[0] + c * x.x[0] - s * x.x[1], g.g[1] + s * x.x[0] + c * x.x[1]});
    }
    case Tag::Torus2:
      return make_coordinate(x.geom, {wrap_unit(x.x[0] + g.g[0]), wrap_unit(x.x[1] + g.g[1])});
    case Tag::SphereSO3: {
      const Vec3 r = mat_apply(group_rotation(g), x.unit);
      const double theta = std::acos(clamp1(r[2]));
      const double phi = wrap_two_pi(std::atan2(r[1], r[0]));
      return make_coordinate(x.geom, {phi, theta});
    }
    case Tag::SphereSW:
      return make_coordinate(x.geom, {wrap_two_pi(x.x[0] + g.g[0]), x.x[1]});
    case Tag::Ball3: {
      const Vec3 r = mat_apply(group_rotation(g), x.unit);
      const double theta = std::acos(clamp1(r[2]));
      const double phi = wrap_two_pi(std::atan2(r[1], r[0]));
      return make_coordinate(x.geom, {phi, theta, x.x[2]});
    }
    case Tag::NoSym: {
      std::vector<double> out(x.x.size());
      for (size_t i = 0; i < out.size(); ++i) out[i] = x.x[i] + g.g[i];
      return make_coordinate(x.geom, std::move(out));
    }
  }
  throw std::logic_error("act: unreachable");
}

Pose act_pose(const GroupElement& g, const Pose& p) {
  check_same_geometry(g.geom, p.geom, "act_pose");
  switch (g.geom.tag) {
    case Tag::PlaneSE2: {
      const double c = std::cos(g.g[2]), s = std::sin(g.g[2]);
      return make_pose(p.geom, {g.g[0] + c * p.p[0] - s * p.p[1],
                                g.g[1] + s * p.p[0] + c * p.p[1], p.p[2] + g.g[2]});
    }
    case Tag::Torus2:
      return make_pose(p.geom, {p.p[0] + g.g[0], p.p[1] + g.g[1]});
    case Tag::SphereSO3:
    case Tag::SphereSW: {
      const Mat3 m = mat_mul(group_rotation(g), pose_rotation(p));
      double f, t, ga;
      mat_to_euler_zyz(m, f, t, ga);
      return Pose{p.geom, {f, t, ga}};
    }
    case Tag::Ball3: {
      const Mat3 m = mat_mul(group_rotation(g), pose_rotation(p));
      double f, t, ga;
      mat_to_euler_zyz(m, f, t, ga);
      return Pose{p.geom, {f, t, ga, p.p[3]}};
    }
    case Tag::NoSym: {
      std::vector<double> out(p.p.size());
      for (size_t i = 0; i < out.size(); ++i) out[i] = p.p[i] + g.g[i];
      return Pose{p.geom, std::move(out)};
    }
  }
  throw std::logic_error("act_pose: unreachable");
}

LatentSet act_latent(const GroupElement& g, const LatentSet& z) {
  check_same_geometry(g.geom, z.geometry, "act_latent");
  LatentSet out;
  out.geometry = z.geometry;
  out.poses.reserve(z.poses.size());
  for (const auto& p : z.poses) out.poses.push_back(act_pose(g, p));
  out.contexts = z.contexts;  // bitwise copy
  return out;
}

// ---------------------------------------------------------------------------
// Bi-invariant attributes
// ---------------------------------------------------------------------------

std::vector<double> bi_invariant(const Pose& p, const Coordinate& x) {
  check_same_geometry(p.geom, x.geom, "bi_invariant");
  switch (p.geom.tag) {
    case Tag::PlaneSE2: {
      const double c = std::cos(p.p[2]), s = std::sin(p.p[2]);
      const double dx = x.x[0] - p.p[0], dy = x.x[1] - p.p[1];
      return {c * dx + s * dy, -s * dx + c * dy};  // R^T (x - t)
    }
    case Tag::Torus2:
      return {std::cos(kTwoPi * (x.x[0] - p.p[0])), std::cos(kTwoPi * (x.x[1] - p.p[1]))};
    case Tag::SphereSO3: {
      const Vec3 a = mat_apply(mat_transpose(pose_rotation(p)), x.unit);
      return {a[0], a[1], a[2]};
    }
    case Tag::SphereSW: {
      double dphi = p.p[0] - x.x[0];
      if (dphi > kPi) dphi -= kTwoPi;
      if (dphi < -kPi) dphi += kTwoPi;
      return {dphi, p.p[1], p.p[2], x.x[1]};
    }
    case Tag::Ball3: {
      const Vec3 a = mat_apply(mat_transpose(pose_rotation(p)), x.unit);
      return {a[0], a[1], a[2], p.p[3], x.x[2]};
    }
    case Tag::NoSym: {
      std::vector<double> out;
      out.reserve(p.p.size() + x.x.size());
      out.insert(out.end(), p.p.begin(), p.p.end());
      out.insert(out.end(), x.x.begin(), x.x.end());
      return out;
    }
  }
  throw std::logic_error("bi_invariant: unreachable");
}

std::vector<double> bi_invariant_pair(const Pose& pi, const Pose& pj) {
  check_same_geometry(pi.geom, pj.geom, "bi_invariant_pair");
  switch (pi.geom.tag) {
    case Tag::PlaneSE2: {
      const double c = std::cos(pi.p[2]), s = std::sin(pi.p[2]);
      const double dx = pj.p[0] - pi.p[0], dy = pj.p[1] - pi.p[1];
      return {c * dx + s * dy, -s * dx + c * dy, wrap_angle(pj.p[2] - pi.p[2])};
    }
    case Tag::Torus2: {
      const double du = kTwoPi * (pj.p[0] - pi.p[0]), dv = kTwoPi * (pj.p[1] - pi.p[1]);
      return {std::cos(du), std::sin(du), std::cos(dv), std::sin(dv)};
    }
    case Tag::SphereSO3:
    case Tag::SphereSW: {
      const Mat3 rel = mat_mul(mat_transpose(pose_rotation(pi)), pose_rotation(pj));
      return std::vector<double>(rel.begin(), rel.end());
    }
    case Tag::Ball3: {
      const Mat3 rel = mat_mul(mat_transpose(pose_rotation(pi)), pose_rotation(pj));
      std::vector<double> out(rel.begin(), rel.end());
      out.push_back(pi.p[3]);
      out.push_back(pj.p[3]);
      return out;
    }
    case Tag::NoSym: {
      std::vector<double> out;
      out.reserve(pi.p.size() + pj.p.size());
      out.insert(out.end(), pi.p.begin(), pi.p.end());
      out.insert(out.end(), pj.p.begin(), pj.p.end());
      return out;
    }
  }
  throw std::logic_error("bi_invariant_pair: unreachable");
}

// ---------------------------------------------------------------------------
// Manifold maps
// ---------------------------------------------------------------------------

std::vector<double> log_map(const Pose& p, const Pose& q) {
  check_same_geometry(p.geom, q.geom, "log_map");
  switch (p.geom.tag) {
    case Tag::PlaneSE2:
      return {q.p[0] - p.p[0], q.p[1] - p.p[1], wrap_angle(q.p[2] - p.p[2])};
    case Tag::Torus2:
      return {wrap_unit_half(q.p[0] - p.p[0]), wrap_unit_half(q.p[1] - p.p[1])};
    case Tag::SphereSO3:
    case Tag::SphereSW: {
      const Vec3 v = so3_log(mat_mul(mat_transpose(pose_rotation(p)), pose_rotation(q)));
      return {v[0], v[1], v[2]};
    }
    case Tag::Ball3: {
      const Vec3 v = so3_log(mat_mul(mat_transpose(pose_rotation(p)), pose_rotation(q)));
      return {v[0], v[1], v[2], q.p[3] - p.p[3]};
    }
    case Tag::NoSym: {
      std::vector<double> out(p.p.size());
      for (size_t i = 0; i < out.size(); ++i) out[i] = q.p[i] - p.p[i];
      return out;
    }
  }
  throw std::logic_error("log_map: unreachable");
}

Pose exp_map(const Pose& p, const std::vector<double>& v) {
  if (static_cast<int>(v.size()) != tangent_dim(p.geom))
    throw std::invalid_argument("exp_map: tangent dimension mismatch for " +
                                geometry_name(p.geom));
  switch (p.geom.tag) {
    case Tag::PlaneSE2:
      return make_pose(p.geom, {p.p[0] + v[0], p.p[1] + v[1], p.p[2] + v[2]});
    case Tag::Torus2:
      return make_pose(p.geom, {p.p[0] + v[0], p.p[1] + v[1]});
    case Tag::SphereSO3:
    case Tag::SphereSW: {
      const Mat3 m = mat_mul(pose_rotation(p), so3_exp({v[0], v[1], v[2]}));
      double f, t, g;
      mat_to_euler_zyz(m, f, t, g);
      return Pose{p.geom, {f, t, g}};
    }
    case Tag::Ball3: {
      const Mat3 m = mat_mul(pose_rotation(p), so3_exp({v[0], v[1], v[2]}));
      double f, t, g;
      mat_to_euler_zyz(m, f, t, g);
      double r = p.p[3] + v[3];
      r = std::min(std::max(r, 1e-6), 1.0 - 1e-6);
      return Pose{p.geom, {f, t, g, r}};
    }
    case Tag::NoSym: {
      std::vector<double> out(p.p.size());
      for (size_t i = 0; i < out.size(); ++i) out[i] = p.p[i] + v[i];
      return Pose{p.geom, std::move(out)};
    }
  }
  throw std::logic_error("exp_map: unreachable");
}

double window_distance_sq(const Pose& p, const Coordinate& x) {
  check_same_geometry(p.geom, x.geom, "window_distance_sq");
  switch (p.geom.tag) {
    case Tag::PlaneSE2: {
      const double dx = p.p[0] - x.x[0], dy = p.p[1] - x.x[1];
      return dx * dx + dy * dy;
    }
    case Tag::Torus2: {
      const double du = wrap_unit_half(p.p[0] - x.x[0]), dv = wrap_unit_half(p.p[1] - x.x[1]);
      return du * du + dv * dv;
    }
    case Tag::SphereSO3:
    case Tag::SphereSW: {
      // squared geodesic angle between the pose base point and x; written
      // via (dphi, thetas) so the SW case stays axially invariant
      const double dphi = p.p[0] - x.x[0];
      const double ct = std::cos(p.p[1]) * std::cos(x.x[1]) +
                        std::sin(p.p[1]) * std::sin(x.x[1]) * std::cos(dphi);
      const double ang = std::acos(clamp1(ct));
      return ang * ang;
    }
    case Tag::Ball3: {
      const Vec3 b = pose_base_unit(p);
      double d = 0.0;
      for (int k = 0; k < 3; ++k) {
        const double diff = p.p[3] * b[static_cast<size_t>(k)] -
                            x.x[2] * x.unit[static_cast<size_t>(k)];
        d += diff * diff;
      }
      return d;
    }
    case Tag::NoSym: {
      double d = 0.0;
      for (size_t i = 0; i < p.p.size(); ++i) {
        const double diff = p.p[i] - x.x[i];
        d += diff * diff;
      }
      return d;
    }
  }
  throw std::logic_error("window_distance_sq: unreachable");
}

GroupElement random_group_element(GeometryId g, Rng& rng, double translation_box) {
  switch (g.tag) {
    case Tag::PlaneSE2:
      return GroupElement{g,
                          {rng.uniform(-translation_box, translation_box),
                           rng.uniform(-translation_box, translation_box),
                           wrap_angle(rng.uniform(0.0, kTwoPi))}};
    case Tag::Torus2:
      return GroupElement{g, {rng.uniform(), rng.uniform()}};
    case Tag::SphereSO3:
      return GroupElement{g, {rng.uniform(0.0, kTwoPi), rng.uniform(0.0, kPi),
                              rng.uniform(0.0, kTwoPi)}};
    case Tag::SphereSW:
      return GroupElement{g, {rng.uniform(0.0, kTwoPi)}};
    case Tag::Ball3:
      return GroupElement{g, {rng.uniform(0.0, kTwoPi), rng.uniform(0.0, kPi),
                              rng.uniform(0.0, kTwoPi)}};
    case Tag::NoSym: {
      std::vector<double> t(static_cast<size_t>(g.nosym_dim));
      for (auto& v : t) v = rng.uniform(-translation_box, translation_box);
      return GroupElement{g, std::move(t)};
    }
  }
  throw std::logic_error("random_group_element: unreachable");
}

}  // namespace enfode::geom
