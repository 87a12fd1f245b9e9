#pragma once

#include <array>
#include <vector>

#include "enfode/geometry_types.hpp"
#include "enfode/latent_set.hpp"
#include "enfode/rng.hpp"

namespace enfode::geom {

// -- small rotation toolbox (row-major 3x3) ---------------------------------

using Mat3 = std::array<double, 9>;
using Vec3 = std::array<double, 3>;

Mat3 mat_identity();
Mat3 mat_mul(const Mat3& a, const Mat3& b);
Mat3 mat_transpose(const Mat3& a);
Vec3 mat_apply(const Mat3& m, const Vec3& v);
Mat3 euler_zyz_to_mat(double phi, double theta, double gamma);
/// Canonical ZYZ extraction: phi, gamma in [0,2pi), theta in [0,pi].
void mat_to_euler_zyz(const Mat3& m, double& phi, double& theta, double& gamma);
/// Rodrigues exponential; series below angle 1e-4.
Mat3 so3_exp(const Vec3& v);
/// Axis-angle logarithm; throws within 1e-6 of the pi cut locus.
Vec3 so3_log(const Mat3& m);

double wrap_angle(double a);      // to (-pi, pi]
double wrap_two_pi(double a);     // to [0, 2pi)
double wrap_unit(double u);       // to [0, 1)
double wrap_unit_half(double u);  // to (-0.5, 0.5]

// -- constructors ------------------------------------------------------------

/// Builds a coordinate, normalizing parameters into canonical ranges and
/// caching the unit 3-vector for spherical geometries.
Coordinate make_coordinate(GeometryId g, std::vector<double> params);
/// Builds a pose, normalizing parameters into canonical ranges.
Pose make_pose(GeometryId g, std::vector<double> params);
GroupElement identity_element(GeometryId g);
bool is_identity(const GroupElement& g, double tol = 0.0);

/// Rotation matrix of the pose / group element rotation part (spheres,
/// ball); base point of a pose on the sphere is its matrix applied to z.
Mat3 pose_rotation(const Pose& p);
Mat3 group_rotation(const GroupElement& g);
Vec3 pose_base_unit(const Pose& p);

// -- group structure -----------------------------------------------------------

GroupElement compose(const GroupElement& a, const GroupElement& b);
GroupElement inverse(const GroupElement& a);
Coordinate act(const GroupElement& g, const Coordinate& x);
Pose act_pose(const GroupElement& g, const Pose& p);
/// gz = {(g p_i, c_i)}: poses move, contexts are returned bitwise.
LatentSet act_latent(const GroupElement& g, const LatentSet& z);

// -- bi-invariant attributes ----------------------------------------------------

/// Attribute a(p, x), unchanged when the same group element acts on both
/// arguments (except NoSym, which deliberately is not invariant).
std::vector<double> bi_invariant(const Pose& p, const Coordinate& x);
/// Relative attribute between two poses, invariant under a common group
/// action; full relative pose where the geometry allows.
std::vector<double> bi_invariant_pair(const Pose& pi, const Pose& pj);

// -- manifold maps ------------------------------------------------------------

/// Tangent vector at p pointing to q; Euclidean parts reduce to q - p,
/// torus components take the shortest wrapped difference, rotations use
/// the body-frame rotation logarithm.
std::vector<double> log_map(const Pose& p, const Pose& q);
Pose exp_map(const Pose& p, const std::vector<double>& v);

/// Bi-invariant squared distance between a pose's base point and a
/// coordinate; drives the attention window.
double window_distance_sq(const Pose& p, const Coordinate& x);

/// Uniform over compact factors (angles and torus shifts uniform);
/// translations uniform over [-box, box]^d. SphereSW draws only the
/// polar angle.
GroupElement random_group_element(GeometryId g, Rng& rng, double translation_box = 1.0);

}  // namespace enfode::geom
