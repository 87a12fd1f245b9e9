#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace enfode::geom {

enum class Tag : uint8_t { PlaneSE2, Torus2, SphereSO3, SphereSW, Ball3, NoSym };

/// Geometry identifier. The tag fixes the pose/coordinate/attribute
/// parameterizations and dimensionalities:
///
///   tag        pose params        coord params    attr  pair  tangent
///   PlaneSE2   (tx,ty,theta)      (x,y)            2     3      3
///   Torus2     (u,v) in [0,1)     (u,v) in [0,1)   2     4      2
///   SphereSO3  ZYZ Euler          (phi,theta)      3     9      3
///   SphereSW   ZYZ Euler          (phi,theta)      4     9      3
///   Ball3      ZYZ Euler + r      (phi,theta,r)    5    11      4
///   NoSym(d)   raw vector (d)     raw vector (d)  2d    2d      d
///
/// Group elements share the pose parameterization except SphereSW (one
/// polar angle) and Ball3 (rotation only, three Euler angles).
struct GeometryId {
  Tag tag = Tag::PlaneSE2;
  int nosym_dim = 0;  // pose/coordinate dimension when tag == NoSym

  bool operator==(const GeometryId&) const = default;
};

inline GeometryId plane_se2() { return {Tag::PlaneSE2, 0}; }
inline GeometryId torus2() { return {Tag::Torus2, 0}; }
inline GeometryId sphere_so3() { return {Tag::SphereSO3, 0}; }
inline GeometryId sphere_sw() { return {Tag::SphereSW, 0}; }
inline GeometryId ball3() { return {Tag::Ball3, 0}; }
inline GeometryId nosym(int dim) { return {Tag::NoSym, dim}; }

int pose_dim(GeometryId g);
int coord_dim(GeometryId g);
int group_dim(GeometryId g);
int attr_dim(GeometryId g);
int pair_attr_dim(GeometryId g);
int tangent_dim(GeometryId g);
/// Width of the on-tape pose state (rotation-matrix form for spheres).
int pose_state_dim(GeometryId g);

std::string geometry_name(GeometryId g);
GeometryId geometry_from_name(const std::string& name, int nosym_dim = 0);

/// Group-valued latent location, stored in canonical parameter ranges
/// (torus components in [0,1); Euler phi,gamma in [0,2pi), theta in [0,pi]).
struct Pose {
  GeometryId geom;
  std::vector<double> p;
};

struct GroupElement {
  GeometryId geom;
  std::vector<double> g;
};

/// Domain point. For spheres and the ball the unit 3-vector of the
/// angular part is cached (norm 1 to 1e-12).
struct Coordinate {
  GeometryId geom;
  std::vector<double> x;
  std::array<double, 3> unit{0.0, 0.0, 0.0};
};

}  // namespace enfode::geom
