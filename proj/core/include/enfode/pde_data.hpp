#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "enfode/geometry.hpp"
#include "enfode/tensor.hpp"

namespace enfode {

/// Self-describing dataset header; fully determines the payload layout.
struct DatasetHeader {
  int version = 1;
  geom::GeometryId geometry;
  std::vector<int64_t> grid;  // row-major grid dims; coordinates derive from these
  int64_t frames = 0;
  int64_t trajectories = 0;
  int64_t channels = 1;
  std::string generator;
  std::string params_json = "{}";  // generator parameters (diffusivity, nu, bounds, ...)
  uint64_t seed = 0;

  int64_t points() const;
};

/// Trajectory container: shared coordinates (derived from the header) and
/// per-trajectory (T, M, C) value tensors. Values are f64 in memory and
/// f32 on disk.
struct Dataset {
  DatasetHeader header;
  std::vector<Tensor> values;                // each (T, M, C)
  std::vector<std::vector<int64_t>> masks;   // optional frame-0 observation masks

  std::vector<geom::Coordinate> coordinates() const;
  int64_t points() const { return header.points(); }
};

// -- generators --------------------------------------------------------------

struct HeatPlaneConfig {
  int64_t grid = 64;
  double domain = 3.0;  // cell-centered grid over [-domain, domain]^2
  double diffusivity = 1.0;
  double dt = 0.01;
  int steps = 27;
  int discard = 7;
  int substeps = 0;  // 0: smallest count satisfying D dt / (k h^2) <= 0.25
  bool test_half = false;  // spike y in (0,2) for train, (-2,0) for test
};

/// Spike initial conditions diffused with explicit 5-point Euler stepping
/// on a periodic grid; frames are the states after the discarded burn-in.
Dataset gen_heat_plane(int64_t n_traj, const HeatPlaneConfig& cfg, uint64_t seed);

/// One heat-plane trajectory from a given initial grid (exposed for
/// solver oracles); returns (frames, grid^2, 1).
Tensor heat_plane_solve(const Tensor& u0, const HeatPlaneConfig& cfg);

struct HeatSphereConfig {
  int64_t n_phi = 64;
  int64_t n_theta = 32;
  int lmax = 0;  // 0: 2/3 of n_theta, capped by the phi Nyquist
  double diffusivity = 2.5e-3;  // frame 10 keeps ~53% of its non-DC energy
  double sigma = 0.25;
  int64_t frames = 20;
};

/// Exact spectral propagation: the initial Gaussian peak is expanded in
/// real spherical harmonics and each (l,m) coefficient decays as
/// exp(-l(l+1) D t); frames are synthesized on the equiangular grid.
Dataset gen_heat_sphere(int64_t n_traj, const HeatSphereConfig& cfg, uint64_t seed);

struct NsTorusConfig {
  int64_t grid = 64;  // power of two
  double viscosity = 1e-3;
  double forcing_amp = 0.1;  // f = amp (sin 2pi(x+y) + cos 2pi(x+y))
  int64_t frames = 20;
  int substeps = 64;  // per unit of saved-frame time
  double grf_exponent = 2.5;
  double grf_cutoff = 4.0;  // spectral knee, integer wavenumber units
  double grf_scale = 0.8;   // target rms vorticity
};

/// Pseudo-spectral vorticity solver on [0,1)^2: streamfunction velocity,
/// 2/3-dealiased advection (AB2 with an Euler bootstrap), Crank-Nicolson
/// viscosity, GRF initial vorticity.
Dataset gen_ns_torus(int64_t n_traj, const NsTorusConfig& cfg, uint64_t seed);

/// One NS trajectory from a given initial vorticity grid (exposed for
/// solver oracles: single-mode decay, enstrophy bookkeeping).
Tensor ns_solve(const Tensor& omega0, const NsTorusConfig& cfg, uint64_t abort_tag);

// -- spherical harmonic toolbox (exposed for solver oracles) -----------------

/// Real orthonormal spherical harmonic analysis on the equiangular grid:
/// phi projection by discrete orthogonality, theta by least squares.
/// Coefficients are indexed l*(l+1)+m for l <= lmax, |m| <= l.
std::vector<double> sphere_analyze(const std::vector<double>& field, int64_t n_phi,
                                   int64_t n_theta, int lmax);
std::vector<double> sphere_synthesize(const std::vector<double>& coeffs, int64_t n_phi,
                                      int64_t n_theta, int lmax);

// -- dataset utilities --------------------------------------------------------

/// Attaches a uniform without-replacement frame-0 observation mask of
/// ceil(rate * M) points per trajectory; later frames stay fully observed.
Dataset subsample(const Dataset& ds, double rate, uint64_t seed);

/// Non-overlapping k x k block means over the grid (all frames);
/// coordinates land on the pooled cell centers.
Dataset mean_pool(const Dataset& ds, int k);

// -- on-disk format ------------------------------------------------------------
// 8-byte magic "ENFDSET1", u32 little-endian header length, UTF-8 JSON
// header, then little-endian f32 payload ordered trajectory-major,
// frame-major, point-major, channel-innermost.

void write_dataset(const Dataset& ds, const std::string& path);
Dataset read_dataset(const std::string& path);

}  // namespace enfode
