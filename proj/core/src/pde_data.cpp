#include "enfode/pde_data.hpp"

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "enfode/rng.hpp"

namespace enfode {

using json = nlohmann::json;

namespace {

constexpr double kPi = 3.14159265358979323846264338328;
constexpr double kTwoPi = 2.0 * kPi;
constexpr char kMagic[8] = {'E', 'N', 'F', 'D', 'S', 'E', 'T', '1'};

enum StreamId : uint64_t { kTrajStream = 1, kMaskStream = 2 };

json params_of(const DatasetHeader& h) {
  json j = json::parse(h.params_json.empty() ? "{}" : h.params_json);
  return j;
}

std::vector<double> cell_offsets(const DatasetHeader& h) {
  json j = params_of(h);
  std::vector<double> off(h.grid.size(), 0.0);
  if (j.contains("cell_offset")) {
    auto v = j["cell_offset"].get<std::vector<double>>();
    for (size_t i = 0; i < off.size() && i < v.size(); ++i) off[i] = v[i];
  } else {
    switch (h.geometry.tag) {
      case geom::Tag::PlaneSE2:
      case geom::Tag::NoSym:
        off.assign(h.grid.size(), 0.5);
        break;
      case geom::Tag::Torus2:
        off.assign(h.grid.size(), 0.0);
        break;
      case geom::Tag::SphereSO3:
      case geom::Tag::SphereSW:
        off = {0.0, 0.5};
        break;
      case geom::Tag::Ball3:
        off = {0.0, 0.5, 0.5};
        break;
    }
  }
  return off;
}

}  // namespace

int64_t DatasetHeader::points() const {
  int64_t m = 1;
  for (int64_t g : grid) m *= g;
  return m;
}

std::vector<geom::Coordinate> Dataset::coordinates() const {
  const auto& h = header;
  const auto off = cell_offsets(h);
  std::vector<geom::Coordinate> out;
  out.reserve(static_cast<size_t>(points()));
  switch (h.geometry.tag) {
    case geom::Tag::PlaneSE2:
    case geom::Tag::NoSym: {
      const json j = params_of(h);
      const double dom = j.value("domain", 3.0);
      const int64_t ny = h.grid[0], nx = h.grid[1];
      for (int64_t i = 0; i < ny; ++i)
        for (int64_t jx = 0; jx < nx; ++jx) {
          const double x = -dom + (jx + off[1]) * 2.0 * dom / nx;
          const double y = -dom + (i + off[0]) * 2.0 * dom / ny;
          out.push_back(geom::make_coordinate(h.geometry, h.geometry.tag == geom::Tag::NoSym
                                                              ? std::vector<double>{x, y}
                                                              : std::vector<double>{x, y}));
        }
      break;
    }
    case geom::Tag::Torus2: {
      const int64_t ny = h.grid[0], nx = h.grid[1];
      for (int64_t i = 0; i < ny; ++i)
        for (int64_t jx = 0; jx < nx; ++jx)
          out.push_back(geom::make_coordinate(
              h.geometry, {(jx + off[1]) / static_cast<double>(nx),
                           (i + off[0]) / static_cast<double>(ny)}));
      break;
    }
    case geom::Tag::SphereSO3:
    case geom::Tag::SphereSW: {
      const int64_t np = h.grid[0], nt = h.grid[1];
      for (int64_t i = 0; i < np; ++i)
        for (int64_t jt = 0; jt < nt; ++jt)
          out.push_back(geom::make_coordinate(h.geometry,
                                              {kTwoPi * (i + off[0]) / np, kPi * (jt + off[1]) / nt}));
      break;
    }
    case geom::Tag::Ball3: {
      const int64_t np = h.grid[0], nt = h.grid[1], nr = h.grid[2];
      for (int64_t i = 0; i < np; ++i)
        for (int64_t jt = 0; jt < nt; ++jt)
          for (int64_t kr = 0; kr < nr; ++kr)
            out.push_back(geom::make_coordinate(
                h.geometry, {kTwoPi * (i + off[0]) / np, kPi * (jt + off[1]) / nt,
                             (kr + off[2]) / static_cast<double>(nr)}));
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Heat equation on the plane
// ---------------------------------------------------------------------------

namespace {

int heat_substeps(const HeatPlaneConfig& cfg, double h) {
  int substeps = cfg.substeps;
  if (substeps == 0)
    substeps = static_cast<int>(std::ceil(cfg.diffusivity * cfg.dt / (0.25 * h * h)));
  if (substeps < 1) substeps = 1;
  const double r = cfg.diffusivity * (cfg.dt / substeps) / (h * h);
  if (r > 0.25)
    throw std::invalid_argument(
        "gen_heat_plane: CFL violated (D dt / h^2 = " + std::to_string(r) +
        " > 0.25); pass a larger substep count");
  return substeps;
}

}  // namespace

Tensor heat_plane_solve(const Tensor& u0, const HeatPlaneConfig& cfg) {
  const int64_t n = cfg.grid, m = n * n;
  if (u0.shape != Shape{n, n})
    throw std::invalid_argument("heat_plane_solve: initial field must be " + std::to_string(n) +
                                "^2");
  const double h = 2.0 * cfg.domain / static_cast<double>(n);
  const int substeps = heat_substeps(cfg, h);
  const double r = cfg.diffusivity * (cfg.dt / substeps) / (h * h);
  const int64_t frames = cfg.steps - cfg.discard;
  Tensor out(Shape{frames, m, 1});
  std::vector<double> u(u0.data.begin(), u0.data.end()), lap(static_cast<size_t>(m));
  int64_t out_f = 0;
  for (int step = 1; step <= cfg.steps; ++step) {
    for (int s = 0; s < substeps; ++s) {
      for (int64_t i = 0; i < n; ++i) {
        const int64_t up = (i + n - 1) % n, dn = (i + 1) % n;
        for (int64_t j = 0; j < n; ++j) {
          const int64_t lf = (j + n - 1) % n, rt = (j + 1) % n;
          lap[static_cast<size_t>(i * n + j)] =
              u[static_cast<size_t>(up * n + j)] + u[static_cast<size_t>(dn * n + j)] +
              u[static_cast<size_t>(i * n + lf)] + u[static_cast<size_t>(i * n + rt)] -
              4.0 * u[static_cast<size_t>(i * n + j)];
        }
      }
      for (int64_t p = 0; p < m; ++p) u[static_cast<size_t>(p)] += r * lap[static_cast<size_t>(p)];
    }
    if (step > cfg.discard) {
      std::memcpy(out.data.data() + out_f * m, u.data(), static_cast<size_t>(m) * sizeof(double));
      ++out_f;
    }
  }
  return out;
}

Dataset gen_heat_plane(int64_t n_traj, const HeatPlaneConfig& cfg, uint64_t seed) {
  if (cfg.grid < 16) throw std::invalid_argument("gen_heat_plane: grid must be >= 16");
  if (n_traj < 1) throw std::invalid_argument("gen_heat_plane: need at least one trajectory");
  const int64_t n = cfg.grid;
  const double h = 2.0 * cfg.domain / static_cast<double>(n);
  const int substeps = heat_substeps(cfg, h);

  Dataset ds;
  ds.header.geometry = geom::plane_se2();
  ds.header.grid = {n, n};
  ds.header.frames = cfg.steps - cfg.discard;
  ds.header.trajectories = n_traj;
  ds.header.channels = 1;
  ds.header.generator = "heat-plane";
  ds.header.seed = seed;
  {
    json j;
    j["domain"] = cfg.domain;
    j["diffusivity"] = cfg.diffusivity;
    j["dt"] = cfg.dt;
    j["steps"] = cfg.steps;
    j["discard"] = cfg.discard;
    j["substeps"] = substeps;
    j["boundary"] = "periodic";
    j["split"] = cfg.test_half ? "test" : "train";
    j["cell_offset"] = {0.5, 0.5};
    ds.header.params_json = j.dump();
  }

  for (int64_t traj = 0; traj < n_traj; ++traj) {
    Rng rng = Rng::stream(seed, {kTrajStream, static_cast<uint64_t>(traj)});
    const double sx = rng.uniform(-2.0, 2.0);
    const double sy = cfg.test_half ? rng.uniform(-2.0, 0.0) : rng.uniform(0.0, 2.0);
    const double amp = rng.uniform(5.0, 5.5);
    Tensor u0(Shape{n, n});
    auto cell = [&](double v) {
      int64_t c = static_cast<int64_t>(std::floor((v + cfg.domain) / h));
      return std::min(std::max(c, int64_t{0}), n - 1);
    };
    u0.data[static_cast<size_t>(cell(sy) * n + cell(sx))] = amp;
    ds.values.push_back(heat_plane_solve(u0, cfg));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Spherical harmonics
// ---------------------------------------------------------------------------

namespace {

/// Fully normalized associated Legendre P̄_lm(x) for l in [m, lmax],
/// written into out[l - m]; no Condon-Shortley phase.
void normalized_legendre(int m, int lmax, double x, double* out) {
  const double s = std::sqrt(std::max(0.0, 1.0 - x * x));
  double pmm = std::sqrt(1.0 / (4.0 * kPi));
  for (int k = 1; k <= m; ++k)
    pmm *= s * std::sqrt((2.0 * k + 1.0) / (2.0 * k));
  out[0] = pmm;
  if (lmax == m) return;
  double pm1 = pmm, pm2 = 0.0;
  for (int l = m + 1; l <= lmax; ++l) {
    const double a = std::sqrt((4.0 * l * l - 1.0) / (static_cast<double>(l) * l - m * m));
    const double b = std::sqrt(((l - 1.0) * (l - 1.0) - m * m) / (4.0 * (l - 1.0) * (l - 1.0) - 1.0));
    const double p = a * (x * pm1 - b * pm2);
    out[l - m] = p;
    pm2 = pm1;
    pm1 = p;
  }
}

struct SphereTransform {
  int64_t n_phi, n_theta;
  int lmax;
  // per m: design matrix G_m (n_theta x (lmax-m+1)); sqrt(2) baked in for m > 0
  std::vector<std::vector<double>> G;
  // per m: Cholesky factor (lower) of G^T G
  std::vector<std::vector<double>> chol;

  SphereTransform(int64_t np, int64_t nt, int L) : n_phi(np), n_theta(nt), lmax(L) {
    if (L >= np / 2 || L >= nt)
      throw std::invalid_argument("sphere transform: band limit " + std::to_string(L) +
                                  " exceeds the grid Nyquist (" + std::to_string(np) + "x" +
                                  std::to_string(nt) + ")");
    G.resize(static_cast<size_t>(L) + 1);
    chol.resize(static_cast<size_t>(L) + 1);
    std::vector<double> row(static_cast<size_t>(L) + 1);
    for (int m = 0; m <= L; ++m) {
      const int cols = L - m + 1;
      auto& g = G[static_cast<size_t>(m)];
      g.assign(static_cast<size_t>(nt) * cols, 0.0);
      for (int64_t j = 0; j < nt; ++j) {
        const double theta = kPi * (j + 0.5) / nt;
        normalized_legendre(m, L, std::cos(theta), row.data());
        const double scale = m == 0 ? 1.0 : std::sqrt(2.0);
        for (int c = 0; c < cols; ++c) g[static_cast<size_t>(j * cols + c)] = scale * row[static_cast<size_t>(c)];
      }
      // Cholesky of the (cols x cols) normal matrix
      auto& ch = chol[static_cast<size_t>(m)];
      ch.assign(static_cast<size_t>(cols) * cols, 0.0);
      for (int a = 0; a < cols; ++a)
        for (int b = 0; b <= a; ++b) {
          double acc = 0.0;
          for (int64_t j = 0; j < nt; ++j)
            acc += g[static_cast<size_t>(j * cols + a)] * g[static_cast<size_t>(j * cols + b)];
          for (int k = 0; k < b; ++k)
            acc -= ch[static_cast<size_t>(a * cols + k)] * ch[static_cast<size_t>(b * cols + k)];
          if (a == b) {
            if (acc <= 0.0) throw std::runtime_error("sphere transform: singular normal matrix");
            ch[static_cast<size_t>(a * cols + a)] = std::sqrt(acc);
          } else {
            ch[static_cast<size_t>(a * cols + b)] = acc / ch[static_cast<size_t>(b * cols + b)];
          }
        }
    }
  }

  void solve(int m, std::vector<double>& rhs) const {  // in: G^T y, out: coefficients
    const int cols = lmax - m + 1;
    const auto& ch = chol[static_cast<size_t>(m)];
    for (int a = 0; a < cols; ++a) {
      double acc = rhs[static_cast<size_t>(a)];
      for (int k = 0; k < a; ++k) acc -= ch[static_cast<size_t>(a * cols + k)] * rhs[static_cast<size_t>(k)];
      rhs[static_cast<size_t>(a)] = acc / ch[static_cast<size_t>(a * cols + a)];
    }
    for (int a = cols - 1; a >= 0; --a) {
      double acc = rhs[static_cast<size_t>(a)];
      for (int k = a + 1; k < cols; ++k) acc -= ch[static_cast<size_t>(k * cols + a)] * rhs[static_cast<size_t>(k)];
      rhs[static_cast<size_t>(a)] = acc / ch[static_cast<size_t>(a * cols + a)];
    }
  }
};

int default_lmax(int64_t n_phi, int64_t n_theta) {
  return static_cast<int>(std::min<int64_t>(2 * n_theta / 3, n_phi / 2 - 1));
}

}  // namespace

std::vector<double> sphere_analyze(const std::vector<double>& field, int64_t n_phi,
                                   int64_t n_theta, int lmax) {
  SphereTransform st(n_phi, n_theta, lmax);
  std::vector<double> coeffs(static_cast<size_t>((lmax + 1) * (lmax + 1)), 0.0);
  std::vector<double> a(static_cast<size_t>(n_theta)), b(static_cast<size_t>(n_theta));
  std::vector<double> rhs;
  for (int m = 0; m <= lmax; ++m) {
    const int cols = lmax - m + 1;
    for (int64_t j = 0; j < n_theta; ++j) {
      double ca = 0.0, cb = 0.0;
      for (int64_t i = 0; i < n_phi; ++i) {
        const double phi = kTwoPi * i / n_phi;
        const double v = field[static_cast<size_t>(i * n_theta + j)];
        ca += v * std::cos(m * phi);
        cb += v * std::sin(m * phi);
      }
      const double norm = (m == 0 ? 1.0 : 2.0) / static_cast<double>(n_phi);
      a[static_cast<size_t>(j)] = ca * norm;
      b[static_cast<size_t>(j)] = cb * norm;
    }
    const auto& g = st.G[static_cast<size_t>(m)];
    auto project = [&](const std::vector<double>& y, std::vector<double>& out) {
      out.assign(static_cast<size_t>(cols), 0.0);
      for (int64_t j = 0; j < n_theta; ++j)
        for (int c = 0; c < cols; ++c)
          out[static_cast<size_t>(c)] += g[static_cast<size_t>(j * cols + c)] * y[static_cast<size_t>(j)];
      st.solve(m, out);
    };
    project(a, rhs);
    for (int l = m; l <= lmax; ++l) coeffs[static_cast<size_t>(l * (l + 1) + m)] = rhs[static_cast<size_t>(l - m)];
    if (m > 0) {
      project(b, rhs);
      for (int l = m; l <= lmax; ++l) coeffs[static_cast<size_t>(l * (l + 1) - m)] = rhs[static_cast<size_t>(l - m)];
    }
  }
  return coeffs;
}

std::vector<double> sphere_synthesize(const std::vector<double>& coeffs, int64_t n_phi,
                                      int64_t n_theta, int lmax) {
  SphereTransform st(n_phi, n_theta, lmax);
  // theta profiles per m, then the phi sum
  std::vector<double> field(static_cast<size_t>(n_phi * n_theta), 0.0);
  std::vector<double> ac(static_cast<size_t>(n_theta)), bc(static_cast<size_t>(n_theta));
  for (int m = 0; m <= lmax; ++m) {
    const int cols = lmax - m + 1;
    const auto& g = st.G[static_cast<size_t>(m)];
    for (int64_t j = 0; j < n_theta; ++j) {
      double sa = 0.0, sb = 0.0;
      for (int l = m; l <= lmax; ++l) {
        const double base = g[static_cast<size_t>(j * cols + (l - m))];
        sa += coeffs[static_cast<size_t>(l * (l + 1) + m)] * base;
        if (m > 0) sb += coeffs[static_cast<size_t>(l * (l + 1) - m)] * base;
      }
      ac[static_cast<size_t>(j)] = sa;
      bc[static_cast<size_t>(j)] = sb;
    }
    for (int64_t i = 0; i < n_phi; ++i) {
      const double phi = kTwoPi * i / n_phi;
      const double cm = std::cos(m * phi), sm = std::sin(m * phi);
      for (int64_t j = 0; j < n_theta; ++j)
        field[static_cast<size_t>(i * n_theta + j)] +=
            ac[static_cast<size_t>(j)] * cm + (m > 0 ? bc[static_cast<size_t>(j)] * sm : 0.0);
    }
  }
  return field;
}

Dataset gen_heat_sphere(int64_t n_traj, const HeatSphereConfig& cfg, uint64_t seed) {
  const int64_t np = cfg.n_phi, nt = cfg.n_theta;
  const int lmax = cfg.lmax > 0 ? cfg.lmax : default_lmax(np, nt);
  if (lmax >= np / 2 || lmax >= nt)
    throw std::invalid_argument("gen_heat_sphere: band limit exceeds the grid Nyquist");

  Dataset ds;
  ds.header.geometry = geom::sphere_so3();
  ds.header.grid = {np, nt};
  ds.header.frames = cfg.frames;
  ds.header.trajectories = n_traj;
  ds.header.channels = 1;
  ds.header.generator = "heat-sphere";
  ds.header.seed = seed;
  {
    json j;
    j["diffusivity"] = cfg.diffusivity;
    j["sigma"] = cfg.sigma;
    j["lmax"] = lmax;
    j["cell_offset"] = {0.0, 0.5};
    ds.header.params_json = j.dump();
  }

  const int64_t m = np * nt;
  std::vector<double> field(static_cast<size_t>(m));
  for (int64_t traj = 0; traj < n_traj; ++traj) {
    Rng rng = Rng::stream(seed, {kTrajStream, static_cast<uint64_t>(traj)});
    // area-uniform peak center
    const double phi_c = rng.uniform(0.0, kTwoPi);
    const double cos_tc = rng.uniform(-1.0, 1.0);
    const double theta_c = std::acos(cos_tc);
    const double cx = std::sin(theta_c) * std::cos(phi_c), cy = std::sin(theta_c) * std::sin(phi_c),
                 cz = cos_tc;
    for (int64_t i = 0; i < np; ++i) {
      const double phi = kTwoPi * i / np;
      for (int64_t j = 0; j < nt; ++j) {
        const double theta = kPi * (j + 0.5) / nt;
        const double x = std::sin(theta) * std::cos(phi), y = std::sin(theta) * std::sin(phi),
                     z = std::cos(theta);
        const double dot = std::min(1.0, std::max(-1.0, x * cx + y * cy + z * cz));
        const double ang = std::acos(dot);
        field[static_cast<size_t>(i * nt + j)] = std::exp(-ang * ang / (2.0 * cfg.sigma * cfg.sigma));
      }
    }
    std::vector<double> coeffs = sphere_analyze(field, np, nt, lmax);
    Tensor vals(Shape{cfg.frames, m, 1});
    std::vector<double> ct(coeffs.size());
    for (int64_t f = 0; f < cfg.frames; ++f) {
      for (int l = 0; l <= lmax; ++l) {
        const double decay = std::exp(-static_cast<double>(l) * (l + 1) * cfg.diffusivity * f);
        for (int mm = -l; mm <= l; ++mm)
          ct[static_cast<size_t>(l * (l + 1) + mm)] = coeffs[static_cast<size_t>(l * (l + 1) + mm)] * decay;
      }
      std::vector<double> frame = sphere_synthesize(ct, np, nt, lmax);
      std::memcpy(vals.data.data() + f * m, frame.data(), static_cast<size_t>(m) * sizeof(double));
    }
    ds.values.push_back(std::move(vals));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Navier-Stokes on the torus (pseudo-spectral vorticity)
// ---------------------------------------------------------------------------

namespace {

struct NsWorkspace {
  int64_t n;
  int64_t nc;  // n/2 + 1
  fftw_plan fwd, bwd;
  std::vector<double> real;
  std::vector<std::complex<double>> cplx;

  explicit NsWorkspace(int64_t n_) : n(n_), nc(n_ / 2 + 1) {
    real.resize(static_cast<size_t>(n * n));
    cplx.resize(static_cast<size_t>(n * nc));
    fwd = fftw_plan_dft_r2c_2d(static_cast<int>(n), static_cast<int>(n), real.data(),
                               reinterpret_cast<fftw_complex*>(cplx.data()), FFTW_ESTIMATE);
    bwd = fftw_plan_dft_c2r_2d(static_cast<int>(n), static_cast<int>(n),
                               reinterpret_cast<fftw_complex*>(cplx.data()), real.data(),
                               FFTW_ESTIMATE);
  }
  ~NsWorkspace() {
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(bwd);
  }

  template <class Vec>
  std::vector<std::complex<double>> forward(const Vec& field) {
    std::memcpy(real.data(), field.data(), real.size() * sizeof(double));
    fftw_execute(fwd);
    return cplx;
  }
  std::vector<double> inverse(const std::vector<std::complex<double>>& spec) {
    std::memcpy(cplx.data(), spec.data(), spec.size() * sizeof(std::complex<double>));
    fftw_execute(bwd);
    std::vector<double> out(real.size());
    const double inv = 1.0 / static_cast<double>(n * n);
    for (size_t i = 0; i < out.size(); ++i) out[i] = real[i] * inv;
    return out;
  }
};

}  // namespace

Tensor ns_solve(const Tensor& omega0, const NsTorusConfig& cfg, uint64_t abort_tag) {
  const int64_t n = cfg.grid;
  if ((n & (n - 1)) != 0) throw std::invalid_argument("ns_solve: grid must be a power of two");
  if (omega0.shape != Shape{n, n})
    throw std::invalid_argument("ns_solve: initial vorticity must be " + std::to_string(n) + "^2");
  const int64_t nc = n / 2 + 1, m = n * n;
  NsWorkspace ws(n);

  // integer frequencies for the r2c layout
  std::vector<double> kx(static_cast<size_t>(n * nc)), ky(static_cast<size_t>(n * nc)),
      k2(static_cast<size_t>(n * nc));
  std::vector<uint8_t> keep(static_cast<size_t>(n * nc));
  for (int64_t i = 0; i < n; ++i) {
    const double fi = i <= n / 2 ? static_cast<double>(i) : static_cast<double>(i - n);
    for (int64_t j = 0; j < nc; ++j) {
      const double fj = static_cast<double>(j);
      const size_t idx = static_cast<size_t>(i * nc + j);
      kx[idx] = kTwoPi * fj;  // x varies along the fast axis
      ky[idx] = kTwoPi * fi;
      k2[idx] = kx[idx] * kx[idx] + ky[idx] * ky[idx];
      keep[idx] = (std::fabs(fi) <= n / 3.0 && fj <= n / 3.0) ? 1 : 0;
    }
  }

  // stationary zero-mean forcing f = amp (sin 2pi(x+y) + cos 2pi(x+y))
  std::vector<double> f_real(static_cast<size_t>(m));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < n; ++j) {
      const double x = static_cast<double>(j) / n, y = static_cast<double>(i) / n;
      f_real[static_cast<size_t>(i * n + j)] =
          cfg.forcing_amp * (std::sin(kTwoPi * (x + y)) + std::cos(kTwoPi * (x + y)));
    }
  auto f_hat = ws.forward(f_real);
  f_hat[0] = 0.0;

  auto omega_hat = ws.forward(omega0.data);
  omega_hat[0] = 0.0;

  const double dt = 1.0 / cfg.substeps;
  std::vector<std::complex<double>> nprev;
  bool first = true;

  Tensor out(Shape{cfg.frames, m, 1});
  std::memcpy(out.data.data(), omega0.data.data(), static_cast<size_t>(m) * sizeof(double));

  std::vector<std::complex<double>> uh(omega_hat.size()), vh(omega_hat.size()),
      wxh(omega_hat.size()), wyh(omega_hat.size()), nh(omega_hat.size());
  const std::complex<double> I(0.0, 1.0);

  for (int64_t frame = 1; frame < cfg.frames; ++frame) {
    for (int s = 0; s < cfg.substeps; ++s) {
      for (size_t idx = 0; idx < omega_hat.size(); ++idx) {
        const std::complex<double> psi = k2[idx] > 0.0 ? omega_hat[idx] / k2[idx] : 0.0;
        uh[idx] = I * ky[idx] * psi;
        vh[idx] = -I * kx[idx] * psi;
        wxh[idx] = I * kx[idx] * omega_hat[idx];
        wyh[idx] = I * ky[idx] * omega_hat[idx];
      }
      auto u = ws.inverse(uh), v = ws.inverse(vh), wx = ws.inverse(wxh), wy = ws.inverse(wyh);
      std::vector<double> nl(static_cast<size_t>(m));
      for (int64_t p = 0; p < m; ++p)
        nl[static_cast<size_t>(p)] = -(u[static_cast<size_t>(p)] * wx[static_cast<size_t>(p)] +
                                       v[static_cast<size_t>(p)] * wy[static_cast<size_t>(p)]);
      nh = ws.forward(nl);
      for (size_t idx = 0; idx < nh.size(); ++idx)
        if (!keep[idx]) nh[idx] = 0.0;  // 2/3-rule dealiasing
      nh[0] = 0.0;                      // advection cannot move the mean

      for (size_t idx = 0; idx < omega_hat.size(); ++idx) {
        const std::complex<double> adv = first ? nh[idx] : 1.5 * nh[idx] - 0.5 * nprev[idx];
        const double visc = 0.5 * dt * cfg.viscosity * k2[idx];
        omega_hat[idx] = (omega_hat[idx] * (1.0 - visc) + dt * (adv + f_hat[idx])) / (1.0 + visc);
      }
      omega_hat[0] = 0.0;
      nprev = nh;
      first = false;
    }
    auto frame_vals = ws.inverse(omega_hat);
    for (double v2 : frame_vals)
      if (!std::isfinite(v2))
        throw std::runtime_error("ns_solve: non-finite spectrum (trajectory seed " +
                                 std::to_string(abort_tag) + ")");
    std::memcpy(out.data.data() + frame * m, frame_vals.data(),
                static_cast<size_t>(m) * sizeof(double));
  }
  return out;
}

Dataset gen_ns_torus(int64_t n_traj, const NsTorusConfig& cfg, uint64_t seed) {
  const int64_t n = cfg.grid;
  if ((n & (n - 1)) != 0) throw std::invalid_argument("gen_ns_torus: grid must be a power of two");
  Dataset ds;
  ds.header.geometry = geom::torus2();
  ds.header.grid = {n, n};
  ds.header.frames = cfg.frames;
  ds.header.trajectories = n_traj;
  ds.header.channels = 1;
  ds.header.generator = "ns-torus";
  ds.header.seed = seed;
  {
    json j;
    j["viscosity"] = cfg.viscosity;
    j["forcing_amp"] = cfg.forcing_amp;
    j["substeps"] = cfg.substeps;
    j["grf_exponent"] = cfg.grf_exponent;
    j["grf_cutoff"] = cfg.grf_cutoff;
    j["grf_scale"] = cfg.grf_scale;
    j["cell_offset"] = {0.0, 0.0};
    ds.header.params_json = j.dump();
  }

  const int64_t m = n * n;
  NsWorkspace ws(n);
  for (int64_t traj = 0; traj < n_traj; ++traj) {
    Rng rng = Rng::stream(seed, {kTrajStream, static_cast<uint64_t>(traj)});
    // white noise shaped by a power-law filter; the k = 0 mode is removed
    std::vector<double> noise(static_cast<size_t>(m));
    for (auto& v : noise) v = rng.normal();
    auto spec = ws.forward(noise);
    const int64_t nc = n / 2 + 1;
    for (int64_t i = 0; i < n; ++i) {
      const double fi = i <= n / 2 ? static_cast<double>(i) : static_cast<double>(i - n);
      for (int64_t j = 0; j < nc; ++j) {
        const double fj = static_cast<double>(j);
        const double kk = fi * fi + fj * fj;
        const size_t idx = static_cast<size_t>(i * nc + j);
        spec[idx] *= std::pow(kk + cfg.grf_cutoff * cfg.grf_cutoff, -cfg.grf_exponent / 2.0);
      }
    }
    spec[0] = 0.0;
    auto omega = ws.inverse(spec);
    double rms = 0.0;
    for (double v : omega) rms += v * v;
    rms = std::sqrt(rms / static_cast<double>(m));
    const double scale = rms > 0.0 ? cfg.grf_scale / rms : 0.0;
    Tensor omega0(Shape{n, n});
    for (int64_t p = 0; p < m; ++p) omega0.data[static_cast<size_t>(p)] = omega[static_cast<size_t>(p)] * scale;

    ds.values.push_back(ns_solve(omega0, cfg, seed ^ static_cast<uint64_t>(traj)));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Dataset utilities
// ---------------------------------------------------------------------------

Dataset subsample(const Dataset& ds, double rate, uint64_t seed) {
  if (rate <= 0.0 || rate > 1.0)
    throw std::invalid_argument("subsample: rate must be in (0, 1]");
  const int64_t m = ds.points();
  const int64_t count = static_cast<int64_t>(std::ceil(rate * static_cast<double>(m)));
  if (count < 1) throw std::invalid_argument("subsample: rate yields zero points");
  Dataset out = ds;
  out.masks.clear();
  for (int64_t traj = 0; traj < ds.header.trajectories; ++traj) {
    Rng rng = Rng::stream(seed, {kMaskStream, static_cast<uint64_t>(traj)});
    std::vector<int64_t> idx(static_cast<size_t>(m));
    for (int64_t i = 0; i < m; ++i) idx[static_cast<size_t>(i)] = i;
    for (int64_t i = 0; i < count; ++i) {  // partial Fisher-Yates
      const int64_t j = i + rng.uniform_int(m - i);
      std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    idx.resize(static_cast<size_t>(count));
    std::sort(idx.begin(), idx.end());
    out.masks.push_back(std::move(idx));
  }
  return out;
}

Dataset mean_pool(const Dataset& ds, int k) {
  if (k < 1) throw std::invalid_argument("mean_pool: k must be positive");
  if (ds.header.grid.size() != 2)
    throw std::invalid_argument("mean_pool: only 2-D grids are poolable");
  const int64_t g0 = ds.header.grid[0], g1 = ds.header.grid[1];
  if (g0 % k != 0 || g1 % k != 0)
    throw std::invalid_argument("mean_pool: grid " + std::to_string(g0) + "x" +
                                std::to_string(g1) + " not divisible by " + std::to_string(k));
  Dataset out;
  out.header = ds.header;
  out.header.grid = {g0 / k, g1 / k};
  {
    json j = params_of(ds.header);
    auto off = cell_offsets(ds.header);
    for (auto& o : off) o = (o + (k - 1) / 2.0) / k;
    j["cell_offset"] = off;
    j["pooled_by"] = j.value("pooled_by", 1) * k;
    out.header.params_json = j.dump();
  }
  const int64_t m_new = out.header.points(), c = ds.header.channels, t = ds.header.frames;
  for (const auto& vals : ds.values) {
    Tensor pooled(Shape{t, m_new, c});
    for (int64_t f = 0; f < t; ++f)
      for (int64_t i = 0; i < g0 / k; ++i)
        for (int64_t j = 0; j < g1 / k; ++j)
          for (int64_t ch = 0; ch < c; ++ch) {
            double acc = 0.0;
            for (int a = 0; a < k; ++a)
              for (int b = 0; b < k; ++b) {
                const int64_t p = (i * k + a) * g1 + (j * k + b);
                acc += vals.data[static_cast<size_t>((f * g0 * g1 + p) * c + ch)];
              }
            pooled.data[static_cast<size_t>((f * m_new + i * (g1 / k) + j) * c + ch)] =
                acc / (k * k);
          }
    out.values.push_back(std::move(pooled));
  }
  return out;
}

// ---------------------------------------------------------------------------
// On-disk format
// ---------------------------------------------------------------------------

namespace {

json header_to_json(const DatasetHeader& h) {
  json j;
  j["version"] = h.version;
  j["geometry"] = geom::geometry_name(h.geometry);
  j["grid"] = h.grid;
  j["frames"] = h.frames;
  j["trajectories"] = h.trajectories;
  j["channels"] = h.channels;
  j["generator"] = h.generator;
  j["params"] = json::parse(h.params_json.empty() ? "{}" : h.params_json);
  j["seed"] = h.seed;
  return j;
}

DatasetHeader header_from_json(const json& j) {
  DatasetHeader h;
  h.version = j.at("version").get<int>();
  if (h.version != 1)
    throw std::runtime_error("read_dataset: unsupported format version " +
                             std::to_string(h.version));
  h.geometry = geom::geometry_from_name(j.at("geometry").get<std::string>());
  h.grid = j.at("grid").get<std::vector<int64_t>>();
  h.frames = j.at("frames").get<int64_t>();
  h.trajectories = j.at("trajectories").get<int64_t>();
  h.channels = j.at("channels").get<int64_t>();
  h.generator = j.at("generator").get<std::string>();
  h.params_json = j.at("params").dump();
  h.seed = j.at("seed").get<uint64_t>();
  return h;
}

}  // namespace

void write_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("write_dataset: cannot open " + path);
  f.write(kMagic, 8);
  const std::string header = header_to_json(ds.header).dump();
  const uint32_t len = static_cast<uint32_t>(header.size());
  f.write(reinterpret_cast<const char*>(&len), 4);
  f.write(header.data(), static_cast<std::streamsize>(header.size()));
  const int64_t per_traj = ds.header.frames * ds.points() * ds.header.channels;
  std::vector<float> buf;
  for (const auto& vals : ds.values) {
    if (vals.size() != per_traj)
      throw std::runtime_error("write_dataset: trajectory payload does not match header");
    buf.resize(static_cast<size_t>(per_traj));
    for (int64_t i = 0; i < per_traj; ++i)
      buf[static_cast<size_t>(i)] = static_cast<float>(vals.data[static_cast<size_t>(i)]);
    f.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!f) throw std::runtime_error("write_dataset: short write to " + path);
}

Dataset read_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_dataset: cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("read_dataset: bad magic in " + path);
  uint32_t len = 0;
  f.read(reinterpret_cast<char*>(&len), 4);
  std::string header(len, '\0');
  f.read(header.data(), len);
  if (!f) throw std::runtime_error("read_dataset: truncated header in " + path);
  Dataset ds;
  ds.header = header_from_json(json::parse(header));
  const int64_t per_traj = ds.header.frames * ds.points() * ds.header.channels;
  std::vector<float> buf(static_cast<size_t>(per_traj));
  for (int64_t t = 0; t < ds.header.trajectories; ++t) {
    f.read(reinterpret_cast<char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!f) throw std::runtime_error("read_dataset: truncated payload in " + path);
    Tensor vals(Shape{ds.header.frames, ds.points(), ds.header.channels});
    for (int64_t i = 0; i < per_traj; ++i)
      vals.data[static_cast<size_t>(i)] = static_cast<double>(buf[static_cast<size_t>(i)]);
    ds.values.push_back(std::move(vals));
  }
  char extra;
  if (f.read(&extra, 1))
    throw std::runtime_error("read_dataset: trailing bytes in " + path);
  return ds;
}

}  // namespace enfode
