#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "motra/log.hpp"
#include "motra/math.hpp"

namespace motra {

// mu = E / 2(1+nu), lambda = E nu / ((1+nu)(1-2nu)).
inline std::pair<double, double> lame_parameters(double young,
                                                 double poisson) {
  if (young <= 0.0)
    throw std::invalid_argument("lame_parameters: Young's modulus must be > 0");
  if (poisson < 0.0)
    throw std::invalid_argument("lame_parameters: Poisson's ratio must be >= 0");
  if (poisson >= 0.5)
    throw std::invalid_argument(
        "lame_parameters: Poisson's ratio at the incompressible limit");
  const double mu = young / (2.0 * (1.0 + poisson));
  const double lambda =
      young * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson));
  return {mu, lambda};
}

struct MaterialParams {
  double young = 1e4;
  double poisson = 0.3;
  double mu = 0.0;
  double lambda = 0.0;

  static MaterialParams make(double young, double poisson) {
    auto [mu, lambda] = lame_parameters(young, poisson);
    return {young, poisson, mu, lambda};
  }
};

struct ParticleState {
  std::vector<Vec3> x;
  std::vector<Vec3> v;
  std::vector<double> mass;
  std::vector<double> volume;  // initial representing volume V_p^0
  std::vector<Mat3> F;
  std::vector<Mat3> C;

  size_t size() const { return x.size(); }

  void resize(size_t n) {
    x.assign(n, Vec3::Zero());
    v.assign(n, Vec3::Zero());
    mass.assign(n, 0.0);
    volume.assign(n, 0.0);
    F.assign(n, Mat3::Identity());
    C.assign(n, Mat3::Zero());
  }

  void validate() const {
    const size_t n = size();
    if (v.size() != n || mass.size() != n || volume.size() != n ||
        F.size() != n || C.size() != n)
      throw DataError("particle state: field sizes disagree");
    for (size_t p = 0; p < n; ++p) {
      if (!(mass[p] > 0.0)) throw DataError("particle state: mass must be > 0");
      if (!(volume[p] > 0.0))
        throw DataError("particle state: volume must be > 0");
      if (!(F[p].determinant() > 0.0))
        throw DataError("particle state: det(F) must be > 0");
    }
  }
};

enum class BoundaryKind { Sticky, Slip, Open };

// Faces in order x-, x+, y-, y+, z-, z+.
using BoundaryFaces = std::array<BoundaryKind, 6>;

inline BoundaryFaces sticky_floor_boundary() {
  BoundaryFaces b;
  b.fill(BoundaryKind::Open);
  b[2] = BoundaryKind::Sticky;
  return b;
}

inline BoundaryFaces open_boundary() {
  BoundaryFaces b;
  b.fill(BoundaryKind::Open);
  return b;
}

struct GridSpec {
  int resolution = 64;         // cells along the largest axis
  std::optional<Aabb> domain;  // explicit domain; otherwise bbox dilated 20%
  int margin = 3;              // boundary-condition margin in cells
};

struct SimConfig {
  double dt = 1e-3;
  int substeps_per_frame = 24;
  Vec3 gravity = Vec3(0.0, -9.8, 0.0);
  GridSpec grid;
  MaterialParams material = MaterialParams::make(1e4, 0.3);
  BoundaryFaces boundary = sticky_floor_boundary();
  bool deterministic = true;
  // When > 0, particles bucketed into a share_resolution^3 lattice share their
  // cell's mass-weighted mean velocity after G2P.
  int share_resolution = 0;

  void validate() const {
    if (dt <= 0.0) throw std::invalid_argument("sim config: dt must be > 0");
    if (substeps_per_frame < 1)
      throw std::invalid_argument("sim config: substeps must be >= 1");
  }
};

struct SimGrid {
  Vec3i nodes = Vec3i::Zero();  // node counts per axis
  double dx = 0.0;
  Vec3 origin = Vec3::Zero();
  std::vector<double> mass;
  std::vector<Vec3> momentum;
  std::vector<Vec3> velocity;

  int node_count() const { return nodes.x() * nodes.y() * nodes.z(); }
  int index(int i, int j, int k) const {
    return (i * nodes.y() + j) * nodes.z() + k;
  }
  Vec3 node_position(int i, int j, int k) const {
    return origin + dx * Vec3(i, j, k);
  }

  void clear() {
    mass.assign(node_count(), 0.0);
    momentum.assign(node_count(), Vec3::Zero());
    velocity.assign(node_count(), Vec3::Zero());
  }
};

inline SimGrid make_grid(const Aabb& content, const GridSpec& spec) {
  SimGrid grid;
  if (spec.resolution < 2)
    throw std::invalid_argument("grid: resolution must be >= 2");
  if (spec.domain) {
    const Vec3 ext = spec.domain->extent();
    if (!((ext.array() > 0.0).all()))
      throw std::invalid_argument("grid: explicit domain has zero extent");
    grid.dx = ext.maxCoeff() / spec.resolution;
    for (int a = 0; a < 3; ++a)
      grid.nodes[a] = static_cast<int>(std::ceil(ext[a] / grid.dx - 1e-9)) + 1;
    grid.origin = spec.domain->lo;
  } else {
    Aabb box = content.dilated(0.2);
    Vec3 ext = box.extent();
    if (ext.maxCoeff() <= 0.0) ext = Vec3::Ones();
    ext = ext.cwiseMax(1e-6 * ext.maxCoeff());
    const int pad = spec.margin + 1;
    const int usable = spec.resolution - 2 * pad;
    if (usable < 1)
      throw std::invalid_argument("grid: resolution too small for margin");
    grid.dx = ext.maxCoeff() / usable;
    for (int a = 0; a < 3; ++a) {
      const int cells =
          static_cast<int>(std::ceil(ext[a] / grid.dx - 1e-9)) + 2 * pad;
      grid.nodes[a] = cells + 1;
      grid.origin[a] = box.center()[a] - 0.5 * ext[a] - pad * grid.dx;
    }
  }
  grid.clear();
  return grid;
}

inline Aabb particle_bounds(const ParticleState& state) {
  return bounding_box(state.x);
}

inline SimGrid make_grid(const ParticleState& state, const SimConfig& config) {
  return make_grid(particle_bounds(state), config.grid);
}

// Quadratic B-spline stencil: 3 nodes per axis starting at `base`; dw carries
// the 1/dx chain factor so it is a derivative w.r.t. world position.
struct Stencil {
  Vec3i base;
  double w[3][3];
  double dw[3][3];
};

inline Stencil make_stencil(const Vec3& x, const Vec3& origin, double inv_dx) {
  Stencil s;
  for (int a = 0; a < 3; ++a) {
    const double fx = (x[a] - origin[a]) * inv_dx;
    const double base = std::floor(fx - 0.5);
    const double t = fx - base;  // in [0.5, 1.5)
    s.base[a] = static_cast<int>(base);
    s.w[a][0] = 0.5 * (1.5 - t) * (1.5 - t);
    s.w[a][1] = 0.75 - (t - 1.0) * (t - 1.0);
    s.w[a][2] = 0.5 * (t - 0.5) * (t - 0.5);
    s.dw[a][0] = -(1.5 - t) * inv_dx;
    s.dw[a][1] = -2.0 * (t - 1.0) * inv_dx;
    s.dw[a][2] = (t - 0.5) * inv_dx;
  }
  return s;
}

inline bool stencil_in_bounds(const Stencil& s, const Vec3i& nodes) {
  for (int a = 0; a < 3; ++a)
    if (s.base[a] < 0 || s.base[a] + 2 >= nodes[a]) return false;
  return true;
}

// Rotation factor of F by polar decomposition through the SVD; requires
// det(F) > 0 so that det(R) = +1.
inline Mat3 polar_rotation(const Mat3& f) {
  Eigen::JacobiSVD<Mat3> svd(f, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().transpose();
}

// Fixed-corotated Kirchhoff stress tau = 2 mu (F - R) F^T + lambda (J-1) J I.
inline Mat3 kirchhoff_stress(const Mat3& f, const MaterialParams& material) {
  if (!f.allFinite())
    throw std::invalid_argument("kirchhoff_stress: non-finite F");
  const double j = f.determinant();
  if (!(j > 0.0))
    throw std::invalid_argument("kirchhoff_stress: non-invertible F");
  const Mat3 r = polar_rotation(f);
  return 2.0 * material.mu * (f - r) * f.transpose() +
         material.lambda * (j - 1.0) * j * Mat3::Identity();
}

inline void compute_stresses(const ParticleState& state,
                             const MaterialParams& material,
                             std::vector<Mat3>& tau) {
  tau.resize(state.size());
  for (size_t p = 0; p < state.size(); ++p)
    tau[p] = kirchhoff_stress(state.F[p], material);
}

// Scatter mass and momentum to the grid. The MLS-MPM stress force is fused in
// as -dt (4/dx^2) V_p^0 tau_p (x_i - x_p) per node.
inline void p2g(const ParticleState& state, const std::vector<Mat3>& tau,
                const SimConfig& config, SimGrid& grid) {
  grid.clear();
  const double inv_dx = 1.0 / grid.dx;
  const double d_inv = 4.0 * inv_dx * inv_dx;
  for (size_t p = 0; p < state.size(); ++p) {
    const Stencil st = make_stencil(state.x[p], grid.origin, inv_dx);
    if (!stencil_in_bounds(st, grid.nodes))
      throw DataError("p2g: particle " + std::to_string(p) +
                      " outside the padded grid domain");
    // Momentum contribution is w (m v + M d) with M = m C - dt (4/dx^2) V0 tau.
    const Mat3 affine =
        state.mass[p] * state.C[p] - config.dt * d_inv * state.volume[p] * tau[p];
    const Vec3 mv = state.mass[p] * state.v[p];
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) {
          const double w = st.w[0][i] * st.w[1][j] * st.w[2][k];
          const int node =
              grid.index(st.base[0] + i, st.base[1] + j, st.base[2] + k);
          const Vec3 d =
              grid.node_position(st.base[0] + i, st.base[1] + j,
                                 st.base[2] + k) -
              state.x[p];
          grid.mass[node] += w * state.mass[p];
          grid.momentum[node] += w * (mv + affine * d);
        }
  }
}

namespace detail {

// Margin-zone boundary projection; sticky zeroes the node velocity, slip
// zeroes the face-normal component.
inline void apply_boundary(const SimGrid& grid, const BoundaryFaces& faces,
                           int margin, int i, int j, int k, Vec3& v) {
  const int idx[3] = {i, j, k};
  for (int a = 0; a < 3; ++a) {
    if (idx[a] < margin) {
      if (faces[2 * a] == BoundaryKind::Sticky) v.setZero();
      else if (faces[2 * a] == BoundaryKind::Slip) v[a] = 0.0;
    }
    if (idx[a] >= grid.nodes[a] - margin) {
      if (faces[2 * a + 1] == BoundaryKind::Sticky) v.setZero();
      else if (faces[2 * a + 1] == BoundaryKind::Slip) v[a] = 0.0;
    }
  }
}

}  // namespace detail

// Momentum -> velocity, gravity, then boundary conditions on the margin.
inline void grid_update(SimGrid& grid, const SimConfig& config) {
  for (int i = 0; i < grid.nodes.x(); ++i)
    for (int j = 0; j < grid.nodes.y(); ++j)
      for (int k = 0; k < grid.nodes.z(); ++k) {
        const int node = grid.index(i, j, k);
        Vec3 v = Vec3::Zero();
        if (grid.mass[node] > 0.0) {
          v = grid.momentum[node] / grid.mass[node];
          v += config.dt * config.gravity;
          detail::apply_boundary(grid, config.boundary, config.grid.margin, i,
                                 j, k, v);
        }
        grid.velocity[node] = v;
      }
}

// Control-point downsampling: bucket positions into a resolution^3 lattice
// over their bounding box; each occupied cell contributes its mean coordinate.
struct ControlPoints {
  Mat3X points;
  std::vector<int> assignment;  // per input position, index into points
};

inline ControlPoints control_points(const std::vector<Vec3>& positions,
                                    int resolution) {
  if (resolution < 2)
    throw std::invalid_argument("control_points: resolution must be >= 2");
  const Aabb box = bounding_box(positions);
  const Vec3 ext = box.extent();
  const auto cell_of = [&](const Vec3& p) {
    int c[3];
    for (int a = 0; a < 3; ++a) {
      if (ext[a] <= 0.0) {
        c[a] = 0;
        continue;
      }
      const double u = (p[a] - box.lo[a]) / ext[a];
      c[a] = std::min(static_cast<int>(u * resolution), resolution - 1);
    }
    return (c[0] * resolution + c[1]) * resolution + c[2];
  };

  std::vector<int> cell(positions.size());
  std::vector<int> order;  // occupied cells in scan order
  std::vector<int> cell_to_control(
      static_cast<size_t>(resolution) * resolution * resolution, -1);
  for (size_t n = 0; n < positions.size(); ++n) cell[n] = cell_of(positions[n]);
  for (size_t n = 0; n < positions.size(); ++n)
    if (cell_to_control[cell[n]] < 0) {
      cell_to_control[cell[n]] = 0;
      order.push_back(cell[n]);
    }
  std::sort(order.begin(), order.end());
  for (size_t m = 0; m < order.size(); ++m)
    cell_to_control[order[m]] = static_cast<int>(m);

  ControlPoints cp;
  cp.points = Mat3X::Zero(static_cast<Eigen::Index>(order.size()), 3);
  cp.assignment.resize(positions.size());
  std::vector<int> counts(order.size(), 0);
  for (size_t n = 0; n < positions.size(); ++n) {
    const int m = cell_to_control[cell[n]];
    cp.assignment[n] = m;
    cp.points.row(m) += positions[n].transpose();
    counts[m] += 1;
  }
  for (size_t m = 0; m < order.size(); ++m) cp.points.row(m) /= counts[m];
  return cp;
}

// Replace each velocity by its control cell's mass-weighted mean.
inline void share_cell_velocities(std::vector<Vec3>& velocities,
                                  const std::vector<double>& masses,
                                  const std::vector<int>& assignment,
                                  int n_cells) {
  std::vector<Vec3> mom(n_cells, Vec3::Zero());
  std::vector<double> m(n_cells, 0.0);
  for (size_t p = 0; p < velocities.size(); ++p) {
    mom[assignment[p]] += masses[p] * velocities[p];
    m[assignment[p]] += masses[p];
  }
  for (size_t p = 0; p < velocities.size(); ++p)
    if (m[assignment[p]] > 0.0)
      velocities[p] = mom[assignment[p]] / m[assignment[p]];
}

// Gather grid velocities back to particles, then advect and update C and F.
inline void g2p_advect(ParticleState& state, const SimGrid& grid,
                       const SimConfig& config) {
  const double inv_dx = 1.0 / grid.dx;
  const double d_inv = 4.0 * inv_dx * inv_dx;
  for (size_t p = 0; p < state.size(); ++p) {
    const Stencil st = make_stencil(state.x[p], grid.origin, inv_dx);
    Vec3 v = Vec3::Zero();
    Mat3 b = Mat3::Zero();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) {
          const double w = st.w[0][i] * st.w[1][j] * st.w[2][k];
          const Vec3 gv = grid.velocity[grid.index(
              st.base[0] + i, st.base[1] + j, st.base[2] + k)];
          const Vec3 d =
              grid.node_position(st.base[0] + i, st.base[1] + j,
                                 st.base[2] + k) -
              state.x[p];
          v += w * gv;
          b += w * gv * d.transpose();
        }
    state.v[p] = v;
    state.C[p] = d_inv * b;
  }
  if (config.share_resolution > 0) {
    const ControlPoints cp = control_points(state.x, config.share_resolution);
    share_cell_velocities(state.v, state.mass, cp.assignment,
                          static_cast<int>(cp.points.rows()));
  }
  for (size_t p = 0; p < state.size(); ++p) {
    state.x[p] += config.dt * state.v[p];
    state.F[p] = (Mat3::Identity() + config.dt * state.C[p]) * state.F[p];
  }
}

// One full MLS-MPM substep: stress -> P2G -> grid update -> G2P/advect.
inline void step(ParticleState& state, const SimConfig& config, SimGrid& grid,
                 std::vector<Mat3>& tau_scratch) {
  double vmax = 0.0;
  for (const auto& v : state.v) vmax = std::max(vmax, v.norm());
  if (vmax * config.dt >= grid.dx)
    log_warn("CFL violated: max speed " + std::to_string(vmax) + " * dt " +
             std::to_string(config.dt) + " >= cell size " +
             std::to_string(grid.dx));
  compute_stresses(state, config.material, tau_scratch);
  p2g(state, tau_scratch, config, grid);
  grid_update(grid, config);
  g2p_advect(state, grid, config);
}

inline void step(ParticleState& state, const SimConfig& config,
                 SimGrid& grid) {
  std::vector<Mat3> tau;
  step(state, config, grid, tau);
}

// n_steps substeps on a grid sized once from the initial particle bounds.
inline void simulate(ParticleState& state, const SimConfig& config,
                     int n_steps) {
  config.validate();
  state.validate();
  SimGrid grid = make_grid(state, config);
  std::vector<Mat3> tau;
  for (int s = 0; s < n_steps; ++s) step(state, config, grid, tau);
}

}  // namespace motra
