#pragma once

#include <algorithm>
#include <cstdint>
#include <utility>
#include <vector>

#include "motra/math.hpp"
#include "motra/mpm.hpp"

namespace motra {

// Gradient of a scalar loss with respect to one full particle state.
struct StateGradient {
  std::vector<Vec3> x;
  std::vector<Vec3> v;
  std::vector<Mat3> F;
  std::vector<Mat3> C;

  static StateGradient zero(size_t n) {
    StateGradient g;
    g.x.assign(n, Vec3::Zero());
    g.v.assign(n, Vec3::Zero());
    g.F.assign(n, Mat3::Zero());
    g.C.assign(n, Mat3::Zero());
    return g;
  }
};

// d loss / d F for tau = 2 mu (F - R) F^T + lambda (J-1) J I, given
// d loss / d tau. The rotation sensitivity enters through the polar factor:
// with S = R^T F, dR = R skew(omega) and ((tr S) I - S) omega = axial(R^T dF),
// which is invertible since S is positive definite whenever det(F) > 0.
inline Mat3 stress_backward(const Mat3& f, const Mat3& gtau,
                            const MaterialParams& material) {
  const double j = f.determinant();
  const Mat3 r = polar_rotation(f);
  const double mu2 = 2.0 * material.mu;

  Mat3 gf = mu2 * (gtau * f + gtau.transpose() * (f - r));
  gf += material.lambda * (2.0 * j - 1.0) * gtau.trace() * cofactor(f);

  const Mat3 gr = -mu2 * gtau * f;
  const Mat3 s = r.transpose() * f;
  Mat3 a = s.trace() * Mat3::Identity() - s;
  Eigen::LLT<Mat3> llt(a);
  if (llt.info() != Eigen::Success) {
    a += 1e-8 * std::max(1.0, std::abs(s.trace())) * Mat3::Identity();
    llt.compute(a);
  }
  const Vec3 b = llt.solve(axial(r.transpose() * gr));
  gf += r * skew(b);
  return gf;
}

namespace detail {

inline Vec3 weight_gradient(const Stencil& st, int i, int j, int k) {
  return Vec3(st.dw[0][i] * st.w[1][j] * st.w[2][k],
              st.w[0][i] * st.dw[1][j] * st.w[2][k],
              st.w[0][i] * st.w[1][j] * st.dw[2][k]);
}

}  // namespace detail

// Pull the loss gradient through one substep: on entry `g` holds gradients
// with respect to the substep's outputs, on exit with respect to its inputs
// (the state in `in`). Forward intermediates are recomputed from `in`.
inline void substep_backward(const ParticleState& in, const SimConfig& config,
                             SimGrid& grid, StateGradient& g) {
  const size_t n = in.size();
  const double dt = config.dt;

  // Forward replay up to (but not including) advection.
  std::vector<Mat3> tau;
  compute_stresses(in, config.material, tau);
  p2g(in, tau, config, grid);
  grid_update(grid, config);

  const double inv_dx = 1.0 / grid.dx;
  const double d_inv = 4.0 * inv_dx * inv_dx;

  std::vector<Vec3> v_raw(n);
  std::vector<Mat3> c_out(n);
  for (size_t p = 0; p < n; ++p) {
    const Stencil st = make_stencil(in.x[p], grid.origin, inv_dx);
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
              in.x[p];
          v += w * gv;
          b += w * gv * d.transpose();
        }
    v_raw[p] = v;
    c_out[p] = d_inv * b;
  }

  ControlPoints cp;
  std::vector<double> cell_mass;
  const bool sharing = config.share_resolution > 0;
  if (sharing) {
    cp = control_points(in.x, config.share_resolution);
    cell_mass.assign(cp.points.rows(), 0.0);
    for (size_t p = 0; p < n; ++p) cell_mass[cp.assignment[p]] += in.mass[p];
  }

  // Advection backward: x' = x + dt v_out, F' = (I + dt C') F.
  std::vector<Vec3> gx_in(n);
  std::vector<Vec3> gv_out(n);
  std::vector<Mat3> gf_in(n);
  std::vector<Mat3> gc_out(n);
  for (size_t p = 0; p < n; ++p) {
    gc_out[p] = g.C[p] + dt * g.F[p] * in.F[p].transpose();
    gf_in[p] = (Mat3::Identity() + dt * c_out[p]).transpose() * g.F[p];
    gx_in[p] = g.x[p];
    gv_out[p] = g.v[p] + dt * g.x[p];
  }

  // Velocity-sharing backward: the cell mean is linear in member velocities;
  // the bucketing itself is piecewise constant in position.
  std::vector<Vec3> gv_raw(n);
  if (sharing) {
    std::vector<Vec3> cell_grad(cell_mass.size(), Vec3::Zero());
    for (size_t p = 0; p < n; ++p) cell_grad[cp.assignment[p]] += gv_out[p];
    for (size_t p = 0; p < n; ++p)
      gv_raw[p] =
          (in.mass[p] / cell_mass[cp.assignment[p]]) * cell_grad[cp.assignment[p]];
  } else {
    gv_raw = std::move(gv_out);
  }

  // G2P backward: v'_p = sum w v_i, C'_p = d_inv sum w v_i d^T.
  std::vector<Vec3> gv_grid(grid.node_count(), Vec3::Zero());
  for (size_t p = 0; p < n; ++p) {
    const Stencil st = make_stencil(in.x[p], grid.origin, inv_dx);
    const Mat3 bbar = d_inv * gc_out[p];
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) {
          const double w = st.w[0][i] * st.w[1][j] * st.w[2][k];
          const int node =
              grid.index(st.base[0] + i, st.base[1] + j, st.base[2] + k);
          const Vec3 d =
              grid.node_position(st.base[0] + i, st.base[1] + j,
                                 st.base[2] + k) -
              in.x[p];
          const Vec3 vi = grid.velocity[node];
          gv_grid[node] += w * (gv_raw[p] + bbar * d);
          const double wbar = gv_raw[p].dot(vi) + vi.dot(bbar * d);
          gx_in[p] += wbar * detail::weight_gradient(st, i, j, k);
          gx_in[p] -= w * (bbar.transpose() * vi);
        }
  }

  // Grid backward: v_i = project(P_i / m_i + dt gravity); the projection is
  // its own adjoint and gravity is constant.
  std::vector<Vec3> gmom(grid.node_count(), Vec3::Zero());
  std::vector<double> gmass(grid.node_count(), 0.0);
  for (int i = 0; i < grid.nodes.x(); ++i)
    for (int j = 0; j < grid.nodes.y(); ++j)
      for (int k = 0; k < grid.nodes.z(); ++k) {
        const int node = grid.index(i, j, k);
        if (!(grid.mass[node] > 0.0)) continue;
        Vec3 gv = gv_grid[node];
        detail::apply_boundary(grid, config.boundary, config.grid.margin, i, j,
                               k, gv);
        const Vec3 u = grid.momentum[node] / grid.mass[node];
        gmom[node] = gv / grid.mass[node];
        gmass[node] = -u.dot(gv) / grid.mass[node];
      }

  // P2G backward: m_i = sum w m_p, P_i = sum w (m_p v_p + M_p d) with
  // M_p = m_p C_p - dt d_inv V0 tau_p.
  std::vector<Vec3> gv_in(n, Vec3::Zero());
  std::vector<Mat3> gc_in(n);
  for (size_t p = 0; p < n; ++p) {
    const Stencil st = make_stencil(in.x[p], grid.origin, inv_dx);
    const Mat3 affine =
        in.mass[p] * in.C[p] - dt * d_inv * in.volume[p] * tau[p];
    const Vec3 mv = in.mass[p] * in.v[p];
    Mat3 gaffine = Mat3::Zero();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) {
          const double w = st.w[0][i] * st.w[1][j] * st.w[2][k];
          const int node =
              grid.index(st.base[0] + i, st.base[1] + j, st.base[2] + k);
          const Vec3 d =
              grid.node_position(st.base[0] + i, st.base[1] + j,
                                 st.base[2] + k) -
              in.x[p];
          gv_in[p] += w * in.mass[p] * gmom[node];
          const double wbar =
              gmom[node].dot(mv + affine * d) + gmass[node] * in.mass[p];
          gx_in[p] += wbar * detail::weight_gradient(st, i, j, k);
          gx_in[p] -= w * (affine.transpose() * gmom[node]);
          gaffine += w * gmom[node] * d.transpose();
        }
    gc_in[p] = in.mass[p] * gaffine;
    const Mat3 gtau = -dt * d_inv * in.volume[p] * gaffine;
    gf_in[p] += stress_backward(in.F[p], gtau, config.material);
  }

  g.x = std::move(gx_in);
  g.v = std::move(gv_in);
  g.F = std::move(gf_in);
  g.C = std::move(gc_in);
}

// Recorded forward rollout. Below the dense threshold every substep input is
// kept; above it only every stride-th state is kept and windows are replayed
// on demand during the backward pass.
struct AdjointTape {
  SimConfig config;
  SimGrid grid;
  int n_steps = 0;
  int stride = 1;
  std::vector<ParticleState> checkpoints;  // substep inputs at stride spacing
  ParticleState final_state;

  static constexpr int kDenseLimit = 64;
  static constexpr int kStride = 8;
};

inline AdjointTape record_rollout(const ParticleState& initial,
                                  const SimConfig& config, int n_steps) {
  config.validate();
  initial.validate();
  AdjointTape tape;
  tape.config = config;
  tape.n_steps = n_steps;
  tape.stride = n_steps <= AdjointTape::kDenseLimit ? 1 : AdjointTape::kStride;
  tape.grid = make_grid(initial, config);

  ParticleState cur = initial;
  SimGrid grid = tape.grid;
  std::vector<Mat3> tau;
  for (int s = 0; s < n_steps; ++s) {
    if (s % tape.stride == 0) tape.checkpoints.push_back(cur);
    step(cur, config, grid, tau);
  }
  tape.final_state = std::move(cur);
  return tape;
}

// Walk the tape backwards, turning a gradient on the final state into one on
// the initial state.
inline StateGradient backpropagate(const AdjointTape& tape, StateGradient g) {
  SimGrid grid = tape.grid;
  std::vector<ParticleState> window;
  std::vector<Mat3> tau;
  int cached_window = -1;
  for (int s = tape.n_steps - 1; s >= 0; --s) {
    const ParticleState* in = nullptr;
    if (tape.stride == 1) {
      in = &tape.checkpoints[s];
    } else {
      const int w = s / tape.stride;
      if (w != cached_window) {
        window.clear();
        ParticleState cur = tape.checkpoints[w];
        const int end = std::min((w + 1) * tape.stride, tape.n_steps);
        for (int i = w * tape.stride; i < end; ++i) {
          window.push_back(cur);
          step(cur, tape.config, grid, tau);
        }
        cached_window = w;
      }
      in = &window[s - w * tape.stride];
    }
    substep_backward(*in, tape.config, grid, g);
  }
  return g;
}

struct GradientResult {
  ParticleState final_state;
  std::vector<Vec3> velocity_gradient;  // d loss / d initial velocities
};

inline GradientResult simulate_with_gradient(
    const ParticleState& initial, const SimConfig& config, int n_steps,
    const std::vector<Vec3>& loss_grad_on_final_positions) {
  if (loss_grad_on_final_positions.size() != initial.size())
    throw std::invalid_argument(
        "simulate_with_gradient: loss gradient size mismatch");
  AdjointTape tape = record_rollout(initial, config, n_steps);
  StateGradient g = StateGradient::zero(initial.size());
  g.x = loss_grad_on_final_positions;
  g = backpropagate(tape, std::move(g));
  GradientResult result;
  result.final_state = std::move(tape.final_state);
  result.velocity_gradient = std::move(g.v);
  return result;
}

struct GradCheckReport {
  int probes = 0;
  double max_rel_error = 0.0;
  double mean_rel_error = 0.0;
  double max_abs_error = 0.0;
};

// Central finite differences on n_probes random initial-velocity components
// against the adjoint gradient of a seeded random linear loss on final
// positions. FD step is fd_scale * cell size.
inline GradCheckReport gradient_check(const ParticleState& scene,
                                      const SimConfig& config, int n_probes,
                                      std::uint64_t seed = 7,
                                      double fd_scale = 1e-4) {
  GradCheckReport report;
  if (n_probes <= 0) return report;

  Rng rng(seed);
  const size_t n = scene.size();
  std::vector<Vec3> weights(n);
  for (auto& w : weights) w = rng.normal_vec3();

  const int n_steps = config.substeps_per_frame;
  const auto loss_of = [&](const ParticleState& s0) {
    ParticleState s = s0;
    simulate(s, config, n_steps);
    double sum = 0.0;
    for (size_t p = 0; p < n; ++p) sum += weights[p].dot(s.x[p]);
    return sum;
  };

  const GradientResult adj =
      simulate_with_gradient(scene, config, n_steps, weights);
  const double eps = fd_scale * make_grid(scene, config).dx;

  double rel_sum = 0.0;
  for (int probe = 0; probe < n_probes; ++probe) {
    const int p = rng.uniform_int(0, static_cast<int>(n) - 1);
    const int axis = rng.uniform_int(0, 2);
    ParticleState plus = scene;
    plus.v[p][axis] += eps;
    ParticleState minus = scene;
    minus.v[p][axis] -= eps;
    const double fd = (loss_of(plus) - loss_of(minus)) / (2.0 * eps);
    const double ad = adj.velocity_gradient[p][axis];
    const double abs_err = std::abs(ad - fd);
    const double rel =
        abs_err / std::max({std::abs(ad), std::abs(fd), 1e-10});
    report.max_abs_error = std::max(report.max_abs_error, abs_err);
    report.max_rel_error = std::max(report.max_rel_error, rel);
    rel_sum += rel;
  }
  report.probes = n_probes;
  report.mean_rel_error = rel_sum / n_probes;
  return report;
}

}  // namespace motra
