#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "motra/correspondence.hpp"
#include "motra/log.hpp"
#include "motra/math.hpp"
#include "motra/mpm.hpp"
#include "motra/mpm_adjoint.hpp"
#include "motra/skinning.hpp"
#include "motra/triplane.hpp"

namespace motra {

// ---------------------------------------------------------------------------
// Motion transfer: per reference frame pair, inject part velocities (a fixed
// seed from the bone displacement plus a learned residual field per part),
// roll the simulator forward one frame, and fit the fields so part centroid
// displacements match the size-adjusted reference displacements.
// ---------------------------------------------------------------------------

struct TransferScene {
  ParticleState particles;   // target body, becomes each phase's start
  std::vector<int> labels;   // per-particle part index, kUnassigned allowed
  BoneSequence reference;    // reference motion, one bone per part
  double s_target = 1.0;     // coverage of the target body
  double s_reference = 1.0;  // coverage of the reference body
  SimConfig sim;

  double scale_ratio() const { return s_target / s_reference; }

  void validate() const {
    particles.validate();
    reference.validate();
    sim.validate();
    if (labels.size() != particles.size())
      throw DataError("transfer scene: label count mismatch");
    const int bones = static_cast<int>(reference.bone_count());
    for (int l : labels)
      if (l != kUnassigned && (l < 0 || l >= bones))
        throw DataError("transfer scene: label out of bone range");
    if (!(s_target > 0.0) || !(s_reference > 0.0) ||
        !std::isfinite(s_target) || !std::isfinite(s_reference))
      throw DataError("transfer scene: coverage values must be positive");
  }
};

struct TrainOptions {
  int iters = 200;
  double lr = 1e-2;
  double tv_weight = 1e-3;
  double loss_tol = 0.0;  // early stop when best loss drops below; 0 disables
  int plane_res = 32;
  int channels = 16;
  int hidden = 64;
  std::uint64_t seed = 1;
};

struct PhaseResult {
  int phase = 0;
  std::vector<double> loss_history;       // total loss per iteration
  double best_loss = std::numeric_limits<double>::infinity();
  int best_iter = -1;
  MatX achieved;                          // B x 3 centroid deltas at best iter
  MatX target_deltas;                     // B x 3 size-adjusted reference
  ParticleState final_state;              // rollout end state at best iter
  std::vector<TriplaneField> fields;      // best residual field per part
};

// Seed velocity reaching the bone displacement in one frame of N substeps.
inline Vec3 init_velocity(const Vec3& bone_delta, int n_substeps, double dt) {
  if (n_substeps < 1 || !(dt > 0.0))
    throw std::invalid_argument("init_velocity: need n_substeps >= 1, dt > 0");
  return bone_delta / (n_substeps * dt);
}

// Size of a cloud measured by its bounding-box diagonal.
inline double coverage_ratio(const Mat3X& positions) {
  if (positions.rows() < 2)
    throw DataError("coverage_ratio: need at least two points");
  Aabb box;
  for (Eigen::Index n = 0; n < positions.rows(); ++n)
    box.extend(positions.row(n).transpose());
  const double d = box.diagonal();
  if (!(d > 0.0)) throw DataError("coverage_ratio: degenerate cloud extent");
  return d;
}

struct PartCentroids {
  MatX centroid;             // B x 3, mass-weighted; zero for empty parts
  std::vector<double> mass;  // total mass per part
};

inline PartCentroids part_centroids(const ParticleState& state,
                                    const std::vector<int>& labels,
                                    int n_parts) {
  if (labels.size() != state.size())
    throw DataError("part_centroids: label count mismatch");
  PartCentroids pc;
  pc.centroid = MatX::Zero(n_parts, 3);
  pc.mass.assign(n_parts, 0.0);
  for (size_t p = 0; p < state.size(); ++p) {
    const int b = labels[p];
    if (b == kUnassigned) continue;
    pc.centroid.row(b) += state.mass[p] * state.x[p].transpose();
    pc.mass[b] += state.mass[p];
  }
  for (int b = 0; b < n_parts; ++b) {
    if (pc.mass[b] > 0.0)
      pc.centroid.row(b) /= pc.mass[b];
    else
      log_warn("part_centroids: part " + std::to_string(b) +
               " has no particles");
  }
  return pc;
}

// Mass-weighted centroid displacement per part; empty parts give zero rows.
inline MatX part_displacement(const ParticleState& before,
                              const ParticleState& after,
                              const std::vector<int>& labels) {
  if (before.size() != after.size())
    throw DataError("part_displacement: particle counts disagree");
  const int n_parts = part_count(labels);
  const PartCentroids a = part_centroids(before, labels, n_parts);
  const PartCentroids b = part_centroids(after, labels, n_parts);
  return b.centroid - a.centroid;
}

namespace detail {

struct LossParts {
  double value = 0.0;
  MatX grad;  // B x 3, d loss / d achieved deltas
};

// L1 against the size-adjusted reference; the gradient is the elementwise
// sign, zero exactly at a match.
inline LossParts l1_displacement_loss(const MatX& achieved,
                                      const MatX& target) {
  if (achieved.rows() != target.rows() || achieved.cols() != target.cols())
    throw DataError("displacement_loss: shape mismatch");
  LossParts lp;
  lp.grad = MatX::Zero(achieved.rows(), achieved.cols());
  for (Eigen::Index r = 0; r < achieved.rows(); ++r)
    for (Eigen::Index c = 0; c < achieved.cols(); ++c) {
      const double d = achieved(r, c) - target(r, c);
      lp.value += std::abs(d);
      lp.grad(r, c) = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
    }
  return lp;
}

}  // namespace detail

inline double displacement_loss(const MatX& achieved, const MatX& reference,
                                double s_target, double s_reference) {
  if (!(s_target > 0.0) || !(s_reference > 0.0))
    throw std::invalid_argument("displacement_loss: scales must be positive");
  return detail::l1_displacement_loss(
             achieved, (s_target / s_reference) * reference)
      .value;
}

// Per-particle start velocities: the part's seed row plus, when fields are
// given, the part's residual field sampled at the particle. Unassigned
// particles stay at rest.
inline std::vector<Vec3> initial_velocities(
    const ParticleState& state, const std::vector<int>& labels,
    const MatX& seed_velocity, const std::vector<TriplaneField>* fields) {
  std::vector<Vec3> v(state.size(), Vec3::Zero());
  for (size_t p = 0; p < state.size(); ++p) {
    const int b = labels[p];
    if (b == kUnassigned) continue;
    Vec3 vp = seed_velocity.row(b).transpose();
    if (fields) vp += query((*fields)[b], state.x[p]);
    v[p] = vp;
  }
  return v;
}

// Adjoint of share_cell_velocities: the shared velocity of every particle in
// a cell depends on each member's velocity with weight m_q / M_cell.
inline std::vector<Vec3> share_velocities_backward(
    const std::vector<double>& masses, const std::vector<int>& assignment,
    int n_cells, const std::vector<Vec3>& g_shared) {
  std::vector<Vec3> gsum(n_cells, Vec3::Zero());
  std::vector<double> cell_mass(n_cells, 0.0);
  for (size_t p = 0; p < g_shared.size(); ++p) {
    gsum[assignment[p]] += g_shared[p];
    cell_mass[assignment[p]] += masses[p];
  }
  std::vector<Vec3> g(g_shared.size());
  for (size_t p = 0; p < g_shared.size(); ++p) {
    const int c = assignment[p];
    g[p] = cell_mass[c] > 0.0 ? Vec3((masses[p] / cell_mass[c]) * gsum[c])
                              : g_shared[p];
  }
  return g;
}

namespace detail {

struct PartIndex {
  std::vector<std::vector<int>> members;   // particle indices per part
  std::vector<std::vector<Vec3>> points;   // their (fixed) start positions
};

inline PartIndex build_part_index(const ParticleState& state,
                                  const std::vector<int>& labels,
                                  int n_parts) {
  PartIndex idx;
  idx.members.resize(n_parts);
  idx.points.resize(n_parts);
  for (size_t p = 0; p < state.size(); ++p) {
    const int b = labels[p];
    if (b == kUnassigned) continue;
    idx.members[b].push_back(static_cast<int>(p));
    idx.points[b].push_back(state.x[p]);
  }
  return idx;
}

// One residual field per part over the part's padded bounding box; empty or
// degenerate parts get the whole-body box so queries stay in range.
inline std::vector<TriplaneField> make_part_fields(
    const ParticleState& state, const PartIndex& idx, int n_parts,
    const TrainOptions& options, int phase) {
  const Aabb body = bounding_box(state.x).dilated(0.2);
  std::vector<TriplaneField> fields;
  fields.reserve(n_parts);
  for (int b = 0; b < n_parts; ++b) {
    Aabb box;
    for (const Vec3& x : idx.points[b]) box.extend(x);
    if (!box.valid() || !((box.extent().array() > 0.0).all()))
      box = body;
    else
      box = box.dilated(0.2);
    fields.push_back(make_triplane_field(
        box, options.plane_res, options.channels, options.hidden,
        options.seed + 1000003ULL * static_cast<std::uint64_t>(phase) +
            static_cast<std::uint64_t>(b)));
  }
  return fields;
}

inline MatX seed_velocities(const BoneSequence& reference, int t,
                            int n_substeps, double dt) {
  const MatX deltas = bone_deltas(reference, t);
  MatX v0(deltas.rows(), 3);
  for (Eigen::Index b = 0; b < deltas.rows(); ++b)
    v0.row(b) =
        init_velocity(deltas.row(b).transpose(), n_substeps, dt).transpose();
  return v0;
}

}  // namespace detail

// Fit the residual velocity fields for one reference frame pair (t, t+1).
// The scene's particle state is the phase start; velocities are injected, so
// incoming v is ignored and C restarts at zero while F carries over.
inline PhaseResult train_phase(const TransferScene& scene, int t,
                               const TrainOptions& options) {
  scene.validate();
  if (t < 0 || t + 1 >= static_cast<int>(scene.reference.frame_count()))
    throw std::out_of_range("train_phase: phase index out of range");
  if (options.iters < 1)
    throw std::invalid_argument("train_phase: iters must be >= 1");

  const int n_parts = static_cast<int>(scene.reference.bone_count());
  const int n_steps = scene.sim.substeps_per_frame;

  ParticleState start = scene.particles;
  for (size_t p = 0; p < start.size(); ++p) start.C[p].setZero();

  const MatX deltas = bone_deltas(scene.reference, t);
  const MatX seed_velocity =
      detail::seed_velocities(scene.reference, t, n_steps, scene.sim.dt);

  PhaseResult result;
  result.phase = t;
  result.target_deltas = scene.scale_ratio() * deltas;

  const detail::PartIndex idx =
      detail::build_part_index(start, scene.labels, n_parts);
  std::vector<TriplaneField> fields =
      detail::make_part_fields(start, idx, n_parts, options, t);

  // Start positions are fixed for the whole phase, so the sharing cells are
  // too.
  ControlPoints cp;
  const bool sharing = scene.sim.share_resolution > 1;
  if (sharing) cp = control_points(start.x, scene.sim.share_resolution);
  const int n_cells = sharing ? static_cast<int>(cp.points.rows()) : 0;

  const PartCentroids c0 = part_centroids(start, scene.labels, n_parts);

  std::vector<VecX> rms(n_parts);
  for (int b = 0; b < n_parts; ++b)
    rms[b] = VecX::Zero(fields[b].param_count());
  constexpr double kBeta = 0.9;
  constexpr double kEps = 1e-8;

  std::vector<TriplaneField> best_fields = fields;

  for (int k = 0; k < options.iters; ++k) {
    std::vector<Vec3> injected =
        initial_velocities(start, scene.labels, seed_velocity, &fields);
    if (sharing)
      share_cell_velocities(injected, start.mass, cp.assignment, n_cells);
    start.v = injected;

    AdjointTape tape = record_rollout(start, scene.sim, n_steps);
    const PartCentroids c1 =
        part_centroids(tape.final_state, scene.labels, n_parts);
    const MatX achieved = c1.centroid - c0.centroid;
    const detail::LossParts lp =
        detail::l1_displacement_loss(achieved, result.target_deltas);

    double tv_total = 0.0;
    std::vector<TvResult> tv(n_parts);
    if (options.tv_weight > 0.0)
      for (int b = 0; b < n_parts; ++b) {
        tv[b] = tv_loss(fields[b]);
        tv_total += tv[b].value;
      }
    const double loss = lp.value + options.tv_weight * tv_total;

    if (!std::isfinite(loss)) {
      log_error("transfer diverged: phase=" + std::to_string(t) +
                " iter=" + std::to_string(k) + " loss is not finite");
      throw DivergenceError("transfer optimization diverged at phase " +
                            std::to_string(t) + " iteration " +
                            std::to_string(k));
    }

    log_info("phase=" + std::to_string(t) + " iter=" + std::to_string(k) +
             " loss=" + std::to_string(loss) +
             " tv=" + std::to_string(tv_total));
    result.loss_history.push_back(loss);

    if (loss < result.best_loss) {
      result.best_loss = loss;
      result.best_iter = k;
      result.achieved = achieved;
      result.final_state = tape.final_state;
      best_fields = fields;
    }
    if (result.best_loss == 0.0) break;  // nothing left to optimize
    if (options.loss_tol > 0.0 && result.best_loss <= options.loss_tol) break;
    if (k + 1 == options.iters) break;  // last evaluation needs no update

    StateGradient g = StateGradient::zero(start.size());
    for (size_t p = 0; p < start.size(); ++p) {
      const int b = scene.labels[p];
      if (b == kUnassigned || !(c1.mass[b] > 0.0)) continue;
      g.x[p] = (start.mass[p] / c1.mass[b]) * lp.grad.row(b).transpose();
    }
    g = backpropagate(tape, g);
    const std::vector<Vec3> g_raw =
        sharing ? share_velocities_backward(start.mass, cp.assignment, n_cells,
                                            g.v)
                : g.v;

    const double lr_k = options.lr * (1.0 - static_cast<double>(k) /
                                                options.iters);
    for (int b = 0; b < n_parts; ++b) {
      if (idx.members[b].empty()) continue;
      std::vector<Vec3> upstream(idx.members[b].size());
      for (size_t m = 0; m < idx.members[b].size(); ++m)
        upstream[m] = g_raw[idx.members[b][m]];
      VecX pg = query_batch_with_param_grad(fields[b], idx.points[b], upstream);
      if (options.tv_weight > 0.0) pg += options.tv_weight * tv[b].grad;
      if (!pg.allFinite()) {
        log_error("transfer diverged: phase=" + std::to_string(t) + " iter=" +
                  std::to_string(k) + " gradient for part " +
                  std::to_string(b) + " is not finite");
        throw DivergenceError("transfer optimization diverged at phase " +
                              std::to_string(t) + " iteration " +
                              std::to_string(k));
      }
      rms[b] = kBeta * rms[b] + (1.0 - kBeta) * pg.cwiseProduct(pg);
      fields[b].params -=
          lr_k * pg.cwiseQuotient((rms[b].cwiseSqrt().array() + kEps).matrix());
    }
  }

  result.fields = std::move(best_fields);
  return result;
}

// Baseline without learned fields: inject alpha-scaled seed velocities and
// roll forward once.
inline PhaseResult ablation_manual_velocity(const TransferScene& scene, int t,
                                            double alpha) {
  scene.validate();
  if (t < 0 || t + 1 >= static_cast<int>(scene.reference.frame_count()))
    throw std::out_of_range("ablation_manual_velocity: phase out of range");
  const int n_parts = static_cast<int>(scene.reference.bone_count());
  const int n_steps = scene.sim.substeps_per_frame;

  ParticleState start = scene.particles;
  for (size_t p = 0; p < start.size(); ++p) start.C[p].setZero();

  const MatX deltas = bone_deltas(scene.reference, t);
  const MatX seed_velocity =
      alpha * detail::seed_velocities(scene.reference, t, n_steps,
                                      scene.sim.dt);
  std::vector<Vec3> injected =
      initial_velocities(start, scene.labels, seed_velocity, nullptr);
  if (scene.sim.share_resolution > 1) {
    const ControlPoints cp =
        control_points(start.x, scene.sim.share_resolution);
    share_cell_velocities(injected, start.mass, cp.assignment,
                          static_cast<int>(cp.points.rows()));
  }
  start.v = injected;

  const PartCentroids c0 = part_centroids(start, scene.labels, n_parts);
  PhaseResult result;
  result.phase = t;
  result.target_deltas = scene.scale_ratio() * deltas;
  simulate(start, scene.sim, n_steps);
  const PartCentroids c1 = part_centroids(start, scene.labels, n_parts);
  result.achieved = c1.centroid - c0.centroid;
  result.best_loss =
      detail::l1_displacement_loss(result.achieved, result.target_deltas)
          .value;
  result.best_iter = 0;
  result.loss_history.push_back(result.best_loss);
  result.final_state = std::move(start);
  return result;
}

struct TransferResult {
  std::vector<PhaseResult> phases;
  std::vector<ParticleState> frames;  // start state, then one per phase, with
                                      // the reference global motion applied
};

// Whole-body rigid motion applied at export, the translation scaled to the
// target's size.
inline ParticleState with_global_motion(const ParticleState& state,
                                        const RigidTransform& g,
                                        double translation_scale) {
  ParticleState out = state;
  const Mat3 R = g.rotation_matrix();
  const Vec3 tr = translation_scale * g.translation;
  for (size_t p = 0; p < out.size(); ++p) {
    out.x[p] = R * out.x[p] + tr;
    out.v[p] = R * out.v[p];
    out.F[p] = R * out.F[p];
    out.C[p] = R * out.C[p] * R.transpose();
  }
  return out;
}

// Run consecutive phases, each starting from the previous best end state.
// Output frames carry the reference's per-frame global transform with its
// translation scaled by the coverage ratio.
inline TransferResult run_transfer(TransferScene scene,
                                   const TrainOptions& options,
                                   int phases = -1) {
  scene.validate();
  const int max_phases = static_cast<int>(scene.reference.frame_count()) - 1;
  const int n = phases < 0 ? max_phases : std::min(phases, max_phases);
  if (n < 1) throw DataError("run_transfer: need at least one frame pair");
  TransferResult result;
  result.frames.push_back(with_global_motion(
      scene.particles, scene.reference.frames[0].global, scene.scale_ratio()));
  for (int t = 0; t < n; ++t) {
    PhaseResult pr = train_phase(scene, t, options);
    scene.particles = pr.final_state;
    result.frames.push_back(with_global_motion(
        pr.final_state, scene.reference.frames[t + 1].global,
        scene.scale_ratio()));
    result.phases.push_back(std::move(pr));
  }
  return result;
}

}  // namespace motra
