// Command-line front end: synthetic scene generation, forward simulation,
// part matching, motion transfer, gradient checking, and manual baselines.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "motra/correspondence.hpp"
#include "motra/io.hpp"
#include "motra/log.hpp"
#include "motra/mpm.hpp"
#include "motra/mpm_adjoint.hpp"
#include "motra/skinning.hpp"
#include "motra/transfer.hpp"
#include "motra/triplane.hpp"

namespace fs = std::filesystem;
using namespace motra;

namespace {

// Paths inside a config file are relative to the config file itself.
fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) throw DataError("missing input path in configuration");
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

struct ConfigOverrides {
  std::optional<std::string> out_dir;
  std::optional<int> resolution, substeps, iters, phases, share_resolution;
  std::optional<double> young, poisson, lr, tv_weight, loss_tol, alpha,
      outlier_k;
  std::optional<int> seed;
  std::optional<bool> deterministic;

  void apply(RunConfig& rc) const {
    if (out_dir) rc.out_dir = *out_dir;
    if (resolution) rc.resolution = *resolution;
    if (substeps) rc.substeps = *substeps;
    if (iters) rc.iters = *iters;
    if (phases) rc.phases = *phases;
    if (share_resolution) rc.share_resolution = *share_resolution;
    if (young) rc.young = *young;
    if (poisson) rc.poisson = *poisson;
    if (lr) rc.lr = *lr;
    if (tv_weight) rc.tv_weight = *tv_weight;
    if (loss_tol) rc.loss_tol = *loss_tol;
    if (alpha) rc.alpha = *alpha;
    if (outlier_k) rc.outlier_k = *outlier_k;
    if (seed) rc.seed = static_cast<std::uint64_t>(*seed);
    if (deterministic) rc.deterministic = *deterministic;
  }
};

void add_override_flags(CLI::App* cmd, ConfigOverrides& ov) {
  cmd->add_option("--out-dir", ov.out_dir, "Output directory");
  cmd->add_option("--resolution", ov.resolution, "Grid resolution");
  cmd->add_option("--substeps", ov.substeps, "Substeps per frame");
  cmd->add_option("--young", ov.young, "Young's modulus");
  cmd->add_option("--poisson", ov.poisson, "Poisson's ratio");
  cmd->add_option("--iters", ov.iters, "Optimization iterations per phase");
  cmd->add_option("--lr", ov.lr, "Learning rate");
  cmd->add_option("--tv-weight", ov.tv_weight, "Smoothness penalty weight");
  cmd->add_option("--loss-tol", ov.loss_tol, "Early-stop loss threshold");
  cmd->add_option("--phases", ov.phases, "Phase count (-1: all frame pairs)");
  cmd->add_option("--share-resolution", ov.share_resolution,
                  "Velocity sharing lattice resolution");
  cmd->add_option("--alpha", ov.alpha, "Seed velocity scale");
  cmd->add_option("--outlier-k", ov.outlier_k,
                  "Outlier cutoff in standard deviations");
  cmd->add_option("--seed", ov.seed, "Random seed");
  cmd->add_option("--deterministic", ov.deterministic,
                  "Deterministic execution (1/0)");
}

struct LoadedConfig {
  RunConfig rc;
  fs::path base;  // directory input paths resolve against
};

LoadedConfig load_config(const std::string& config_path,
                         const ConfigOverrides& ov) {
  LoadedConfig lc;
  if (!config_path.empty()) {
    lc.rc = parse_run_config(config_path);
    lc.base = fs::path(config_path).parent_path();
  }
  ov.apply(lc.rc);
  return lc;
}

// Part labels for the target particles: match descriptor sets when provided,
// otherwise take labels stored in the cloud.
std::vector<int> label_particles(const LoadedConfig& lc, const PointCloud& pc,
                                 const ParticleState& particles,
                                 int* out_parts, double* out_s_target,
                                 double* out_s_reference) {
  const RunConfig& rc = lc.rc;
  if (!rc.target_features.empty() && !rc.ref_features.empty() &&
      !rc.ref_labels.empty()) {
    const FeatureSet target_fs =
        read_feature_set(resolve(lc.base, rc.target_features));
    const FeatureSet ref_fs =
        read_feature_set(resolve(lc.base, rc.ref_features));
    const std::vector<int> ref_labels =
        read_labels_file(resolve(lc.base, rc.ref_labels));
    const MatX ref_means =
        mean_part_features(concat_features(ref_fs), ref_labels);
    const std::vector<int> vertex_labels =
        match_parts(concat_features(target_fs), ref_means);
    const PartAssignment assignment =
        remove_outliers(target_fs.vertices, vertex_labels, rc.outlier_k);
    Mat3X positions(particles.size(), 3);
    for (size_t p = 0; p < particles.size(); ++p)
      positions.row(static_cast<Eigen::Index>(p)) = particles.x[p];
    if (out_parts) *out_parts = static_cast<int>(assignment.part_boxes.size());
    if (out_s_target) *out_s_target = coverage_ratio(target_fs.vertices);
    if (out_s_reference) *out_s_reference = coverage_ratio(ref_fs.vertices);
    return assign_particles(positions, assignment);
  }
  if (pc.has_labels) {
    if (out_parts) *out_parts = part_count(pc.labels);
    if (out_s_target) *out_s_target = 1.0;
    if (out_s_reference) *out_s_reference = 1.0;
    return pc.labels;
  }
  throw DataError(
      "need target_features + ref_features + ref_labels, or a labeled "
      "target cloud");
}

TransferScene build_scene(const LoadedConfig& lc) {
  const RunConfig& rc = lc.rc;
  const PointCloud pc = parse_point_cloud(resolve(lc.base, rc.target_cloud));
  TransferScene scene;
  scene.particles = to_particle_state(pc);
  scene.reference = parse_bone_sequence(resolve(lc.base, rc.bones));

  int parts = 0;
  double s_target = 1.0, s_reference = 1.0;
  scene.labels = label_particles(lc, pc, scene.particles, &parts, &s_target,
                                 &s_reference);
  scene.s_target = s_target;
  scene.s_reference = s_reference;
  if (parts != static_cast<int>(scene.reference.bone_count()))
    log_warn("part count " + std::to_string(parts) + " differs from bone count " +
             std::to_string(scene.reference.bone_count()));

  scene.sim = make_sim_config(rc, scene.reference.frame_dt);
  size_t assigned = 0;
  for (int l : scene.labels) assigned += l != kUnassigned;
  log_info("scene: " + std::to_string(scene.particles.size()) + " particles, " +
           std::to_string(assigned) + " assigned, scale ratio " +
           fmt_double(scene.scale_ratio()));
  return scene;
}

TrainOptions train_options(const RunConfig& rc) {
  TrainOptions opt;
  opt.iters = rc.iters;
  opt.lr = rc.lr;
  opt.tv_weight = rc.tv_weight;
  opt.loss_tol = rc.loss_tol;
  opt.plane_res = rc.plane_res;
  opt.channels = rc.channels;
  opt.hidden = rc.hidden;
  opt.seed = rc.seed;
  return opt;
}

int run_synth(const std::string& kind_name, const SynthParams& params,
              const std::string& out_dir_flag) {
  const SceneKind kind = scene_kind_from_string(kind_name);
  const fs::path dir = out_dir_flag.empty() ? fs::path(".") : fs::path(out_dir_flag);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory: " + dir.string());

  const SynthScene scene = synth_scene(kind, params);
  write_point_cloud(dir / "target.cloud", make_point_cloud(scene.particles));
  write_labels_file(dir / "true_labels.bin", scene.true_labels);
  write_feature_set(dir / "target_features.bin", scene.target_features);
  write_feature_set(dir / "ref_features.bin", scene.ref_features);
  write_labels_file(dir / "ref_labels.bin", scene.ref_labels);
  write_bone_sequence(dir / "bones.txt", scene.bones);

  RunConfig rc;
  rc.target_cloud = "target.cloud";
  rc.target_features = "target_features.bin";
  rc.ref_features = "ref_features.bin";
  rc.ref_labels = "ref_labels.bin";
  rc.bones = "bones.txt";
  rc.out_dir = "out";
  rc.resolution = 32;
  if (kind == SceneKind::Box) {
    rc.gravity = Vec3(0.0, -9.8, 0.0);
    const double h = 0.5 * params.side * params.scale;
    rc.domain = Aabb{Vec3(-6.0 * h, -6.0 * h, -6.0 * h),
                     Vec3(6.0 * h, 6.0 * h, 6.0 * h)};
  } else {
    // Articulated kinds swing about internal joints: a domain sized from the
    // rest bounding box must also contain the swept motion.
    const Aabb bbox = bounding_box(scene.particles.x);
    const Vec3 c = bbox.center();
    const double h = 2.5 * 0.5 * bbox.extent().maxCoeff();
    rc.domain = Aabb{c - Vec3::Constant(h), c + Vec3::Constant(h)};
  }
  write_run_config(dir / "transfer.cfg", rc);
  std::cout << "wrote scene '" << kind_name << "' with "
            << scene.particles.size() << " particles to " << dir.string()
            << "\n";
  return 0;
}

int run_simulate(const LoadedConfig& lc, int frames, double frame_dt) {
  const RunConfig& rc = lc.rc;
  const PointCloud pc = parse_point_cloud(resolve(lc.base, rc.target_cloud));
  ParticleState state = to_particle_state(pc);
  const SimConfig sim = make_sim_config(rc, frame_dt);
  std::vector<ParticleState> out;
  out.push_back(state);
  SimGrid grid = make_grid(state, sim);
  std::vector<Mat3> tau;
  for (int f = 0; f < frames; ++f) {
    for (int s = 0; s < sim.substeps_per_frame; ++s)
      step(state, sim, grid, tau);
    out.push_back(state);
  }
  export_frames(out, pc.has_labels ? pc.labels : std::vector<int>{},
                fs::path(rc.out_dir), frame_dt);
  std::cout << "simulated " << frames << " frames to " << rc.out_dir << "\n";
  return 0;
}

int run_match(const LoadedConfig& lc) {
  const RunConfig& rc = lc.rc;
  const PointCloud pc = parse_point_cloud(resolve(lc.base, rc.target_cloud));
  const ParticleState particles = to_particle_state(pc);
  int parts = 0;
  double s_target = 1.0, s_reference = 1.0;
  const std::vector<int> labels =
      label_particles(lc, pc, particles, &parts, &s_target, &s_reference);

  std::error_code ec;
  fs::create_directories(rc.out_dir, ec);
  if (ec) throw DataError("cannot create directory: " + rc.out_dir);
  write_labels_file(fs::path(rc.out_dir) / "labels.bin", labels);
  write_point_cloud(fs::path(rc.out_dir) / "labeled.cloud",
                    make_point_cloud(particles, labels));
  size_t assigned = 0;
  for (int l : labels) assigned += l != kUnassigned;
  std::cout << "matched " << assigned << "/" << labels.size()
            << " particles to " << parts << " parts (scale ratio "
            << fmt_double(s_target / s_reference) << ")\n";
  return 0;
}

int run_transfer_cmd(const LoadedConfig& lc) {
  const RunConfig& rc = lc.rc;
  TransferScene scene = build_scene(lc);
  const TransferResult result =
      run_transfer(scene, train_options(rc), rc.phases);

  const fs::path out_dir(rc.out_dir);
  export_frames(result.frames, scene.labels, out_dir / "frames",
                scene.reference.frame_dt);
  for (const PhaseResult& pr : result.phases)
    for (size_t b = 0; b < pr.fields.size(); ++b)
      save_field(out_dir / ("field_t" + std::to_string(pr.phase) + "_b" +
                            std::to_string(b) + ".bin"),
                 pr.fields[b]);

  for (const PhaseResult& pr : result.phases)
    std::cout << "phase " << pr.phase << ": best loss " << pr.best_loss
              << " at iteration " << pr.best_iter << "\n";
  std::cout << "wrote " << result.frames.size() << " frames to "
            << (out_dir / "frames").string() << "\n";
  return 0;
}

int run_gradcheck(int particles, int substeps, int probes, double young,
                  double poisson, int seed, double tol) {
  Rng rng(static_cast<std::uint64_t>(seed));
  ParticleState state;
  state.resize(static_cast<size_t>(particles));
  for (int p = 0; p < particles; ++p) {
    state.x[p] = rng.uniform_vec3(0.35, 0.65);
    state.v[p] = 0.2 * rng.normal_vec3();
    state.mass[p] = 1.0;
    state.volume[p] = 1e-4;
  }
  SimConfig config;
  config.dt = 1e-3;
  config.substeps_per_frame = substeps;
  config.material = MaterialParams::make(young, poisson);
  config.boundary = open_boundary();
  config.gravity = Vec3(0.0, -9.8, 0.0);
  config.grid.domain = Aabb{Vec3(-0.5, -0.5, -0.5), Vec3(1.5, 1.5, 1.5)};

  const GradCheckReport report = gradient_check(state, config, probes,
                                                static_cast<std::uint64_t>(seed));
  std::cout << "probes " << report.probes << "\n"
            << "max relative error " << fmt_double(report.max_rel_error)
            << "\n"
            << "mean relative error " << fmt_double(report.mean_rel_error)
            << "\n"
            << "max absolute error " << fmt_double(report.max_abs_error)
            << "\n";
  if (tol > 0.0 && report.max_rel_error > tol) {
    std::cerr << "gradient check failed tolerance " << fmt_double(tol) << "\n";
    return 4;
  }
  return 0;
}

int run_ablate(const LoadedConfig& lc, int phase) {
  const RunConfig& rc = lc.rc;
  TransferScene scene = build_scene(lc);
  const PhaseResult eval = ablation_manual_velocity(scene, phase, rc.alpha);
  std::cout << "alpha " << fmt_double(rc.alpha) << " phase " << phase
            << " loss " << fmt_double(eval.best_loss) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  if (std::getenv("MOTRA_LOG") == nullptr) set_log_level(LogLevel::Info);

  CLI::App app{"Physics-integrated motion transfer for particle bodies"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic scene");
  std::string kind = "box";
  std::string synth_out = "scene";
  SynthParams sp;
  int synth_seed = 1;
  synth->add_option("--kind", kind, "box | two-box-hinge | biped-stick");
  synth->add_option("--out-dir", synth_out, "Output directory");
  synth->add_option("--n", sp.n_per_axis, "Particles per axis");
  synth->add_option("--side", sp.side, "Box edge length");
  synth->add_option("--scale", sp.scale, "Target scale relative to reference");
  synth->add_option("--frames", sp.frames, "Reference frame count");
  synth->add_option("--frame-dt", sp.frame_dt, "Reference frame spacing");
  synth->add_option("--opening-degrees", sp.opening_degrees,
                    "Hinge opening angle");
  synth->add_option("--noise", sp.noise, "Descriptor noise level");
  synth->add_option("--seed", synth_seed, "Random seed");

  // simulate
  auto* sim_cmd = app.add_subcommand("simulate", "Forward-simulate a cloud");
  std::string sim_config;
  ConfigOverrides sim_ov;
  int sim_frames = 4;
  double sim_frame_dt = 0.1;
  sim_cmd->add_option("--config", sim_config, "Run configuration file");
  sim_cmd->add_option("--frames", sim_frames, "Frames to simulate");
  sim_cmd->add_option("--frame-dt", sim_frame_dt, "Frame spacing");
  add_override_flags(sim_cmd, sim_ov);

  // match
  auto* match_cmd =
      app.add_subcommand("match", "Label target particles by part");
  std::string match_config;
  ConfigOverrides match_ov;
  match_cmd->add_option("--config", match_config, "Run configuration file")
      ->required();
  add_override_flags(match_cmd, match_ov);

  // transfer
  auto* transfer_cmd =
      app.add_subcommand("transfer", "Optimize and run motion transfer");
  std::string transfer_config;
  ConfigOverrides transfer_ov;
  transfer_cmd->add_option("--config", transfer_config,
                           "Run configuration file")
      ->required();
  add_override_flags(transfer_cmd, transfer_ov);

  // gradcheck
  auto* grad_cmd = app.add_subcommand(
      "gradcheck", "Compare simulator gradients against finite differences");
  int gc_particles = 64, gc_substeps = 10, gc_probes = 8, gc_seed = 7;
  double gc_young = 1e3, gc_poisson = 0.3, gc_tol = 0.0;
  grad_cmd->add_option("--particles", gc_particles, "Particle count");
  grad_cmd->add_option("--substeps", gc_substeps, "Substeps");
  grad_cmd->add_option("--probes", gc_probes, "Probes");
  grad_cmd->add_option("--young", gc_young, "Young's modulus");
  grad_cmd->add_option("--poisson", gc_poisson, "Poisson's ratio");
  grad_cmd->add_option("--seed", gc_seed, "Random seed");
  grad_cmd->add_option("--tol", gc_tol,
                       "Fail (exit 4) when max relative error exceeds this");

  // ablate
  auto* ablate_cmd = app.add_subcommand(
      "ablate", "Roll out scaled seed velocities without learned fields");
  std::string ablate_config;
  ConfigOverrides ablate_ov;
  int ablate_phase = 0;
  ablate_cmd->add_option("--config", ablate_config, "Run configuration file")
      ->required();
  ablate_cmd->add_option("--phase", ablate_phase, "Frame pair index");
  add_override_flags(ablate_cmd, ablate_ov);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) {
      sp.seed = static_cast<std::uint64_t>(synth_seed);
      return run_synth(kind, sp, synth_out);
    }
    if (sim_cmd->parsed())
      return run_simulate(load_config(sim_config, sim_ov), sim_frames,
                          sim_frame_dt);
    if (match_cmd->parsed()) return run_match(load_config(match_config, match_ov));
    if (transfer_cmd->parsed())
      return run_transfer_cmd(load_config(transfer_config, transfer_ov));
    if (grad_cmd->parsed())
      return run_gradcheck(gc_particles, gc_substeps, gc_probes, gc_young,
                           gc_poisson, gc_seed, gc_tol);
    if (ablate_cmd->parsed())
      return run_ablate(load_config(ablate_config, ablate_ov), ablate_phase);
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
