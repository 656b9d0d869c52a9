#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <map>
#include <vector>

#include "motra/log.hpp"
#include "motra/math.hpp"
#include "motra/mpm.hpp"

using namespace motra;

namespace {

// Cluster of particles with uniform velocity, F = I, C = 0.
ParticleState make_cluster(int n, Rng& rng, const Vec3& lo, const Vec3& hi,
                           const Vec3& v0, double mass = 1.0,
                           double volume = 1e-4) {
  ParticleState s;
  s.resize(n);
  for (int p = 0; p < n; ++p) {
    s.x[p] = rng.uniform_vec3(0, 1).cwiseProduct(hi - lo) + lo;
    s.v[p] = v0;
    s.mass[p] = mass;
    s.volume[p] = volume;
  }
  return s;
}

SimConfig open_config(const Aabb& domain, int resolution = 64) {
  SimConfig config;
  config.grid.domain = domain;
  config.grid.resolution = resolution;
  config.boundary = open_boundary();
  config.gravity = Vec3::Zero();
  return config;
}

Aabb box(const Vec3& lo, const Vec3& hi) {
  Aabb b;
  b.extend(lo);
  b.extend(hi);
  return b;
}

}  // namespace

TEST_CASE("Lame parameters collapse at zero Poisson ratio", "[mpm]") {
  for (double young : {1.0, 1000.0, 2.5e6}) {
    const auto [mu, lambda] = lame_parameters(young, 0.0);
    CHECK(mu == Catch::Approx(0.5 * young).epsilon(1e-15));
    CHECK(lambda == 0.0);
  }
}

TEST_CASE("Lame parameters match direct evaluation", "[mpm]") {
  const auto [mu, lambda] = lame_parameters(1000.0, 0.3);
  CHECK(mu == Catch::Approx(384.6153846153846).epsilon(1e-9));
  CHECK(lambda == Catch::Approx(576.9230769230769).epsilon(1e-9));
}

TEST_CASE("Lame parameters reject the incompressible limit", "[mpm]") {
  CHECK_THROWS_AS(lame_parameters(1000.0, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(lame_parameters(1000.0, 0.6), std::invalid_argument);
  CHECK_THROWS_AS(lame_parameters(1000.0, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(lame_parameters(0.0, 0.3), std::invalid_argument);
}

TEST_CASE("stress vanishes at the rest configuration", "[mpm]") {
  const MaterialParams mat = MaterialParams::make(1000.0, 0.3);
  CHECK(kirchhoff_stress(Mat3::Identity(), mat).norm() == 0.0);
}

TEST_CASE("stress vanishes for pure rotations", "[mpm]") {
  const MaterialParams mat = MaterialParams::make(1000.0, 0.3);
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const Mat3 r = rng.random_rotation().toRotationMatrix();
    CHECK(kirchhoff_stress(r, mat).norm() <= 1e-9);
  }
}

TEST_CASE("stress of a diagonal stretch matches the closed form", "[mpm]") {
  const MaterialParams mat = MaterialParams::make(1000.0, 0.3);
  Mat3 f = Mat3::Identity();
  f(0, 0) = 1.1;
  // Diagonal positive F has R = I: tau = 2 mu (F - I) F^T + lambda (J-1) J I.
  const Mat3 expected = 2.0 * mat.mu * (f - Mat3::Identity()) * f.transpose() +
                        mat.lambda * 0.1 * 1.1 * Mat3::Identity();
  CHECK((kirchhoff_stress(f, mat) - expected).norm() <= 1e-12 * expected.norm());
  CHECK(expected(0, 0) ==
        Catch::Approx(2.0 * mat.mu * 0.11 + mat.lambda * 0.11).epsilon(1e-12));
  CHECK(expected(1, 1) == Catch::Approx(mat.lambda * 0.11).epsilon(1e-12));
}

TEST_CASE("stress rejects degenerate deformation gradients", "[mpm]") {
  const MaterialParams mat = MaterialParams::make(1000.0, 0.3);
  Mat3 f = Mat3::Identity();
  f(0, 0) = 0.0;
  CHECK_THROWS_AS(kirchhoff_stress(f, mat), std::invalid_argument);
  f(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(kirchhoff_stress(f, mat), std::invalid_argument);
}

TEST_CASE("kernel weights partition unity", "[mpm]") {
  Rng rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    const Stencil st = make_stencil(rng.uniform_vec3(-10, 10),
                                    Vec3(-20, -20, -20), 1.0 / 0.37);
    for (int a = 0; a < 3; ++a) {
      CHECK(std::abs(st.w[a][0] + st.w[a][1] + st.w[a][2] - 1.0) <= 1e-12);
      CHECK(std::abs(st.dw[a][0] + st.dw[a][1] + st.dw[a][2]) <= 1e-12 / 0.37);
    }
  }
}

TEST_CASE("single-particle transfer conserves mass and momentum", "[mpm]") {
  ParticleState s;
  s.resize(1);
  s.x[0] = Vec3(0.51, 0.47, 0.52);
  s.v[0] = Vec3(1, 0, 0);
  s.mass[0] = 1.0;
  s.volume[0] = 1e-4;
  SimConfig config = open_config(box(Vec3::Zero(), Vec3::Ones()), 16);
  SimGrid grid = make_grid(s, config);
  const std::vector<Mat3> tau(1, Mat3::Zero());
  p2g(s, tau, config, grid);

  double total_mass = 0.0;
  Vec3 total_momentum = Vec3::Zero();
  for (int n = 0; n < grid.node_count(); ++n) {
    total_mass += grid.mass[n];
    total_momentum += grid.momentum[n];
  }
  CHECK(std::abs(total_mass - 1.0) <= 1e-12);
  CHECK((total_momentum - Vec3(1, 0, 0)).norm() <= 1e-10);
}

TEST_CASE("random-scene transfer conserves mass and momentum", "[mpm]") {
  Rng rng(7);
  ParticleState s;
  s.resize(1000);
  for (int p = 0; p < 1000; ++p) {
    s.x[p] = rng.uniform_vec3(0.2, 0.8);
    s.v[p] = Vec3(1.0, 0.5, -0.3) + 0.3 * rng.normal_vec3();
    s.mass[p] = rng.uniform(0.5, 2.0);
    s.volume[p] = 1e-4;
    s.C[p] = Mat3::NullaryExpr([&](Eigen::Index, Eigen::Index) {
      return rng.uniform(-2.0, 2.0);
    });
    s.F[p] = Mat3::Identity() + 0.05 * Mat3::NullaryExpr(
                                           [&](Eigen::Index, Eigen::Index) {
                                             return rng.uniform(-1.0, 1.0);
                                           });
  }
  SimConfig config = open_config(box(Vec3::Zero(), Vec3::Ones()), 32);
  SimGrid grid = make_grid(s, config);
  std::vector<Mat3> tau;
  compute_stresses(s, config.material, tau);
  p2g(s, tau, config, grid);

  double total_mass = 0.0, ref_mass = 0.0;
  Vec3 total_momentum = Vec3::Zero(), ref_momentum = Vec3::Zero();
  for (int n = 0; n < grid.node_count(); ++n) {
    total_mass += grid.mass[n];
    total_momentum += grid.momentum[n];
  }
  for (int p = 0; p < 1000; ++p) {
    ref_mass += s.mass[p];
    ref_momentum += s.mass[p] * s.v[p];
  }
  CHECK(std::abs(total_mass - ref_mass) <= 1e-12 * ref_mass);
  CHECK((total_momentum - ref_momentum).norm() <= 1e-10 * ref_momentum.norm());
}

TEST_CASE("node-centered particle reproduces the kernel pattern", "[mpm]") {
  ParticleState s;
  s.resize(1);
  s.x[0] = Vec3(0.5, 0.5, 0.5);  // node (8,8,8) of a 16-cell unit domain
  s.v[0] = Vec3::Zero();
  s.mass[0] = 1.0;
  s.volume[0] = 1e-4;
  SimConfig config = open_config(box(Vec3::Zero(), Vec3::Ones()), 16);
  SimGrid grid = make_grid(s, config);
  const std::vector<Mat3> tau(1, Mat3::Zero());
  p2g(s, tau, config, grid);

  const double w[3] = {0.125, 0.75, 0.125};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k)
        CHECK(grid.mass[grid.index(7 + i, 7 + j, 7 + k)] ==
              Catch::Approx(w[i] * w[j] * w[k]).margin(1e-15));
}

TEST_CASE("particles outside the padded domain are reported by index",
          "[mpm]") {
  ParticleState s;
  s.resize(2);
  s.x[0] = Vec3(0.5, 0.5, 0.5);
  s.x[1] = Vec3(2.0, 0.5, 0.5);  // outside the unit domain
  s.mass.assign(2, 1.0);
  s.volume.assign(2, 1e-4);
  SimConfig config = open_config(box(Vec3::Zero(), Vec3::Ones()), 16);
  SimGrid grid = make_grid(box(Vec3::Zero(), Vec3::Ones()), config.grid);
  const std::vector<Mat3> tau(2, Mat3::Zero());
  CHECK_THROWS_WITH(p2g(s, tau, config, grid),
                    Catch::Matchers::ContainsSubstring("particle 1"));
}

TEST_CASE("grid update divides momentum by mass exactly", "[mpm]") {
  SimConfig config = open_config(box(Vec3::Zero(), Vec3::Ones()), 8);
  SimGrid grid = make_grid(box(Vec3::Zero(), Vec3::Ones()), config.grid);
  const int node = grid.index(4, 4, 4);
  grid.mass[node] = 0.7;
  grid.momentum[node] = Vec3(0.3, -0.2, 0.11);
  grid_update(grid, config);
  const Vec3 expected = Vec3(0.3, -0.2, 0.11) / 0.7;
  CHECK(grid.velocity[node].x() == expected.x());
  CHECK(grid.velocity[node].y() == expected.y());
  CHECK(grid.velocity[node].z() == expected.z());
  // Empty nodes stay at zero velocity.
  CHECK(grid.velocity[grid.index(2, 2, 2)].norm() == 0.0);
}

TEST_CASE("gravity adds dt-scaled velocity to occupied nodes", "[mpm]") {
  SimConfig config = open_config(box(Vec3::Zero(), Vec3::Ones()), 8);
  config.gravity = Vec3(0, -9.8, 0);
  config.dt = 1e-3;
  SimGrid grid = make_grid(box(Vec3::Zero(), Vec3::Ones()), config.grid);
  const int node = grid.index(4, 4, 4);
  grid.mass[node] = 1.0;
  grid.momentum[node] = Vec3(1.0, 2.0, 3.0);
  grid_update(grid, config);
  CHECK((grid.velocity[node] - (Vec3(1.0, 2.0, 3.0) + 1e-3 * config.gravity))
            .norm() <= 1e-15);
}

TEST_CASE("sticky margin zeroes node velocities", "[mpm]") {
  SimConfig config = open_config(box(Vec3::Zero(), Vec3::Ones()), 10);
  config.boundary = sticky_floor_boundary();
  SimGrid grid = make_grid(box(Vec3::Zero(), Vec3::Ones()), config.grid);
  const int low = grid.index(5, 2, 5);   // inside the 3-cell y- margin
  const int high = grid.index(5, 5, 5);  // interior
  grid.mass[low] = grid.mass[high] = 1.0;
  grid.momentum[low] = grid.momentum[high] = Vec3(1, 1, 1);
  grid_update(grid, config);
  CHECK(grid.velocity[low].norm() == 0.0);
  CHECK((grid.velocity[high] - Vec3(1, 1, 1)).norm() <= 1e-15);
}

TEST_CASE("slip faces zero only the normal component", "[mpm]") {
  SimConfig config = open_config(box(Vec3::Zero(), Vec3::Ones()), 10);
  config.boundary.fill(BoundaryKind::Slip);
  SimGrid grid = make_grid(box(Vec3::Zero(), Vec3::Ones()), config.grid);
  const int low = grid.index(5, 2, 5);
  grid.mass[low] = 1.0;
  grid.momentum[low] = Vec3(1, 1, 1);
  grid_update(grid, config);
  CHECK((grid.velocity[low] - Vec3(1, 0, 1)).norm() <= 1e-15);
}

TEST_CASE("uniform grid velocity is reproduced with zero affine state",
          "[mpm]") {
  Rng rng(9);
  SimConfig config = open_config(box(Vec3::Zero(), Vec3::Ones()), 16);
  ParticleState s = make_cluster(50, rng, Vec3(0.3, 0.3, 0.3),
                                 Vec3(0.7, 0.7, 0.7), Vec3::Zero());
  const std::vector<Vec3> x0 = s.x;
  SimGrid grid = make_grid(box(Vec3::Zero(), Vec3::Ones()), config.grid);
  grid.clear();
  const Vec3 w(0.4, -0.2, 0.7);
  for (auto& v : grid.velocity) v = w;
  g2p_advect(s, grid, config);
  for (int p = 0; p < 50; ++p) {
    CHECK((s.v[p] - w).norm() <= 1e-12);
    CHECK(s.C[p].norm() <= 1e-9);
    CHECK((s.x[p] - (x0[p] + config.dt * s.v[p])).norm() <= 1e-15);
  }
}

TEST_CASE("zero grid velocities leave particles in place", "[mpm]") {
  Rng rng(10);
  SimConfig config = open_config(box(Vec3::Zero(), Vec3::Ones()), 16);
  ParticleState s = make_cluster(20, rng, Vec3(0.3, 0.3, 0.3),
                                 Vec3(0.7, 0.7, 0.7), Vec3(1, 2, 3));
  const ParticleState before = s;
  SimGrid grid = make_grid(box(Vec3::Zero(), Vec3::Ones()), config.grid);
  grid.clear();
  g2p_advect(s, grid, config);
  for (int p = 0; p < 20; ++p) {
    CHECK(s.v[p].norm() == 0.0);
    CHECK((s.x[p] - before.x[p]).norm() == 0.0);
    CHECK((s.F[p] - before.F[p]).norm() == 0.0);
  }
}

TEST_CASE("linear grid velocity reproduces its own gradient", "[mpm]") {
  Rng rng(11);
  SimConfig config = open_config(box(Vec3::Zero(), Vec3::Ones()), 16);
  ParticleState s = make_cluster(30, rng, Vec3(0.35, 0.35, 0.35),
                                 Vec3(0.65, 0.65, 0.65), Vec3::Zero());
  SimGrid grid = make_grid(box(Vec3::Zero(), Vec3::Ones()), config.grid);
  grid.clear();
  Mat3 a;
  a << 0.3, -0.1, 0.2, 0.0, 0.5, -0.4, 0.1, 0.2, -0.3;
  for (int i = 0; i < grid.nodes.x(); ++i)
    for (int j = 0; j < grid.nodes.y(); ++j)
      for (int k = 0; k < grid.nodes.z(); ++k)
        grid.velocity[grid.index(i, j, k)] = a * grid.node_position(i, j, k);
  const std::vector<Vec3> x0 = s.x;
  g2p_advect(s, grid, config);
  for (int p = 0; p < 30; ++p) {
    CHECK((s.v[p] - a * x0[p]).norm() <= 1e-12);
    CHECK((s.C[p] - a).norm() <= 1e-9);
  }
}

TEST_CASE("free fall matches the closed-form trajectory", "[mpm]") {
  Rng rng(12);
  SimConfig config = open_config(box(Vec3(-2, -2, -2), Vec3(2, 2, 2)), 64);
  config.gravity = Vec3(0, -9.8, 0);
  config.dt = 1e-3;
  const Vec3 v0(0.3, 0.5, -0.2);
  ParticleState s = make_cluster(100, rng, Vec3(-0.2, -0.2, -0.2),
                                 Vec3(0.2, 0.2, 0.2), v0);
  const std::vector<Vec3> x0 = s.x;
  const int n = 100;
  simulate(s, config, n);
  const Vec3 offset = n * config.dt * v0 +
                      config.gravity * config.dt * config.dt * 0.5 * n * (n + 1);
  for (int p = 0; p < 100; ++p) {
    CHECK((s.x[p] - (x0[p] + offset)).norm() <= 1e-6 * offset.norm());
    CHECK((s.v[p] - (v0 + n * config.dt * config.gravity)).norm() <=
          1e-6 * v0.norm());
  }
}

TEST_CASE("resting stress-free state is a fixed point", "[mpm]") {
  Rng rng(13);
  SimConfig config = open_config(box(Vec3::Zero(), Vec3::Ones()), 16);
  ParticleState s = make_cluster(20, rng, Vec3(0.3, 0.3, 0.3),
                                 Vec3(0.7, 0.7, 0.7), Vec3::Zero());
  const ParticleState before = s;
  simulate(s, config, 10);
  for (int p = 0; p < 20; ++p) {
    CHECK((s.x[p] - before.x[p]).norm() == 0.0);
    CHECK(s.v[p].norm() == 0.0);
    CHECK((s.F[p] - before.F[p]).norm() == 0.0);
    CHECK(s.C[p].norm() == 0.0);
  }
}

TEST_CASE("a rigid translating cluster keeps its centroid velocity", "[mpm]") {
  Rng rng(14);
  SimConfig config = open_config(box(Vec3(-2, -2, -2), Vec3(2, 2, 2)), 64);
  const Vec3 v0(0.4, 0.0, 0.2);
  ParticleState s = make_cluster(200, rng, Vec3(-0.3, -0.3, -0.3),
                                 Vec3(0.3, 0.3, 0.3), v0);
  simulate(s, config, 50);
  Vec3 centroid_v = Vec3::Zero();
  for (int p = 0; p < 200; ++p) centroid_v += s.v[p];
  centroid_v /= 200.0;
  CHECK((centroid_v - v0).norm() <= 1e-8);
}

TEST_CASE("simulation is bitwise deterministic", "[mpm]") {
  Rng rng(15);
  SimConfig config;
  config.grid.domain = box(Vec3(-2, -2, -2), Vec3(2, 2, 2));
  config.grid.resolution = 48;
  config.dt = 5e-4;
  ParticleState a = make_cluster(300, rng, Vec3(-0.4, 0.0, -0.4),
                                 Vec3(0.4, 0.8, 0.4), Vec3(0.1, -0.5, 0.2));
  for (int p = 0; p < 300; ++p) a.v[p] += 0.2 * rng.normal_vec3();
  ParticleState b = a;
  simulate(a, config, 40);
  simulate(b, config, 40);
  for (int p = 0; p < 300; ++p) {
    CHECK(a.x[p] == b.x[p]);
    CHECK(a.v[p] == b.v[p]);
    CHECK(a.F[p] == b.F[p]);
    CHECK(a.C[p] == b.C[p]);
  }
}

TEST_CASE("a CFL violation is reported as a warning", "[mpm]") {
  std::FILE* capture = std::tmpfile();
  REQUIRE(capture != nullptr);
  set_log_stream(capture);
  SimConfig config = open_config(box(Vec3(-2, -2, -2), Vec3(2, 2, 2)), 16);
  config.dt = 1e-2;
  ParticleState s;
  s.resize(1);
  s.x[0] = Vec3::Zero();
  s.v[0] = Vec3(100.0, 0, 0);  // 1 m per step vs 0.25 m cells
  s.mass[0] = 1.0;
  s.volume[0] = 1e-4;
  SimGrid grid = make_grid(box(Vec3(-2, -2, -2), Vec3(2, 2, 2)), config.grid);
  step(s, config, grid);
  set_log_stream(stderr);
  std::rewind(capture);
  char buf[4096] = {0};
  const size_t got = std::fread(buf, 1, sizeof(buf) - 1, capture);
  std::fclose(capture);
  CHECK(std::string(buf, got).find("CFL") != std::string::npos);
}

TEST_CASE("invalid particle states are rejected", "[mpm]") {
  ParticleState s;
  s.resize(1);
  s.x[0] = Vec3(0.5, 0.5, 0.5);
  s.volume[0] = 1e-4;
  s.mass[0] = 0.0;
  CHECK_THROWS_AS(s.validate(), DataError);
  s.mass[0] = 1.0;
  s.F[0] = -Mat3::Identity();
  CHECK_THROWS_AS(s.validate(), DataError);
  s.F[0] = Mat3::Identity();
  s.v.pop_back();
  CHECK_THROWS_AS(s.validate(), DataError);
}

TEST_CASE("invalid sim configs are rejected", "[mpm]") {
  SimConfig config;
  config.dt = 0.0;
  CHECK_THROWS_AS(config.validate(), std::invalid_argument);
  config.dt = 1e-3;
  config.substeps_per_frame = 0;
  CHECK_THROWS_AS(config.validate(), std::invalid_argument);
}

TEST_CASE("identical positions collapse to one control point", "[mpm]") {
  const std::vector<Vec3> positions(7, Vec3(0.3, 0.4, 0.5));
  const ControlPoints cp = control_points(positions, 8);
  REQUIRE(cp.points.rows() == 1);
  CHECK((cp.points.row(0).transpose() - Vec3(0.3, 0.4, 0.5)).norm() <= 1e-15);
  for (int a : cp.assignment) CHECK(a == 0);
}

TEST_CASE("isolated particles are their own control points", "[mpm]") {
  std::vector<Vec3> positions;
  for (int k = 0; k < 4; ++k)
    positions.push_back(Vec3(0.125, 0.125, 0.125) + k * Vec3(0.25, 0.25, 0.25));
  const ControlPoints cp = control_points(positions, 4);
  REQUIRE(cp.points.rows() == 4);
  for (int k = 0; k < 4; ++k) {
    CHECK((cp.points.row(k).transpose() - positions[k]).norm() <= 1e-15);
    CHECK(cp.assignment[k] == k);
  }
}

TEST_CASE("control points equal brute-force cell means", "[mpm]") {
  Rng rng(17);
  const int n = 100000, res = 41;
  std::vector<Vec3> positions(n);
  for (auto& p : positions) p = rng.uniform_vec3(-1.0, 2.0);

  const ControlPoints cp = control_points(positions, res);

  // Brute-force oracle over the same lattice definition.
  const Aabb bbox = bounding_box(positions);
  const Vec3 ext = bbox.extent();
  struct CellAcc {
    Vec3 sum = Vec3::Zero();
    int count = 0;
  };
  std::map<int, CellAcc> cells;
  std::vector<int> cell_of(n);
  for (int p = 0; p < n; ++p) {
    int c[3];
    for (int a = 0; a < 3; ++a) {
      const double u = (positions[p][a] - bbox.lo[a]) / ext[a];
      c[a] = std::min(static_cast<int>(u * res), res - 1);
    }
    const int lin = (c[0] * res + c[1]) * res + c[2];
    cell_of[p] = lin;
    auto& slot = cells[lin];
    slot.sum += positions[p];
    slot.count += 1;
  }
  REQUIRE(cp.points.rows() == static_cast<Eigen::Index>(cells.size()));
  // std::map iterates in ascending cell order, matching the scan order.
  int m = 0;
  std::map<int, int> cell_to_control;
  for (const auto& [lin, acc] : cells) {
    const Vec3 mean = acc.sum / acc.count;
    CHECK((cp.points.row(m).transpose() - mean).norm() <= 1e-12);
    cell_to_control[lin] = m;
    ++m;
  }
  for (int p = 0; p < n; ++p)
    CHECK(cp.assignment[p] == cell_to_control[cell_of[p]]);
}

TEST_CASE("control point resolution is validated", "[mpm]") {
  CHECK_THROWS_AS(control_points({Vec3::Zero()}, 1), std::invalid_argument);
}

TEST_CASE("cell velocity sharing produces mass-weighted means", "[mpm]") {
  std::vector<Vec3> v = {Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 4)};
  const std::vector<double> m = {1.0, 3.0, 2.0};
  const std::vector<int> assignment = {0, 0, 1};
  share_cell_velocities(v, m, assignment, 2);
  CHECK((v[0] - Vec3(0.25, 0.75, 0)).norm() <= 1e-15);
  CHECK((v[1] - Vec3(0.25, 0.75, 0)).norm() <= 1e-15);
  CHECK((v[2] - Vec3(0, 0, 4)).norm() <= 1e-15);
}

TEST_CASE("per-substep sharing keeps a rigid cluster rigid", "[mpm]") {
  Rng rng(19);
  SimConfig config = open_config(box(Vec3(-2, -2, -2), Vec3(2, 2, 2)), 48);
  config.share_resolution = 3;
  const Vec3 v0(0.3, 0.1, -0.2);
  ParticleState s = make_cluster(100, rng, Vec3(-0.3, -0.3, -0.3),
                                 Vec3(0.3, 0.3, 0.3), v0);
  simulate(s, config, 20);
  for (int p = 0; p < 100; ++p) CHECK((s.v[p] - v0).norm() <= 1e-10);
}
