#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>

namespace motra {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;
using Mat3X = Eigen::Matrix<double, Eigen::Dynamic, 3>;
using Vec3i = Eigen::Vector3i;
using Quat = Eigen::Quaterniond;

// Thrown on malformed or inconsistent input data (files, configs, states).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown when an optimization or simulation reaches a non-finite state.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Rotation + translation, applied as R*x + t.
struct RigidTransform {
  Quat rotation = Quat::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }

  Vec3 operator()(const Vec3& x) const { return rotation * x + translation; }

  RigidTransform inverse() const {
    const Quat qi = rotation.conjugate();
    return {qi, -(qi * translation)};
  }

  // this ∘ other: apply `other` first.
  RigidTransform compose(const RigidTransform& other) const {
    return {(rotation * other.rotation).normalized(),
            rotation * other.translation + translation};
  }

  Mat3 rotation_matrix() const { return rotation.toRotationMatrix(); }
};

struct Aabb {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = Vec3::Constant(-std::numeric_limits<double>::infinity());

  void extend(const Vec3& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }

  bool valid() const { return (lo.array() <= hi.array()).all(); }
  bool contains(const Vec3& p) const {
    return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
  }
  Vec3 extent() const { return hi - lo; }
  Vec3 center() const { return 0.5 * (lo + hi); }
  double diagonal() const { return extent().norm(); }

  // Grow each axis extent by `factor` about the center (factor 0.05 -> +5%).
  Aabb dilated(double factor) const {
    const Vec3 pad = 0.5 * factor * extent();
    return {lo - pad, hi + pad};
  }
};

template <class Range>
inline Aabb bounding_box(const Range& points) {
  Aabb box;
  for (const auto& p : points) box.extend(p);
  if (!box.valid()) throw DataError("bounding_box: empty point set");
  return box;
}

inline Mat3 skew(const Vec3& w) {
  Mat3 m;
  m << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
  return m;
}

// Raw antisymmetric differences: axial(skew(w)) = 2w, and axial kills the
// symmetric part of its argument.
inline Vec3 axial(const Mat3& m) {
  return Vec3(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1));
}

inline Mat3 cofactor(const Mat3& f) {
  Mat3 c;
  c.col(0) = f.col(1).cross(f.col(2));
  c.col(1) = f.col(2).cross(f.col(0));
  c.col(2) = f.col(0).cross(f.col(1));
  return c;
}

// mt19937_64 with explicit output mapping so streams are identical across
// standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; one value per call, the pair's twin is discarded.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  int uniform_int(int lo, int hi) {  // inclusive bounds
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(engine_() % span);
  }

  Vec3 uniform_vec3(double lo, double hi) {
    const double x = uniform(lo, hi), y = uniform(lo, hi), z = uniform(lo, hi);
    return Vec3(x, y, z);
  }

  Vec3 normal_vec3() {
    const double x = normal(), y = normal(), z = normal();
    return Vec3(x, y, z);
  }

  Quat random_rotation() {
    // Shoemake's uniform quaternion sampling.
    const double u1 = uniform(), u2 = uniform(), u3 = uniform();
    const double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
    return Quat(a * std::sin(2 * M_PI * u2), a * std::cos(2 * M_PI * u2),
                b * std::sin(2 * M_PI * u3), b * std::cos(2 * M_PI * u3))
        .normalized();
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace motra
