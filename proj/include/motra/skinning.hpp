#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "motra/math.hpp"

namespace motra {

// Gaussian-shaped bone: an ellipsoid with center, orientation and axis scales.
struct Bone {
  Vec3 center = Vec3::Zero();
  Mat3 orientation = Mat3::Identity();
  Vec3 scales = Vec3::Ones();

  void validate() const {
    if ((orientation.transpose() * orientation - Mat3::Identity()).norm() >
            1e-9 ||
        orientation.determinant() < 0.0)
      throw std::invalid_argument("invalid bone: orientation not a rotation");
    if ((scales.array() <= 0.0).any())
      throw std::invalid_argument("invalid bone: non-positive scale");
  }
};

// One animation frame: a global body transform plus per-bone joint transforms
// relative to the canonical pose.
struct BoneFrame {
  RigidTransform global;
  std::vector<RigidTransform> joints;
};

struct BoneSequence {
  std::vector<Bone> canonical_bones;
  std::vector<BoneFrame> frames;
  double frame_dt = 0.0;

  int bone_count() const { return static_cast<int>(canonical_bones.size()); }
  int frame_count() const { return static_cast<int>(frames.size()); }

  void validate() const {
    if (frame_count() < 2) throw DataError("bone sequence needs >= 2 frames");
    if (frame_dt <= 0.0) throw DataError("bone sequence frame_dt must be > 0");
    for (const auto& b : canonical_bones) b.validate();
    for (const auto& f : frames)
      if (static_cast<int>(f.joints.size()) != bone_count())
        throw DataError("frame joint count does not match bone count");
  }
};

// Optional per-point logit correction (a coordinate-MLP hook); empty = zero.
using DeltaLogitsFn = std::function<VecX(const Vec3&)>;

struct SkinningModel {
  std::vector<Bone> bones;
  DeltaLogitsFn delta_logits;  // unset -> zero correction

  int bone_count() const { return static_cast<int>(bones.size()); }
};

// Squared Mahalanobis distance of x to each bone's Gaussian,
// (x-c)^T Sigma^-1 (x-c) with Sigma = R diag(s^2) R^T.
inline VecX mahalanobis_distances(const Vec3& x,
                                  const std::vector<Bone>& bones) {
  if (bones.empty())
    throw std::invalid_argument("mahalanobis_distances: no bones");
  VecX d(bones.size());
  for (size_t b = 0; b < bones.size(); ++b) {
    if ((bones[b].scales.array() <= 0.0).any())
      throw std::invalid_argument("invalid bone: non-positive scale");
    const Vec3 local = bones[b].orientation.transpose() * (x - bones[b].center);
    d[b] = (local.array() / bones[b].scales.array()).square().sum();
  }
  return d;
}

inline std::vector<Bone> pose_bones(const std::vector<Bone>& bones,
                                    const BoneFrame& frame) {
  if (frame.joints.size() != bones.size())
    throw std::invalid_argument("pose_bones: joint/bone count mismatch");
  std::vector<Bone> posed(bones.size());
  for (size_t b = 0; b < bones.size(); ++b) {
    posed[b].center = frame.joints[b](bones[b].center);
    posed[b].orientation =
        frame.joints[b].rotation_matrix() * bones[b].orientation;
    posed[b].scales = bones[b].scales;
  }
  return posed;
}

// Softmax over logits -d_M(x, bones) + W_delta(x); nearer bones dominate.
inline VecX skinning_weights(const Vec3& x, const SkinningModel& model,
                             const std::optional<BoneFrame>& pose = {}) {
  VecX logits =
      pose ? -mahalanobis_distances(x, pose_bones(model.bones, *pose))
           : -mahalanobis_distances(x, model.bones);
  if (model.delta_logits) {
    const VecX delta = model.delta_logits(x);
    if (delta.size() != logits.size())
      throw std::invalid_argument("delta logits size mismatch");
    logits += delta;
  }
  const VecX e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

namespace detail {

// Dual quaternion (real, dual) for a rigid transform; dual = 0.5 * t ⊗ real.
struct DualQuat {
  Eigen::Vector4d real;  // (w, x, y, z)
  Eigen::Vector4d dual;
};

inline Eigen::Vector4d quat_coeffs(const Quat& q) {
  return Eigen::Vector4d(q.w(), q.x(), q.y(), q.z());
}

inline Eigen::Vector4d quat_mul(const Eigen::Vector4d& a,
                                const Eigen::Vector4d& b) {
  const double w = a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3];
  const double x = a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2];
  const double y = a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1];
  const double z = a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0];
  return Eigen::Vector4d(w, x, y, z);
}

inline DualQuat to_dual_quat(const RigidTransform& rt) {
  const Eigen::Vector4d r = quat_coeffs(rt.rotation.normalized());
  const Eigen::Vector4d t(0.0, rt.translation.x(), rt.translation.y(),
                          rt.translation.z());
  return {r, 0.5 * quat_mul(t, r)};
}

inline RigidTransform from_dual_quat(const DualQuat& dq) {
  const Quat q(dq.real[0], dq.real[1], dq.real[2], dq.real[3]);
  Eigen::Vector4d rc = dq.real;
  rc.tail<3>() *= -1.0;  // conjugate
  const Eigen::Vector4d t2 = quat_mul(dq.dual, rc);
  return {q, 2.0 * t2.tail<3>()};
}

}  // namespace detail

// Weight-blended rigid transform via dual-quaternion blending with hemisphere
// alignment to the largest-weight joint. One-hot weights reproduce the
// corresponding joint exactly; pure translations blend linearly.
inline RigidTransform blend_transforms(const VecX& weights,
                                       const BoneFrame& frame) {
  if (weights.size() != static_cast<Eigen::Index>(frame.joints.size()))
    throw std::invalid_argument("blend_transforms: weight count mismatch");
  if (weights.size() == 0 || weights.cwiseAbs().maxCoeff() == 0.0)
    throw std::invalid_argument("blend_transforms: all-zero weights");

  Eigen::Index pivot = 0;
  weights.maxCoeff(&pivot);
  const Eigen::Vector4d pivot_real =
      detail::quat_coeffs(frame.joints[pivot].rotation.normalized());

  Eigen::Vector4d real = Eigen::Vector4d::Zero();
  Eigen::Vector4d dual = Eigen::Vector4d::Zero();
  for (Eigen::Index b = 0; b < weights.size(); ++b) {
    detail::DualQuat dq = detail::to_dual_quat(frame.joints[b]);
    const double sign = dq.real.dot(pivot_real) < 0.0 ? -1.0 : 1.0;
    real += weights[b] * sign * dq.real;
    dual += weights[b] * sign * dq.dual;
  }
  const double n = real.norm();
  if (n < 1e-12)
    throw std::invalid_argument("blend_transforms: degenerate blend");
  real /= n;
  dual /= n;
  dual -= real.dot(dual) * real;  // re-orthogonalize the dual part
  return detail::from_dual_quat({real, dual});
}

// x^t = G^t J^{t,->} x*, weights evaluated at the canonical point.
inline Vec3 forward_warp(const Vec3& x_canonical, const SkinningModel& model,
                         const BoneFrame& frame) {
  const VecX w = skinning_weights(x_canonical, model);
  const RigidTransform blended = blend_transforms(w, frame);
  return frame.global(blended(x_canonical));
}

// x* = J^{t,<-} (G^t)^-1 x^t, weights evaluated against the posed bones.
inline Vec3 backward_warp(const Vec3& x_world, const SkinningModel& model,
                          const BoneFrame& frame) {
  const Vec3 body = frame.global.inverse()(x_world);
  const VecX w = skinning_weights(body, model, frame);
  const RigidTransform blended = blend_transforms(w, frame);
  return blended.inverse()(body);
}

// Argmax skinning weight per point; ties break to the lowest bone index.
inline std::vector<int> part_labels(const Mat3X& points,
                                    const SkinningModel& model) {
  std::vector<int> labels(points.rows());
  for (Eigen::Index n = 0; n < points.rows(); ++n) {
    const VecX w = skinning_weights(points.row(n).transpose(), model);
    int best = 0;
    for (int b = 1; b < w.size(); ++b)
      if (w[b] > w[best]) best = b;
    labels[n] = best;
  }
  return labels;
}

// Per-bone center motion between frames t and t+1, in the body frame (the
// global transform is applied separately at export time).
inline MatX bone_deltas(const BoneSequence& seq, int t) {
  if (t < 0 || t + 1 >= seq.frame_count())
    throw std::out_of_range("bone_deltas: frame index out of range");
  MatX d(seq.bone_count(), 3);
  for (int b = 0; b < seq.bone_count(); ++b) {
    const Vec3 c = seq.canonical_bones[b].center;
    d.row(b) = (seq.frames[t + 1].joints[b](c) - seq.frames[t].joints[b](c))
                   .transpose();
  }
  return d;
}

}  // namespace motra
