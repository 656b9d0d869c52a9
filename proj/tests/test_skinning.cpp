#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "motra/math.hpp"
#include "motra/skinning.hpp"

using namespace motra;

namespace {

Bone make_bone(const Vec3& center, const Vec3& scales = Vec3::Ones(),
               const Mat3& orientation = Mat3::Identity()) {
  Bone b;
  b.center = center;
  b.scales = scales;
  b.orientation = orientation;
  return b;
}

BoneFrame identity_frame(int bones) {
  BoneFrame f;
  f.joints.assign(bones, RigidTransform{});
  return f;
}

RigidTransform translate(const Vec3& t) {
  RigidTransform rt;
  rt.translation = t;
  return rt;
}

RigidTransform rotate_about(double angle, const Vec3& axis,
                            const Vec3& point) {
  RigidTransform rt;
  rt.rotation = Quat(Eigen::AngleAxisd(angle, axis.normalized()));
  rt.translation = point - rt.rotation * point;
  return rt;
}

}  // namespace

TEST_CASE("mahalanobis distance is zero at the bone center", "[skinning]") {
  const std::vector<Bone> bones = {make_bone(Vec3(0.3, -0.2, 1.0))};
  const VecX d = mahalanobis_distances(Vec3(0.3, -0.2, 1.0), bones);
  REQUIRE(d.size() == 1);
  CHECK(d[0] == 0.0);
}

TEST_CASE("mahalanobis distance reduces to squared Euclidean for unit bones",
          "[skinning]") {
  const std::vector<Bone> bones = {make_bone(Vec3::Zero())};
  CHECK(mahalanobis_distances(Vec3(1, 0, 0), bones)[0] ==
        Catch::Approx(1.0).margin(1e-15));
}

TEST_CASE("mahalanobis distance divides by axis scales", "[skinning]") {
  const std::vector<Bone> bones = {
      make_bone(Vec3::Zero(), Vec3(2.0, 1.0, 1.0))};
  CHECK(mahalanobis_distances(Vec3(2, 0, 0), bones)[0] ==
        Catch::Approx(1.0).margin(1e-15));
}

TEST_CASE("mahalanobis distance respects bone orientation", "[skinning]") {
  // Long axis rotated to point along y: a point 2 up costs the same as a
  // point 2 along x for the unrotated bone.
  const Mat3 r =
      Eigen::AngleAxisd(M_PI / 2.0, Vec3::UnitZ()).toRotationMatrix();
  const std::vector<Bone> bones = {
      make_bone(Vec3::Zero(), Vec3(2.0, 1.0, 1.0), r)};
  CHECK(mahalanobis_distances(Vec3(0, 2, 0), bones)[0] ==
        Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("skinning weights of one bone are exactly one", "[skinning]") {
  SkinningModel model;
  model.bones = {make_bone(Vec3::Zero())};
  const VecX w = skinning_weights(Vec3(0.7, 0.1, -0.3), model);
  REQUIRE(w.size() == 1);
  CHECK(w[0] == 1.0);
}

TEST_CASE("identical bones split weight evenly", "[skinning]") {
  SkinningModel model;
  model.bones = {make_bone(Vec3(1, 2, 3)), make_bone(Vec3(1, 2, 3))};
  const VecX w = skinning_weights(Vec3(0.5, 0.5, 0.5), model);
  CHECK(w[0] == Catch::Approx(0.5).margin(1e-15));
  CHECK(w[1] == Catch::Approx(0.5).margin(1e-15));
}

TEST_CASE("two-bone softmax matches direct evaluation", "[skinning]") {
  SkinningModel model;
  model.bones = {make_bone(Vec3(1, 0, 0)), make_bone(Vec3(-1, 0, 0))};
  const VecX w = skinning_weights(Vec3(0.5, 0, 0), model);
  // Squared distances 0.25 and 2.25; softmax of (-0.25, -2.25).
  const double e0 = std::exp(-0.25), e1 = std::exp(-2.25);
  CHECK(w[0] == Catch::Approx(e0 / (e0 + e1)).epsilon(1e-12));
  CHECK(w[1] == Catch::Approx(e1 / (e0 + e1)).epsilon(1e-12));
  CHECK(w[0] == Catch::Approx(0.8808).margin(5e-5));
  CHECK(w[1] == Catch::Approx(0.1192).margin(5e-5));
}

TEST_CASE("weights sum to one over random models and points", "[skinning]") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    SkinningModel model;
    const int bones = rng.uniform_int(1, 6);
    for (int b = 0; b < bones; ++b)
      model.bones.push_back(make_bone(
          rng.uniform_vec3(-2, 2), rng.uniform_vec3(0.2, 2.0),
          rng.random_rotation().toRotationMatrix()));
    for (int n = 0; n < 50; ++n) {
      const VecX w = skinning_weights(rng.uniform_vec3(-3, 3), model);
      CHECK(std::abs(w.sum() - 1.0) <= 1e-12);
      CHECK(w.minCoeff() >= 0.0);
    }
  }
}

TEST_CASE("delta logits shift the softmax", "[skinning]") {
  SkinningModel model;
  model.bones = {make_bone(Vec3(1, 0, 0)), make_bone(Vec3(-1, 0, 0))};
  // Zero correction leaves the result; a +big correction on bone 1 flips it.
  model.delta_logits = [](const Vec3&) {
    VecX d(2);
    d << 0.0, 50.0;
    return d;
  };
  const VecX w = skinning_weights(Vec3(0.9, 0, 0), model);
  CHECK(w[1] > 0.999999);
}

TEST_CASE("one-hot weights reproduce the joint transform exactly",
          "[skinning]") {
  Rng rng(5);
  BoneFrame frame;
  for (int b = 0; b < 4; ++b)
    frame.joints.push_back(
        {rng.random_rotation(), rng.uniform_vec3(-1, 1)});
  for (int hot = 0; hot < 4; ++hot) {
    VecX w = VecX::Zero(4);
    w[hot] = 1.0;
    const RigidTransform out = blend_transforms(w, frame);
    const Vec3 probe(0.3, -0.7, 0.2);
    CHECK((out(probe) - frame.joints[hot](probe)).norm() <= 1e-12);
  }
}

TEST_CASE("identical joints blend to themselves for any weights",
          "[skinning]") {
  Rng rng(6);
  const RigidTransform joint{rng.random_rotation(), Vec3(0.1, 0.2, 0.3)};
  BoneFrame frame;
  frame.joints.assign(3, joint);
  VecX w(3);
  w << 0.2, 0.5, 0.3;
  const RigidTransform out = blend_transforms(w, frame);
  const Vec3 probe(1.0, -2.0, 0.5);
  CHECK((out(probe) - joint(probe)).norm() <= 1e-12);
}

TEST_CASE("pure translations blend linearly", "[skinning]") {
  BoneFrame frame;
  frame.joints = {translate(Vec3(1, 0, 0)), translate(Vec3(0, 1, 0))};
  VecX w(2);
  w << 0.5, 0.5;
  const RigidTransform out = blend_transforms(w, frame);
  CHECK((out.translation - Vec3(0.5, 0.5, 0)).norm() <= 1e-12);
  CHECK(out.rotation_matrix().isApprox(Mat3::Identity(), 1e-12));
}

TEST_CASE("blending co-axial rotations averages the angle", "[skinning]") {
  // Equal-weight blend of rotations about the same axis halves the angle sum;
  // the dual-quaternion normalization makes this exact.
  const double a1 = 0.3, a2 = 0.9;
  BoneFrame frame;
  frame.joints = {rotate_about(a1, Vec3::UnitZ(), Vec3::Zero()),
                  rotate_about(a2, Vec3::UnitZ(), Vec3::Zero())};
  VecX w(2);
  w << 0.5, 0.5;
  const RigidTransform out = blend_transforms(w, frame);
  const RigidTransform expected =
      rotate_about(0.5 * (a1 + a2), Vec3::UnitZ(), Vec3::Zero());
  CHECK((out(Vec3(1, 0, 0)) - expected(Vec3(1, 0, 0))).norm() <= 1e-12);
}

TEST_CASE("blended rotations stay orthonormal", "[skinning]") {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    BoneFrame frame;
    const int bones = rng.uniform_int(2, 5);
    VecX w(bones);
    for (int b = 0; b < bones; ++b) {
      frame.joints.push_back(
          {rng.random_rotation(), rng.uniform_vec3(-1, 1)});
      w[b] = rng.uniform(0.01, 1.0);
    }
    w /= w.sum();
    const Mat3 r = blend_transforms(w, frame).rotation_matrix();
    CHECK((r.transpose() * r - Mat3::Identity()).norm() <= 1e-9);
  }
}

TEST_CASE("all-zero weights are rejected", "[skinning]") {
  BoneFrame frame = identity_frame(2);
  CHECK_THROWS_AS(blend_transforms(VecX::Zero(2), frame),
                  std::invalid_argument);
}

TEST_CASE("weight count must match joint count", "[skinning]") {
  BoneFrame frame = identity_frame(3);
  VecX w(2);
  w << 0.5, 0.5;
  CHECK_THROWS_AS(blend_transforms(w, frame), std::invalid_argument);
}

TEST_CASE("forward warp with identity frame is the identity", "[skinning]") {
  SkinningModel model;
  model.bones = {make_bone(Vec3(0, 0, 0)), make_bone(Vec3(2, 0, 0))};
  const BoneFrame frame = identity_frame(2);
  const Vec3 x(0.4, 0.2, -0.1);
  CHECK((forward_warp(x, model, frame) - x).norm() <= 1e-15);
}

TEST_CASE("single-bone forward warp applies the joint translation",
          "[skinning]") {
  SkinningModel model;
  model.bones = {make_bone(Vec3::Zero())};
  BoneFrame frame;
  frame.joints = {translate(Vec3(0, 0, 1))};
  const Vec3 x(0.3, 0.4, 0.5);
  CHECK((forward_warp(x, model, frame) - (x + Vec3(0, 0, 1))).norm() <=
        1e-15);
}

TEST_CASE("forward warp composes the global transform after the joints",
          "[skinning]") {
  SkinningModel model;
  model.bones = {make_bone(Vec3::Zero())};
  BoneFrame frame;
  frame.joints = {translate(Vec3(1, 0, 0))};
  frame.global = rotate_about(M_PI / 2.0, Vec3::UnitZ(), Vec3::Zero());
  const Vec3 x(0, 0, 0);
  // Joint moves to (1,0,0); global quarter turn about z sends it to (0,1,0).
  CHECK((forward_warp(x, model, frame) - Vec3(0, 1, 0)).norm() <= 1e-12);
}

TEST_CASE("two-bone forward warp matches explicit blend composition",
          "[skinning]") {
  SkinningModel model;
  model.bones = {make_bone(Vec3(-1, 0, 0)), make_bone(Vec3(1, 0, 0))};
  BoneFrame frame;
  frame.joints = {translate(Vec3(0.2, 0, 0)),
                  rotate_about(0.4, Vec3::UnitY(), Vec3(1, 0, 0))};
  frame.global = {Quat(Eigen::AngleAxisd(0.3, Vec3::UnitX())),
                  Vec3(0, 0.1, 0)};
  const Vec3 x(0.25, 0.1, 0.0);
  // Oracle: evaluate the same pipeline from its published pieces.
  const VecX w = skinning_weights(x, model);
  const Vec3 expected = frame.global(blend_transforms(w, frame)(x));
  CHECK((forward_warp(x, model, frame) - expected).norm() <= 1e-15);
}

TEST_CASE("backward warp inverts forward warp for one bone", "[skinning]") {
  Rng rng(9);
  SkinningModel model;
  model.bones = {make_bone(Vec3(0.1, 0.2, 0.3))};
  for (int trial = 0; trial < 100; ++trial) {
    BoneFrame frame;
    frame.joints = {{rng.random_rotation(), rng.uniform_vec3(-1, 1)}};
    frame.global = {rng.random_rotation(), rng.uniform_vec3(-1, 1)};
    const Vec3 x = rng.uniform_vec3(-1, 1);
    const Vec3 y = forward_warp(x, model, frame);
    CHECK((backward_warp(y, model, frame) - x).norm() <= 1e-9);
  }
}

TEST_CASE("backward warp with identity frame is the identity", "[skinning]") {
  SkinningModel model;
  model.bones = {make_bone(Vec3(0, 0, 0)), make_bone(Vec3(1, 1, 1))};
  const BoneFrame frame = identity_frame(2);
  const Vec3 x(0.2, -0.4, 0.6);
  CHECK((backward_warp(x, model, frame) - x).norm() <= 1e-15);
}

TEST_CASE("multi-bone backward warp agrees with fixed-point refinement",
          "[skinning]") {
  // Well-separated bones saturate the softmax, so the posed-space weights the
  // backward warp uses match the canonical weights to high precision and the
  // fixed point is reached in one step.
  SkinningModel model;
  model.bones = {make_bone(Vec3(-5, 0, 0)), make_bone(Vec3(5, 0, 0))};
  BoneFrame frame;
  frame.joints = {translate(Vec3(0, 0.3, 0)),
                  rotate_about(0.05, Vec3::UnitZ(), Vec3(5, 0, 0))};
  const Vec3 x(-4.8, 0.2, 0.1);
  const Vec3 y = forward_warp(x, model, frame);

  // Fixed-point oracle: refine the canonical point until forward maps it
  // back onto y.
  Vec3 z = y;
  for (int it = 0; it < 200; ++it) z -= forward_warp(z, model, frame) - y;
  REQUIRE((forward_warp(z, model, frame) - y).norm() <= 1e-12);

  CHECK((backward_warp(y, model, frame) - z).norm() <= 1e-9);
}

TEST_CASE("labels are invariant under a shared rigid motion", "[skinning]") {
  Rng rng(13);
  SkinningModel model;
  for (int b = 0; b < 3; ++b)
    model.bones.push_back(make_bone(rng.uniform_vec3(-2, 2),
                                    rng.uniform_vec3(0.3, 1.5)));
  const RigidTransform motion{rng.random_rotation(), Vec3(0.4, -0.2, 0.9)};

  SkinningModel moved;
  for (const Bone& b : model.bones) {
    Bone nb = b;
    nb.center = motion(b.center);
    nb.orientation = motion.rotation_matrix() * b.orientation;
    moved.bones.push_back(nb);
  }

  Mat3X points(50, 3);
  Mat3X moved_points(50, 3);
  for (int n = 0; n < 50; ++n) {
    const Vec3 p = rng.uniform_vec3(-3, 3);
    points.row(n) = p.transpose();
    moved_points.row(n) = motion(p).transpose();
  }
  CHECK(part_labels(points, model) == part_labels(moved_points, moved));
}

TEST_CASE("points at a bone center take that bone's label", "[skinning]") {
  SkinningModel model;
  model.bones = {make_bone(Vec3(-3, 0, 0)), make_bone(Vec3(0, 0, 0)),
                 make_bone(Vec3(3, 0, 0))};
  Mat3X points(3, 3);
  points.row(0) = Vec3(-3, 0, 0).transpose();
  points.row(1) = Vec3(0, 0, 0).transpose();
  points.row(2) = Vec3(3, 0, 0).transpose();
  CHECK(part_labels(points, model) == std::vector<int>{0, 1, 2});
}

TEST_CASE("single-bone labels are all zero", "[skinning]") {
  SkinningModel model;
  model.bones = {make_bone(Vec3(1, 2, 3))};
  Mat3X points = Mat3X::Random(20, 3);
  const std::vector<int> labels = part_labels(points, model);
  for (int l : labels) CHECK(l == 0);
}

TEST_CASE("labels match brute-force weight argmax", "[skinning]") {
  Rng rng(17);
  SkinningModel model;
  for (int b = 0; b < 5; ++b)
    model.bones.push_back(make_bone(
        rng.uniform_vec3(-2, 2), rng.uniform_vec3(0.2, 1.5),
        rng.random_rotation().toRotationMatrix()));
  Mat3X points(100, 3);
  for (int n = 0; n < 100; ++n)
    points.row(n) = rng.uniform_vec3(-3, 3).transpose();

  const std::vector<int> labels = part_labels(points, model);
  for (int n = 0; n < 100; ++n) {
    const VecX w = skinning_weights(points.row(n).transpose(), model);
    int best = 0;
    for (int b = 1; b < w.size(); ++b)
      if (w[b] > w[best]) best = b;
    CHECK(labels[n] == best);
  }
}

TEST_CASE("static sequences produce zero bone deltas", "[skinning]") {
  BoneSequence seq;
  seq.frame_dt = 0.1;
  seq.canonical_bones = {make_bone(Vec3(0, 1, 0)), make_bone(Vec3(1, 0, 0))};
  seq.frames.assign(3, identity_frame(2));
  for (int t = 0; t < 2; ++t)
    CHECK(bone_deltas(seq, t).norm() == 0.0);
}

TEST_CASE("uniform per-frame translation gives constant deltas", "[skinning]") {
  BoneSequence seq;
  seq.frame_dt = 0.1;
  seq.canonical_bones = {make_bone(Vec3(0, 1, 0)), make_bone(Vec3(1, 0, 0))};
  for (int t = 0; t < 4; ++t) {
    BoneFrame f = identity_frame(2);
    for (auto& j : f.joints) j.translation = t * Vec3(0.1, 0, 0);
    seq.frames.push_back(f);
  }
  for (int t = 0; t < 3; ++t) {
    const MatX d = bone_deltas(seq, t);
    for (int b = 0; b < 2; ++b)
      CHECK((d.row(b).transpose() - Vec3(0.1, 0, 0)).norm() <= 1e-12);
  }
}

TEST_CASE("hinge rotation deltas match rotated centers", "[skinning]") {
  const Vec3 hinge(-0.25, 0.08, 0.0);
  const Vec3 center(0.0, 0.12, 0.0);
  BoneSequence seq;
  seq.frame_dt = 0.1;
  seq.canonical_bones = {make_bone(center)};
  const double step = 10.0 * M_PI / 180.0;
  for (int t = 0; t < 4; ++t) {
    BoneFrame f = identity_frame(1);
    f.joints[0] = rotate_about(t * step, Vec3::UnitZ(), hinge);
    seq.frames.push_back(f);
  }
  for (int t = 0; t < 3; ++t) {
    const auto rot = [&](double angle) {
      return Vec3(Eigen::AngleAxisd(angle, Vec3::UnitZ()) * (center - hinge) +
                  hinge);
    };
    const Vec3 expected = rot((t + 1) * step) - rot(t * step);
    CHECK((bone_deltas(seq, t).row(0).transpose() - expected).norm() <=
          1e-12);
  }
}

TEST_CASE("bone delta frame index is bounds-checked", "[skinning]") {
  BoneSequence seq;
  seq.frame_dt = 0.1;
  seq.canonical_bones = {make_bone(Vec3::Zero())};
  seq.frames.assign(2, identity_frame(1));
  CHECK_THROWS_AS(bone_deltas(seq, 1), std::out_of_range);
  CHECK_THROWS_AS(bone_deltas(seq, -1), std::out_of_range);
}

TEST_CASE("posed bones move with their joints", "[skinning]") {
  const std::vector<Bone> bones = {make_bone(Vec3(1, 0, 0))};
  BoneFrame frame;
  frame.joints = {rotate_about(M_PI / 2.0, Vec3::UnitZ(), Vec3::Zero())};
  const std::vector<Bone> posed = pose_bones(bones, frame);
  CHECK((posed[0].center - Vec3(0, 1, 0)).norm() <= 1e-12);
  CHECK(posed[0].orientation.isApprox(
      frame.joints[0].rotation_matrix() * bones[0].orientation, 1e-12));
}

TEST_CASE("bone validation rejects bad orientations and scales", "[skinning]") {
  Bone b = make_bone(Vec3::Zero());
  b.scales = Vec3(1, 0, 1);
  CHECK_THROWS_AS(b.validate(), std::invalid_argument);
  b = make_bone(Vec3::Zero());
  b.orientation(0, 0) = 2.0;
  CHECK_THROWS_AS(b.validate(), std::invalid_argument);
}
