#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "motra/log.hpp"
#include "motra/math.hpp"

namespace motra {

// Part labels are 0-based; kUnassigned marks vertices/particles outside every
// part.
constexpr int kUnassigned = -1;

inline int part_count(const std::vector<int>& labels) {
  int b = 0;
  for (int l : labels) b = std::max(b, l + 1);
  return b;
}

// Per-vertex features: semantic block first, geometric block second.
struct FeatureSet {
  Mat3X vertices;  // N x 3
  MatX diff;       // N x D1
  MatX geo;        // N x D2

  void validate() const {
    if (diff.rows() != vertices.rows() || geo.rows() != vertices.rows())
      throw DataError("feature set: row counts disagree");
    if (!vertices.allFinite() || !diff.allFinite() || !geo.allFinite())
      throw DataError("feature set: non-finite entries");
  }
};

struct PartAssignment {
  std::vector<int> labels;
  std::vector<Aabb> part_boxes;  // dilated; empty parts keep an invalid box
  Mat3X part_centroids;          // B x 3, zero rows for empty parts
};

inline MatX concat_features(const FeatureSet& fs) {
  fs.validate();
  MatX out(fs.diff.rows(), fs.diff.cols() + fs.geo.cols());
  out.leftCols(fs.diff.cols()) = fs.diff;
  out.rightCols(fs.geo.cols()) = fs.geo;
  return out;
}

inline MatX mean_part_features(const MatX& features,
                               const std::vector<int>& labels) {
  if (static_cast<Eigen::Index>(labels.size()) != features.rows())
    throw DataError("mean_part_features: label count mismatch");
  const int b_count = part_count(labels);
  MatX means = MatX::Zero(b_count, features.cols());
  std::vector<int> counts(b_count, 0);
  for (Eigen::Index n = 0; n < features.rows(); ++n) {
    if (labels[n] < 0) continue;
    means.row(labels[n]) += features.row(n);
    counts[labels[n]] += 1;
  }
  for (int b = 0; b < b_count; ++b) {
    if (counts[b] == 0)
      throw DataError("mean_part_features: part " + std::to_string(b) +
                      " has no members");
    means.row(b) /= counts[b];
  }
  return means;
}

// Cosine-similarity argmax per row; ties break to the lowest part index,
// zero-norm rows become unassigned.
inline std::vector<int> match_parts(const MatX& target_features,
                                    const MatX& ref_part_means) {
  std::vector<int> labels(target_features.rows(), kUnassigned);
  VecX mean_norms(ref_part_means.rows());
  for (Eigen::Index b = 0; b < ref_part_means.rows(); ++b)
    mean_norms[b] = ref_part_means.row(b).norm();
  int zero_rows = 0;
  for (Eigen::Index n = 0; n < target_features.rows(); ++n) {
    const double norm = target_features.row(n).norm();
    if (norm == 0.0) {
      ++zero_rows;
      continue;
    }
    double best = -2.0;
    int best_b = kUnassigned;
    for (Eigen::Index b = 0; b < ref_part_means.rows(); ++b) {
      if (mean_norms[b] == 0.0) continue;
      const double cos = target_features.row(n).dot(ref_part_means.row(b)) /
                         (norm * mean_norms[b]);
      if (cos > best) {
        best = cos;
        best_b = static_cast<int>(b);
      }
    }
    labels[n] = best_b;
  }
  if (zero_rows > 0)
    log_warn("match_parts: " + std::to_string(zero_rows) +
             " zero-norm feature rows left unassigned");
  return labels;
}

// Trim per-part centroid-distance outliers past mean + k*std, repeated until
// no vertex moves, so a second application is a no-op. Boxes come from the
// survivors, dilated 5%.
inline PartAssignment remove_outliers(const Mat3X& vertices,
                                      const std::vector<int>& labels,
                                      double k = 2.0) {
  if (static_cast<Eigen::Index>(labels.size()) != vertices.rows())
    throw DataError("remove_outliers: label count mismatch");
  PartAssignment out;
  out.labels = labels;
  const int b_count = part_count(labels);

  bool changed = true;
  while (changed) {
    changed = false;
    for (int b = 0; b < b_count; ++b) {
      Vec3 centroid = Vec3::Zero();
      int count = 0;
      for (Eigen::Index n = 0; n < vertices.rows(); ++n)
        if (out.labels[n] == b) {
          centroid += vertices.row(n).transpose();
          ++count;
        }
      if (count == 0) continue;
      centroid /= count;
      double sum = 0.0, sum2 = 0.0;
      for (Eigen::Index n = 0; n < vertices.rows(); ++n)
        if (out.labels[n] == b) {
          const double d = (vertices.row(n).transpose() - centroid).norm();
          sum += d;
          sum2 += d * d;
        }
      const double mean = sum / count;
      const double var = std::max(0.0, sum2 / count - mean * mean);
      const double threshold = mean + k * std::sqrt(var);
      for (Eigen::Index n = 0; n < vertices.rows(); ++n)
        if (out.labels[n] == b &&
            (vertices.row(n).transpose() - centroid).norm() > threshold) {
          out.labels[n] = kUnassigned;
          changed = true;
        }
    }
  }

  out.part_boxes.assign(b_count, Aabb{});
  out.part_centroids = Mat3X::Zero(b_count, 3);
  std::vector<int> counts(b_count, 0);
  for (Eigen::Index n = 0; n < vertices.rows(); ++n) {
    const int b = out.labels[n];
    if (b < 0) continue;
    out.part_boxes[b].extend(vertices.row(n).transpose());
    out.part_centroids.row(b) += vertices.row(n);
    counts[b] += 1;
  }
  for (int b = 0; b < b_count; ++b) {
    if (counts[b] == 0) {
      log_warn("remove_outliers: part " + std::to_string(b) + " ended empty");
      continue;
    }
    out.part_centroids.row(b) /= counts[b];
    out.part_boxes[b] = out.part_boxes[b].dilated(0.05);
  }
  return out;
}

// Box membership: a unique containing box wins, overlaps resolve to the
// nearest part centroid, no box means unassigned.
inline std::vector<int> assign_particles(const Mat3X& positions,
                                         const PartAssignment& assignment) {
  std::vector<int> labels(positions.rows(), kUnassigned);
  const int b_count = static_cast<int>(assignment.part_boxes.size());
  for (Eigen::Index n = 0; n < positions.rows(); ++n) {
    const Vec3 x = positions.row(n).transpose();
    int hit = kUnassigned;
    int hits = 0;
    for (int b = 0; b < b_count; ++b)
      if (assignment.part_boxes[b].valid() &&
          assignment.part_boxes[b].contains(x)) {
        hit = b;
        ++hits;
      }
    if (hits <= 1) {
      labels[n] = hit;
      continue;
    }
    double best = std::numeric_limits<double>::infinity();
    for (int b = 0; b < b_count; ++b) {
      if (!assignment.part_boxes[b].valid() ||
          !assignment.part_boxes[b].contains(x))
        continue;
      const double d = (x - assignment.part_centroids.row(b).transpose()).norm();
      if (d < best) {
        best = d;
        labels[n] = b;
      }
    }
  }
  return labels;
}

// Stand-in for learned per-vertex features: a one-hot semantic block keyed by
// the true label plus noise, and a geometric block of bbox-normalized
// coordinates (scale-invariant) plus noise.
inline FeatureSet synthetic_features(const Mat3X& vertices,
                                     const std::vector<int>& labels,
                                     int diff_dim, int geo_dim, double noise,
                                     std::uint64_t seed) {
  if (static_cast<Eigen::Index>(labels.size()) != vertices.rows())
    throw DataError("synthetic_features: label count mismatch");
  FeatureSet fs;
  fs.vertices = vertices;
  fs.diff = MatX::Zero(vertices.rows(), diff_dim);
  fs.geo = MatX::Zero(vertices.rows(), geo_dim);
  Rng rng(seed);

  Aabb box;
  for (Eigen::Index n = 0; n < vertices.rows(); ++n)
    box.extend(vertices.row(n).transpose());
  const Vec3 ext = box.extent().cwiseMax(1e-12);

  for (Eigen::Index n = 0; n < vertices.rows(); ++n) {
    for (int d = 0; d < diff_dim; ++d) fs.diff(n, d) = noise * rng.normal();
    if (labels[n] >= 0 && diff_dim > 0) fs.diff(n, labels[n] % diff_dim) += 1.0;
    const Vec3 u =
        (vertices.row(n).transpose() - box.lo).cwiseQuotient(ext);
    for (int d = 0; d < geo_dim; ++d) {
      fs.geo(n, d) = noise * rng.normal();
      if (d < 3) fs.geo(n, d) += 0.2 * u[d];
    }
  }
  return fs;
}

}  // namespace motra
