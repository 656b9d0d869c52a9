#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "motra/log.hpp"
#include "motra/math.hpp"

namespace motra {

namespace detail {

inline double softplus(double z) {
  if (z > 30.0) return z;
  if (z < -30.0) return std::exp(z);
  return std::log1p(std::exp(z));
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct BilinearSample {
  int i0, j0;
  double w[2][2];  // w[di][dj]
};

// t in [0,1]^2 over a res x res lattice; cell indices clamp so t=1 lands on
// the last cell with weight 1 at its far corner.
inline BilinearSample bilinear(double ta, double tb, int res) {
  BilinearSample s;
  const double fa = ta * (res - 1);
  const double fb = tb * (res - 1);
  s.i0 = std::min(static_cast<int>(fa), res - 2);
  s.j0 = std::min(static_cast<int>(fb), res - 2);
  const double ra = fa - s.i0;
  const double rb = fb - s.j0;
  s.w[0][0] = (1.0 - ra) * (1.0 - rb);
  s.w[0][1] = (1.0 - ra) * rb;
  s.w[1][0] = ra * (1.0 - rb);
  s.w[1][1] = ra * rb;
  return s;
}

}  // namespace detail

// Three axis-aligned feature planes plus a 3-layer MLP (3C -> H -> H -> 3,
// softplus hidden, linear output). All parameters live in one flat vector:
// [XY plane, XZ plane, YZ plane, W1, b1, W2, b2, W3, b3], planes stored as
// (row i, column j, channel c) row-major, matrices column-major.
struct TriplaneField {
  int plane_res = 32;
  int channels = 16;
  int hidden = 64;
  Aabb domain_box;
  VecX params;
  mutable std::int64_t clamp_count = 0;  // queries outside domain_box

  int plane_entries() const { return plane_res * plane_res * channels; }
  int input_dim() const { return 3 * channels; }
  int w1_offset() const { return 3 * plane_entries(); }
  int b1_offset() const { return w1_offset() + hidden * input_dim(); }
  int w2_offset() const { return b1_offset() + hidden; }
  int b2_offset() const { return w2_offset() + hidden * hidden; }
  int w3_offset() const { return b2_offset() + hidden; }
  int b3_offset() const { return w3_offset() + 3 * hidden; }
  int param_count() const { return b3_offset() + 3; }

  double& plane_at(int plane, int i, int j, int c) {
    return params[plane * plane_entries() + (i * plane_res + j) * channels + c];
  }
  double plane_at(int plane, int i, int j, int c) const {
    return params[plane * plane_entries() + (i * plane_res + j) * channels + c];
  }

  Eigen::Map<const MatX> w1() const {
    return {params.data() + w1_offset(), hidden, input_dim()};
  }
  Eigen::Map<const VecX> b1() const {
    return {params.data() + b1_offset(), hidden};
  }
  Eigen::Map<const MatX> w2() const {
    return {params.data() + w2_offset(), hidden, hidden};
  }
  Eigen::Map<const VecX> b2() const {
    return {params.data() + b2_offset(), hidden};
  }
  Eigen::Map<const MatX> w3() const {
    return {params.data() + w3_offset(), 3, hidden};
  }
  Eigen::Map<const VecX> b3() const {
    return {params.data() + b3_offset(), 3};
  }

  void validate() const {
    if (plane_res < 2 || channels < 1 || hidden < 1)
      throw std::invalid_argument("triplane: degenerate dimensions");
    if (params.size() != param_count())
      throw std::invalid_argument("triplane: parameter vector size mismatch");
    if (!params.allFinite())
      throw std::invalid_argument("triplane: non-finite parameters");
    if (!((domain_box.extent().array() > 0.0).all()))
      throw std::invalid_argument("triplane: degenerate domain box");
  }
};

// Hidden layers get seeded random weights so gradients flow; planes and the
// output layer start at zero, making the initial field identically zero.
inline TriplaneField make_triplane_field(const Aabb& domain, int plane_res = 32,
                                         int channels = 16, int hidden = 64,
                                         std::uint64_t seed = 0) {
  TriplaneField f;
  f.plane_res = plane_res;
  f.channels = channels;
  f.hidden = hidden;
  f.domain_box = domain;
  f.params = VecX::Zero(f.param_count());
  Rng rng(seed);
  const double s1 = 1.0 / std::sqrt(static_cast<double>(f.input_dim()));
  for (int i = 0; i < hidden * f.input_dim(); ++i)
    f.params[f.w1_offset() + i] = s1 * rng.normal();
  const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (int i = 0; i < hidden * hidden; ++i)
    f.params[f.w2_offset() + i] = s2 * rng.normal();
  return f;
}

namespace detail {

// Plane projections of normalized coordinates: XY, XZ, YZ.
inline void plane_axes(int plane, const Vec3& u, double& a, double& b) {
  switch (plane) {
    case 0: a = u.x(); b = u.y(); break;
    case 1: a = u.x(); b = u.z(); break;
    default: a = u.y(); b = u.z(); break;
  }
}

inline Vec3 normalized_coords(const TriplaneField& f, const Vec3& x) {
  const Vec3 ext = f.domain_box.extent();
  Vec3 u;
  bool clamped = false;
  for (int a = 0; a < 3; ++a) {
    u[a] = (x[a] - f.domain_box.lo[a]) / ext[a];
    if (u[a] < 0.0 || u[a] > 1.0) {
      u[a] = std::clamp(u[a], 0.0, 1.0);
      clamped = true;
    }
  }
  if (clamped) ++f.clamp_count;
  return u;
}

}  // namespace detail

// Concatenated bilinear plane features at x (the MLP input).
inline VecX plane_features(const TriplaneField& f, const Vec3& x) {
  const Vec3 u = detail::normalized_coords(f, x);
  VecX in(f.input_dim());
  for (int plane = 0; plane < 3; ++plane) {
    double a, b;
    detail::plane_axes(plane, u, a, b);
    const detail::BilinearSample s = detail::bilinear(a, b, f.plane_res);
    for (int c = 0; c < f.channels; ++c) {
      double val = 0.0;
      for (int di = 0; di < 2; ++di)
        for (int dj = 0; dj < 2; ++dj)
          val += s.w[di][dj] * f.plane_at(plane, s.i0 + di, s.j0 + dj, c);
      in[plane * f.channels + c] = val;
    }
  }
  return in;
}

inline Vec3 query(const TriplaneField& f, const Vec3& x) {
  const VecX in = plane_features(f, x);
  const VecX z1 = f.w1() * in + f.b1();
  const VecX h1 = z1.unaryExpr([](double z) { return detail::softplus(z); });
  const VecX z2 = f.w2() * h1 + f.b2();
  const VecX h2 = z2.unaryExpr([](double z) { return detail::softplus(z); });
  const Vec3 out = f.w3() * h2 + f.b3();
  if (!out.allFinite())
    throw std::invalid_argument("triplane query: non-finite output");
  return out;
}

// Gradient of sum_m upstream_m . field(xs_m) with respect to every parameter,
// reverse-mode through the MLP and the bilinear sampling.
inline VecX query_batch_with_param_grad(const TriplaneField& f,
                                        const std::vector<Vec3>& xs,
                                        const std::vector<Vec3>& upstream) {
  if (xs.size() != upstream.size())
    throw std::invalid_argument("triplane grad: batch size mismatch");
  f.validate();
  VecX grad = VecX::Zero(f.param_count());
  auto gw1 = Eigen::Map<MatX>(grad.data() + f.w1_offset(), f.hidden,
                              f.input_dim());
  auto gb1 = Eigen::Map<VecX>(grad.data() + f.b1_offset(), f.hidden);
  auto gw2 = Eigen::Map<MatX>(grad.data() + f.w2_offset(), f.hidden, f.hidden);
  auto gb2 = Eigen::Map<VecX>(grad.data() + f.b2_offset(), f.hidden);
  auto gw3 = Eigen::Map<MatX>(grad.data() + f.w3_offset(), 3, f.hidden);
  auto gb3 = Eigen::Map<VecX>(grad.data() + f.b3_offset(), 3);

  for (size_t m = 0; m < xs.size(); ++m) {
    const Vec3 u = detail::normalized_coords(f, xs[m]);
    const VecX in = plane_features(f, xs[m]);
    const VecX z1 = f.w1() * in + f.b1();
    const VecX h1 = z1.unaryExpr([](double z) { return detail::softplus(z); });
    const VecX z2 = f.w2() * h1 + f.b2();
    const VecX h2 = z2.unaryExpr([](double z) { return detail::softplus(z); });

    const Vec3 gout = upstream[m];
    gb3 += gout;
    gw3 += gout * h2.transpose();
    const VecX gh2 = f.w3().transpose() * gout;
    const VecX gz2 =
        gh2.array() * z2.unaryExpr([](double z) {
                          return detail::sigmoid(z);
                        }).array();
    gb2 += gz2;
    gw2 += gz2 * h1.transpose();
    const VecX gh1 = f.w2().transpose() * gz2;
    const VecX gz1 =
        gh1.array() * z1.unaryExpr([](double z) {
                          return detail::sigmoid(z);
                        }).array();
    gb1 += gz1;
    gw1 += gz1 * in.transpose();
    const VecX gin = f.w1().transpose() * gz1;

    for (int plane = 0; plane < 3; ++plane) {
      double a, b;
      detail::plane_axes(plane, u, a, b);
      const detail::BilinearSample s = detail::bilinear(a, b, f.plane_res);
      for (int c = 0; c < f.channels; ++c) {
        const double g = gin[plane * f.channels + c];
        for (int di = 0; di < 2; ++di)
          for (int dj = 0; dj < 2; ++dj)
            grad[plane * f.plane_entries() +
                 ((s.i0 + di) * f.plane_res + (s.j0 + dj)) * f.channels + c] +=
                s.w[di][dj] * g;
      }
    }
  }
  return grad;
}

struct TvResult {
  double value = 0.0;
  VecX grad;
};

// Squared-difference total variation over each plane lattice, rows and
// columns, boundary terms dropped. Gradient lands in the plane block of the
// flat parameter layout.
inline TvResult tv_loss(const TriplaneField& f) {
  TvResult result;
  result.grad = VecX::Zero(f.param_count());
  const int P = f.plane_res;
  for (int plane = 0; plane < 3; ++plane) {
    const int base = plane * f.plane_entries();
    const auto at = [&](int i, int j, int c) -> int {
      return base + (i * P + j) * f.channels + c;
    };
    for (int i = 0; i < P; ++i)
      for (int j = 0; j < P; ++j)
        for (int c = 0; c < f.channels; ++c) {
          if (i + 1 < P) {
            const double d = f.params[at(i + 1, j, c)] - f.params[at(i, j, c)];
            result.value += d * d;
            result.grad[at(i + 1, j, c)] += 2.0 * d;
            result.grad[at(i, j, c)] -= 2.0 * d;
          }
          if (j + 1 < P) {
            const double d = f.params[at(i, j + 1, c)] - f.params[at(i, j, c)];
            result.value += d * d;
            result.grad[at(i, j + 1, c)] += 2.0 * d;
            result.grad[at(i, j, c)] -= 2.0 * d;
          }
        }
  }
  return result;
}

}  // namespace motra
