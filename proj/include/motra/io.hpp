#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "motra/correspondence.hpp"
#include "motra/math.hpp"
#include "motra/mpm.hpp"
#include "motra/skinning.hpp"
#include "motra/triplane.hpp"

namespace motra {

// ---------------------------------------------------------------------------
// Binary matrix container: uint64 magic, int64 rows, int64 cols, then
// rows*cols float32 values row-major, all little-endian. Shared by feature
// files, point clouds, label vectors, and field parameters.
// ---------------------------------------------------------------------------

// "MOTRA1MX" read as a little-endian uint64.
constexpr std::uint64_t kMatrixMagic = 0x584D314152544F4DULL;

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_matrix(std::ostream& out, const MatX& m) {
  const std::uint64_t magic = kMatrixMagic;
  const std::int64_t rows = m.rows();
  const std::int64_t cols = m.cols();
  out.write(reinterpret_cast<const char*>(&magic), 8);
  out.write(reinterpret_cast<const char*>(&rows), 8);
  out.write(reinterpret_cast<const char*>(&cols), 8);
  std::vector<float> payload(static_cast<size_t>(rows * cols));
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c)
      payload[static_cast<size_t>(r * cols + c)] =
          static_cast<float>(m(r, c));
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!out) throw DataError("matrix write failed");
}

inline MatX read_matrix(std::istream& in, const std::string& context) {
  std::uint64_t magic = 0;
  in.read(reinterpret_cast<char*>(&magic), 8);
  if (in.gcount() != 8)
    throw DataError(context + ": malformed header at offset 0");
  if (magic != kMatrixMagic)
    throw DataError(context + ": bad magic at offset 0");
  std::int64_t rows = 0, cols = 0;
  in.read(reinterpret_cast<char*>(&rows), 8);
  if (in.gcount() != 8)
    throw DataError(context + ": malformed header at offset 8");
  in.read(reinterpret_cast<char*>(&cols), 8);
  if (in.gcount() != 8)
    throw DataError(context + ": malformed header at offset 16");
  if (rows < 0 || cols < 0 || (cols > 0 && rows > (1LL << 40) / cols))
    throw DataError(context + ": implausible dimensions " +
                    std::to_string(rows) + "x" + std::to_string(cols));
  const std::int64_t count = rows * cols;
  std::vector<float> payload(static_cast<size_t>(count));
  in.read(reinterpret_cast<char*>(payload.data()),
          static_cast<std::streamsize>(count * sizeof(float)));
  const std::int64_t got = in.gcount();
  if (got != static_cast<std::int64_t>(count * sizeof(float)))
    throw DataError(context + ": payload truncated at offset " +
                    std::to_string(24 + got) + " (expected " +
                    std::to_string(count) + " float32 values)");
  MatX m(rows, cols);
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) {
      const float v = payload[static_cast<size_t>(r * cols + c)];
      if (!std::isfinite(v))
        throw DataError(context + ": non-finite value at row " +
                        std::to_string(r) + " col " + std::to_string(c));
      m(r, c) = v;
    }
  return m;
}

inline void write_matrix_file(const std::filesystem::path& path,
                              const MatX& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  write_matrix(out, m);
}

inline MatX read_matrix_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path.string());
  return read_matrix(in, path.string());
}

inline void write_labels_file(const std::filesystem::path& path,
                              const std::vector<int>& labels) {
  MatX m(static_cast<Eigen::Index>(labels.size()), 1);
  for (size_t n = 0; n < labels.size(); ++n)
    m(static_cast<Eigen::Index>(n), 0) = labels[n];
  write_matrix_file(path, m);
}

inline std::vector<int> read_labels_file(const std::filesystem::path& path) {
  const MatX m = read_matrix_file(path);
  if (m.cols() != 1)
    throw DataError(path.string() + ": label file must have one column");
  std::vector<int> labels(m.rows());
  for (Eigen::Index n = 0; n < m.rows(); ++n)
    labels[n] = static_cast<int>(std::llround(m(n, 0)));
  return labels;
}

// Feature sets are three matrices concatenated in one file: vertices (N x 3),
// learned descriptors, then geometric descriptors.
inline void write_feature_set(const std::filesystem::path& path,
                              const FeatureSet& fs) {
  fs.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  write_matrix(out, fs.vertices);
  write_matrix(out, fs.diff);
  write_matrix(out, fs.geo);
}

inline FeatureSet read_feature_set(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path.string());
  const MatX vertices = read_matrix(in, path.string() + " (vertices)");
  if (vertices.cols() != 3)
    throw DataError(path.string() + ": vertex block must have 3 columns");
  FeatureSet fs;
  fs.vertices = vertices;
  fs.diff = read_matrix(in, path.string() + " (learned descriptors)");
  fs.geo = read_matrix(in, path.string() + " (geometric descriptors)");
  fs.validate();
  return fs;
}

// ---------------------------------------------------------------------------
// Point clouds. Canonical form is the matrix container with 3 (positions),
// 5 (+mass,volume), or 6 (+label) columns. PLY (ascii or binary_little_endian)
// is accepted on input and available for export so external viewers work.
// ---------------------------------------------------------------------------

struct PointCloud {
  std::vector<Vec3> positions;
  std::vector<double> mass;
  std::vector<double> volume;
  std::vector<int> labels;
  bool has_attributes = false;
  bool has_labels = false;

  size_t size() const { return positions.size(); }
};

inline PointCloud make_point_cloud(const ParticleState& state,
                                   const std::vector<int>& labels = {}) {
  PointCloud pc;
  pc.positions = state.x;
  pc.mass = state.mass;
  pc.volume = state.volume;
  pc.has_attributes = true;
  if (!labels.empty()) {
    pc.labels = labels;
    pc.has_labels = true;
  }
  return pc;
}

// All particle defaults here (mass 1, volume 1, F identity) satisfy the
// particle-state invariants; velocities start at rest.
inline ParticleState to_particle_state(const PointCloud& pc) {
  ParticleState s;
  s.resize(pc.size());
  s.x = pc.positions;
  if (pc.has_attributes) {
    s.mass = pc.mass;
    s.volume = pc.volume;
  } else {
    s.mass.assign(pc.size(), 1.0);
    s.volume.assign(pc.size(), 1.0);
  }
  return s;
}

inline void write_point_cloud(const std::filesystem::path& path,
                              const PointCloud& pc) {
  const int cols = pc.has_labels ? 6 : (pc.has_attributes ? 5 : 3);
  MatX m(static_cast<Eigen::Index>(pc.size()), cols);
  for (size_t n = 0; n < pc.size(); ++n) {
    const auto r = static_cast<Eigen::Index>(n);
    m(r, 0) = pc.positions[n].x();
    m(r, 1) = pc.positions[n].y();
    m(r, 2) = pc.positions[n].z();
    if (cols >= 5) {
      m(r, 3) = pc.mass[n];
      m(r, 4) = pc.volume[n];
    }
    if (cols >= 6) m(r, 5) = pc.labels[n];
  }
  write_matrix_file(path, m);
}

namespace detail {

struct PlyProperty {
  std::string name;
  int byte_size = 4;  // 4: float/int32, 8: double
  bool is_float = true;
};

inline PointCloud read_ply(std::istream& in, const std::string& context) {
  std::string line;
  int line_no = 0;
  const auto fail = [&](const std::string& msg) -> void {
    throw DataError(context + " line " + std::to_string(line_no) + ": " + msg);
  };
  const auto next_line = [&]() {
    if (!std::getline(in, line)) fail("unexpected end of header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    ++line_no;
  };

  next_line();
  if (line != "ply") fail("not a ply file");
  bool binary = false;
  bool saw_format = false;
  std::int64_t vertex_count = -1;
  std::vector<PlyProperty> props;
  bool in_vertex_element = false;
  while (true) {
    next_line();
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "comment" || word.empty()) continue;
    if (word == "format") {
      std::string kind, version;
      ls >> kind >> version;
      if (kind == "ascii") binary = false;
      else if (kind == "binary_little_endian") binary = true;
      else fail("unsupported format '" + kind + "'");
      saw_format = true;
    } else if (word == "element") {
      std::string name;
      std::int64_t count = 0;
      ls >> name >> count;
      if (name == "vertex") {
        vertex_count = count;
        in_vertex_element = true;
      } else if (count > 0) {
        fail("unsupported element '" + name + "'");
      } else {
        in_vertex_element = false;
      }
    } else if (word == "property") {
      if (!in_vertex_element) continue;
      std::string type, name;
      ls >> type >> name;
      PlyProperty p;
      p.name = name;
      if (type == "float" || type == "float32") {
        p.byte_size = 4;
        p.is_float = true;
      } else if (type == "double" || type == "float64") {
        p.byte_size = 8;
        p.is_float = true;
      } else if (type == "int" || type == "int32" || type == "uint" ||
                 type == "uint32") {
        p.byte_size = 4;
        p.is_float = false;
      } else {
        fail("unsupported property type '" + type + "'");
      }
      props.push_back(p);
    } else if (word == "end_header") {
      break;
    } else {
      fail("unrecognized header keyword '" + word + "'");
    }
  }
  if (!saw_format) fail("missing format line");
  if (vertex_count < 0) fail("missing vertex element");

  int ix = -1, iy = -1, iz = -1, imass = -1, ivolume = -1, ilabel = -1;
  for (size_t i = 0; i < props.size(); ++i) {
    if (props[i].name == "x") ix = static_cast<int>(i);
    if (props[i].name == "y") iy = static_cast<int>(i);
    if (props[i].name == "z") iz = static_cast<int>(i);
    if (props[i].name == "mass") imass = static_cast<int>(i);
    if (props[i].name == "volume") ivolume = static_cast<int>(i);
    if (props[i].name == "label") ilabel = static_cast<int>(i);
  }
  if (ix < 0 || iy < 0 || iz < 0) fail("missing x/y/z properties");

  PointCloud pc;
  pc.positions.resize(vertex_count);
  pc.has_attributes = imass >= 0 && ivolume >= 0;
  pc.has_labels = ilabel >= 0;
  if (pc.has_attributes) {
    pc.mass.resize(vertex_count);
    pc.volume.resize(vertex_count);
  }
  if (pc.has_labels) pc.labels.resize(vertex_count);

  std::vector<double> row(props.size());
  for (std::int64_t v = 0; v < vertex_count; ++v) {
    if (binary) {
      for (size_t i = 0; i < props.size(); ++i) {
        char buf[8];
        in.read(buf, props[i].byte_size);
        if (in.gcount() != props[i].byte_size)
          throw DataError(context + ": payload truncated at vertex " +
                          std::to_string(v));
        if (props[i].is_float && props[i].byte_size == 4) {
          float f;
          std::memcpy(&f, buf, 4);
          row[i] = f;
        } else if (props[i].is_float) {
          double d;
          std::memcpy(&d, buf, 8);
          row[i] = d;
        } else {
          std::int32_t n;
          std::memcpy(&n, buf, 4);
          row[i] = n;
        }
      }
    } else {
      next_line();
      std::istringstream ls(line);
      for (size_t i = 0; i < props.size(); ++i)
        if (!(ls >> row[i])) fail("short vertex row");
    }
    for (size_t i = 0; i < props.size(); ++i)
      if (!std::isfinite(row[i]))
        throw DataError(context + ": non-finite value at vertex " +
                        std::to_string(v));
    pc.positions[v] = Vec3(row[ix], row[iy], row[iz]);
    if (pc.has_attributes) {
      pc.mass[v] = row[imass];
      pc.volume[v] = row[ivolume];
    }
    if (pc.has_labels)
      pc.labels[v] = static_cast<int>(std::llround(row[ilabel]));
  }
  return pc;
}

}  // namespace detail

inline void write_ply(const std::filesystem::path& path,
                      const std::vector<Vec3>& positions,
                      const std::vector<int>& labels = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  const bool with_labels = !labels.empty();
  out << "ply\nformat binary_little_endian 1.0\n"
      << "element vertex " << positions.size() << "\n"
      << "property float x\nproperty float y\nproperty float z\n";
  if (with_labels) out << "property int label\n";
  out << "end_header\n";
  for (size_t n = 0; n < positions.size(); ++n) {
    const float xyz[3] = {static_cast<float>(positions[n].x()),
                          static_cast<float>(positions[n].y()),
                          static_cast<float>(positions[n].z())};
    out.write(reinterpret_cast<const char*>(xyz), 12);
    if (with_labels) {
      const std::int32_t l = labels[n];
      out.write(reinterpret_cast<const char*>(&l), 4);
    }
  }
  if (!out) throw DataError("ply write failed: " + path.string());
}

inline PointCloud parse_point_cloud(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path.string());
  char head[3] = {0, 0, 0};
  in.read(head, 3);
  in.seekg(0);
  if (head[0] == 'p' && head[1] == 'l' && head[2] == 'y')
    return detail::read_ply(in, path.string());

  const MatX m = read_matrix(in, path.string());
  if (m.rows() > 0 && m.cols() != 3 && m.cols() != 5 && m.cols() != 6)
    throw DataError(path.string() + ": point cloud must have 3, 5, or 6 " +
                    "columns, got " + std::to_string(m.cols()));
  PointCloud pc;
  pc.positions.resize(m.rows());
  pc.has_attributes = m.cols() >= 5;
  pc.has_labels = m.cols() >= 6;
  if (pc.has_attributes) {
    pc.mass.resize(m.rows());
    pc.volume.resize(m.rows());
  }
  if (pc.has_labels) pc.labels.resize(m.rows());
  for (Eigen::Index n = 0; n < m.rows(); ++n) {
    pc.positions[n] = Vec3(m(n, 0), m(n, 1), m(n, 2));
    if (pc.has_attributes) {
      pc.mass[n] = m(n, 3);
      pc.volume[n] = m(n, 4);
    }
    if (pc.has_labels) pc.labels[n] = static_cast<int>(std::llround(m(n, 5)));
  }
  return pc;
}

// ---------------------------------------------------------------------------
// Bone sequences: line-oriented text. Rotations are stored (w x y z) and must
// be unit within 1e-6 (then renormalized).
// ---------------------------------------------------------------------------

inline void write_bone_sequence(const std::filesystem::path& path,
                                const BoneSequence& seq) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out << "bones " << seq.bone_count() << "\n";
  out << "frame_dt " << fmt_double(seq.frame_dt) << "\n";
  for (const Bone& b : seq.canonical_bones) {
    out << "bone";
    for (int a = 0; a < 3; ++a) out << " " << fmt_double(b.center[a]);
    const Quat q(b.orientation);
    out << " " << fmt_double(q.w()) << " " << fmt_double(q.x()) << " "
        << fmt_double(q.y()) << " " << fmt_double(q.z());
    for (int a = 0; a < 3; ++a) out << " " << fmt_double(b.scales[a]);
    out << "\n";
  }
  out << "frames " << seq.frame_count() << "\n";
  const auto put_rt = [&](const char* tag, const RigidTransform& rt) {
    out << tag << " " << fmt_double(rt.rotation.w()) << " "
        << fmt_double(rt.rotation.x()) << " " << fmt_double(rt.rotation.y())
        << " " << fmt_double(rt.rotation.z());
    for (int a = 0; a < 3; ++a) out << " " << fmt_double(rt.translation[a]);
    out << "\n";
  };
  for (const BoneFrame& f : seq.frames) {
    out << "frame\n";
    put_rt("global", f.global);
    for (const RigidTransform& j : f.joints) put_rt("joint", j);
  }
  if (!out) throw DataError("bone sequence write failed: " + path.string());
}

namespace detail {

class LineReader {
 public:
  LineReader(std::istream& in, std::string context)
      : in_(in), context_(std::move(context)) {}

  // Next non-empty, non-comment line; empty optional at end of file.
  std::optional<std::string> next() {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      bool blank = true;
      for (char c : line)
        if (!std::isspace(static_cast<unsigned char>(c))) blank = false;
      if (!blank) return line;
    }
    return std::nullopt;
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw DataError(context_ + " line " + std::to_string(line_no_) + ": " +
                    msg);
  }

  std::string where() const {
    return context_ + " line " + std::to_string(line_no_);
  }

 private:
  std::istream& in_;
  std::string context_;
  int line_no_ = 0;
};

inline Quat parse_quat_tokens(std::istringstream& ls, LineReader& reader) {
  double w, x, y, z;
  if (!(ls >> w >> x >> y >> z)) reader.fail("expected quaternion w x y z");
  Quat q(w, x, y, z);
  const double norm = q.norm();
  if (std::abs(norm - 1.0) > 1e-6)
    reader.fail("non-unit quaternion (norm " + fmt_double(norm) + ")");
  return q.normalized();
}

inline RigidTransform parse_rigid(std::istringstream& ls, LineReader& reader) {
  RigidTransform rt;
  rt.rotation = parse_quat_tokens(ls, reader);
  if (!(ls >> rt.translation.x() >> rt.translation.y() >> rt.translation.z()))
    reader.fail("expected translation x y z");
  return rt;
}

}  // namespace detail

inline BoneSequence parse_bone_sequence(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path.string());
  detail::LineReader reader(in, path.string());

  const auto expect_line = [&](const std::string& keyword) {
    auto line = reader.next();
    if (!line) reader.fail("expected '" + keyword + "', got end of file");
    std::istringstream ls(*line);
    std::string word;
    ls >> word;
    if (word != keyword)
      reader.fail("expected '" + keyword + "', got '" + word + "'");
    return ls;
  };

  BoneSequence seq;
  {
    auto ls = expect_line("bones");
    int b = 0;
    if (!(ls >> b) || b < 1) reader.fail("invalid bone count");
    seq.canonical_bones.resize(b);
  }
  {
    auto ls = expect_line("frame_dt");
    if (!(ls >> seq.frame_dt) || !(seq.frame_dt > 0.0))
      reader.fail("invalid frame_dt");
  }
  for (Bone& bone : seq.canonical_bones) {
    auto ls = expect_line("bone");
    if (!(ls >> bone.center.x() >> bone.center.y() >> bone.center.z()))
      reader.fail("expected bone center x y z");
    bone.orientation = detail::parse_quat_tokens(ls, reader).toRotationMatrix();
    if (!(ls >> bone.scales.x() >> bone.scales.y() >> bone.scales.z()))
      reader.fail("expected bone scales x y z");
    try {
      bone.validate();
    } catch (const std::invalid_argument& e) {
      reader.fail(e.what());
    }
  }
  int frame_count = 0;
  {
    auto ls = expect_line("frames");
    if (!(ls >> frame_count) || frame_count < 1)
      reader.fail("invalid frame count");
  }
  seq.frames.resize(frame_count);
  for (BoneFrame& frame : seq.frames) {
    expect_line("frame");
    {
      auto ls = expect_line("global");
      frame.global = detail::parse_rigid(ls, reader);
    }
    frame.joints.resize(seq.canonical_bones.size());
    for (RigidTransform& joint : frame.joints) {
      auto ls = expect_line("joint");
      joint = detail::parse_rigid(ls, reader);
    }
  }
  try {
    seq.validate();
  } catch (const std::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Triplane field serialization: a meta matrix (1x9: plane_res, channels,
// hidden, domain lo, domain hi) followed by the parameter vector, both in the
// matrix container, concatenated in one file.
// ---------------------------------------------------------------------------

inline void save_field(const std::filesystem::path& path,
                       const TriplaneField& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  MatX meta(1, 9);
  meta << f.plane_res, f.channels, f.hidden, f.domain_box.lo.x(),
      f.domain_box.lo.y(), f.domain_box.lo.z(), f.domain_box.hi.x(),
      f.domain_box.hi.y(), f.domain_box.hi.z();
  write_matrix(out, meta);
  MatX params(f.params.size(), 1);
  params.col(0) = f.params;
  write_matrix(out, params);
}

inline TriplaneField load_field(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path.string());
  const MatX meta = read_matrix(in, path.string() + " (meta)");
  if (meta.rows() != 1 || meta.cols() != 9)
    throw DataError(path.string() + ": field meta must be 1x9");
  TriplaneField f;
  f.plane_res = static_cast<int>(std::llround(meta(0, 0)));
  f.channels = static_cast<int>(std::llround(meta(0, 1)));
  f.hidden = static_cast<int>(std::llround(meta(0, 2)));
  f.domain_box.lo = Vec3(meta(0, 3), meta(0, 4), meta(0, 5));
  f.domain_box.hi = Vec3(meta(0, 6), meta(0, 7), meta(0, 8));
  const MatX params = read_matrix(in, path.string() + " (params)");
  if (params.cols() != 1 || params.rows() != f.param_count())
    throw DataError(path.string() + ": field parameter count mismatch");
  f.params = params.col(0);
  f.validate();
  return f;
}

// ---------------------------------------------------------------------------
// Run configuration: key=value lines, '#' comments, unknown keys rejected.
// ---------------------------------------------------------------------------

struct RunConfig {
  std::string target_cloud;
  std::string target_features;
  std::string ref_features;
  std::string ref_labels;
  std::string bones;
  std::string out_dir = "out";

  int resolution = 64;
  int substeps = 24;
  double young = 1e4;
  double poisson = 0.3;
  Vec3 gravity = Vec3::Zero();
  int share_resolution = 41;
  std::string boundary = "open";  // open | sticky_floor
  std::optional<Aabb> domain;

  int iters = 200;
  double lr = 1e-2;
  double tv_weight = 1e-3;
  double loss_tol = 0.0;  // early stop when best loss falls below; 0 disables
  int phases = -1;        // -1: every consecutive frame pair

  int plane_res = 32;
  int channels = 16;
  int hidden = 64;

  double outlier_k = 2.0;
  std::uint64_t seed = 1;
  bool deterministic = true;
  double alpha = 1.0;
};

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

}  // namespace detail

inline RunConfig parse_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path.string());
  RunConfig rc;
  std::string line;
  int line_no = 0;
  Vec3 domain_lo = Vec3::Zero(), domain_hi = Vec3::Zero();
  bool has_lo = false, has_hi = false;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto where = path.string() + " line " + std::to_string(line_no);
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw DataError(where + ": expected key=value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    const auto fail = [&](const std::string& msg) -> void {
      throw DataError(where + ": " + msg + " for key '" + key + "'");
    };
    const auto as_double = [&]() {
      try {
        size_t pos = 0;
        const double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("");
        return v;
      } catch (...) {
        fail("invalid number '" + value + "'");
        return 0.0;
      }
    };
    const auto as_int = [&]() {
      try {
        size_t pos = 0;
        const long v = std::stol(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("");
        return static_cast<int>(v);
      } catch (...) {
        fail("invalid integer '" + value + "'");
        return 0;
      }
    };
    const auto as_vec3 = [&]() {
      std::istringstream ls(value);
      Vec3 v;
      if (!(ls >> v.x() >> v.y() >> v.z()))
        fail("expected three numbers, got '" + value + "'");
      std::string rest;
      if (ls >> rest) fail("trailing tokens in '" + value + "'");
      return v;
    };
    const auto as_bool = [&]() {
      if (value == "1" || value == "true") return true;
      if (value == "0" || value == "false") return false;
      fail("invalid boolean '" + value + "'");
      return false;
    };

    if (key == "target_cloud") rc.target_cloud = value;
    else if (key == "target_features") rc.target_features = value;
    else if (key == "ref_features") rc.ref_features = value;
    else if (key == "ref_labels") rc.ref_labels = value;
    else if (key == "bones") rc.bones = value;
    else if (key == "out_dir") rc.out_dir = value;
    else if (key == "resolution") rc.resolution = as_int();
    else if (key == "substeps") rc.substeps = as_int();
    else if (key == "young") rc.young = as_double();
    else if (key == "poisson") rc.poisson = as_double();
    else if (key == "gravity") rc.gravity = as_vec3();
    else if (key == "share_resolution") rc.share_resolution = as_int();
    else if (key == "boundary") {
      if (value != "open" && value != "sticky_floor")
        fail("must be 'open' or 'sticky_floor', got '" + value + "'");
      rc.boundary = value;
    } else if (key == "domain_lo") {
      domain_lo = as_vec3();
      has_lo = true;
    } else if (key == "domain_hi") {
      domain_hi = as_vec3();
      has_hi = true;
    } else if (key == "iters") rc.iters = as_int();
    else if (key == "lr") rc.lr = as_double();
    else if (key == "tv_weight") rc.tv_weight = as_double();
    else if (key == "loss_tol") rc.loss_tol = as_double();
    else if (key == "phases") rc.phases = as_int();
    else if (key == "plane_res") rc.plane_res = as_int();
    else if (key == "channels") rc.channels = as_int();
    else if (key == "hidden") rc.hidden = as_int();
    else if (key == "outlier_k") rc.outlier_k = as_double();
    else if (key == "seed") rc.seed = static_cast<std::uint64_t>(as_int());
    else if (key == "deterministic") rc.deterministic = as_bool();
    else if (key == "alpha") rc.alpha = as_double();
    else throw DataError(where + ": unknown key '" + key + "'");
  }
  if (has_lo != has_hi)
    throw DataError(path.string() +
                    ": domain_lo and domain_hi must be given together");
  if (has_lo) {
    if (!((domain_hi.array() > domain_lo.array()).all()))
      throw DataError(path.string() + ": empty explicit domain");
    rc.domain = Aabb{domain_lo, domain_hi};
  }
  return rc;
}

inline void write_run_config(const std::filesystem::path& path,
                             const RunConfig& rc) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  const auto put = [&](const std::string& key, const std::string& value) {
    out << key << " = " << value << "\n";
  };
  if (!rc.target_cloud.empty()) put("target_cloud", rc.target_cloud);
  if (!rc.target_features.empty()) put("target_features", rc.target_features);
  if (!rc.ref_features.empty()) put("ref_features", rc.ref_features);
  if (!rc.ref_labels.empty()) put("ref_labels", rc.ref_labels);
  if (!rc.bones.empty()) put("bones", rc.bones);
  put("out_dir", rc.out_dir);
  put("resolution", std::to_string(rc.resolution));
  put("substeps", std::to_string(rc.substeps));
  put("young", fmt_double(rc.young));
  put("poisson", fmt_double(rc.poisson));
  put("gravity", fmt_double(rc.gravity.x()) + " " + fmt_double(rc.gravity.y()) +
                     " " + fmt_double(rc.gravity.z()));
  put("share_resolution", std::to_string(rc.share_resolution));
  put("boundary", rc.boundary);
  if (rc.domain) {
    put("domain_lo", fmt_double(rc.domain->lo.x()) + " " +
                         fmt_double(rc.domain->lo.y()) + " " +
                         fmt_double(rc.domain->lo.z()));
    put("domain_hi", fmt_double(rc.domain->hi.x()) + " " +
                         fmt_double(rc.domain->hi.y()) + " " +
                         fmt_double(rc.domain->hi.z()));
  }
  put("iters", std::to_string(rc.iters));
  put("lr", fmt_double(rc.lr));
  put("tv_weight", fmt_double(rc.tv_weight));
  put("loss_tol", fmt_double(rc.loss_tol));
  put("phases", std::to_string(rc.phases));
  put("plane_res", std::to_string(rc.plane_res));
  put("channels", std::to_string(rc.channels));
  put("hidden", std::to_string(rc.hidden));
  put("outlier_k", fmt_double(rc.outlier_k));
  put("seed", std::to_string(rc.seed));
  put("deterministic", rc.deterministic ? "1" : "0");
  put("alpha", fmt_double(rc.alpha));
  if (!out) throw DataError("config write failed: " + path.string());
}

inline SimConfig make_sim_config(const RunConfig& rc, double frame_dt) {
  SimConfig sc;
  if (rc.substeps < 1) throw DataError("config: substeps must be >= 1");
  sc.substeps_per_frame = rc.substeps;
  sc.dt = frame_dt / rc.substeps;
  sc.gravity = rc.gravity;
  sc.grid.resolution = rc.resolution;
  sc.grid.domain = rc.domain;
  sc.material = MaterialParams::make(rc.young, rc.poisson);
  sc.boundary =
      rc.boundary == "sticky_floor" ? sticky_floor_boundary() : open_boundary();
  sc.share_resolution = rc.share_resolution;
  sc.deterministic = rc.deterministic;
  return sc;
}

// ---------------------------------------------------------------------------
// Synthetic scenes: deterministic desk-scale stand-ins with ground-truth
// labels and paired reference/target features.
// ---------------------------------------------------------------------------

enum class SceneKind { Box, TwoBoxHinge, BipedStick };

inline SceneKind scene_kind_from_string(const std::string& s) {
  if (s == "box") return SceneKind::Box;
  if (s == "two-box-hinge") return SceneKind::TwoBoxHinge;
  if (s == "biped-stick") return SceneKind::BipedStick;
  throw DataError("unknown scene kind '" + s +
                  "' (expected box, two-box-hinge, or biped-stick)");
}

struct SynthParams {
  int n_per_axis = 10;
  double side = 0.5;            // box edge length at scale 1
  double scale = 1.0;           // target size relative to the reference
  int frames = 4;
  double frame_dt = 0.1;
  Vec3 box_delta = Vec3(0.1, 0.0, 0.0);  // per-frame box bone translation
  double opening_degrees = 30.0;         // hinge lid total opening
  double swing_degrees = 10.0;           // biped leg swing amplitude
  double noise = 0.05;
  int diff_dim = 16;
  int geo_dim = 8;
  double mass = 1.0;
  std::uint64_t seed = 1;
};

namespace detail {

struct BlockSpec {
  Vec3 lo, hi;
  Vec3i counts;
  int label = 0;
};

// Cell-centered lattice filling each block; particle volume is the exact cell
// volume so the blocks tile without overlap.
inline void fill_blocks(const std::vector<BlockSpec>& blocks, double mass,
                        ParticleState& state, std::vector<int>& labels) {
  size_t total = 0;
  for (const auto& b : blocks)
    total += static_cast<size_t>(b.counts.x()) * b.counts.y() * b.counts.z();
  state.resize(total);
  labels.assign(total, 0);
  size_t p = 0;
  for (const auto& b : blocks) {
    const Vec3 ext = b.hi - b.lo;
    const Vec3 cell(ext.x() / b.counts.x(), ext.y() / b.counts.y(),
                    ext.z() / b.counts.z());
    const double volume = cell.x() * cell.y() * cell.z();
    for (int i = 0; i < b.counts.x(); ++i)
      for (int j = 0; j < b.counts.y(); ++j)
        for (int k = 0; k < b.counts.z(); ++k) {
          state.x[p] = b.lo + Vec3((i + 0.5) * cell.x(), (j + 0.5) * cell.y(),
                                   (k + 0.5) * cell.z());
          state.mass[p] = mass;
          state.volume[p] = volume;
          labels[p] = b.label;
          ++p;
        }
  }
}

inline Bone block_bone(const BlockSpec& b) {
  Bone bone;
  bone.center = 0.5 * (b.lo + b.hi);
  bone.scales = (0.5 * (b.hi - b.lo)).cwiseMax(1e-6);
  return bone;
}

// Rotation about an axis through a point, as a rigid transform.
inline RigidTransform hinge_rotation(double angle_rad, const Vec3& axis,
                                     const Vec3& point) {
  RigidTransform rt;
  rt.rotation = Quat(Eigen::AngleAxisd(angle_rad, axis.normalized()));
  rt.translation = point - rt.rotation * point;
  return rt;
}

inline std::vector<BlockSpec> scene_blocks(SceneKind kind,
                                           const SynthParams& params,
                                           double scale) {
  const int n = std::max(2, params.n_per_axis);
  std::vector<BlockSpec> blocks;
  if (kind == SceneKind::Box) {
    const double h = 0.5 * params.side * scale;
    blocks.push_back(
        {Vec3(-h, -h, -h), Vec3(h, h, h), Vec3i(n, n, n), 0});
  } else if (kind == SceneKind::TwoBoxHinge) {
    const double half = 0.25 * scale;
    const double th = 0.08 * scale;
    const int ny = std::max(2, n / 5);
    blocks.push_back({Vec3(-half, 0.0, -half), Vec3(half, th, half),
                      Vec3i(n, ny, n), 0});
    blocks.push_back({Vec3(-half, th, -half), Vec3(half, 2.0 * th, half),
                      Vec3i(n, ny, n), 1});
  } else {
    const double s = scale;
    const int nw = std::max(2, n / 2);
    blocks.push_back({Vec3(-0.15 * s, 0.5 * s, -0.1 * s),
                      Vec3(0.15 * s, 1.0 * s, 0.1 * s), Vec3i(nw, n, nw), 0});
    blocks.push_back({Vec3(-0.15 * s, 0.0, -0.1 * s),
                      Vec3(-0.02 * s, 0.5 * s, 0.1 * s), Vec3i(nw, n, nw), 1});
    blocks.push_back({Vec3(0.02 * s, 0.0, -0.1 * s),
                      Vec3(0.15 * s, 0.5 * s, 0.1 * s), Vec3i(nw, n, nw), 2});
  }
  return blocks;
}

inline BoneSequence scene_bones(SceneKind kind, const SynthParams& params,
                                const std::vector<BlockSpec>& blocks) {
  BoneSequence seq;
  seq.frame_dt = params.frame_dt;
  for (const auto& b : blocks) seq.canonical_bones.push_back(block_bone(b));
  const int frames = std::max(2, params.frames);
  seq.frames.resize(frames);
  for (int t = 0; t < frames; ++t) {
    BoneFrame& frame = seq.frames[t];
    frame.joints.assign(seq.canonical_bones.size(), RigidTransform{});
    if (kind == SceneKind::Box) {
      frame.joints[0].translation = t * params.box_delta;
    } else if (kind == SceneKind::TwoBoxHinge) {
      const double th = 0.08;  // canonical slab thickness (reference scale)
      const Vec3 hinge(-0.25, th, 0.0);
      const double angle = t * (params.opening_degrees * M_PI / 180.0) /
                           (frames - 1);
      frame.joints[1] = hinge_rotation(angle, Vec3(0, 0, 1), hinge);
    } else {
      const double amp = params.swing_degrees * M_PI / 180.0;
      const double phase = static_cast<double>(t) / (frames - 1);
      const Vec3 hip_l(-0.085, 0.5, 0.0);
      const Vec3 hip_r(0.085, 0.5, 0.0);
      frame.joints[1] =
          hinge_rotation(amp * std::sin(2.0 * M_PI * phase), Vec3(1, 0, 0),
                         hip_l);
      frame.joints[2] =
          hinge_rotation(-amp * std::sin(2.0 * M_PI * phase), Vec3(1, 0, 0),
                         hip_r);
    }
  }
  return seq;
}

}  // namespace detail

struct SynthScene {
  ParticleState particles;       // target geometry, at rest
  std::vector<int> true_labels;  // ground-truth target part labels
  BoneSequence bones;            // reference motion (reference scale)
  FeatureSet ref_features;
  std::vector<int> ref_labels;
  FeatureSet target_features;
};

inline SynthScene synth_scene(SceneKind kind, const SynthParams& params) {
  SynthScene scene;

  const auto ref_blocks = detail::scene_blocks(kind, params, 1.0);
  const auto target_blocks = detail::scene_blocks(kind, params, params.scale);

  ParticleState ref_state;
  detail::fill_blocks(ref_blocks, params.mass, ref_state, scene.ref_labels);
  detail::fill_blocks(target_blocks, params.mass, scene.particles,
                      scene.true_labels);

  scene.bones = detail::scene_bones(kind, params, ref_blocks);

  Mat3X ref_vertices(ref_state.size(), 3);
  for (size_t n = 0; n < ref_state.size(); ++n)
    ref_vertices.row(static_cast<Eigen::Index>(n)) = ref_state.x[n];
  Mat3X target_vertices(scene.particles.size(), 3);
  for (size_t n = 0; n < scene.particles.size(); ++n)
    target_vertices.row(static_cast<Eigen::Index>(n)) = scene.particles.x[n];

  scene.ref_features =
      synthetic_features(ref_vertices, scene.ref_labels, params.diff_dim,
                         params.geo_dim, params.noise, params.seed);
  scene.target_features =
      synthetic_features(target_vertices, scene.true_labels, params.diff_dim,
                         params.geo_dim, params.noise, params.seed + 1);
  return scene;
}

// ---------------------------------------------------------------------------
// Frame export: zero-padded point-cloud files plus a manifest.
// ---------------------------------------------------------------------------

struct FrameManifest {
  int count = 0;
  double frame_dt = 0.0;
};

inline std::string frame_file_name(int index, int count) {
  int width = 3;
  for (int v = count - 1; v >= 1000 && width < 10; v /= 10) ++width;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%0*d.bin", width, index);
  return buf;
}

inline void export_frames(const std::vector<ParticleState>& frames,
                          const std::vector<int>& labels,
                          const std::filesystem::path& dir, double frame_dt) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory: " + dir.string());
  const int count = static_cast<int>(frames.size());
  for (int i = 0; i < count; ++i)
    write_point_cloud(dir / frame_file_name(i, count),
                      make_point_cloud(frames[i], labels));
  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest)
    throw DataError("cannot write manifest in: " + dir.string());
  manifest << "count " << count << "\n";
  manifest << "frame_dt " << fmt_double(frame_dt) << "\n";
}

inline FrameManifest read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.txt");
  if (!in) throw DataError("cannot open manifest in: " + dir.string());
  FrameManifest m;
  std::string key;
  while (in >> key) {
    if (key == "count") in >> m.count;
    else if (key == "frame_dt") in >> m.frame_dt;
    else throw DataError("manifest: unknown key '" + key + "'");
  }
  return m;
}

}  // namespace motra
