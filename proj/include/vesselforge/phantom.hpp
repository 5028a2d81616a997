#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "vesselforge/common.hpp"
#include "vesselforge/volume.hpp"

namespace vesselforge {

// Synthetic vessel phantoms. Geometry lives in physical millimeters with the
// center of voxel (z,y,x) at (z*dz, y*dy, x*dx); a voxel is foreground when
// its center lies within one radius of a branch axis segment (a capsule).

namespace detail {

struct Vec3 {
  double z = 0.0, y = 0.0, x = 0.0;

  Vec3 operator+(const Vec3& o) const { return {z + o.z, y + o.y, x + o.x}; }
  Vec3 operator-(const Vec3& o) const { return {z - o.z, y - o.y, x - o.x}; }
  Vec3 operator*(double s) const { return {z * s, y * s, x * s}; }
};

inline double dot(const Vec3& a, const Vec3& b) { return a.z * b.z + a.y * b.y + a.x * b.x; }
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalized(const Vec3& a) {
  const double n = norm(a);
  if (n == 0.0) throw std::invalid_argument("phantom: zero-length direction");
  return a * (1.0 / n);
}

inline double point_segment_dist2(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double denom = dot(ab, ab);
  double t = denom > 0.0 ? dot(p - a, ab) / denom : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const Vec3 c = a + ab * t;
  return dot(p - c, p - c);
}

// Closest distance between two segments (clamped projection, Ericson-style).
inline double segment_segment_dist(const Vec3& a0, const Vec3& a1, const Vec3& b0, const Vec3& b1) {
  constexpr double eps = 1e-12;
  const Vec3 d1 = a1 - a0, d2 = b1 - b0, r = a0 - b0;
  const double a = dot(d1, d1), e = dot(d2, d2), f = dot(d2, r);
  double s = 0.0, t = 0.0;
  if (a <= eps && e <= eps) return norm(r);
  if (a <= eps) {
    t = std::clamp(f / e, 0.0, 1.0);
  } else {
    const double c = dot(d1, r);
    if (e <= eps) {
      s = std::clamp(-c / a, 0.0, 1.0);
    } else {
      const double b = dot(d1, d2);
      const double denom = a * e - b * b;
      s = denom != 0.0 ? std::clamp((b * f - c * e) / denom, 0.0, 1.0) : 0.0;
      t = (b * s + f) / e;
      if (t < 0.0) {
        t = 0.0;
        s = std::clamp(-c / a, 0.0, 1.0);
      } else if (t > 1.0) {
        t = 1.0;
        s = std::clamp((b - c) / a, 0.0, 1.0);
      }
    }
  }
  const Vec3 c1 = a0 + d1 * s;
  const Vec3 c2 = b0 + d2 * t;
  return norm(c1 - c2);
}

inline void rasterize_capsule(BinaryMask& mask, const Vec3& a, const Vec3& b, double radius) {
  const Dims& d = mask.dims;
  const Spacing& sp = mask.spacing;
  const double r2 = radius * radius;
  const auto lo_idx = [&](double v, double pitch, int64_t n) {
    return std::clamp(static_cast<int64_t>(std::floor(v / pitch)), int64_t{0}, n - 1);
  };
  const auto hi_idx = [&](double v, double pitch, int64_t n) {
    return std::clamp(static_cast<int64_t>(std::ceil(v / pitch)), int64_t{0}, n - 1);
  };
  const int64_t z0 = lo_idx(std::min(a.z, b.z) - radius, sp.dz, d.nz);
  const int64_t z1 = hi_idx(std::max(a.z, b.z) + radius, sp.dz, d.nz);
  const int64_t y0 = lo_idx(std::min(a.y, b.y) - radius, sp.dy, d.ny);
  const int64_t y1 = hi_idx(std::max(a.y, b.y) + radius, sp.dy, d.ny);
  const int64_t x0 = lo_idx(std::min(a.x, b.x) - radius, sp.dx, d.nx);
  const int64_t x1 = hi_idx(std::max(a.x, b.x) + radius, sp.dx, d.nx);
  for (int64_t z = z0; z <= z1; ++z) {
    for (int64_t y = y0; y <= y1; ++y) {
      for (int64_t x = x0; x <= x1; ++x) {
        const Vec3 p{static_cast<double>(z) * sp.dz, static_cast<double>(y) * sp.dy, static_cast<double>(x) * sp.dx};
        if (point_segment_dist2(p, a, b) <= r2) mask.at(z, y, x) = 1;
      }
    }
  }
}

inline Vec3 extent_mm(const Dims& d, const Spacing& sp) {
  return {static_cast<double>(d.nz - 1) * sp.dz, static_cast<double>(d.ny - 1) * sp.dy,
          static_cast<double>(d.nx - 1) * sp.dx};
}

}  // namespace detail

// ----------------------------------------------------------------- tube

struct TubeSpec {
  Dims dims;
  Spacing spacing;
  double radius_mm = 2.0;
  int axis = 0;  // 0=z, 1=y, 2=x
  double length_mm = 50.0;
  float vessel_intensity = 200.0f;
  float background_intensity = 60.0f;
  double noise_sigma = 0.0;
  uint64_t seed = 0;

  void validate() const {
    if (!dims.valid()) throw std::invalid_argument("TubeSpec: invalid dims");
    spacing.validate();
    if (!(radius_mm > 0.0)) throw std::invalid_argument("TubeSpec: radius_mm must be positive");
    if (!(length_mm > 0.0)) throw std::invalid_argument("TubeSpec: length_mm must be positive");
    if (axis < 0 || axis > 2) throw std::invalid_argument("TubeSpec: axis must be 0, 1 or 2");
    if (!(vessel_intensity > background_intensity))
      throw std::invalid_argument("TubeSpec: vessel intensity must exceed background intensity");
    if (!(noise_sigma >= 0.0)) throw std::invalid_argument("TubeSpec: noise_sigma must be non-negative");
  }
};

struct TubeTruth {
  double volume_mm3 = 0.0;  // exact cylinder pi*r^2*L
  double length_mm = 0.0;
  double radius_mm = 0.0;
};

struct TubePhantom {
  VolumeGrid grid;
  BinaryMask mask;
  TubeTruth truth;
};

inline TubePhantom generate_tube_phantom(const TubeSpec& spec) {
  spec.validate();
  const detail::Vec3 ext = detail::extent_mm(spec.dims, spec.spacing);

  // Axis through the central voxel-center row, centered along the tube axis.
  const std::array<int64_t, 3> n{spec.dims.nz, spec.dims.ny, spec.dims.nx};
  const std::array<double, 3> pitch{spec.spacing.dz, spec.spacing.dy, spec.spacing.dx};
  detail::Vec3 center{static_cast<double>(n[0] / 2) * pitch[0], static_cast<double>(n[1] / 2) * pitch[1],
                      static_cast<double>(n[2] / 2) * pitch[2]};
  detail::Vec3 dir{0.0, 0.0, 0.0};
  (spec.axis == 0 ? dir.z : spec.axis == 1 ? dir.y : dir.x) = 1.0;
  const detail::Vec3 a = center - dir * (spec.length_mm / 2.0);
  const detail::Vec3 b = center + dir * (spec.length_mm / 2.0);

  const std::array<double, 3> amm{a.z, a.y, a.x}, bmm{b.z, b.y, b.x}, extmm{ext.z, ext.y, ext.x};
  for (int k = 0; k < 3; ++k) {
    const double lo = std::min(amm[static_cast<size_t>(k)], bmm[static_cast<size_t>(k)]) - spec.radius_mm;
    const double hi = std::max(amm[static_cast<size_t>(k)], bmm[static_cast<size_t>(k)]) + spec.radius_mm;
    if (lo < 0.0 || hi > extmm[static_cast<size_t>(k)])
      throw std::invalid_argument("generate_tube_phantom: tube exceeds volume bounds");
  }

  TubePhantom out;
  out.mask.dims = spec.dims;
  out.mask.spacing = spec.spacing;
  out.mask.bits.assign(spec.dims.total(), 0);
  detail::rasterize_capsule(out.mask, a, b, spec.radius_mm);

  out.grid.dims = spec.dims;
  out.grid.spacing = spec.spacing;
  out.grid.voxels.resize(spec.dims.total());
  Rng noise(derive_seed(spec.seed, "noise"));
  for (size_t i = 0; i < out.grid.voxels.size(); ++i) {
    float v = out.mask.bits[i] ? spec.vessel_intensity : spec.background_intensity;
    if (spec.noise_sigma > 0.0) v += static_cast<float>(noise.normal(0.0, spec.noise_sigma));
    out.grid.voxels[i] = v;
  }

  out.truth.volume_mm3 = std::numbers::pi * spec.radius_mm * spec.radius_mm * spec.length_mm;
  out.truth.length_mm = spec.length_mm;
  out.truth.radius_mm = spec.radius_mm;
  return out;
}

// ----------------------------------------------------------------- tree

struct TreeParams {
  int depth = 3;
  double root_radius_mm = 2.0;
  double radius_decay = 0.78;
  double angle_min_deg = 25.0;
  double angle_max_deg = 40.0;
  double length_min_mm = 9.0;
  double length_max_mm = 13.0;
  double length_decay = 0.75;
  double min_clearance_mm = 1.0;
  std::array<double, 3> root_start_frac{0.12, 0.5, 0.5};  // (z,y,x) fractions of extent
  std::array<double, 3> root_direction{1.0, 0.0, 0.0};    // (z,y,x)

  void validate() const {
    if (depth < 0) throw std::invalid_argument("TreeParams: depth must be >= 0");
    if (!(root_radius_mm > 0.0)) throw std::invalid_argument("TreeParams: root_radius_mm must be positive");
    if (!(radius_decay > 0.0 && radius_decay <= 1.0))
      throw std::invalid_argument("TreeParams: radius_decay must lie in (0,1]");
    if (!(angle_min_deg >= 0.0 && angle_max_deg >= angle_min_deg && angle_max_deg < 90.0))
      throw std::invalid_argument("TreeParams: branch angles must satisfy 0 <= min <= max < 90");
    if (!(length_min_mm > 0.0 && length_max_mm >= length_min_mm))
      throw std::invalid_argument("TreeParams: segment lengths must satisfy 0 < min <= max");
    if (!(length_decay > 0.0 && length_decay <= 1.0))
      throw std::invalid_argument("TreeParams: length_decay must lie in (0,1]");
    if (!(min_clearance_mm >= 0.0)) throw std::invalid_argument("TreeParams: min_clearance_mm must be non-negative");
  }
};

struct IntensityParams {
  float vessel = 200.0f;
  float background = 60.0f;
  double noise_sigma = 0.0;
  int blob_count = 0;
  double blob_radius_min_mm = 2.0;
  double blob_radius_max_mm = 5.0;
  float blob_intensity = 25.0f;

  void validate() const {
    if (!(vessel > background)) throw std::invalid_argument("IntensityParams: vessel must exceed background");
    if (!(noise_sigma >= 0.0)) throw std::invalid_argument("IntensityParams: noise_sigma must be non-negative");
    if (blob_count < 0) throw std::invalid_argument("IntensityParams: blob_count must be >= 0");
    if (blob_count > 0 && !(blob_radius_min_mm > 0.0 && blob_radius_max_mm >= blob_radius_min_mm))
      throw std::invalid_argument("IntensityParams: blob radii must satisfy 0 < min <= max");
  }
};

struct PhantomSpec {
  Dims dims{64, 64, 64};
  Spacing spacing{0.7, 0.7, 0.7};
  TreeParams tree;
  IntensityParams intensity;
  uint64_t seed = 0;

  void validate() const {
    if (!dims.valid()) throw std::invalid_argument("PhantomSpec: invalid dims");
    spacing.validate();
    tree.validate();
    intensity.validate();
  }
};

struct TruthSegment {
  int32_t id = 0;
  int32_t parent = -1;
  std::array<double, 3> p0{}, p1{};  // physical mm, (z,y,x)
  double radius_mm = 0.0;
  double length_mm = 0.0;
  int depth = 0;
  bool truncated = false;
};

struct TreeTruth {
  std::vector<TruthSegment> segments;
  size_t n_endpoints = 0;
  size_t n_branchpoints = 0;
  double tree_length_mm = 0.0;
  double clearance_mm = std::numeric_limits<double>::infinity();
  bool clearance_ok = true;
  bool truncated_any = false;
};

struct TreePhantom {
  VolumeGrid grid;
  BinaryMask mask;
  TreeTruth truth;
};

namespace detail {

// Any pair of unit vectors perpendicular to d.
inline std::pair<Vec3, Vec3> perpendicular_basis(const Vec3& d) {
  const Vec3 pick = std::fabs(d.z) < 0.9 ? Vec3{1.0, 0.0, 0.0} : Vec3{0.0, 1.0, 0.0};
  Vec3 u{d.y * pick.x - d.x * pick.y, d.x * pick.z - d.z * pick.x, d.z * pick.y - d.y * pick.z};  // d x pick
  u = normalized(u);
  const Vec3 v{d.y * u.x - d.x * u.y, d.x * u.z - d.z * u.x, d.z * u.y - d.y * u.x};  // d x u
  return {u, v};
}

}  // namespace detail

inline TreePhantom generate_tree_phantom(const PhantomSpec& spec) {
  spec.validate();
  const detail::Vec3 ext = detail::extent_mm(spec.dims, spec.spacing);
  const detail::Vec3 root{spec.tree.root_start_frac[0] * ext.z, spec.tree.root_start_frac[1] * ext.y,
                          spec.tree.root_start_frac[2] * ext.x};
  const double r0 = spec.tree.root_radius_mm;
  if (root.z - r0 < 0.0 || root.z + r0 > ext.z || root.y - r0 < 0.0 || root.y + r0 > ext.y || root.x - r0 < 0.0 ||
      root.x + r0 > ext.x)
    throw std::invalid_argument("generate_tree_phantom: root outside volume bounds");

  TreePhantom out;
  TreeTruth& truth = out.truth;
  Rng geo(derive_seed(spec.seed, "tree-geometry"));

  // Largest step along dir from p that keeps the capsule of given radius
  // inside the volume.
  const auto max_step = [&](const detail::Vec3& p, const detail::Vec3& dir, double radius, double want) {
    double t = want;
    const std::array<double, 3> pc{p.z, p.y, p.x}, dc{dir.z, dir.y, dir.x}, ec{ext.z, ext.y, ext.x};
    for (int k = 0; k < 3; ++k) {
      const double d = dc[static_cast<size_t>(k)];
      if (d > 0.0)
        t = std::min(t, (ec[static_cast<size_t>(k)] - radius - pc[static_cast<size_t>(k)]) / d);
      else if (d < 0.0)
        t = std::min(t, (pc[static_cast<size_t>(k)] - radius) / (-d));
    }
    return t;
  };

  std::vector<int> child_count;
  const auto build = [&](auto&& self, int32_t parent, const detail::Vec3& p0, const detail::Vec3& dir, double radius,
                         int depth_idx) -> void {
    const double want =
        geo.uniform(spec.tree.length_min_mm, spec.tree.length_max_mm) * std::pow(spec.tree.length_decay, depth_idx);
    const double step = max_step(p0, dir, radius, want);
    if (step <= 0.0) {
      truth.truncated_any = true;
      return;
    }
    TruthSegment seg;
    seg.id = static_cast<int32_t>(truth.segments.size());
    seg.parent = parent;
    seg.p0 = {p0.z, p0.y, p0.x};
    const detail::Vec3 p1 = p0 + dir * step;
    seg.p1 = {p1.z, p1.y, p1.x};
    seg.radius_mm = radius;
    seg.length_mm = step;
    seg.depth = depth_idx;
    seg.truncated = step < want;
    if (seg.truncated) truth.truncated_any = true;
    truth.segments.push_back(seg);
    child_count.push_back(0);
    const int32_t my_id = seg.id;

    if (depth_idx >= spec.tree.depth || seg.truncated) return;
    const auto [u, v] = detail::perpendicular_basis(dir);
    const double phi = geo.uniform(0.0, 2.0 * std::numbers::pi);
    const double th1 = geo.uniform(spec.tree.angle_min_deg, spec.tree.angle_max_deg) * std::numbers::pi / 180.0;
    const double th2 = geo.uniform(spec.tree.angle_min_deg, spec.tree.angle_max_deg) * std::numbers::pi / 180.0;
    const detail::Vec3 side1 = u * std::cos(phi) + v * std::sin(phi);
    const detail::Vec3 side2 = side1 * -1.0;
    const detail::Vec3 d1 = detail::normalized(dir * std::cos(th1) + side1 * std::sin(th1));
    const detail::Vec3 d2 = detail::normalized(dir * std::cos(th2) + side2 * std::sin(th2));
    const double child_r = radius * spec.tree.radius_decay;
    const size_t before = truth.segments.size();
    self(self, my_id, p1, d1, child_r, depth_idx + 1);
    const size_t mid = truth.segments.size();
    self(self, my_id, p1, d2, child_r, depth_idx + 1);
    child_count[static_cast<size_t>(my_id)] =
        static_cast<int>((mid > before ? 1 : 0) + (truth.segments.size() > mid ? 1 : 0));
  };
  build(build, -1, root, detail::normalized({spec.tree.root_direction[0], spec.tree.root_direction[1],
                                             spec.tree.root_direction[2]}),
        r0, 0);

  for (size_t i = 0; i < truth.segments.size(); ++i) {
    truth.tree_length_mm += truth.segments[i].length_mm;
    if (child_count[i] == 0) ++truth.n_endpoints;
    if (child_count[i] == 2) ++truth.n_branchpoints;
  }
  if (!truth.segments.empty()) ++truth.n_endpoints;  // root start

  // Clearance between non-adjacent branches (adjacent = parent/child or
  // siblings, which legitimately touch at their shared node).
  for (size_t i = 0; i < truth.segments.size(); ++i) {
    for (size_t j = i + 1; j < truth.segments.size(); ++j) {
      const TruthSegment& a = truth.segments[i];
      const TruthSegment& b = truth.segments[j];
      if (b.parent == a.id || a.parent == b.id) continue;
      if (a.parent != -1 && a.parent == b.parent) continue;
      const double d = detail::segment_segment_dist({a.p0[0], a.p0[1], a.p0[2]}, {a.p1[0], a.p1[1], a.p1[2]},
                                                    {b.p0[0], b.p0[1], b.p0[2]}, {b.p1[0], b.p1[1], b.p1[2]}) -
                       a.radius_mm - b.radius_mm;
      truth.clearance_mm = std::min(truth.clearance_mm, d);
    }
  }
  truth.clearance_ok = truth.clearance_mm >= spec.tree.min_clearance_mm;

  out.mask.dims = spec.dims;
  out.mask.spacing = spec.spacing;
  out.mask.bits.assign(spec.dims.total(), 0);
  for (const auto& seg : truth.segments)
    detail::rasterize_capsule(out.mask, {seg.p0[0], seg.p0[1], seg.p0[2]}, {seg.p1[0], seg.p1[1], seg.p1[2]},
                              seg.radius_mm);

  out.grid.dims = spec.dims;
  out.grid.spacing = spec.spacing;
  out.grid.voxels.assign(spec.dims.total(), spec.intensity.background);

  if (spec.intensity.blob_count > 0) {
    Rng blobs(derive_seed(spec.seed, "blobs"));
    for (int bi = 0; bi < spec.intensity.blob_count; ++bi) {
      const detail::Vec3 c{blobs.uniform(0.0, ext.z), blobs.uniform(0.0, ext.y), blobs.uniform(0.0, ext.x)};
      const double br = blobs.uniform(spec.intensity.blob_radius_min_mm, spec.intensity.blob_radius_max_mm);
      const double br2 = br * br;
      size_t i = 0;
      for (int64_t z = 0; z < spec.dims.nz; ++z) {
        for (int64_t y = 0; y < spec.dims.ny; ++y) {
          for (int64_t x = 0; x < spec.dims.nx; ++x, ++i) {
            if (out.mask.bits[i]) continue;
            const double dz = static_cast<double>(z) * spec.spacing.dz - c.z;
            const double dy = static_cast<double>(y) * spec.spacing.dy - c.y;
            const double dx = static_cast<double>(x) * spec.spacing.dx - c.x;
            if (dz * dz + dy * dy + dx * dx <= br2) out.grid.voxels[i] = spec.intensity.blob_intensity;
          }
        }
      }
    }
  }

  for (size_t i = 0; i < out.grid.voxels.size(); ++i)
    if (out.mask.bits[i]) out.grid.voxels[i] = spec.intensity.vessel;
  if (spec.intensity.noise_sigma > 0.0) {
    Rng noise(derive_seed(spec.seed, "noise"));
    for (auto& v : out.grid.voxels) v += static_cast<float>(noise.normal(0.0, spec.intensity.noise_sigma));
  }
  return out;
}

// ------------------------------------------------------------ truth JSON

inline nlohmann::json tube_truth_to_json(const TubeTruth& t) {
  return nlohmann::json{{"kind", "tube"},
                        {"volume_mm3", t.volume_mm3},
                        {"length_mm", t.length_mm},
                        {"radius_mm", t.radius_mm}};
}

inline nlohmann::json tree_truth_to_json(const TreeTruth& t) {
  nlohmann::json segs = nlohmann::json::array();
  for (const auto& s : t.segments) {
    segs.push_back({{"id", s.id},
                    {"parent", s.parent},
                    {"p0_mm", s.p0},
                    {"p1_mm", s.p1},
                    {"radius_mm", s.radius_mm},
                    {"length_mm", s.length_mm},
                    {"depth", s.depth},
                    {"truncated", s.truncated}});
  }
  nlohmann::json j{{"kind", "tree"},
                   {"segments", std::move(segs)},
                   {"n_segments", t.segments.size()},
                   {"n_endpoints", t.n_endpoints},
                   {"n_branchpoints", t.n_branchpoints},
                   {"tree_length_mm", t.tree_length_mm},
                   {"clearance_ok", t.clearance_ok},
                   {"truncated_any", t.truncated_any}};
  if (std::isfinite(t.clearance_mm)) j["clearance_mm"] = t.clearance_mm;
  return j;
}

}  // namespace vesselforge
