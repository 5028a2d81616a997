#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vesselforge/common.hpp"
#include "vesselforge/volume.hpp"

namespace vesselforge {

struct AugmentationSpec {
  // weak: rigid family
  double rotation_deg = 15.0;  // per-axis angles drawn from U[-r, +r]
  double scale_min = 0.9, scale_max = 1.1;
  bool mirror_x = true, mirror_y = true, mirror_z = true;  // eligible axes, p=0.5 each
  // strong: elastic + intensity family
  int64_t elastic_spacing_vox = 16;
  double elastic_sigma_vox = 4.0;
  double gamma_min = 0.7, gamma_max = 1.4;
  uint64_t seed = 0;

  void validate() const {
    if (!(rotation_deg >= 0.0)) throw std::invalid_argument("AugmentationSpec: rotation_deg must be >= 0");
    if (!(scale_min > 0.0 && scale_min <= scale_max))
      throw std::invalid_argument("AugmentationSpec: scale range must be positive and ordered");
    if (elastic_spacing_vox < 1) throw std::invalid_argument("AugmentationSpec: elastic_spacing_vox must be >= 1");
    if (!(elastic_sigma_vox >= 0.0)) throw std::invalid_argument("AugmentationSpec: elastic_sigma_vox must be >= 0");
    if (!(gamma_min > 0.0 && gamma_min <= gamma_max))
      throw std::invalid_argument("AugmentationSpec: gamma range must be positive and ordered");
  }
};

inline nlohmann::json augmentation_to_json(const AugmentationSpec& s) {
  return {{"rotation_deg", s.rotation_deg}, {"scale_min", s.scale_min},
          {"scale_max", s.scale_max},       {"mirror_x", s.mirror_x},
          {"mirror_y", s.mirror_y},         {"mirror_z", s.mirror_z},
          {"elastic_spacing_vox", s.elastic_spacing_vox}, {"elastic_sigma_vox", s.elastic_sigma_vox},
          {"gamma_min", s.gamma_min},       {"gamma_max", s.gamma_max},
          {"seed", s.seed}};
}

inline AugmentationSpec augmentation_from_json(const nlohmann::json& j) {
  AugmentationSpec s;
  s.rotation_deg = j.at("rotation_deg").get<double>();
  s.scale_min = j.at("scale_min").get<double>();
  s.scale_max = j.at("scale_max").get<double>();
  s.mirror_x = j.at("mirror_x").get<bool>();
  s.mirror_y = j.at("mirror_y").get<bool>();
  s.mirror_z = j.at("mirror_z").get<bool>();
  s.elastic_spacing_vox = j.at("elastic_spacing_vox").get<int64_t>();
  s.elastic_sigma_vox = j.at("elastic_sigma_vox").get<double>();
  s.gamma_min = j.at("gamma_min").get<double>();
  s.gamma_max = j.at("gamma_max").get<double>();
  s.seed = j.at("seed").get<uint64_t>();
  s.validate();
  return s;
}

// ------------------------------------------------------------- weak (rigid)

struct WeakDraw {
  double angle_z_deg = 0.0, angle_y_deg = 0.0, angle_x_deg = 0.0;
  double scale = 1.0;
  bool mirror_z = false, mirror_y = false, mirror_x = false;
};

inline WeakDraw draw_weak(const AugmentationSpec& spec, uint64_t draw_seed) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, "weak-draw", draw_seed));
  WeakDraw d;
  d.angle_z_deg = rng.uniform(-spec.rotation_deg, spec.rotation_deg);
  d.angle_y_deg = rng.uniform(-spec.rotation_deg, spec.rotation_deg);
  d.angle_x_deg = rng.uniform(-spec.rotation_deg, spec.rotation_deg);
  d.scale = rng.uniform(spec.scale_min, spec.scale_max);
  if (spec.mirror_z) d.mirror_z = rng.uniform() < 0.5;
  if (spec.mirror_y) d.mirror_y = rng.uniform() < 0.5;
  if (spec.mirror_x) d.mirror_x = rng.uniform() < 0.5;
  return d;
}

namespace detail {

using Mat3 = std::array<std::array<double, 3>, 3>;  // acts on (x, y, z) physical vectors

inline Mat3 mat_mul(const Mat3& a, const Mat3& b) {
  Mat3 m{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) m[i][j] += a[i][k] * b[k][j];
  return m;
}

inline Mat3 rotation_matrix(double az_deg, double ay_deg, double ax_deg) {
  const double az = az_deg * std::numbers::pi / 180.0;
  const double ay = ay_deg * std::numbers::pi / 180.0;
  const double ax = ax_deg * std::numbers::pi / 180.0;
  const Mat3 rz{{{std::cos(az), -std::sin(az), 0}, {std::sin(az), std::cos(az), 0}, {0, 0, 1}}};
  const Mat3 ry{{{std::cos(ay), 0, std::sin(ay)}, {0, 1, 0}, {-std::sin(ay), 0, std::cos(ay)}}};
  const Mat3 rx{{{1, 0, 0}, {0, std::cos(ax), -std::sin(ax)}, {0, std::sin(ax), std::cos(ax)}}};
  return mat_mul(rz, mat_mul(ry, rx));
}

struct OobSampler {
  const VolumeGrid* grid;
  float fill;

  float trilinear(double z, double y, double x) const {
    const Dims& d = grid->dims;
    if (z < 0.0 || y < 0.0 || x < 0.0 || z > static_cast<double>(d.nz - 1) || y > static_cast<double>(d.ny - 1) ||
        x > static_cast<double>(d.nx - 1))
      return fill;
    const auto z0 = static_cast<int64_t>(std::floor(z));
    const auto y0 = static_cast<int64_t>(std::floor(y));
    const auto x0 = static_cast<int64_t>(std::floor(x));
    const auto z1 = std::min(z0 + 1, d.nz - 1);
    const auto y1 = std::min(y0 + 1, d.ny - 1);
    const auto x1 = std::min(x0 + 1, d.nx - 1);
    const double fz = z - static_cast<double>(z0);
    const double fy = y - static_cast<double>(y0);
    const double fx = x - static_cast<double>(x0);
    const double c00 = grid->at(z0, y0, x0) * (1 - fx) + grid->at(z0, y0, x1) * fx;
    const double c01 = grid->at(z0, y1, x0) * (1 - fx) + grid->at(z0, y1, x1) * fx;
    const double c10 = grid->at(z1, y0, x0) * (1 - fx) + grid->at(z1, y0, x1) * fx;
    const double c11 = grid->at(z1, y1, x0) * (1 - fx) + grid->at(z1, y1, x1) * fx;
    const double c0 = c00 * (1 - fy) + c01 * fy;
    const double c1 = c10 * (1 - fy) + c11 * fy;
    return static_cast<float>(c0 * (1 - fz) + c1 * fz);
  }
};

inline uint8_t sample_mask_nearest_oob(const BinaryMask& m, double z, double y, double x) {
  const auto zi = static_cast<int64_t>(std::floor(z + 0.5));
  const auto yi = static_cast<int64_t>(std::floor(y + 0.5));
  const auto xi = static_cast<int64_t>(std::floor(x + 0.5));
  if (!m.dims.contains(zi, yi, xi)) return 0;
  return m.at(zi, yi, xi);
}

inline float grid_min(const VolumeGrid& g) {
  float lo = g.voxels.empty() ? 0.0f : g.voxels[0];
  for (const float v : g.voxels) lo = std::min(lo, v);
  return lo;
}

}  // namespace detail

// Rotation ∘ isotropic scale ∘ mirror about the physical volume center; the
// grid resamples trilinearly, the mask by nearest neighbor. Pure mirrors
// (all angles 0, scale 1) reduce to exact index flips, so mirror twice is a
// bit-exact involution and the identity draw is a true no-op.
inline std::pair<VolumeGrid, BinaryMask> apply_weak_with(const VolumeGrid& grid, const BinaryMask& mask,
                                                         const WeakDraw& d) {
  detail::require_same_dims(grid.dims, mask.dims, "apply_weak");
  const Dims& dims = grid.dims;
  VolumeGrid out_grid(dims, grid.spacing);
  BinaryMask out_mask(dims, mask.spacing);

  if (d.angle_z_deg == 0.0 && d.angle_y_deg == 0.0 && d.angle_x_deg == 0.0 && d.scale == 1.0) {
    size_t i = 0;
    for (int64_t z = 0; z < dims.nz; ++z) {
      const int64_t sz = d.mirror_z ? dims.nz - 1 - z : z;
      for (int64_t y = 0; y < dims.ny; ++y) {
        const int64_t sy = d.mirror_y ? dims.ny - 1 - y : y;
        for (int64_t x = 0; x < dims.nx; ++x, ++i) {
          const int64_t sx = d.mirror_x ? dims.nx - 1 - x : x;
          const size_t src = dims.index(sz, sy, sx);
          out_grid.voxels[i] = grid.voxels[src];
          out_mask.bits[i] = mask.bits[src];
        }
      }
    }
    return {std::move(out_grid), std::move(out_mask)};
  }

  const detail::Mat3 rot = detail::rotation_matrix(d.angle_z_deg, d.angle_y_deg, d.angle_x_deg);
  const double cz = static_cast<double>(dims.nz - 1) / 2.0;
  const double cy = static_cast<double>(dims.ny - 1) / 2.0;
  const double cx = static_cast<double>(dims.nx - 1) / 2.0;
  const detail::OobSampler sampler{&grid, detail::grid_min(grid)};
  const double inv_scale = 1.0 / d.scale;

  size_t i = 0;
  for (int64_t z = 0; z < dims.nz; ++z) {
    for (int64_t y = 0; y < dims.ny; ++y) {
      for (int64_t x = 0; x < dims.nx; ++x, ++i) {
        // Physical offset of this output voxel from the center.
        const double px = (static_cast<double>(x) - cx) * grid.spacing.dx;
        const double py = (static_cast<double>(y) - cy) * grid.spacing.dy;
        const double pz = (static_cast<double>(z) - cz) * grid.spacing.dz;
        // Invert rotation (transpose), then scale, then mirror.
        double sx = (rot[0][0] * px + rot[1][0] * py + rot[2][0] * pz) * inv_scale;
        double sy = (rot[0][1] * px + rot[1][1] * py + rot[2][1] * pz) * inv_scale;
        double sz = (rot[0][2] * px + rot[1][2] * py + rot[2][2] * pz) * inv_scale;
        if (d.mirror_x) sx = -sx;
        if (d.mirror_y) sy = -sy;
        if (d.mirror_z) sz = -sz;
        const double vx = sx / grid.spacing.dx + cx;
        const double vy = sy / grid.spacing.dy + cy;
        const double vz = sz / grid.spacing.dz + cz;
        out_grid.voxels[i] = sampler.trilinear(vz, vy, vx);
        out_mask.bits[i] = detail::sample_mask_nearest_oob(mask, vz, vy, vx);
      }
    }
  }
  return {std::move(out_grid), std::move(out_mask)};
}

inline std::pair<VolumeGrid, BinaryMask> apply_weak(const VolumeGrid& grid, const BinaryMask& mask,
                                                    const AugmentationSpec& spec, uint64_t draw_seed) {
  return apply_weak_with(grid, mask, draw_weak(spec, draw_seed));
}

// ---------------------------------------------------------- strong (elastic)

// Gamma maps intensities through v -> lo + (hi-lo) * ((v-lo)/(hi-lo))^gamma,
// so the intensity range is preserved; gamma == 1 and constant grids are
// exact no-ops.
inline VolumeGrid gamma_correct(const VolumeGrid& grid, double gamma) {
  if (!(gamma > 0.0)) throw std::invalid_argument("gamma_correct: gamma must be positive");
  if (gamma == 1.0) return grid;
  float lo = detail::grid_min(grid);
  float hi = lo;
  for (const float v : grid.voxels) hi = std::max(hi, v);
  if (hi == lo) return grid;
  VolumeGrid out = grid;
  const double span = static_cast<double>(hi) - static_cast<double>(lo);
  for (auto& v : out.voxels) {
    const double t = (static_cast<double>(v) - static_cast<double>(lo)) / span;
    v = static_cast<float>(static_cast<double>(lo) + span * std::pow(t, gamma));
  }
  return out;
}

// Dense displacement field from a coarse control grid of N(0, sigma) vectors,
// trilinearly interpolated; source position = output index + displacement.
inline std::pair<VolumeGrid, BinaryMask> elastic_warp(const VolumeGrid& grid, const BinaryMask& mask,
                                                      int64_t spacing_vox, double sigma_vox, Rng& rng) {
  detail::require_same_dims(grid.dims, mask.dims, "elastic_warp");
  if (spacing_vox < 1) throw std::invalid_argument("elastic_warp: spacing must be >= 1");
  if (!(sigma_vox >= 0.0)) throw std::invalid_argument("elastic_warp: sigma must be >= 0");
  const Dims& dims = grid.dims;

  const auto control_count = [&](int64_t n) { return (n - 1) / spacing_vox + 2; };
  const Dims cdims{control_count(dims.nz), control_count(dims.ny), control_count(dims.nx)};
  std::vector<std::array<double, 3>> field(cdims.total());
  for (auto& v : field) v = {rng.normal(0.0, sigma_vox), rng.normal(0.0, sigma_vox), rng.normal(0.0, sigma_vox)};

  if (sigma_vox == 0.0) return {grid, mask};

  VolumeGrid out_grid(dims, grid.spacing);
  BinaryMask out_mask(dims, mask.spacing);
  const detail::OobSampler sampler{&grid, detail::grid_min(grid)};

  const auto field_at = [&](double z, double y, double x, int comp) {
    // Control lattice sits at voxel coordinates c*spacing; the +2 sizing above
    // guarantees ceil coordinates stay inside.
    const double gz = z / static_cast<double>(spacing_vox);
    const double gy = y / static_cast<double>(spacing_vox);
    const double gx = x / static_cast<double>(spacing_vox);
    const auto z0 = static_cast<int64_t>(std::floor(gz));
    const auto y0 = static_cast<int64_t>(std::floor(gy));
    const auto x0 = static_cast<int64_t>(std::floor(gx));
    const double fz = gz - static_cast<double>(z0);
    const double fy = gy - static_cast<double>(y0);
    const double fx = gx - static_cast<double>(x0);
    const auto at = [&](int64_t zz, int64_t yy, int64_t xx) { return field[cdims.index(zz, yy, xx)][static_cast<size_t>(comp)]; };
    const double c00 = at(z0, y0, x0) * (1 - fx) + at(z0, y0, x0 + 1) * fx;
    const double c01 = at(z0, y0 + 1, x0) * (1 - fx) + at(z0, y0 + 1, x0 + 1) * fx;
    const double c10 = at(z0 + 1, y0, x0) * (1 - fx) + at(z0 + 1, y0, x0 + 1) * fx;
    const double c11 = at(z0 + 1, y0 + 1, x0) * (1 - fx) + at(z0 + 1, y0 + 1, x0 + 1) * fx;
    return (c00 * (1 - fy) + c01 * fy) * (1 - fz) + (c10 * (1 - fy) + c11 * fy) * fz;
  };

  size_t i = 0;
  for (int64_t z = 0; z < dims.nz; ++z) {
    for (int64_t y = 0; y < dims.ny; ++y) {
      for (int64_t x = 0; x < dims.nx; ++x, ++i) {
        const double fz = static_cast<double>(z), fy = static_cast<double>(y), fx = static_cast<double>(x);
        const double sz = fz + field_at(fz, fy, fx, 0);
        const double sy = fy + field_at(fz, fy, fx, 1);
        const double sx = fx + field_at(fz, fy, fx, 2);
        out_grid.voxels[i] = sampler.trilinear(sz, sy, sx);
        out_mask.bits[i] = detail::sample_mask_nearest_oob(mask, sz, sy, sx);
      }
    }
  }
  return {std::move(out_grid), std::move(out_mask)};
}

inline std::pair<VolumeGrid, BinaryMask> apply_strong(const VolumeGrid& grid, const BinaryMask& mask,
                                                      const AugmentationSpec& spec, uint64_t draw_seed) {
  spec.validate();
  detail::require_same_dims(grid.dims, mask.dims, "apply_strong");
  Rng rng(derive_seed(spec.seed, "strong-draw", draw_seed));
  auto warped = elastic_warp(grid, mask, spec.elastic_spacing_vox, spec.elastic_sigma_vox, rng);
  const double gamma = rng.uniform(spec.gamma_min, spec.gamma_max);
  return {gamma_correct(warped.first, gamma), std::move(warped.second)};
}

}  // namespace vesselforge
