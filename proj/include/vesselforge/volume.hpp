#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "vesselforge/common.hpp"

namespace vesselforge {

// ---------------------------------------------------------------- core types

struct Dims {
  int64_t nz = 0, ny = 0, nx = 0;

  size_t total() const { return static_cast<size_t>(nz) * static_cast<size_t>(ny) * static_cast<size_t>(nx); }
  bool operator==(const Dims&) const = default;
  bool valid() const { return nz > 0 && ny > 0 && nx > 0; }
  bool contains(int64_t z, int64_t y, int64_t x) const {
    return z >= 0 && z < nz && y >= 0 && y < ny && x >= 0 && x < nx;
  }
  size_t index(int64_t z, int64_t y, int64_t x) const {
    return (static_cast<size_t>(z) * static_cast<size_t>(ny) + static_cast<size_t>(y)) * static_cast<size_t>(nx) +
           static_cast<size_t>(x);
  }
};

// Millimeters per voxel along each axis.
struct Spacing {
  double dz = 1.0, dy = 1.0, dx = 1.0;

  bool operator==(const Spacing&) const = default;
  void validate() const {
    if (!(dz > 0.0 && dy > 0.0 && dx > 0.0) || !std::isfinite(dz) || !std::isfinite(dy) || !std::isfinite(dx))
      throw std::invalid_argument("Spacing: all components must be positive and finite");
  }
  double voxel_volume_mm3() const { return dz * dy * dx; }
};

// Scalar intensities on a 3D grid, z-major row-major order.
struct VolumeGrid {
  Dims dims;
  Spacing spacing;
  std::vector<float> voxels;

  VolumeGrid() = default;
  VolumeGrid(Dims d, Spacing s, float fill = 0.0f) : dims(d), spacing(s), voxels(d.total(), fill) {}

  float at(int64_t z, int64_t y, int64_t x) const { return voxels[dims.index(z, y, x)]; }
  float& at(int64_t z, int64_t y, int64_t x) { return voxels[dims.index(z, y, x)]; }
};

// One boolean per voxel; 1 marks vessel.
struct BinaryMask {
  Dims dims;
  Spacing spacing;
  std::vector<uint8_t> bits;

  BinaryMask() = default;
  BinaryMask(Dims d, Spacing s, uint8_t fill = 0) : dims(d), spacing(s), bits(d.total(), fill) {}

  uint8_t at(int64_t z, int64_t y, int64_t x) const { return bits[dims.index(z, y, x)]; }
  uint8_t& at(int64_t z, int64_t y, int64_t x) { return bits[dims.index(z, y, x)]; }
  size_t count_foreground() const {
    return static_cast<size_t>(std::count_if(bits.begin(), bits.end(), [](uint8_t b) { return b != 0; }));
  }
};

// Labels 1..count are assigned in order of each component's minimal linear
// voxel index, so the labeling is canonical and reproducible.
struct LabeledComponents {
  Dims dims;
  std::vector<int32_t> labels;  // 0 = background
  int32_t count = 0;
  std::vector<size_t> sizes;  // sizes[i] is the voxel count of label i+1
};

enum class Connectivity { Six = 6, TwentySix = 26 };

namespace detail {

inline const std::vector<std::array<int, 3>>& neighbor_offsets(Connectivity conn) {
  static const std::vector<std::array<int, 3>> six = {
      {{-1, 0, 0}}, {{1, 0, 0}}, {{0, -1, 0}}, {{0, 1, 0}}, {{0, 0, -1}}, {{0, 0, 1}}};
  static const std::vector<std::array<int, 3>> twentysix = [] {
    std::vector<std::array<int, 3>> v;
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          if (dz || dy || dx) v.push_back({dz, dy, dx});
    return v;
  }();
  return conn == Connectivity::Six ? six : twentysix;
}

inline void require_same_dims(const Dims& a, const Dims& b, const char* what) {
  if (!(a == b)) throw std::invalid_argument(std::string(what) + ": dims mismatch");
}

}  // namespace detail

// ---------------------------------------------------------------- file I/O
//
// A volume is stored as a pair: <base>.vvol.json carries the header and
// <base>.vvol.raw carries the payload (little-endian, z-major row-major).

namespace detail {

inline std::filesystem::path vvol_base(const std::filesystem::path& path) {
  std::string s = path.string();
  for (const char* suffix : {".vvol.json", ".vvol.raw"}) {
    if (s.size() > std::strlen(suffix) && s.ends_with(suffix)) {
      return std::filesystem::path(s.substr(0, s.size() - std::strlen(suffix)));
    }
  }
  return path;
}

inline void write_vvol(const Dims& dims, const Spacing& spacing, const char* dtype, const void* data,
                       size_t byte_count, const std::filesystem::path& path) {
  const auto base = vvol_base(path);
  nlohmann::json header = {
      {"dims", {dims.nz, dims.ny, dims.nx}},
      {"spacing_mm", {spacing.dz, spacing.dy, spacing.dx}},
      {"dtype", dtype},
      {"order", "zyx-row-major"},
      {"endianness", "little"},
  };
  {
    std::ofstream f(base.string() + ".vvol.json", std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + base.string() + ".vvol.json");
    f << header.dump(2) << "\n";
  }
  {
    std::ofstream f(base.string() + ".vvol.raw", std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + base.string() + ".vvol.raw");
    f.write(static_cast<const char*>(data), static_cast<std::streamsize>(byte_count));
    if (!f) throw std::runtime_error("short write on " + base.string() + ".vvol.raw");
  }
}

struct VvolHeader {
  Dims dims;
  Spacing spacing;
  std::string dtype;
};

inline VvolHeader read_vvol_header(const std::filesystem::path& base) {
  const auto header_path = base.string() + ".vvol.json";
  std::ifstream f(header_path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + header_path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(header_path + ": invalid JSON header: " + e.what());
  }
  VvolHeader h;
  try {
    auto d = j.at("dims");
    h.dims = Dims{d.at(0).get<int64_t>(), d.at(1).get<int64_t>(), d.at(2).get<int64_t>()};
    auto s = j.at("spacing_mm");
    h.spacing = Spacing{s.at(0).get<double>(), s.at(1).get<double>(), s.at(2).get<double>()};
    h.dtype = j.at("dtype").get<std::string>();
    if (j.at("order").get<std::string>() != "zyx-row-major")
      throw std::runtime_error(header_path + ": unsupported order");
    if (j.at("endianness").get<std::string>() != "little")
      throw std::runtime_error(header_path + ": unsupported endianness");
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(header_path + ": bad header field: " + e.what());
  }
  if (!h.dims.valid()) throw std::runtime_error(header_path + ": non-positive dims");
  try {
    h.spacing.validate();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(header_path + ": " + e.what());
  }
  return h;
}

inline std::vector<char> read_raw(const std::filesystem::path& base, size_t expected_bytes) {
  const auto raw_path = base.string() + ".vvol.raw";
  std::ifstream f(raw_path, std::ios::binary | std::ios::ate);
  if (!f) throw std::runtime_error("cannot open " + raw_path);
  const auto size = static_cast<size_t>(f.tellg());
  if (size != expected_bytes)
    throw std::runtime_error(raw_path + ": payload is " + std::to_string(size) + " bytes, header implies " +
                             std::to_string(expected_bytes));
  std::vector<char> buf(size);
  f.seekg(0);
  f.read(buf.data(), static_cast<std::streamsize>(size));
  if (!f) throw std::runtime_error("short read on " + raw_path);
  return buf;
}

}  // namespace detail

inline void save_volume(const VolumeGrid& grid, const std::filesystem::path& path) {
  detail::write_vvol(grid.dims, grid.spacing, "f32", grid.voxels.data(), grid.voxels.size() * sizeof(float), path);
}

inline void save_volume(const BinaryMask& mask, const std::filesystem::path& path) {
  detail::write_vvol(mask.dims, mask.spacing, "u8", mask.bits.data(), mask.bits.size(), path);
}

inline VolumeGrid load_volume(const std::filesystem::path& path) {
  const auto base = detail::vvol_base(path);
  const auto h = detail::read_vvol_header(base);
  if (h.dtype != "f32") throw std::runtime_error(base.string() + ".vvol.json: expected dtype f32, got " + h.dtype);
  const auto buf = detail::read_raw(base, h.dims.total() * sizeof(float));
  VolumeGrid grid(h.dims, h.spacing);
  std::memcpy(grid.voxels.data(), buf.data(), buf.size());
  for (float v : grid.voxels)
    if (!std::isfinite(v)) throw std::runtime_error(base.string() + ".vvol.raw: non-finite voxel value");
  return grid;
}

inline BinaryMask load_mask(const std::filesystem::path& path) {
  const auto base = detail::vvol_base(path);
  const auto h = detail::read_vvol_header(base);
  if (h.dtype != "u8") throw std::runtime_error(base.string() + ".vvol.json: expected dtype u8, got " + h.dtype);
  const auto buf = detail::read_raw(base, h.dims.total());
  BinaryMask mask(h.dims, h.spacing);
  for (size_t i = 0; i < buf.size(); ++i) {
    const auto b = static_cast<uint8_t>(buf[i]);
    if (b > 1) throw std::runtime_error(base.string() + ".vvol.raw: mask value out of {0,1}");
    mask.bits[i] = b;
  }
  return mask;
}

// ------------------------------------------------------- VESSEL12 point CSV

struct Vessel12Point {
  int64_t x = 0, y = 0, z = 0;
  int label = 0;  // 1 = vessel
};

// Rows are "x, y, z, label" with optional whitespace and no header.
// Coordinates are zero-based voxel indices.
inline std::vector<Vessel12Point> load_vessel12_points(const std::filesystem::path& csv_path, const Dims& dims) {
  std::ifstream f(csv_path);
  if (!f) throw std::runtime_error("cannot open " + csv_path.string());
  std::vector<Vessel12Point> points;
  std::string line;
  size_t row = 0;
  while (std::getline(f, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;

    std::array<int64_t, 4> fields{};
    size_t pos = 0;
    for (int fi = 0; fi < 4; ++fi) {
      size_t comma = (fi < 3) ? line.find(',', pos) : line.size();
      if (fi < 3 && comma == std::string::npos)
        throw std::runtime_error(csv_path.string() + ":" + std::to_string(row) + ": expected 4 comma-separated fields");
      std::string tok = line.substr(pos, comma - pos);
      const auto b = tok.find_first_not_of(" \t");
      const auto e = tok.find_last_not_of(" \t");
      if (b == std::string::npos)
        throw std::runtime_error(csv_path.string() + ":" + std::to_string(row) + ": empty field");
      tok = tok.substr(b, e - b + 1);
      size_t used = 0;
      int64_t v = 0;
      try {
        v = std::stoll(tok, &used);
      } catch (const std::exception&) {
        throw std::runtime_error(csv_path.string() + ":" + std::to_string(row) + ": non-integer field '" + tok + "'");
      }
      if (used != tok.size())
        throw std::runtime_error(csv_path.string() + ":" + std::to_string(row) + ": non-integer field '" + tok + "'");
      fields[static_cast<size_t>(fi)] = v;
      pos = comma + 1;
    }
    if (line.find(',', pos) != std::string::npos && std::count(line.begin(), line.end(), ',') != 3)
      throw std::runtime_error(csv_path.string() + ":" + std::to_string(row) + ": expected 4 comma-separated fields");

    Vessel12Point p{fields[0], fields[1], fields[2], static_cast<int>(fields[3])};
    if (p.label != 0 && p.label != 1)
      throw std::runtime_error(csv_path.string() + ":" + std::to_string(row) + ": label must be 0 or 1");
    if (!dims.contains(p.z, p.y, p.x))
      throw std::runtime_error(csv_path.string() + ":" + std::to_string(row) + ": coordinate out of bounds");
    points.push_back(p);
  }
  return points;
}

// --------------------------------------------------------------- resampling

namespace detail {

inline int64_t resampled_dim(int64_t n, double old_spacing, double new_spacing) {
  const auto m = static_cast<int64_t>(std::llround(static_cast<double>(n) * old_spacing / new_spacing));
  return std::max<int64_t>(m, 1);
}

// Source coordinate (voxel-center convention) for output index i.
inline double resample_src_coord(int64_t i, double ratio) { return (static_cast<double>(i) + 0.5) * ratio - 0.5; }

inline float sample_trilinear_clamped(const VolumeGrid& g, double z, double y, double x) {
  const auto clampf = [](double v, int64_t n) { return std::clamp(v, 0.0, static_cast<double>(n - 1)); };
  z = clampf(z, g.dims.nz);
  y = clampf(y, g.dims.ny);
  x = clampf(x, g.dims.nx);
  const auto z0 = static_cast<int64_t>(std::floor(z));
  const auto y0 = static_cast<int64_t>(std::floor(y));
  const auto x0 = static_cast<int64_t>(std::floor(x));
  const auto z1 = std::min(z0 + 1, g.dims.nz - 1);
  const auto y1 = std::min(y0 + 1, g.dims.ny - 1);
  const auto x1 = std::min(x0 + 1, g.dims.nx - 1);
  const double fz = z - static_cast<double>(z0);
  const double fy = y - static_cast<double>(y0);
  const double fx = x - static_cast<double>(x0);
  const double c00 = g.at(z0, y0, x0) * (1 - fx) + g.at(z0, y0, x1) * fx;
  const double c01 = g.at(z0, y1, x0) * (1 - fx) + g.at(z0, y1, x1) * fx;
  const double c10 = g.at(z1, y0, x0) * (1 - fx) + g.at(z1, y0, x1) * fx;
  const double c11 = g.at(z1, y1, x0) * (1 - fx) + g.at(z1, y1, x1) * fx;
  const double c0 = c00 * (1 - fy) + c01 * fy;
  const double c1 = c10 * (1 - fy) + c11 * fy;
  return static_cast<float>(c0 * (1 - fz) + c1 * fz);
}

}  // namespace detail

inline VolumeGrid resample_trilinear(const VolumeGrid& grid, const Spacing& target) {
  target.validate();
  const Dims out_dims{detail::resampled_dim(grid.dims.nz, grid.spacing.dz, target.dz),
                      detail::resampled_dim(grid.dims.ny, grid.spacing.dy, target.dy),
                      detail::resampled_dim(grid.dims.nx, grid.spacing.dx, target.dx)};
  if (!out_dims.valid()) throw std::invalid_argument("resample_trilinear: degenerate output dims");
  const double rz = target.dz / grid.spacing.dz;
  const double ry = target.dy / grid.spacing.dy;
  const double rx = target.dx / grid.spacing.dx;
  VolumeGrid out(out_dims, target);
  size_t i = 0;
  for (int64_t z = 0; z < out_dims.nz; ++z) {
    const double sz = detail::resample_src_coord(z, rz);
    for (int64_t y = 0; y < out_dims.ny; ++y) {
      const double sy = detail::resample_src_coord(y, ry);
      for (int64_t x = 0; x < out_dims.nx; ++x, ++i) {
        const double sx = detail::resample_src_coord(x, rx);
        out.voxels[i] = detail::sample_trilinear_clamped(grid, sz, sy, sx);
      }
    }
  }
  return out;
}

// Nearest-neighbor variant for masks; preserves binarity.
inline BinaryMask resample_mask_nearest(const BinaryMask& mask, const Spacing& target) {
  target.validate();
  const Dims out_dims{detail::resampled_dim(mask.dims.nz, mask.spacing.dz, target.dz),
                      detail::resampled_dim(mask.dims.ny, mask.spacing.dy, target.dy),
                      detail::resampled_dim(mask.dims.nx, mask.spacing.dx, target.dx)};
  if (!out_dims.valid()) throw std::invalid_argument("resample_mask_nearest: degenerate output dims");
  const double rz = target.dz / mask.spacing.dz;
  const double ry = target.dy / mask.spacing.dy;
  const double rx = target.dx / mask.spacing.dx;
  BinaryMask out(out_dims, target);
  const auto nearest = [](double v, int64_t n) {
    return std::clamp<int64_t>(static_cast<int64_t>(std::floor(v + 0.5)), 0, n - 1);
  };
  size_t i = 0;
  for (int64_t z = 0; z < out_dims.nz; ++z) {
    const int64_t sz = nearest(detail::resample_src_coord(z, rz), mask.dims.nz);
    for (int64_t y = 0; y < out_dims.ny; ++y) {
      const int64_t sy = nearest(detail::resample_src_coord(y, ry), mask.dims.ny);
      for (int64_t x = 0; x < out_dims.nx; ++x, ++i) {
        const int64_t sx = nearest(detail::resample_src_coord(x, rx), mask.dims.nx);
        out.bits[i] = mask.at(sz, sy, sx);
      }
    }
  }
  return out;
}

// ------------------------------------------------------------------ cropping

struct VoxelTriple {
  int64_t z = 0, y = 0, x = 0;
};

namespace detail {

inline void check_crop(const Dims& dims, const VoxelTriple& origin, const VoxelTriple& size) {
  if (size.z <= 0 || size.y <= 0 || size.x <= 0) throw std::invalid_argument("crop: size must be positive");
  if (origin.z < 0 || origin.y < 0 || origin.x < 0 || origin.z + size.z > dims.nz || origin.y + size.y > dims.ny ||
      origin.x + size.x > dims.nx)
    throw std::invalid_argument("crop: window out of bounds");
}

template <typename Vol, typename Data>
Vol crop_impl(const Vol& in, const Data& src, const VoxelTriple& origin, const VoxelTriple& size, Data Vol::* field) {
  check_crop(in.dims, origin, size);
  Vol out(Dims{size.z, size.y, size.x}, in.spacing);
  Data& dst = out.*field;
  size_t i = 0;
  for (int64_t z = 0; z < size.z; ++z)
    for (int64_t y = 0; y < size.y; ++y)
      for (int64_t x = 0; x < size.x; ++x, ++i)
        dst[i] = src[in.dims.index(origin.z + z, origin.y + y, origin.x + x)];
  return out;
}

}  // namespace detail

inline VolumeGrid crop(const VolumeGrid& grid, const VoxelTriple& origin, const VoxelTriple& size) {
  return detail::crop_impl(grid, grid.voxels, origin, size, &VolumeGrid::voxels);
}

inline BinaryMask crop(const BinaryMask& mask, const VoxelTriple& origin, const VoxelTriple& size) {
  return detail::crop_impl(mask, mask.bits, origin, size, &BinaryMask::bits);
}

// ------------------------------------------------------ connected components
//
// Two-pass raster scan with union-find; final labels are renumbered by each
// component's minimal linear voxel index.

inline LabeledComponents connected_components(const BinaryMask& mask, Connectivity conn) {
  const Dims d = mask.dims;
  LabeledComponents out;
  out.dims = d;
  out.labels.assign(d.total(), 0);

  // Offsets pointing at already-scanned voxels (negative in lexicographic zyx order).
  std::vector<std::array<int, 3>> prev;
  for (const auto& o : detail::neighbor_offsets(conn)) {
    if (o[0] < 0 || (o[0] == 0 && (o[1] < 0 || (o[1] == 0 && o[2] < 0)))) prev.push_back(o);
  }

  std::vector<int32_t> parent(1, 0);
  const auto find_root = [&](int32_t a) {
    while (parent[static_cast<size_t>(a)] != a) {
      parent[static_cast<size_t>(a)] = parent[static_cast<size_t>(parent[static_cast<size_t>(a)])];
      a = parent[static_cast<size_t>(a)];
    }
    return a;
  };
  const auto unite = [&](int32_t a, int32_t b) {
    a = find_root(a);
    b = find_root(b);
    if (a == b) return;
    if (a > b) std::swap(a, b);
    parent[static_cast<size_t>(b)] = a;
  };

  std::vector<int32_t> provisional(d.total(), 0);
  int32_t next_label = 0;
  size_t i = 0;
  for (int64_t z = 0; z < d.nz; ++z) {
    for (int64_t y = 0; y < d.ny; ++y) {
      for (int64_t x = 0; x < d.nx; ++x, ++i) {
        if (!mask.bits[i]) continue;
        int32_t assigned = 0;
        for (const auto& o : prev) {
          const int64_t zz = z + o[0], yy = y + o[1], xx = x + o[2];
          if (!d.contains(zz, yy, xx)) continue;
          const int32_t nb = provisional[d.index(zz, yy, xx)];
          if (nb == 0) continue;
          if (assigned == 0)
            assigned = nb;
          else
            unite(assigned, nb);
        }
        if (assigned == 0) {
          assigned = ++next_label;
          parent.push_back(assigned);
        } else {
          // Merge all labeled previous neighbors into one set.
          for (const auto& o : prev) {
            const int64_t zz = z + o[0], yy = y + o[1], xx = x + o[2];
            if (!d.contains(zz, yy, xx)) continue;
            const int32_t nb = provisional[d.index(zz, yy, xx)];
            if (nb != 0) unite(assigned, nb);
          }
        }
        provisional[i] = assigned;
      }
    }
  }

  std::vector<int32_t> remap(static_cast<size_t>(next_label) + 1, 0);
  int32_t count = 0;
  for (size_t v = 0; v < provisional.size(); ++v) {
    if (provisional[v] == 0) continue;
    const int32_t root = find_root(provisional[v]);
    if (remap[static_cast<size_t>(root)] == 0) {
      remap[static_cast<size_t>(root)] = ++count;
      out.sizes.push_back(0);
    }
    const int32_t label = remap[static_cast<size_t>(root)];
    out.labels[v] = label;
    ++out.sizes[static_cast<size_t>(label - 1)];
  }
  out.count = count;
  return out;
}

inline BinaryMask remove_small_components(const BinaryMask& mask, size_t min_voxels, Connectivity conn) {
  if (min_voxels < 1) throw std::invalid_argument("remove_small_components: min_voxels must be >= 1");
  const auto cc = connected_components(mask, conn);
  BinaryMask out(mask.dims, mask.spacing);
  for (size_t i = 0; i < out.bits.size(); ++i) {
    const int32_t label = cc.labels[i];
    out.bits[i] = (label != 0 && cc.sizes[static_cast<size_t>(label - 1)] >= min_voxels) ? 1 : 0;
  }
  return out;
}

// ---------------------------------------------------------------- label fusion

enum class FuseMode { Intersection, Union };

inline BinaryMask fuse_coarse_labels(const BinaryMask& a, const BinaryMask& b, FuseMode mode = FuseMode::Intersection) {
  detail::require_same_dims(a.dims, b.dims, "fuse_coarse_labels");
  BinaryMask out(a.dims, a.spacing);
  if (mode == FuseMode::Intersection) {
    for (size_t i = 0; i < out.bits.size(); ++i) out.bits[i] = (a.bits[i] && b.bits[i]) ? 1 : 0;
  } else {
    for (size_t i = 0; i < out.bits.size(); ++i) out.bits[i] = (a.bits[i] || b.bits[i]) ? 1 : 0;
  }
  return out;
}

}  // namespace vesselforge
