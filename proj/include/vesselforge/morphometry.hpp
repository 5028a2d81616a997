#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <utility>
#include <vector>

#include "vesselforge/volume.hpp"

namespace vesselforge {

// ----------------------------------------------------- distance transform
//
// Exact Euclidean distance (squared, physical units) to the nearest
// background voxel center. The lattice outside the grid counts as background,
// so a mask covering the whole grid still gets finite distances. Separable
// per-axis minimization keeps the candidate arithmetic in the canonical
// nesting wz*dz2 + (wy*dy2 + wx*dx2), which a brute-force oracle reproduces
// bit for bit.

struct DistanceMap {
  Dims dims;
  Spacing spacing;
  std::vector<double> dist2;  // squared distance in mm^2

  double distance_mm(size_t i) const { return std::sqrt(dist2[i]); }
};

inline DistanceMap distance_map(const BinaryMask& mask) {
  const Dims& d = mask.dims;
  const double wz = mask.spacing.dz * mask.spacing.dz;
  const double wy = mask.spacing.dy * mask.spacing.dy;
  const double wx = mask.spacing.dx * mask.spacing.dx;

  DistanceMap out;
  out.dims = d;
  out.spacing = mask.spacing;
  out.dist2.assign(d.total(), 0.0);
  std::vector<double>& cur = out.dist2;

  // Pass 1 (x): distance to background within each row, plus the virtual
  // background just past both row ends.
  std::vector<int64_t> bg;
  for (int64_t z = 0; z < d.nz; ++z) {
    for (int64_t y = 0; y < d.ny; ++y) {
      bg.clear();
      const size_t row = d.index(z, y, 0);
      for (int64_t x = 0; x < d.nx; ++x)
        if (!mask.bits[row + static_cast<size_t>(x)]) bg.push_back(x);
      for (int64_t x = 0; x < d.nx; ++x) {
        const double lo = static_cast<double>(x + 1);
        const double hi = static_cast<double>(d.nx - x);
        double best = wx * std::min(lo * lo, hi * hi);
        for (const int64_t xb : bg) {
          const double dx = static_cast<double>(x - xb);
          best = std::min(best, wx * (dx * dx));
        }
        cur[row + static_cast<size_t>(x)] = best;
      }
    }
  }

  // Pass 2 (y): combine with row minima from every y (virtual planes hold 0).
  std::vector<double> line(static_cast<size_t>(std::max(d.ny, d.nz)));
  for (int64_t z = 0; z < d.nz; ++z) {
    for (int64_t x = 0; x < d.nx; ++x) {
      for (int64_t y = 0; y < d.ny; ++y) line[static_cast<size_t>(y)] = cur[d.index(z, y, x)];
      for (int64_t y = 0; y < d.ny; ++y) {
        const double lo = static_cast<double>(y + 1);
        const double hi = static_cast<double>(d.ny - y);
        double best = wy * std::min(lo * lo, hi * hi);
        for (int64_t yb = 0; yb < d.ny; ++yb) {
          const double dy = static_cast<double>(y - yb);
          best = std::min(best, wy * (dy * dy) + line[static_cast<size_t>(yb)]);
        }
        cur[d.index(z, y, x)] = best;
      }
    }
  }

  // Pass 3 (z).
  for (int64_t y = 0; y < d.ny; ++y) {
    for (int64_t x = 0; x < d.nx; ++x) {
      for (int64_t z = 0; z < d.nz; ++z) line[static_cast<size_t>(z)] = cur[d.index(z, y, x)];
      for (int64_t z = 0; z < d.nz; ++z) {
        const double lo = static_cast<double>(z + 1);
        const double hi = static_cast<double>(d.nz - z);
        double best = wz * std::min(lo * lo, hi * hi);
        for (int64_t zb = 0; zb < d.nz; ++zb) {
          const double dz = static_cast<double>(z - zb);
          best = std::min(best, wz * (dz * dz) + line[static_cast<size_t>(zb)]);
        }
        cur[d.index(z, y, x)] = best;
      }
    }
  }

  for (size_t i = 0; i < cur.size(); ++i)
    if (!mask.bits[i]) cur[i] = 0.0;
  return out;
}

// ------------------------------------------------------------- thinning
//
// 6-subiteration directional thinning with sequential in-pass removal. A
// voxel may go only if it is a simple point — one 26-connected foreground
// component among its 26 neighbors, and one 6-connected background component
// in its 18-neighborhood touching a face neighbor — and not a line endpoint.
// Removing one simple point at a time preserves topology by construction.

namespace detail {

struct CubeTables {
  // 3x3x3 cube cell index: (dz+1)*9 + (dy+1)*3 + (dx+1); center = 13.
  std::array<std::array<int, 26>, 27> adj26{};
  std::array<int, 27> adj26_count{};
  std::array<std::array<int, 6>, 27> adj6{};
  std::array<int, 27> adj6_count{};
  std::array<bool, 27> in18{};
  std::array<bool, 27> face{};

  CubeTables() {
    const auto coord = [](int c) { return std::array<int, 3>{c / 9 - 1, (c / 3) % 3 - 1, c % 3 - 1}; };
    for (int a = 0; a < 27; ++a) {
      const auto ca = coord(a);
      const int manhattan = std::abs(ca[0]) + std::abs(ca[1]) + std::abs(ca[2]);
      in18[static_cast<size_t>(a)] = a != 13 && manhattan <= 2;
      face[static_cast<size_t>(a)] = manhattan == 1;
      for (int b = 0; b < 27; ++b) {
        if (a == b || b == 13 || a == 13) continue;
        const auto cb = coord(b);
        const int ddz = std::abs(ca[0] - cb[0]), ddy = std::abs(ca[1] - cb[1]), ddx = std::abs(ca[2] - cb[2]);
        if (ddz <= 1 && ddy <= 1 && ddx <= 1) {
          adj26[static_cast<size_t>(a)][static_cast<size_t>(adj26_count[static_cast<size_t>(a)]++)] = b;
          if (ddz + ddy + ddx == 1)
            adj6[static_cast<size_t>(a)][static_cast<size_t>(adj6_count[static_cast<size_t>(a)]++)] = b;
        }
      }
    }
  }
};

inline const CubeTables& cube_tables() {
  static const CubeTables t;
  return t;
}

// cube[27]: foreground flags of the 3x3x3 neighborhood (center included).
inline bool is_simple_point(const std::array<bool, 27>& cube) {
  const CubeTables& t = cube_tables();

  // Exactly one 26-connected foreground component among the 26 neighbors.
  std::array<bool, 27> seen{};
  int fg_components = 0;
  std::array<int, 27> stack;
  for (int c = 0; c < 27; ++c) {
    if (c == 13 || !cube[static_cast<size_t>(c)] || seen[static_cast<size_t>(c)]) continue;
    if (++fg_components > 1) return false;
    int top = 0;
    stack[static_cast<size_t>(top++)] = c;
    seen[static_cast<size_t>(c)] = true;
    while (top > 0) {
      const int v = stack[static_cast<size_t>(--top)];
      for (int i = 0; i < t.adj26_count[static_cast<size_t>(v)]; ++i) {
        const int nb = t.adj26[static_cast<size_t>(v)][static_cast<size_t>(i)];
        if (cube[static_cast<size_t>(nb)] && !seen[static_cast<size_t>(nb)]) {
          seen[static_cast<size_t>(nb)] = true;
          stack[static_cast<size_t>(top++)] = nb;
        }
      }
    }
  }
  if (fg_components != 1) return false;

  // Exactly one 6-connected background component in the 18-neighborhood that
  // touches a face neighbor.
  seen.fill(false);
  int bg_components = 0;
  for (int c = 0; c < 27; ++c) {
    if (!t.face[static_cast<size_t>(c)] || cube[static_cast<size_t>(c)] || seen[static_cast<size_t>(c)]) continue;
    if (++bg_components > 1) return false;
    int top = 0;
    stack[static_cast<size_t>(top++)] = c;
    seen[static_cast<size_t>(c)] = true;
    while (top > 0) {
      const int v = stack[static_cast<size_t>(--top)];
      for (int i = 0; i < t.adj6_count[static_cast<size_t>(v)]; ++i) {
        const int nb = t.adj6[static_cast<size_t>(v)][static_cast<size_t>(i)];
        if (t.in18[static_cast<size_t>(nb)] && !cube[static_cast<size_t>(nb)] && !seen[static_cast<size_t>(nb)]) {
          seen[static_cast<size_t>(nb)] = true;
          stack[static_cast<size_t>(top++)] = nb;
        }
      }
    }
  }
  return bg_components == 1;
}

inline void fill_cube(const BinaryMask& m, int64_t z, int64_t y, int64_t x, std::array<bool, 27>& cube) {
  int c = 0;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx, ++c) {
        const int64_t zz = z + dz, yy = y + dy, xx = x + dx;
        cube[static_cast<size_t>(c)] = m.dims.contains(zz, yy, xx) && m.at(zz, yy, xx) != 0;
      }
}

inline int degree26(const std::array<bool, 27>& cube) {
  int deg = 0;
  for (int c = 0; c < 27; ++c)
    if (c != 13 && cube[static_cast<size_t>(c)]) ++deg;
  return deg;
}

}  // namespace detail

inline BinaryMask thin_mask(const BinaryMask& mask) {
  BinaryMask m = mask;
  static constexpr std::array<std::array<int, 3>, 6> directions{
      {{{-1, 0, 0}}, {{1, 0, 0}}, {{0, -1, 0}}, {{0, 1, 0}}, {{0, 0, -1}}, {{0, 0, 1}}}};
  std::array<bool, 27> cube;
  std::vector<size_t> border;
  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& dir : directions) {
      // The border class is fixed at subiteration start so one pass peels at
      // most one layer from this side; deletion itself stays sequential with
      // simplicity re-checked against the evolving image.
      border.clear();
      size_t i = 0;
      for (int64_t z = 0; z < m.dims.nz; ++z) {
        for (int64_t y = 0; y < m.dims.ny; ++y) {
          for (int64_t x = 0; x < m.dims.nx; ++x, ++i) {
            if (!m.bits[i]) continue;
            const int64_t bz = z + dir[0], by = y + dir[1], bx = x + dir[2];
            if (m.dims.contains(bz, by, bx) && m.at(bz, by, bx)) continue;
            border.push_back(i);
          }
        }
      }
      for (const size_t bi : border) {
        const int64_t z = static_cast<int64_t>(bi) / (m.dims.ny * m.dims.nx);
        const int64_t y = static_cast<int64_t>(bi) / m.dims.nx % m.dims.ny;
        const int64_t x = static_cast<int64_t>(bi) % m.dims.nx;
        detail::fill_cube(m, z, y, x, cube);
        if (detail::degree26(cube) == 1) continue;  // endpoint, preserved
        if (!detail::is_simple_point(cube)) continue;
        m.bits[bi] = 0;
        changed = true;
      }
    }
  }
  return m;
}

// ------------------------------------------------------------- skeleton

struct Skeleton {
  BinaryMask mask;
  std::vector<VoxelTriple> voxels;   // raster order
  std::vector<double> radius_mm;     // EDT of the source mask, sampled here
  std::vector<int64_t> ordinal;      // per grid voxel: index into voxels, or -1
};

inline Skeleton skeletonize(const BinaryMask& mask, const DistanceMap& dist) {
  detail::require_same_dims(mask.dims, dist.dims, "skeletonize");
  Skeleton sk;
  sk.mask = thin_mask(mask);
  sk.ordinal.assign(mask.dims.total(), -1);
  size_t i = 0;
  for (int64_t z = 0; z < mask.dims.nz; ++z) {
    for (int64_t y = 0; y < mask.dims.ny; ++y) {
      for (int64_t x = 0; x < mask.dims.nx; ++x, ++i) {
        if (!sk.mask.bits[i]) continue;
        sk.ordinal[i] = static_cast<int64_t>(sk.voxels.size());
        sk.voxels.push_back({z, y, x});
        sk.radius_mm.push_back(dist.distance_mm(i));
      }
    }
  }
  return sk;
}

inline Skeleton skeletonize(const BinaryMask& mask) { return skeletonize(mask, distance_map(mask)); }

// ------------------------------------------------------------ vessel graph

enum class NodeType { Endpoint, Branch };

struct GraphNode {
  int32_t id = 0;
  NodeType type = NodeType::Endpoint;
  VoxelTriple position;                  // lowest-ordinal member voxel
  std::vector<int64_t> voxel_ordinals;   // skeleton ordinals in this node
};

struct VesselSegment {
  int32_t id = 0;
  int32_t node_a = -1, node_b = -1;      // -1 only for isolated cycles
  std::vector<int64_t> path;             // skeleton ordinals, node voxels included
  double length_mm = 0.0;
  double mean_radius_mm = 0.0;
  double volume_ml = 0.0;                // filled by compute_report
  bool cycle = false;
};

struct VesselGraph {
  std::vector<GraphNode> nodes;
  std::vector<VesselSegment> segments;
  std::vector<VoxelTriple> skeleton_voxels;
  std::vector<double> skeleton_radius_mm;
  std::vector<int32_t> owner_segment;    // per skeleton voxel, for volume partition

  size_t n_endpoints() const {
    return static_cast<size_t>(std::count_if(nodes.begin(), nodes.end(),
                                             [](const GraphNode& n) { return n.type == NodeType::Endpoint; }));
  }
  size_t n_branchpoints() const {
    return static_cast<size_t>(
        std::count_if(nodes.begin(), nodes.end(), [](const GraphNode& n) { return n.type == NodeType::Branch; }));
  }
};

namespace detail {

inline double step_mm(const VoxelTriple& a, const VoxelTriple& b, const Spacing& sp) {
  const double dz = static_cast<double>(a.z - b.z) * sp.dz;
  const double dy = static_cast<double>(a.y - b.y) * sp.dy;
  const double dx = static_cast<double>(a.x - b.x) * sp.dx;
  return std::sqrt(dz * dz + dy * dy + dx * dx);
}

inline void finish_segment(VesselSegment& seg, const Skeleton& sk, const Spacing& sp) {
  double len = 0.0, rad = 0.0;
  for (size_t i = 0; i < seg.path.size(); ++i) {
    rad += sk.radius_mm[static_cast<size_t>(seg.path[i])];
    if (i + 1 < seg.path.size())
      len += step_mm(sk.voxels[static_cast<size_t>(seg.path[i])], sk.voxels[static_cast<size_t>(seg.path[i + 1])], sp);
  }
  if (seg.cycle && seg.path.size() > 1)
    len += step_mm(sk.voxels[static_cast<size_t>(seg.path.back())], sk.voxels[static_cast<size_t>(seg.path.front())], sp);
  seg.length_mm = len;
  seg.mean_radius_mm = seg.path.empty() ? 0.0 : rad / static_cast<double>(seg.path.size());
}

inline VesselGraph build_graph_once(const Skeleton& sk, const Spacing& spacing) {
  VesselGraph g;
  g.skeleton_voxels = sk.voxels;
  g.skeleton_radius_mm = sk.radius_mm;
  const size_t n = sk.voxels.size();
  const Dims& dims = sk.mask.dims;

  // 26-neighbor lists per skeleton voxel, in fixed offset order.
  std::vector<std::vector<int64_t>> nbrs(n);
  for (size_t v = 0; v < n; ++v) {
    const VoxelTriple& p = sk.voxels[v];
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (!dz && !dy && !dx) continue;
          const int64_t zz = p.z + dz, yy = p.y + dy, xx = p.x + dx;
          if (!dims.contains(zz, yy, xx)) continue;
          const int64_t o = sk.ordinal[dims.index(zz, yy, xx)];
          if (o >= 0) nbrs[v].push_back(o);
        }
  }

  // Node assignment: branch voxels (degree >= 3) cluster under 26-adjacency;
  // endpoints (degree 1) and isolated voxels (degree 0) stand alone.
  std::vector<int32_t> node_of(n, -1);
  for (size_t v = 0; v < n; ++v) {
    if (node_of[v] != -1 || nbrs[v].size() == 2) continue;
    GraphNode node;
    node.id = static_cast<int32_t>(g.nodes.size());
    node.position = sk.voxels[v];
    if (nbrs[v].size() >= 3) {
      node.type = NodeType::Branch;
      std::vector<int64_t> stack{static_cast<int64_t>(v)};
      node_of[v] = node.id;
      while (!stack.empty()) {
        const auto cur = static_cast<size_t>(stack.back());
        stack.pop_back();
        node.voxel_ordinals.push_back(static_cast<int64_t>(cur));
        for (const int64_t nb : nbrs[cur]) {
          const auto u = static_cast<size_t>(nb);
          if (node_of[u] == -1 && nbrs[u].size() >= 3) {
            node_of[u] = node.id;
            stack.push_back(nb);
          }
        }
      }
      std::sort(node.voxel_ordinals.begin(), node.voxel_ordinals.end());
      node.position = sk.voxels[static_cast<size_t>(node.voxel_ordinals.front())];
    } else {
      node.type = NodeType::Endpoint;
      node.voxel_ordinals.push_back(static_cast<int64_t>(v));
      node_of[v] = node.id;
    }
    g.nodes.push_back(std::move(node));
  }

  std::vector<bool> visited(n, false);
  std::vector<std::pair<int64_t, int64_t>> direct_pairs;  // dedupe node-node adjacencies

  const auto emit = [&](VesselSegment&& seg) {
    seg.id = static_cast<int32_t>(g.segments.size());
    finish_segment(seg, sk, spacing);
    g.segments.push_back(std::move(seg));
  };

  // Walks from node voxels through degree-2 chains.
  for (const GraphNode& node : g.nodes) {
    for (const int64_t member : node.voxel_ordinals) {
      for (const int64_t nb : nbrs[static_cast<size_t>(member)]) {
        const auto u = static_cast<size_t>(nb);
        if (node_of[u] == -1) {
          if (visited[u]) continue;
          VesselSegment seg;
          seg.path.push_back(member);
          int64_t prev = member;
          int64_t cur = nb;
          while (node_of[static_cast<size_t>(cur)] == -1) {
            visited[static_cast<size_t>(cur)] = true;
            seg.path.push_back(cur);
            const auto& cn = nbrs[static_cast<size_t>(cur)];
            const int64_t next = cn[0] == prev ? cn[1] : cn[0];
            prev = cur;
            cur = next;
          }
          seg.path.push_back(cur);
          seg.node_a = node.id;
          seg.node_b = node_of[static_cast<size_t>(cur)];
          emit(std::move(seg));
        } else if (node_of[u] != node.id) {
          const auto pair = std::minmax(member, nb);
          const std::pair<int64_t, int64_t> key{pair.first, pair.second};
          if (std::find(direct_pairs.begin(), direct_pairs.end(), key) != direct_pairs.end()) continue;
          direct_pairs.push_back(key);
          VesselSegment seg;
          seg.path = {member, nb};
          seg.node_a = node.id;
          seg.node_b = node_of[u];
          emit(std::move(seg));
        }
      }
    }
  }

  // Isolated cycles: degree-2 voxels never reached from any node.
  for (size_t v = 0; v < n; ++v) {
    if (node_of[v] != -1 || visited[v]) continue;
    VesselSegment seg;
    seg.cycle = true;
    seg.path.push_back(static_cast<int64_t>(v));
    visited[v] = true;
    int64_t prev = static_cast<int64_t>(v);
    int64_t cur = nbrs[v][0];
    while (cur != static_cast<int64_t>(v)) {
      visited[static_cast<size_t>(cur)] = true;
      seg.path.push_back(cur);
      const auto& cn = nbrs[static_cast<size_t>(cur)];
      const int64_t next = cn[0] == prev ? cn[1] : cn[0];
      prev = cur;
      cur = next;
    }
    emit(std::move(seg));
  }

  // Nodes with no incident segment get a degenerate one so the volume
  // partition has an owner for every skeleton voxel.
  std::vector<bool> node_has_segment(g.nodes.size(), false);
  for (const auto& seg : g.segments) {
    if (seg.node_a >= 0) node_has_segment[static_cast<size_t>(seg.node_a)] = true;
    if (seg.node_b >= 0) node_has_segment[static_cast<size_t>(seg.node_b)] = true;
  }
  for (const GraphNode& node : g.nodes) {
    if (node_has_segment[static_cast<size_t>(node.id)]) continue;
    VesselSegment seg;
    seg.path = node.voxel_ordinals;
    seg.node_a = seg.node_b = node.id;
    emit(std::move(seg));
  }

  // Owner segment per skeleton voxel: first (lowest-id) segment touching it;
  // remaining node-cluster voxels inherit their node's lowest incident id.
  g.owner_segment.assign(n, -1);
  for (const auto& seg : g.segments) {
    for (const int64_t o : seg.path) {
      auto& owner = g.owner_segment[static_cast<size_t>(o)];
      if (owner == -1) owner = seg.id;
    }
  }
  std::vector<int32_t> node_min_segment(g.nodes.size(), -1);
  for (const auto& seg : g.segments) {
    for (const int32_t nid : {seg.node_a, seg.node_b}) {
      if (nid < 0) continue;
      auto& m = node_min_segment[static_cast<size_t>(nid)];
      if (m == -1 || seg.id < m) m = seg.id;
    }
  }
  for (const GraphNode& node : g.nodes) {
    for (const int64_t o : node.voxel_ordinals) {
      auto& owner = g.owner_segment[static_cast<size_t>(o)];
      if (owner == -1) owner = node_min_segment[static_cast<size_t>(node.id)];
    }
  }
  return g;
}

}  // namespace detail

// Optional spur pruning: terminal endpoint-to-branch segments shorter than the
// threshold are deleted (keeping the branch-cluster voxels) and the graph is
// rebuilt, repeating until stable. 0 disables pruning.
inline VesselGraph build_graph(const Skeleton& skeleton, const Spacing& spacing, double prune_spurs_mm = 0.0) {
  if (prune_spurs_mm <= 0.0) return detail::build_graph_once(skeleton, spacing);

  Skeleton sk = skeleton;
  for (;;) {
    VesselGraph g = detail::build_graph_once(sk, spacing);
    std::vector<const VesselSegment*> spurs;
    for (const auto& seg : g.segments) {
      if (seg.cycle || seg.node_a < 0 || seg.node_b < 0 || seg.node_a == seg.node_b) continue;
      const NodeType ta = g.nodes[static_cast<size_t>(seg.node_a)].type;
      const NodeType tb = g.nodes[static_cast<size_t>(seg.node_b)].type;
      const bool terminal = (ta == NodeType::Endpoint) != (tb == NodeType::Endpoint);
      if (terminal && seg.length_mm < prune_spurs_mm) spurs.push_back(&seg);
    }
    if (spurs.empty()) return g;
    for (const auto* seg : spurs) {
      const int32_t branch_node =
          g.nodes[static_cast<size_t>(seg->node_a)].type == NodeType::Branch ? seg->node_a : seg->node_b;
      const auto& keep = g.nodes[static_cast<size_t>(branch_node)].voxel_ordinals;
      for (const int64_t o : seg->path) {
        if (std::find(keep.begin(), keep.end(), o) != keep.end()) continue;
        const VoxelTriple& p = g.skeleton_voxels[static_cast<size_t>(o)];
        sk.mask.at(p.z, p.y, p.x) = 0;
      }
    }
    // Re-derive the ordinal bookkeeping from the pruned mask.
    Skeleton pruned;
    pruned.mask = sk.mask;
    pruned.ordinal.assign(sk.mask.dims.total(), -1);
    for (size_t i = 0, o = 0; i < sk.mask.bits.size(); ++i) {
      if (!sk.mask.bits[i]) continue;
      const int64_t old = sk.ordinal[i];
      pruned.ordinal[i] = static_cast<int64_t>(o++);
      pruned.voxels.push_back(sk.voxels[static_cast<size_t>(old)]);
      pruned.radius_mm.push_back(sk.radius_mm[static_cast<size_t>(old)]);
    }
    sk = std::move(pruned);
  }
}

// ----------------------------------------------------------------- report

struct MorphometryReport {
  double tbv_ml = 0.0;
  double surface_cm2 = 0.0;
  size_t n_segments = 0;
  size_t n_endpoints = 0;
  size_t n_branchpoints = 0;
  double tree_length_mm = 0.0;
  double bv5_ml = 0.0;
  double bv5_tbv = 0.0;
  std::array<size_t, 5> radius_bins{};  // [0,1) [1,2) [2,3) [3,4) [4,inf) mm
};

// Fills per-segment volumes on the graph (nearest-skeleton-voxel assignment
// under the physical metric, ties to the lower ordinal) and aggregates the
// report quantities.
inline MorphometryReport compute_report(const BinaryMask& mask, VesselGraph& graph, const Spacing& spacing) {
  MorphometryReport rep;
  const Dims& d = mask.dims;
  const size_t fg = mask.count_foreground();
  if (fg == 0) return rep;

  const double voxel_mm3 = spacing.voxel_volume_mm3();
  rep.tbv_ml = static_cast<double>(fg) * voxel_mm3 / 1000.0;

  // Exposed-face surface area.
  static constexpr std::array<std::array<int, 3>, 6> faces{
      {{{-1, 0, 0}}, {{1, 0, 0}}, {{0, -1, 0}}, {{0, 1, 0}}, {{0, 0, -1}}, {{0, 0, 1}}}};
  const std::array<double, 6> face_area{spacing.dy * spacing.dx, spacing.dy * spacing.dx,
                                        spacing.dz * spacing.dx, spacing.dz * spacing.dx,
                                        spacing.dz * spacing.dy, spacing.dz * spacing.dy};
  double area_mm2 = 0.0;
  size_t i = 0;
  for (int64_t z = 0; z < d.nz; ++z) {
    for (int64_t y = 0; y < d.ny; ++y) {
      for (int64_t x = 0; x < d.nx; ++x, ++i) {
        if (!mask.bits[i]) continue;
        for (size_t f = 0; f < 6; ++f) {
          const int64_t zz = z + faces[f][0], yy = y + faces[f][1], xx = x + faces[f][2];
          if (!d.contains(zz, yy, xx) || !mask.at(zz, yy, xx)) area_mm2 += face_area[f];
        }
      }
    }
  }
  rep.surface_cm2 = area_mm2 / 100.0;

  rep.n_segments = graph.segments.size();
  rep.n_endpoints = graph.n_endpoints();
  rep.n_branchpoints = graph.n_branchpoints();
  for (const auto& seg : graph.segments) rep.tree_length_mm += seg.length_mm;

  // Volume partition by nearest skeleton voxel.
  const double wz = spacing.dz * spacing.dz;
  const double wy = spacing.dy * spacing.dy;
  const double wx = spacing.dx * spacing.dx;
  std::vector<size_t> seg_voxels(graph.segments.size(), 0);
  i = 0;
  for (int64_t z = 0; z < d.nz; ++z) {
    for (int64_t y = 0; y < d.ny; ++y) {
      for (int64_t x = 0; x < d.nx; ++x, ++i) {
        if (!mask.bits[i]) continue;
        double best = std::numeric_limits<double>::infinity();
        size_t arg = 0;
        for (size_t s = 0; s < graph.skeleton_voxels.size(); ++s) {
          const VoxelTriple& p = graph.skeleton_voxels[s];
          const double dz = static_cast<double>(z - p.z);
          const double dy = static_cast<double>(y - p.y);
          const double dx = static_cast<double>(x - p.x);
          const double d2 = wz * (dz * dz) + (wy * (dy * dy) + wx * (dx * dx));
          if (d2 < best) {
            best = d2;
            arg = s;
          }
        }
        ++seg_voxels[static_cast<size_t>(graph.owner_segment[arg])];
      }
    }
  }
  for (size_t s = 0; s < graph.segments.size(); ++s) {
    graph.segments[s].volume_ml = static_cast<double>(seg_voxels[s]) * voxel_mm3 / 1000.0;
  }

  for (const auto& seg : graph.segments) {
    const double cross_section_mm2 = std::numbers::pi * seg.mean_radius_mm * seg.mean_radius_mm;
    if (cross_section_mm2 < 5.0) rep.bv5_ml += seg.volume_ml;
    const double r = seg.mean_radius_mm;
    const size_t bin = r < 1.0 ? 0 : r < 2.0 ? 1 : r < 3.0 ? 2 : r < 4.0 ? 3 : 4;
    ++rep.radius_bins[bin];
  }
  rep.bv5_tbv = rep.tbv_ml > 0.0 ? rep.bv5_ml / rep.tbv_ml : 0.0;
  return rep;
}

struct MorphOptions {
  double prune_spurs_mm = 0.0;
};

struct MorphometryResult {
  MorphometryReport report;
  VesselGraph graph;
};

inline MorphometryResult analyze_mask(const BinaryMask& mask, const MorphOptions& opts = {}) {
  MorphometryResult out;
  if (mask.count_foreground() == 0) return out;
  const DistanceMap dist = distance_map(mask);
  const Skeleton sk = skeletonize(mask, dist);
  out.graph = build_graph(sk, mask.spacing, opts.prune_spurs_mm);
  out.report = compute_report(mask, out.graph, mask.spacing);
  return out;
}

}  // namespace vesselforge
