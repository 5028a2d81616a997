#include "vesselforge/morphometry.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "vesselforge/phantom.hpp"

using namespace vesselforge;

namespace {

BinaryMask line_mask_x(int64_t n) {
  BinaryMask m({3, 3, n}, {1, 1, 1});
  for (int64_t x = 0; x < n; ++x) m.at(1, 1, x) = 1;
  return m;
}

TEST(DistanceMap, MatchesBruteForceExactly) {
  std::mt19937_64 rng(100);
  const Spacing spacings[] = {{1, 1, 1}, {0.5, 0.7, 0.9}, {2.0, 0.5, 1.25}};
  for (int trial = 0; trial < 25; ++trial) {
    const Dims dims{1 + static_cast<int64_t>(rng() % 8), 1 + static_cast<int64_t>(rng() % 8),
                    1 + static_cast<int64_t>(rng() % 8)};
    const BinaryMask m = oracle::random_mask(rng, dims, spacings[trial % 3], 0.55);
    const DistanceMap dm = distance_map(m);
    const std::vector<double> want = oracle::edt_sq(m);
    for (size_t i = 0; i < want.size(); ++i) {
      ASSERT_EQ(dm.dist2[i], want[i]) << "voxel " << i << " trial " << trial;
    }
  }
}

TEST(DistanceMap, AllForegroundUsesVirtualBorder) {
  BinaryMask m({3, 3, 3}, {1, 1, 1}, 1);
  const DistanceMap dm = distance_map(m);
  // Center voxel is 2 voxels from the virtual background outside the box.
  EXPECT_DOUBLE_EQ(dm.dist2[m.dims.index(1, 1, 1)], 4.0);
  EXPECT_DOUBLE_EQ(dm.dist2[m.dims.index(0, 0, 0)], 1.0);
  EXPECT_DOUBLE_EQ(dm.distance_mm(m.dims.index(1, 1, 1)), 2.0);
}

TEST(DistanceMap, BackgroundIsZero) {
  std::mt19937_64 rng(101);
  const BinaryMask m = oracle::random_mask(rng, {5, 5, 5}, {1, 1, 1}, 0.5);
  const DistanceMap dm = distance_map(m);
  for (size_t i = 0; i < m.bits.size(); ++i) {
    if (!m.bits[i]) EXPECT_EQ(dm.dist2[i], 0.0);
  }
}

TEST(SimplePoint, HandCases) {
  // Isolated voxel: no foreground neighbors, not simple (removal deletes a
  // component).
  BinaryMask iso({3, 3, 3}, {1, 1, 1});
  iso.at(1, 1, 1) = 1;
  std::array<bool, 27> cube;
  detail::fill_cube(iso, 1, 1, 1, cube);
  EXPECT_FALSE(detail::is_simple_point(cube));
  EXPECT_EQ(detail::degree26(cube), 0);

  // End of a line: one neighbor, removable in principle (simple), but the
  // thinning guard keeps it as an endpoint.
  BinaryMask line = line_mask_x(3);
  detail::fill_cube(line, 1, 1, 0, cube);
  EXPECT_TRUE(detail::is_simple_point(cube));
  EXPECT_EQ(detail::degree26(cube), 1);

  // Middle of a line: removal would split it.
  detail::fill_cube(line, 1, 1, 1, cube);
  EXPECT_FALSE(detail::is_simple_point(cube));

  // Interior of a solid cube: no background reachable through a face.
  BinaryMask solid({3, 3, 3}, {1, 1, 1}, 1);
  detail::fill_cube(solid, 1, 1, 1, cube);
  EXPECT_FALSE(detail::is_simple_point(cube));

  // Face voxel of a solid cube: removable.
  detail::fill_cube(solid, 0, 1, 1, cube);
  EXPECT_TRUE(detail::is_simple_point(cube));
}

TEST(Thinning, LineIsFixpoint) {
  const BinaryMask line = line_mask_x(9);
  const BinaryMask thinned = thin_mask(line);
  EXPECT_EQ(thinned.bits, line.bits);
}

TEST(Thinning, SolidCylinderReducesToAxis) {
  // Radius 4 voxels, length 40, axis along x at (z,y) = (6,6).
  const Dims dims{13, 13, 40};
  BinaryMask m(dims, {1, 1, 1});
  for (int64_t z = 0; z < dims.nz; ++z)
    for (int64_t y = 0; y < dims.ny; ++y)
      for (int64_t x = 0; x < dims.nx; ++x) {
        const double dz = static_cast<double>(z - 6), dy = static_cast<double>(y - 6);
        if (dz * dz + dy * dy <= 16.0) m.at(z, y, x) = 1;
      }
  const BinaryMask thinned = thin_mask(m);

  // stays inside the mask
  for (size_t i = 0; i < thinned.bits.size(); ++i)
    if (thinned.bits[i]) EXPECT_TRUE(m.bits[i]);

  // every surviving voxel is within 1 voxel of the axis
  size_t count = 0;
  for (int64_t z = 0; z < dims.nz; ++z)
    for (int64_t y = 0; y < dims.ny; ++y)
      for (int64_t x = 0; x < dims.nx; ++x)
        if (thinned.at(z, y, x)) {
          ++count;
          EXPECT_LE(std::abs(z - 6), 1) << "voxel off axis";
          EXPECT_LE(std::abs(y - 6), 1) << "voxel off axis";
        }
  // Flat end caps erode by a couple of voxels before the tips become
  // protected endpoints; the surviving path still spans most of the length.
  EXPECT_GE(count, 34u);

  // single 26-connected path: component count 1, all degrees <= 2, two endpoints
  EXPECT_EQ(oracle::flood_components(thinned, 26).count, 1);
  const VesselGraph g = build_graph(skeletonize(m), m.spacing);
  EXPECT_EQ(g.segments.size(), 1u);
  EXPECT_EQ(g.n_endpoints(), 2u);
  EXPECT_EQ(g.n_branchpoints(), 0u);
}

TEST(Thinning, PreservesComponentCount) {
  std::mt19937_64 rng(200);
  for (int trial = 0; trial < 12; ++trial) {
    const Dims dims{8 + static_cast<int64_t>(rng() % 6), 8 + static_cast<int64_t>(rng() % 6),
                    8 + static_cast<int64_t>(rng() % 6)};
    // Blobby mask: union of a few random balls.
    BinaryMask m(dims, {1, 1, 1});
    const int balls = 2 + static_cast<int>(rng() % 3);
    for (int b = 0; b < balls; ++b) {
      const double cz = static_cast<double>(rng() % static_cast<uint64_t>(dims.nz));
      const double cy = static_cast<double>(rng() % static_cast<uint64_t>(dims.ny));
      const double cx = static_cast<double>(rng() % static_cast<uint64_t>(dims.nx));
      const double r = 1.5 + static_cast<double>(rng() % 3);
      for (int64_t z = 0; z < dims.nz; ++z)
        for (int64_t y = 0; y < dims.ny; ++y)
          for (int64_t x = 0; x < dims.nx; ++x) {
            const double dz = static_cast<double>(z) - cz, dy = static_cast<double>(y) - cy,
                         dx = static_cast<double>(x) - cx;
            if (dz * dz + dy * dy + dx * dx <= r * r) m.at(z, y, x) = 1;
          }
    }
    const BinaryMask thinned = thin_mask(m);
    EXPECT_EQ(oracle::flood_components(thinned, 26).count, oracle::flood_components(m, 26).count);
    for (size_t i = 0; i < thinned.bits.size(); ++i)
      if (thinned.bits[i]) ASSERT_TRUE(m.bits[i]);
  }
}

TEST(Skeletonize, RadiusSampledFromDistanceMap) {
  const BinaryMask line = line_mask_x(7);
  const Skeleton sk = skeletonize(line);
  ASSERT_EQ(sk.voxels.size(), 7u);
  const DistanceMap dm = distance_map(line);
  for (size_t i = 0; i < sk.voxels.size(); ++i) {
    const auto [z, y, x] = sk.voxels[i];
    EXPECT_DOUBLE_EQ(sk.radius_mm[i], dm.distance_mm(line.dims.index(z, y, x)));
    EXPECT_EQ(sk.ordinal[line.dims.index(z, y, x)], static_cast<int64_t>(i));
  }
}

TEST(Graph, StraightLine) {
  const VesselGraph g = build_graph(skeletonize(line_mask_x(9)), Spacing{1, 1, 1});
  ASSERT_EQ(g.segments.size(), 1u);
  EXPECT_EQ(g.n_endpoints(), 2u);
  EXPECT_EQ(g.n_branchpoints(), 0u);
  EXPECT_DOUBLE_EQ(g.segments[0].length_mm, 8.0);
  EXPECT_FALSE(g.segments[0].cycle);
  EXPECT_EQ(g.segments[0].path.size(), 9u);
}

TEST(Graph, PlusShape) {
  BinaryMask m({3, 7, 7}, {1, 1, 1});
  for (int64_t k = 0; k < 7; ++k) {
    m.at(1, 3, k) = 1;
    m.at(1, k, 3) = 1;
  }
  const VesselGraph g = build_graph(skeletonize(m), m.spacing);
  EXPECT_EQ(g.n_endpoints(), 4u);
  EXPECT_EQ(g.n_branchpoints(), 1u);
  EXPECT_EQ(g.segments.size(), 4u);
  // The arm voxels diagonally adjacent to the perpendicular arms are branch
  // voxels too, so the junction cluster absorbs them and each arm walk is the
  // remaining 2 steps.
  double total = 0.0;
  for (const auto& s : g.segments) total += s.length_mm;
  EXPECT_DOUBLE_EQ(total, 8.0);
}

TEST(Graph, IsolatedCycle) {
  // Octagonal degree-2 ring in one plane.
  BinaryMask m({1, 4, 4}, {1, 1, 1});
  const int ring[8][2] = {{0, 1}, {0, 2}, {1, 3}, {2, 3}, {3, 2}, {3, 1}, {2, 0}, {1, 0}};
  for (const auto& yx : ring) m.at(0, yx[0], yx[1]) = 1;
  const VesselGraph g = build_graph(skeletonize(m), m.spacing);
  ASSERT_EQ(g.segments.size(), 1u);
  EXPECT_TRUE(g.segments[0].cycle);
  EXPECT_EQ(g.segments[0].node_a, -1);
  EXPECT_EQ(g.nodes.size(), 0u);
  EXPECT_EQ(g.segments[0].path.size(), 8u);
  EXPECT_NEAR(g.segments[0].length_mm, 4.0 + 4.0 * std::sqrt(2.0), 1e-12);
}

TEST(Graph, IsolatedVoxelIsDegenerateSegment) {
  BinaryMask m({3, 3, 3}, {1, 1, 1});
  m.at(1, 1, 1) = 1;
  const VesselGraph g = build_graph(skeletonize(m), m.spacing);
  ASSERT_EQ(g.nodes.size(), 1u);
  EXPECT_EQ(g.nodes[0].type, NodeType::Endpoint);
  ASSERT_EQ(g.segments.size(), 1u);
  EXPECT_EQ(g.segments[0].length_mm, 0.0);
  EXPECT_EQ(g.segments[0].node_a, g.segments[0].node_b);
}

TEST(Graph, EverySkeletonVoxelOwnedOnce) {
  PhantomSpec spec;
  spec.dims = {40, 40, 40};
  spec.spacing = {0.7, 0.7, 0.7};
  spec.tree.depth = 3;
  spec.seed = 77;
  const TreePhantom ph = generate_tree_phantom(spec);
  const VesselGraph g = build_graph(skeletonize(ph.mask), ph.mask.spacing);
  ASSERT_EQ(g.owner_segment.size(), g.skeleton_voxels.size());
  std::vector<size_t> seen(g.segments.size(), 0);
  for (const auto& s : g.segments)
    for (const int64_t ord : s.path) {
      ASSERT_GE(ord, 0);
      ASSERT_LT(static_cast<size_t>(ord), g.skeleton_voxels.size());
    }
  for (const int32_t owner : g.owner_segment) {
    ASSERT_GE(owner, 0);
    ASSERT_LT(static_cast<size_t>(owner), g.segments.size());
    ++seen[static_cast<size_t>(owner)];
  }
  size_t total = 0;
  for (const size_t c : seen) total += c;
  EXPECT_EQ(total, g.skeleton_voxels.size());
}

TEST(Graph, SpurPruningRemovesShortTerminal) {
  // Long horizontal line with a 2-voxel vertical spur in the middle.
  BinaryMask m({3, 5, 11}, {1, 1, 1});
  for (int64_t x = 0; x < 11; ++x) m.at(1, 2, x) = 1;
  m.at(1, 1, 5) = 1;
  m.at(1, 0, 5) = 1;

  const VesselGraph unpruned = build_graph(skeletonize(m), m.spacing);
  EXPECT_EQ(unpruned.segments.size(), 3u);
  EXPECT_EQ(unpruned.n_branchpoints(), 1u);
  EXPECT_EQ(unpruned.n_endpoints(), 3u);

  // The 1 mm spur is deleted; the former junction drops to degree 2 and the
  // two arms merge into one end-to-end segment.
  const VesselGraph pruned = build_graph(skeletonize(m), m.spacing, 3.0);
  EXPECT_EQ(pruned.segments.size(), 1u);
  EXPECT_EQ(pruned.n_branchpoints(), 0u);
  EXPECT_EQ(pruned.n_endpoints(), 2u);
  EXPECT_EQ(pruned.skeleton_voxels.size(), unpruned.skeleton_voxels.size() - 1);
  for (const auto& s : pruned.segments) EXPECT_GE(s.length_mm, 3.0);

  // Threshold equal to the spur length keeps it (strict comparison).
  const VesselGraph kept = build_graph(skeletonize(m), m.spacing, 1.0);
  EXPECT_EQ(kept.segments.size(), 3u);
}

TEST(Report, SingleVoxel) {
  BinaryMask m({3, 3, 3}, {0.5, 0.5, 0.5});
  m.at(1, 1, 1) = 1;
  const MorphometryResult r = analyze_mask(m);
  EXPECT_NEAR(r.report.tbv_ml, 0.125 / 1000.0, 1e-15);
  EXPECT_NEAR(r.report.surface_cm2, 6.0 * 0.25 / 100.0, 1e-15);
  EXPECT_EQ(r.report.n_segments, 1u);
  EXPECT_EQ(r.report.n_endpoints, 1u);
  EXPECT_DOUBLE_EQ(r.report.tree_length_mm, 0.0);
  // partition: the whole volume belongs to the one segment
  EXPECT_NEAR(r.graph.segments[0].volume_ml, r.report.tbv_ml, 1e-15);
}

TEST(Report, BarSurfaceAndVolume) {
  BinaryMask m({1, 1, 2}, {1.0, 2.0, 3.0});
  m.bits = {1, 1};
  VesselGraph g = build_graph(skeletonize(m), m.spacing);
  const MorphometryReport rep = compute_report(m, g, m.spacing);
  EXPECT_NEAR(rep.tbv_ml, 2.0 * 6.0 / 1000.0, 1e-15);
  // exposed faces: 2 z-faces per voxel (area dy*dx=6), 2 y-faces per voxel
  // (dz*dx=3), and 2 x-faces total (dz*dy=2)
  EXPECT_NEAR(rep.surface_cm2, (4 * 6.0 + 4 * 3.0 + 2 * 2.0) / 100.0, 1e-15);
}

TEST(Report, EmptyMaskIsZero) {
  const MorphometryResult r = analyze_mask(BinaryMask({4, 4, 4}, {1, 1, 1}));
  EXPECT_EQ(r.report.tbv_ml, 0.0);
  EXPECT_EQ(r.report.n_segments, 0u);
  EXPECT_EQ(r.report.bv5_ml, 0.0);
  EXPECT_EQ(r.graph.segments.size(), 0u);
}

TEST(Report, PartitionBinsAndBv5Invariants) {
  for (const uint64_t seed : {21ull, 22ull, 23ull, 24ull}) {
    PhantomSpec spec;
    spec.dims = {48, 48, 48};
    spec.spacing = {0.7, 0.7, 0.7};
    spec.tree.depth = 3;
    spec.seed = seed;
    const TreePhantom ph = generate_tree_phantom(spec);
    const MorphometryResult r = analyze_mask(ph.mask);

    double sum = 0.0;
    for (const auto& s : r.graph.segments) sum += s.volume_ml;
    EXPECT_NEAR(sum, r.report.tbv_ml, 1e-9 * std::max(1.0, r.report.tbv_ml));

    EXPECT_GE(r.report.bv5_ml, 0.0);
    EXPECT_LE(r.report.bv5_ml, r.report.tbv_ml + 1e-12);
    size_t bins = 0;
    for (const size_t b : r.report.radius_bins) bins += b;
    EXPECT_EQ(bins, r.report.n_segments);

    // skeleton has the same component structure as the mask
    const auto cc_mask = oracle::flood_components(ph.mask, 26);
    BinaryMask skmask = ph.mask;
    std::fill(skmask.bits.begin(), skmask.bits.end(), 0);
    for (const auto& v : r.graph.skeleton_voxels) skmask.at(v.z, v.y, v.x) = 1;
    EXPECT_EQ(oracle::flood_components(skmask, 26).count, cc_mask.count);
  }
}

TEST(Report, SpacingDoublingHomogeneity) {
  PhantomSpec spec;
  spec.dims = {40, 40, 40};
  spec.spacing = {0.7, 0.7, 0.7};
  spec.tree.depth = 2;
  spec.seed = 5;
  const TreePhantom ph = generate_tree_phantom(spec);

  BinaryMask doubled = ph.mask;
  doubled.spacing = {1.4, 1.4, 1.4};

  const MorphometryResult a = analyze_mask(ph.mask);
  const MorphometryResult b = analyze_mask(doubled);
  EXPECT_NEAR(b.report.tbv_ml, 8.0 * a.report.tbv_ml, 1e-9 * std::max(1.0, a.report.tbv_ml));
  EXPECT_NEAR(b.report.surface_cm2, 4.0 * a.report.surface_cm2, 1e-9 * std::max(1.0, a.report.surface_cm2));
  EXPECT_NEAR(b.report.tree_length_mm, 2.0 * a.report.tree_length_mm,
              1e-9 * std::max(1.0, a.report.tree_length_mm));
  EXPECT_EQ(b.report.n_segments, a.report.n_segments);
  EXPECT_EQ(b.report.n_endpoints, a.report.n_endpoints);
  EXPECT_EQ(b.report.n_branchpoints, a.report.n_branchpoints);
}

TEST(Report, TubePhantomEndToEnd) {
  TubeSpec ts;
  ts.dims = {24, 24, 112};
  ts.spacing = {0.5, 0.5, 0.5};
  ts.radius_mm = 2.0;
  ts.axis = 2;
  ts.length_mm = 50.0;
  ts.seed = 7;
  const TubePhantom ph = generate_tube_phantom(ts);
  const MorphometryResult r = analyze_mask(ph.mask);
  EXPECT_EQ(r.report.n_segments, 1u);
  EXPECT_EQ(r.report.n_endpoints, 2u);
  EXPECT_EQ(r.report.n_branchpoints, 0u);
  EXPECT_NEAR(r.report.tbv_ml * 1000.0, ph.truth.volume_mm3, 0.10 * ph.truth.volume_mm3);
  EXPECT_NEAR(r.graph.segments[0].mean_radius_mm, 2.0, 0.4);
  EXPECT_EQ(r.report.bv5_ml, 0.0);
  EXPECT_EQ(r.report.radius_bins[2], 1u);  // mean radius in [2,3)
}

}  // namespace
