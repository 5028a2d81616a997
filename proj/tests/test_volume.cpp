#include "vesselforge/volume.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace vesselforge;

namespace {

fs::path temp_dir(const char* name) {
  const fs::path p = fs::temp_directory_path() / "vesselforge-tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TEST(Dims, IndexRoundTrip) {
  const Dims d{3, 4, 5};
  EXPECT_EQ(d.total(), 60u);
  size_t i = 0;
  for (int64_t z = 0; z < d.nz; ++z)
    for (int64_t y = 0; y < d.ny; ++y)
      for (int64_t x = 0; x < d.nx; ++x, ++i) EXPECT_EQ(d.index(z, y, x), i);
  EXPECT_TRUE(d.contains(2, 3, 4));
  EXPECT_FALSE(d.contains(3, 0, 0));
  EXPECT_FALSE(d.contains(0, -1, 0));
}

TEST(Spacing, Validation) {
  EXPECT_NO_THROW((Spacing{0.5, 0.6, 0.7}.validate()));
  EXPECT_THROW((Spacing{0.0, 1.0, 1.0}.validate()), std::invalid_argument);
  EXPECT_THROW((Spacing{1.0, -1.0, 1.0}.validate()), std::invalid_argument);
  EXPECT_DOUBLE_EQ((Spacing{0.5, 2.0, 3.0}.voxel_volume_mm3()), 3.0);
}

TEST(VolumeIo, GridRoundTrip) {
  const fs::path dir = temp_dir("grid_roundtrip");
  std::mt19937_64 rng(42);
  const VolumeGrid g = oracle::random_grid(rng, {5, 6, 7}, {0.5, 0.7, 0.9}, -100.0f, 300.0f);
  save_volume(g, dir / "g");
  const VolumeGrid r = load_volume(dir / "g.vvol.json");
  EXPECT_EQ(r.dims, g.dims);
  EXPECT_EQ(r.spacing, g.spacing);
  EXPECT_EQ(r.voxels, g.voxels);
  // loading by base name and by .raw name behaves the same
  EXPECT_EQ(load_volume(dir / "g").voxels, g.voxels);
  EXPECT_EQ(load_volume(dir / "g.vvol.raw").voxels, g.voxels);
}

TEST(VolumeIo, MaskRoundTrip) {
  const fs::path dir = temp_dir("mask_roundtrip");
  std::mt19937_64 rng(43);
  const BinaryMask m = oracle::random_mask(rng, {4, 5, 6}, {1.0, 1.0, 1.0}, 0.4);
  save_volume(m, dir / "m");
  const BinaryMask r = load_mask(dir / "m");
  EXPECT_EQ(r.dims, m.dims);
  EXPECT_EQ(r.bits, m.bits);
}

TEST(VolumeIo, MaskRejectsNonBinaryPayload) {
  const fs::path dir = temp_dir("mask_nonbinary");
  BinaryMask m({2, 2, 2}, {1, 1, 1});
  save_volume(m, dir / "m");
  std::fstream raw(dir / "m.vvol.raw", std::ios::in | std::ios::out | std::ios::binary);
  raw.seekp(3);
  const char two = 2;
  raw.write(&two, 1);
  raw.close();
  EXPECT_THROW(load_mask(dir / "m"), std::runtime_error);
}

TEST(VolumeIo, TruncatedRawFails) {
  const fs::path dir = temp_dir("truncated");
  const VolumeGrid g({3, 3, 3}, {1, 1, 1}, 5.0f);
  save_volume(g, dir / "g");
  fs::resize_file(dir / "g.vvol.raw", 10);
  EXPECT_THROW(load_volume(dir / "g"), std::runtime_error);
}

TEST(Vessel12, ParsesPointsAndLabels) {
  const fs::path dir = temp_dir("vessel12");
  std::ofstream f(dir / "pts.csv");
  f << "3, 4, 5, 1\r\n";
  f << "0,0,0,0\n";
  f << " 9 , 9 , 9 , 1 \n";
  f.close();
  const auto pts = load_vessel12_points(dir / "pts.csv", Dims{10, 10, 10});
  ASSERT_EQ(pts.size(), 3u);
  EXPECT_EQ(pts[0].x, 3);
  EXPECT_EQ(pts[0].y, 4);
  EXPECT_EQ(pts[0].z, 5);
  EXPECT_EQ(pts[0].label, 1);
  EXPECT_EQ(pts[1].label, 0);
}

TEST(Vessel12, RejectsMalformedRows) {
  const fs::path dir = temp_dir("vessel12_bad");
  const auto write = [&](const char* name, const char* content) {
    std::ofstream f(dir / name);
    f << content;
  };
  write("short.csv", "1,2,3\n");
  EXPECT_THROW(load_vessel12_points(dir / "short.csv", Dims{10, 10, 10}), std::runtime_error);
  write("label.csv", "1,2,3,7\n");
  EXPECT_THROW(load_vessel12_points(dir / "label.csv", Dims{10, 10, 10}), std::runtime_error);
  write("oob.csv", "1,2,99,1\n");
  EXPECT_THROW(load_vessel12_points(dir / "oob.csv", Dims{10, 10, 10}), std::runtime_error);
  write("text.csv", "a,2,3,1\n");
  EXPECT_THROW(load_vessel12_points(dir / "text.csv", Dims{10, 10, 10}), std::runtime_error);
}

TEST(ConnectedComponents, MatchesFloodFillOracle) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    const Dims dims{2 + static_cast<int64_t>(rng() % 7), 2 + static_cast<int64_t>(rng() % 7),
                    2 + static_cast<int64_t>(rng() % 7)};
    const BinaryMask m = oracle::random_mask(rng, dims, {1, 1, 1}, 0.35);
    for (const Connectivity conn : {Connectivity::Six, Connectivity::TwentySix}) {
      const LabeledComponents got = connected_components(m, conn);
      const oracle::FloodResult want = oracle::flood_components(m, conn == Connectivity::Six ? 6 : 26);
      EXPECT_EQ(got.count, want.count);
      EXPECT_TRUE(oracle::same_partition(got.labels, want.labels));
      size_t labeled = 0;
      for (size_t k = 0; k < got.sizes.size(); ++k) labeled += got.sizes[k];
      EXPECT_EQ(labeled, m.count_foreground());
    }
  }
}

TEST(ConnectedComponents, CanonicalLabelOrder) {
  // Two components; the one whose first voxel comes earlier in raster order
  // must get label 1.
  BinaryMask m({1, 1, 7}, {1, 1, 1});
  m.at(0, 0, 5) = 1;
  m.at(0, 0, 6) = 1;
  m.at(0, 0, 0) = 1;
  const LabeledComponents lc = connected_components(m, Connectivity::TwentySix);
  EXPECT_EQ(lc.count, 2);
  EXPECT_EQ(lc.labels[0], 1);
  EXPECT_EQ(lc.labels[5], 2);
  EXPECT_EQ(lc.sizes[0], 1u);
  EXPECT_EQ(lc.sizes[1], 2u);
}

TEST(ConnectedComponents, DiagonalSplitBySixConnectivity) {
  BinaryMask m({1, 2, 2}, {1, 1, 1});
  m.at(0, 0, 0) = 1;
  m.at(0, 1, 1) = 1;
  EXPECT_EQ(connected_components(m, Connectivity::TwentySix).count, 1);
  EXPECT_EQ(connected_components(m, Connectivity::Six).count, 2);
}

TEST(RemoveSmallComponents, DropsOnlySmall) {
  BinaryMask m({1, 1, 9}, {1, 1, 1});
  m.at(0, 0, 0) = 1;  // size 1
  m.at(0, 0, 3) = 1;
  m.at(0, 0, 4) = 1;  // size 2
  m.at(0, 0, 6) = 1;
  m.at(0, 0, 7) = 1;
  m.at(0, 0, 8) = 1;  // size 3
  const BinaryMask out = remove_small_components(m, 2, Connectivity::TwentySix);
  EXPECT_EQ(out.count_foreground(), 5u);
  EXPECT_EQ(out.at(0, 0, 0), 0);
  EXPECT_EQ(out.at(0, 0, 3), 1);
}

TEST(Resample, IdentityWhenSpacingUnchanged) {
  std::mt19937_64 rng(11);
  const VolumeGrid g = oracle::random_grid(rng, {4, 5, 6}, {0.5, 0.5, 0.5}, 0.0f, 10.0f);
  const VolumeGrid r = resample_trilinear(g, g.spacing);
  EXPECT_EQ(r.dims, g.dims);
  for (size_t i = 0; i < g.voxels.size(); ++i) EXPECT_NEAR(r.voxels[i], g.voxels[i], 1e-5f);
}

TEST(Resample, DownsampleHalvesDims) {
  const VolumeGrid g({8, 8, 8}, {1, 1, 1}, 3.0f);
  const VolumeGrid r = resample_trilinear(g, Spacing{2, 2, 2});
  EXPECT_EQ(r.dims, (Dims{4, 4, 4}));
  for (const float v : r.voxels) EXPECT_NEAR(v, 3.0f, 1e-6f);
}

TEST(Resample, MaskNearestStaysBinary) {
  std::mt19937_64 rng(12);
  const BinaryMask m = oracle::random_mask(rng, {6, 6, 6}, {1, 1, 1}, 0.5);
  const BinaryMask r = resample_mask_nearest(m, Spacing{0.6, 0.6, 0.6});
  EXPECT_EQ(r.dims, (Dims{10, 10, 10}));
  for (const uint8_t b : r.bits) EXPECT_TRUE(b == 0 || b == 1);
}

TEST(Crop, ExtractsWindow) {
  VolumeGrid g({4, 4, 4}, {1, 1, 1});
  for (size_t i = 0; i < g.voxels.size(); ++i) g.voxels[i] = static_cast<float>(i);
  const VolumeGrid c = crop(g, VoxelTriple{1, 2, 3}, VoxelTriple{2, 1, 1});
  EXPECT_EQ(c.dims, (Dims{2, 1, 1}));
  EXPECT_FLOAT_EQ(c.at(0, 0, 0), g.at(1, 2, 3));
  EXPECT_FLOAT_EQ(c.at(1, 0, 0), g.at(2, 2, 3));
  EXPECT_THROW(crop(g, VoxelTriple{3, 3, 3}, VoxelTriple{2, 2, 2}), std::invalid_argument);
}

TEST(Fuse, IntersectionAndUnion) {
  BinaryMask a({1, 1, 3}, {1, 1, 1});
  BinaryMask b({1, 1, 3}, {1, 1, 1});
  a.at(0, 0, 0) = 1;
  a.at(0, 0, 1) = 1;
  b.at(0, 0, 1) = 1;
  b.at(0, 0, 2) = 1;
  const BinaryMask inter = fuse_coarse_labels(a, b, FuseMode::Intersection);
  EXPECT_EQ(inter.count_foreground(), 1u);
  EXPECT_EQ(inter.at(0, 0, 1), 1);
  const BinaryMask uni = fuse_coarse_labels(a, b, FuseMode::Union);
  EXPECT_EQ(uni.count_foreground(), 3u);
}

}  // namespace
