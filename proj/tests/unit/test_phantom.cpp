#include <gtest/gtest.h>

#include <cstring>

#include "mipslice/config_file.hpp"
#include "mipslice/error.hpp"
#include "mipslice/phantom.hpp"
#include "mipslice/targets.hpp"
#include "test_support.hpp"

using namespace mipslice;
using mipslice::testing::TempDir;

namespace {

std::uint64_t checksum(const std::vector<Phantom>& set) {
  std::string bytes;
  for (const auto& p : set) {
    for (const Image2D* img : {&p.frontal.pixels, &p.sagittal.pixels}) {
      const auto v = img->values();
      bytes.append(reinterpret_cast<const char*>(v.data()), v.size_bytes());
    }
    bytes.append(reinterpret_cast<const char*>(&p.y_true_mm), sizeof p.y_true_mm);
    bytes.append(reinterpret_cast<const char*>(&p.thickness_mm), sizeof p.thickness_mm);
  }
  return fnv1a64(bytes);
}

}  // namespace

TEST(Phantom, FixedSeedIsBitIdentical) {
  PhantomConfig cfg;
  Rng a = make_rng(3), b = make_rng(3);
  const Phantom pa = generate_phantom(cfg, a, "x", true);
  const Phantom pb = generate_phantom(cfg, b, "x", true);
  EXPECT_EQ(pa.frontal.pixels, pb.frontal.pixels);
  EXPECT_EQ(pa.sagittal.pixels, pb.sagittal.pixels);
  EXPECT_EQ(pa.volume, pb.volume);
  EXPECT_EQ(pa.y_true_mm, pb.y_true_mm);
  Rng c = make_rng(4);
  EXPECT_NE(generate_phantom(cfg, c, "x").frontal.pixels, pa.frontal.pixels);
}

TEST(Phantom, InvariantSweep) {
  PhantomConfig cfg;
  for (int seed = 0; seed < 100; ++seed) {
    Rng rng = make_rng(1000 + seed);
    const Phantom p = generate_phantom(cfg, rng, "p");
    ASSERT_NO_THROW(p.frontal.validate()) << seed;
    ASSERT_NO_THROW(p.sagittal.validate()) << seed;
    EXPECT_EQ(p.frontal.domain, IntensityDomain::int8);
    EXPECT_EQ(p.frontal.rows(), p.sagittal.rows());
    EXPECT_EQ(p.frontal.rows(), p.geometry.fov_height);
    EXPECT_GE(p.geometry.fov_height, cfg.fov_height_min);
    EXPECT_LE(p.geometry.fov_height, cfg.fov_height_max);
    EXPECT_EQ(p.frontal.cols(), cfg.width_mm);
    EXPECT_EQ(p.sagittal.cols(), cfg.depth_mm);
    EXPECT_GE(p.thickness_mm, cfg.thickness_min_mm);
    EXPECT_LE(p.thickness_mm, cfg.thickness_max_mm + 0.5);

    // L3 lies inside the field of view, as the third body above the sacrum.
    ASSERT_GE(p.geometry.bodies.size(), 3u);
    const Box& l3 = p.geometry.bodies[2];
    EXPECT_GE(l3.z0, 0);
    EXPECT_LE(l3.z1, p.geometry.fov_height);
    EXPECT_EQ(p.y_true_mm, std::floor((l3.z0 + l3.z1) / 2.0));
    EXPECT_GE(p.y_true_mm, 0.0);
    EXPECT_LT(p.y_true_mm, p.frontal.height_mm());
  }
}

TEST(Phantom, RuleBasedOracleAgrees) {
  PhantomConfig cfg;
  int agree = 0;
  for (int i = 0; i < 100; ++i) {
    Rng rng = make_rng(7, {static_cast<std::uint64_t>(i)});
    const Phantom p = generate_phantom(cfg, rng, "p");
    agree += oracle_l3_row(p.clean_frontal, p.geometry.spine_col) == static_cast<int>(p.y_true_mm);
  }
  EXPECT_EQ(agree, 100);
}

TEST(Phantom, OracleOnHandDrawnColumn) {
  Image2D col(60, 1, -127.0f);
  auto fill = [&](int a, int b) {
    for (int r = a; r < b; ++r) col.at(r, 0) = 100.0f;
  };
  fill(0, 10);   // sacrum
  fill(15, 20);  // L5
  fill(25, 30);  // L4
  fill(35, 41);  // L3 occupies [35, 41)
  fill(45, 50);
  EXPECT_EQ(oracle_l3_row(col, 0), 38);  // (35 + 41) / 2, same rule as y_true_mm
  EXPECT_EQ(oracle_l3_row(Image2D(60, 1, -127.0f), 0), -1);
  EXPECT_THROW(oracle_l3_row(col, 1), DomainError);
}

TEST(Phantom, VolumeMatchesMips) {
  PhantomConfig cfg;
  Rng rng = make_rng(8);
  const Phantom p = generate_phantom(cfg, rng, "v", true);
  EXPECT_EQ(p.volume.id(), "v");
  EXPECT_DOUBLE_EQ(p.volume.spacing().slice, p.thickness_mm);
  EXPECT_NEAR(p.volume.height_mm(), p.frontal.height_mm(), p.thickness_mm);
  Rng again = make_rng(8);
  EXPECT_TRUE(generate_phantom(cfg, again, "v", false).volume.data().empty());
}

TEST(Phantom, EmptyDataset) {
  EXPECT_TRUE(generate_dataset(0, PhantomConfig{}, 1).empty());
  TempDir tmp;
  write_phantom_dataset(tmp.path(), 0, PhantomConfig{}, 1, false);
  EXPECT_TRUE(read_annotations_csv(tmp / "annotations.csv").empty());
  EXPECT_THROW(generate_dataset(-1, PhantomConfig{}, 1), DomainError);
}

TEST(Phantom, DatasetChecksumsRepeat) {
  const auto a = generate_dataset(200, PhantomConfig{}, 2024);
  const auto b = generate_dataset(200, PhantomConfig{}, 2024);
  ASSERT_EQ(a.size(), 200u);
  EXPECT_EQ(checksum(a), checksum(b));
  EXPECT_EQ(a[17].id, phantom_id(17));
  EXPECT_EQ(phantom_id(17), "phantom_00017");

  // Thickness is spread over the configured range.
  int bins[4] = {0, 0, 0, 0};
  for (const auto& p : a) ++bins[std::clamp(static_cast<int>(p.thickness_mm - 1.0), 0, 3)];
  for (int count : bins) EXPECT_GT(count, 20);
}

TEST(Phantom, WrittenDatasetLayout) {
  TempDir tmp;
  write_phantom_dataset(tmp.path(), 3, PhantomConfig{}, 5, true);
  const auto ann = read_annotations_csv(tmp / "annotations.csv");
  ASSERT_EQ(ann.size(), 3u);
  const auto set = generate_dataset(3, PhantomConfig{}, 5);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(ann[i].image_id, set[i].id);
    EXPECT_EQ(ann[i].annotator, "phantom");
    EXPECT_EQ(ann[i].y_mm, set[i].y_true_mm);
    EXPECT_EQ(load_mip(mip_stem(tmp.path(), set[i].id, View::frontal)).pixels, set[i].frontal.pixels);
    EXPECT_TRUE(std::filesystem::exists(tmp / "volumes" / (set[i].id + ".nii.gz")));
  }
}

TEST(Phantom, ImpossibleConfigurations) {
  PhantomConfig bad;
  bad.fov_height_min = 10;
  EXPECT_THROW(bad.validate(), ConfigError);

  PhantomConfig tight;
  tight.lumbar_height_min = tight.lumbar_height_max = 30;
  tight.gap_min = tight.gap_max = 12;
  tight.fov_height_min = tight.fov_height_max = 64;
  tight.max_retries = 3;
  Rng rng = make_rng(1);
  EXPECT_THROW(generate_phantom(tight, rng), DomainError);
}
