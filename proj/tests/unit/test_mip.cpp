#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "mipslice/error.hpp"
#include "mipslice/mip.hpp"
#include "mipslice/phantom.hpp"
#include "mipslice/png_io.hpp"
#include "test_support.hpp"

using namespace mipslice;
using mipslice::testing::random_volume;
using mipslice::testing::TempDir;

namespace {

Image2D brute_frontal(const Volume3D& v) {
  const auto& s = v.shape();
  Image2D out(s[0], s[2]);
  for (int i = 0; i < s[0]; ++i)
    for (int k = 0; k < s[2]; ++k) {
      float m = -std::numeric_limits<float>::infinity();
      for (int j = 0; j < s[1]; ++j) m = std::max(m, v.at(i, j, k));
      out.at(i, k) = m;
    }
  return out;
}

Image2D brute_sagittal(const Volume3D& v, int k0, int k1) {
  const auto& s = v.shape();
  Image2D out(s[0], s[1]);
  for (int i = 0; i < s[0]; ++i)
    for (int j = 0; j < s[1]; ++j) {
      float m = -std::numeric_limits<float>::infinity();
      for (int k = k0; k <= k1; ++k) m = std::max(m, v.at(i, j, k));
      out.at(i, j) = m;
    }
  return out;
}

}  // namespace

TEST(Mip, AllZeroVolume) {
  const Volume3D vol({3, 4, 5}, {});
  const MipImage img = project_frontal(vol);
  EXPECT_EQ(img.rows(), 3);
  EXPECT_EQ(img.cols(), 5);
  for (float v : img.pixels.values()) EXPECT_EQ(v, 0.0f);
}

TEST(Mip, SingleBrightVoxel) {
  Volume3D vol({4, 4, 5}, {});
  vol.at(2, 1, 3) = 500.0f;
  const MipImage img = project_frontal(vol);
  for (int r = 0; r < img.rows(); ++r)
    for (int c = 0; c < img.cols(); ++c) EXPECT_EQ(img.pixels.at(r, c), (r == 2 && c == 3) ? 500.0f : 0.0f);
}

TEST(Mip, FrontalMatchesBruteForce) {
  Rng rng = make_rng(1);
  const Volume3D vol = random_volume(rng, {5, 6, 7}, {2.0, 0.5, 0.7});
  const MipImage img = project_frontal(vol);
  EXPECT_EQ(img.pixels, brute_frontal(vol));
  EXPECT_EQ(img.row_spacing, 2.0);
  EXPECT_EQ(img.col_spacing, 0.7);
  EXPECT_EQ(img.view, View::frontal);
  EXPECT_EQ(img.domain, IntensityDomain::hu);
}

TEST(Mip, SagittalRestrictedToCentralBand) {
  Rng rng = make_rng(2);
  const Volume3D vol = random_volume(rng, {6, 5, 50}, {1.0, 1.0, 1.0});
  EXPECT_EQ(project_sagittal_restricted(vol, 20.0).pixels, brute_sagittal(vol, 5, 45));
}

TEST(Mip, SagittalWideBandIsUnrestricted) {
  Rng rng = make_rng(3);
  const Volume3D vol = random_volume(rng, {4, 5, 9}, {1.0, 1.0, 1.0});
  EXPECT_EQ(project_sagittal_restricted(vol, 100.0).pixels, brute_sagittal(vol, 0, 8));
}

TEST(Mip, SagittalExcludesVoxelOutsideBand) {
  Volume3D vol({4, 4, 60}, {1.0, 1.0, 1.0});
  vol.at(1, 2, 2) = 1000.0f;   // 28 mm left of centre
  vol.at(2, 3, 40) = 900.0f;   // 10 mm right of centre
  const MipImage img = project_sagittal_restricted(vol, 20.0);
  EXPECT_EQ(img.pixels.at(1, 2), 0.0f);
  EXPECT_EQ(img.pixels.at(2, 3), 900.0f);
}

TEST(Mip, ResampleIdentityAndSizes) {
  MipImage img;
  img.pixels = Image2D(10, 4, 3.0f);
  img.pixels.at(2, 1) = 7.0f;
  EXPECT_EQ(resample_to_1mm(img).pixels, img.pixels);

  img.row_spacing = 2.5;
  const MipImage tall = resample_to_1mm(img);
  EXPECT_EQ(tall.rows(), 25);
  EXPECT_EQ(tall.cols(), 4);
  EXPECT_EQ(tall.row_spacing, 1.0);

  MipImage flat;
  flat.pixels = Image2D(7, 3, -42.0f);
  flat.row_spacing = 1.7;
  flat.col_spacing = 0.6;
  const MipImage out = resample_to_1mm(flat);
  EXPECT_EQ(out.rows(), 12);
  EXPECT_EQ(out.cols(), 2);
  for (float v : out.pixels.values()) EXPECT_FLOAT_EQ(v, -42.0f);
}

TEST(Mip, QuantizeAnchors) {
  EXPECT_EQ(quantize_hu(100), -127.0f);
  EXPECT_EQ(quantize_hu(1500), 127.0f);
  EXPECT_EQ(quantize_hu(50), -127.0f);
  EXPECT_EQ(quantize_hu(3000), 127.0f);
  EXPECT_EQ(quantize_hu(800), 0.0f);
  EXPECT_EQ(quantize_hu(-1000), -127.0f);
}

TEST(Mip, QuantizeMonotone) {
  Rng rng = make_rng(4);
  std::vector<double> hu(10000);
  for (double& v : hu) v = uniform(rng, -2000.0, 4000.0);
  std::sort(hu.begin(), hu.end());
  float prev = -128.0f;
  for (double v : hu) {
    const float q = quantize_hu(v);
    ASSERT_GE(q, prev);
    ASSERT_EQ(q, std::nearbyint(q));
    prev = q;
  }
}

TEST(Mip, ThresholdRejectsInt8Input) {
  MipImage img;
  img.pixels = Image2D(2, 2);
  img.domain = IntensityDomain::int8;
  EXPECT_THROW(threshold_and_quantize(img), DomainError);
}

TEST(Mip, PreprocessSharesHeight) {
  Volume3D vol({100, 8, 16}, {2.0, 1.0, 1.0});
  for (float& v : vol.data()) v = -1000.0f;
  const MipPair pair = preprocess_volume(vol);
  EXPECT_EQ(pair.frontal.rows(), 200);
  EXPECT_EQ(pair.sagittal.rows(), 200);
  for (float v : pair.frontal.pixels.values()) ASSERT_EQ(v, -127.0f);
  for (float v : pair.sagittal.pixels.values()) ASSERT_EQ(v, -127.0f);
  EXPECT_EQ(pair.frontal.domain, IntensityDomain::int8);
  EXPECT_DOUBLE_EQ(pair.frontal.slice_thickness_mm, 2.0);
}

TEST(Mip, PreprocessedPhantomsAreValid) {
  PhantomConfig cfg;
  for (int i = 0; i < 50; ++i) {
    Rng rng = make_rng(90, {static_cast<std::uint64_t>(i)});
    const Phantom p = generate_phantom(cfg, rng, "p", true);
    const MipPair pair = preprocess_volume(p.volume);
    EXPECT_NO_THROW(pair.frontal.validate());
    EXPECT_NO_THROW(pair.sagittal.validate());
    EXPECT_EQ(pair.frontal.rows(), pair.sagittal.rows());
    EXPECT_EQ(pair.frontal.row_spacing, 1.0);
  }
}

TEST(Mip, SaveLoadRoundTripAndOrientation) {
  TempDir tmp;
  MipImage img;
  img.pixels = Image2D(6, 3);
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 3; ++c) img.pixels.at(r, c) = static_cast<float>(-127 + 40 * r + c);
  img.domain = IntensityDomain::int8;
  img.view = View::sagittal;
  img.source_id = "case7";
  img.slice_thickness_mm = 2.5;
  const auto stem = mip_stem(tmp.path(), "case7", View::sagittal);
  save_mip(img, stem);

  const png::Raster raster = png::read(stem.string() + ".png");
  ASSERT_EQ(raster.rows, 6);
  EXPECT_EQ(raster.bytes[0], static_cast<std::uint8_t>(img.pixels.at(5, 0) + 127));  // superior row first
  EXPECT_EQ(raster.bytes[5 * 3 + 2], static_cast<std::uint8_t>(img.pixels.at(0, 2) + 127));

  for (const std::string suffix : {".png", ".json", ""}) {
    const MipImage back = load_mip(stem.string() + suffix);
    EXPECT_EQ(back.pixels, img.pixels);
    EXPECT_EQ(back.view, View::sagittal);
    EXPECT_EQ(back.source_id, "case7");
    EXPECT_DOUBLE_EQ(back.slice_thickness_mm, 2.5);
    EXPECT_EQ(back.domain, IntensityDomain::int8);
  }
}

TEST(Mip, ValidateRejectsBrokenImages) {
  MipImage img;
  EXPECT_THROW(img.validate(), Error);
  img.pixels = Image2D(2, 2, 0.5f);
  img.domain = IntensityDomain::int8;
  EXPECT_THROW(img.validate(), FormatError);
  img.pixels = Image2D(2, 2, 0.0f);
  img.row_spacing = 0.0;
  EXPECT_THROW(img.validate(), Error);
}

TEST(Mip, ViewNames) {
  EXPECT_EQ(view_from_string(to_string(View::frontal)), View::frontal);
  EXPECT_EQ(view_from_string(to_string(View::sagittal)), View::sagittal);
  EXPECT_THROW(view_from_string("axial"), Error);
}
