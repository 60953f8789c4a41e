#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "mipslice/error.hpp"
#include "mipslice/random.hpp"
#include "mipslice/targets.hpp"

using namespace mipslice;

TEST(Targets, Map1dPeakAndSymmetry) {
  const auto m = make_confidence_map_1d(64, 20, 3.0);
  ASSERT_EQ(m.values.size(), 64u);
  EXPECT_FLOAT_EQ(m.values[20], 1.0f);
  for (int d = 1; d < 20; ++d) EXPECT_NEAR(m.values[20 + d], m.values[20 - d], 1e-7);
  EXPECT_NEAR(m.values[23], std::exp(-9.0 / 18.0), 1e-7);
}

TEST(Targets, Map2dWithoutPlateauIsGaussian) {
  const double sigma = 2.5;
  const auto m = make_confidence_map_2d(40, 30, 17, sigma, 0, 11);
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 30; ++x) {
      const double d2 = (y - 17.0) * (y - 17.0) + (x - 11.0) * (x - 11.0);
      ASSERT_NEAR(m.values.at(y, x), std::exp(-d2 / (2 * sigma * sigma)), 1e-6);
    }
}

TEST(Targets, Map2dPlateauIsFlatInsideAndDecaysOutside) {
  const auto m = make_confidence_map_2d(32, 200, 10, 1.5, 50);
  EXPECT_EQ(m.x0, 100);
  EXPECT_NEAR(m.values.at(10, 60), 1.0, 1e-6);
  EXPECT_NEAR(m.values.at(10, 140), 1.0, 1e-6);
  EXPECT_LT(m.values.at(10, 155), 0.01);
  EXPECT_LT(m.values.at(10, 45), 0.01);
  EXPECT_NEAR(m.values.at(10, 150), m.values.at(10, 50), 1e-6);
}

TEST(Targets, RandomMapsSatisfyContract) {
  Rng rng = make_rng(77);
  for (int t = 0; t < 200; ++t) {
    const int h = uniform_int(rng, 1, 300);
    const int w = uniform_int(rng, 1, 120);
    const int y = uniform_int(rng, 0, h - 1);
    const double sigma = uniform(rng, 0.5, 12.0);
    const int v = uniform_int(rng, 0, 60);

    const auto m1 = make_confidence_map_1d(h, y, sigma);
    const auto m2 = make_confidence_map_2d(h, w, y, sigma, v);
    float peak1 = -1.0f;
    int arg1 = -1;
    for (int r = 0; r < h; ++r)
      if (m1.values[r] > peak1) peak1 = m1.values[r], arg1 = r;
    EXPECT_NEAR(peak1, 1.0, 1e-6);
    EXPECT_EQ(arg1, y);

    float peak2 = -1.0f;
    int arg2 = -1;
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c)
        if (m2.values.at(r, c) > peak2) peak2 = m2.values.at(r, c), arg2 = r;
    EXPECT_NEAR(peak2, 1.0, 1e-6);
    EXPECT_EQ(arg2, y);

    for (int d = 1; y - d >= 0 && y + d < h; ++d) {
      ASSERT_NEAR(m1.values[y + d], m1.values[y - d], 1e-6);
      for (int c = 0; c < w; ++c) ASSERT_NEAR(m2.values.at(y + d, c), m2.values.at(y - d, c), 1e-6);
    }
    for (float x : m2.values.values()) ASSERT_TRUE(x >= 0.0f && x <= 1.0f + 1e-6f);
  }
}

TEST(Targets, DomainErrors) {
  EXPECT_THROW(make_confidence_map_1d(10, 10, 1.0), DomainError);
  EXPECT_THROW(make_confidence_map_1d(10, -1, 1.0), DomainError);
  EXPECT_THROW(make_confidence_map_1d(10, 2, 0.0), DomainError);
  EXPECT_THROW(make_confidence_map_2d(10, 10, 2, 1.0, -1), DomainError);
  EXPECT_THROW(make_confidence_map_2d(10, 10, 2, 1.0, 3, 10), DomainError);
}

TEST(Targets, SigmaSchedule) {
  EXPECT_EQ(sigma_schedule(0, 50), 10.0);
  EXPECT_EQ(sigma_schedule(49, 50), 1.5);
  EXPECT_NEAR(sigma_schedule(24, 50), 10.0 + (1.5 - 10.0) * 24.0 / 49.0, 1e-12);
  EXPECT_NEAR(sigma_schedule(24, 50), 5.837, 1e-3);
  for (int e = 1; e < 50; ++e) EXPECT_LT(sigma_schedule(e, 50), sigma_schedule(e - 1, 50));
  EXPECT_EQ(sigma_schedule(0, 1), 10.0);
  EXPECT_THROW(sigma_schedule(0, 0), DomainError);
  EXPECT_THROW(sigma_schedule(50, 50), DomainError);
}

TEST(Targets, AnnotationCsvRoundTrip) {
  const std::vector<Annotation> rows = {
      {"a", "r1", 100.0, false}, {"a", "r2", 101.5, true}, {"b", "r1", 0.25, false}};
  std::stringstream ss;
  write_annotations_csv(ss, rows);
  EXPECT_EQ(read_annotations_csv(ss), rows);
}

TEST(Targets, AnnotationCsvRejectsMalformedInput) {
  std::istringstream no_header("");
  EXPECT_THROW(read_annotations_csv(no_header), FormatError);
  std::istringstream bad_header("id,who,y,amb\n");
  EXPECT_THROW(read_annotations_csv(bad_header), FormatError);
  std::istringstream bad_y("image_id,annotator,y_mm,ambiguous\na,r,12x,0\n");
  EXPECT_THROW(read_annotations_csv(bad_y), FormatError);
  std::istringstream short_row("image_id,annotator,y_mm,ambiguous\na,r,12\n");
  EXPECT_THROW(read_annotations_csv(short_row), FormatError);
}

TEST(Targets, MergeTakesFloorOfMean) {
  const auto merged = merge_annotations({{"x", "A", 100, false},
                                         {"x", "B", 101, false},
                                         {"y", "A", 50, false},
                                         {"y", "B", 54, true},
                                         {"z", "A", 7.9, false}});
  EXPECT_EQ(merged.at("x").y_mm, 100.0);
  EXPECT_EQ(merged.at("x").annotator_count, 2);
  EXPECT_FALSE(merged.at("x").ambiguous);
  EXPECT_EQ(merged.at("y").y_mm, 52.0);
  EXPECT_TRUE(merged.at("y").ambiguous);
  EXPECT_EQ(merged.at("z").y_mm, 7.0);
}
