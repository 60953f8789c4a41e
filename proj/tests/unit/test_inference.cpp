#include <gtest/gtest.h>

#include <thread>

#include "mipslice/error.hpp"
#include "mipslice/inference.hpp"
#include "mipslice/phantom.hpp"
#include "mipslice/png_io.hpp"
#include "mipslice/targets.hpp"
#include "test_support.hpp"

using namespace mipslice;
using mipslice::testing::StubModel;
using mipslice::testing::TempDir;

namespace {

MipImage int8_image(int rows, int cols, float fill = -127.0f) {
  MipImage img;
  img.pixels = Image2D(rows, cols, fill);
  img.domain = IntensityDomain::int8;
  img.source_id = "img";
  return img;
}

MipImage bright_row(int rows, int cols, int y) {
  MipImage img = int8_image(rows, cols);
  for (float& v : img.pixels.row(y)) v = 127.0f;
  return img;
}

// Row of a window sample whose centre pixel is bright, or -1.
int bright_local_row(const nn::Tensor& x, int n) {
  for (int h = 0; h < x.h(); ++h)
    if (x.at(n, 0, h, x.w() / 2) > 0.99f) return h;
  return -1;
}

nn::Tensor map_1d(const nn::Tensor& x, int y) {
  nn::Tensor out({x.n(), 1, x.h(), 1});
  const auto m = make_confidence_map_1d(x.h(), y, 2.0);
  for (int h = 0; h < x.h(); ++h) out.at(0, 0, h, 0) = m.values[h];
  return out;
}

}  // namespace

TEST(Inference, PadExamples) {
  const auto [same, rec0] = pad_to_divisible(int8_image(256, 384), 64);
  EXPECT_EQ(rec0, (PadRecord{256, 384, 0, 0}));
  EXPECT_EQ(same.rows(), 256);

  MipImage img = int8_image(440, 512, 5.0f);
  const auto [padded, rec] = pad_to_divisible(img, 64);
  EXPECT_EQ(padded.rows(), 448);
  EXPECT_EQ(padded.cols(), 512);
  EXPECT_EQ(rec.pad_rows, 8);
  EXPECT_EQ(padded.pad_rows, 8);
  EXPECT_EQ(padded.pixels.at(439, 0), 5.0f);
  EXPECT_EQ(padded.pixels.at(440, 0), kPadValue);
  EXPECT_EQ(unpad(padded, rec).pixels, img.pixels);
  EXPECT_EQ(unpad(padded, rec).pad_rows, 0);
}

TEST(Inference, PadRoundTripProperty) {
  Rng rng = make_rng(1);
  for (int t = 0; t < 50; ++t) {
    MipImage img = int8_image(uniform_int(rng, 1, 300), uniform_int(rng, 1, 200));
    for (float& v : img.pixels.values()) v = static_cast<float>(uniform_int(rng, -127, 127));
    const int f = uniform_int(rng, 1, 64);
    const auto [padded, rec] = pad_to_divisible(img, f);
    ASSERT_EQ(padded.rows() % f, 0);
    ASSERT_EQ(padded.cols() % f, 0);
    ASSERT_LT(rec.pad_rows, f);
    ASSERT_LT(rec.pad_cols, f);
    ASSERT_EQ(unpad(padded, rec).pixels, img.pixels);
  }
  EXPECT_THROW(unpad(int8_image(4, 4), PadRecord{4, 4, 1, 0}), ShapeError);
}

TEST(Inference, ImageToInputScales) {
  Image2D img(1, 3, std::vector<float>{-127, 0, 127});
  const nn::Tensor t = image_to_input(img);
  EXPECT_EQ(t.shape(), (nn::Shape{1, 1, 1, 3}));
  EXPECT_EQ(t.values()[0], -1.0f);
  EXPECT_EQ(t.values()[2], 1.0f);
}

TEST(Inference, GroundTruthStubIsRecovered) {
  const int y = 213;
  StubModel stub(Variant::l3unet2d, [&](const nn::Tensor& x) {
    EXPECT_EQ(x.h() % 64, 0);
    EXPECT_EQ(x.w() % 64, 0);
    const auto m = make_confidence_map_2d(x.h(), x.w(), y, 1.5);
    nn::Tensor out({1, 1, x.h(), x.w()});
    std::copy(m.values.values().begin(), m.values.values().end(), out.data());
    return out;
  });
  MipImage img = int8_image(440, 120);
  img.slice_thickness_mm = 2.5;
  const PredictionResult r = predict(stub, img);
  EXPECT_EQ(r.y_mm, 213.0);
  EXPECT_FLOAT_EQ(r.confidence, 1.0f);
  EXPECT_FALSE(r.low_confidence);
  EXPECT_EQ(r.map.rows(), 440);
  EXPECT_EQ(r.map.cols(), 120);
  EXPECT_EQ(r.slice_index, 85);  // round(213 / 2.5)
  EXPECT_EQ(r.image_id, "img");
  EXPECT_EQ(r.variant, Variant::l3unet2d);
}

TEST(Inference, UniformMapTiesGoToRowZero) {
  for (float level : {0.3f, 0.7f}) {
    StubModel stub(Variant::l3unet1d, [&](const nn::Tensor& x) { return nn::Tensor({1, 1, x.h(), 1}, level); });
    const PredictionResult r = predict(stub, int8_image(200, 64));
    EXPECT_EQ(r.y_mm, 0.0);
    EXPECT_EQ(r.map.cols(), 1);
    EXPECT_EQ(r.low_confidence, level < 0.5f);
  }
  Image2D tie(5, 2, 0.0f);
  tie.at(3, 0) = tie.at(1, 1) = 0.9f;
  EXPECT_EQ(localize_peak(tie).y_mm, 1.0);
}

TEST(Inference, PredictRejectsRegressors) {
  StubModel stub(Variant::baseline_regression, [](const nn::Tensor& x) { return nn::Tensor({x.n(), 1, 1, 1}); });
  EXPECT_THROW(predict(stub, int8_image(100, 100)), DomainError);
  StubModel unet(Variant::l3unet2d, [](const nn::Tensor& x) { return nn::Tensor(x.shape()); });
  EXPECT_THROW(sliding_window_predict(unet, int8_image(100, 100)), DomainError);
}

TEST(Inference, DualWindowFlaggingOneWindow) {
  const int y = 250;
  // Presence is high only for the window whose local row 50 carries the bright row.
  auto fn = [&](const nn::Tensor& x) {
    EXPECT_EQ(x.h(), kBaselineCropHeight);
    EXPECT_EQ(x.w(), kBaselineCropWidth);
    nn::Tensor out({x.n(), 2, 1, 1});
    for (int n = 0; n < x.n(); ++n) {
      const bool hit = bright_local_row(x, n) == 50;
      out.at(n, 0, 0, 0) = 0.5f;
      out.at(n, 1, 0, 0) = hit ? 0.95f : 0.05f;
    }
    return out;
  };
  StubModel stub(Variant::baseline_regression_dual, fn);
  const MipImage img = bright_row(440, 128, y);
  const PredictionResult s1 = sliding_window_predict(stub, img, 1);
  const PredictionResult s2 = sliding_window_predict(stub, img, 2);
  EXPECT_EQ(s1.y_mm, y);
  EXPECT_EQ(s2.y_mm, y);
  EXPECT_FLOAT_EQ(s1.confidence, 0.95f);
  EXPECT_FALSE(s1.low_confidence);
  EXPECT_EQ(stub.calls, (341 + 7) / 8 + (171 + 7) / 8);  // 341 and 171 windows in batches of 8
}

TEST(Inference, SingleOutputVotes) {
  const int y = 180;
  auto fn = [&](const nn::Tensor& x) {
    nn::Tensor out({x.n(), 1, 1, 1});
    for (int n = 0; n < x.n(); ++n) {
      const int local = bright_local_row(x, n);
      out.at(n, 0, 0, 0) = local < 0 ? -0.5f : static_cast<float>(local) / kBaselineCropHeight;
    }
    return out;
  };
  StubModel stub(Variant::baseline_regression, fn);
  const PredictionResult r = sliding_window_predict(stub, bright_row(300, 600, y), 1);
  EXPECT_EQ(r.y_mm, y);
  EXPECT_NEAR(r.confidence, 100.0 / 201.0, 1e-12);  // windows at offsets 81..180 of 0..200
  EXPECT_TRUE(r.low_confidence);
}

TEST(Inference, ShortImagesArePaddedToOneWindow) {
  StubModel stub(Variant::baseline_regression_dual, [](const nn::Tensor& x) {
    nn::Tensor out({x.n(), 2, 1, 1}, 0.3f);
    return out;
  });
  const PredictionResult r = sliding_window_predict(stub, int8_image(60, 40), 1);
  EXPECT_EQ(stub.calls, 1);
  EXPECT_EQ(r.y_mm, 30.0);
  EXPECT_THROW(sliding_window_predict(stub, int8_image(60, 40), 0), DomainError);
}

TEST(Inference, PredictVolumeReportsSourceSlice) {
  Rng rng = make_rng(4);
  PhantomConfig cfg;
  for (int i = 0; i < 5; ++i) {
    const Phantom p = generate_phantom(cfg, rng, "p", true);
    const int y = static_cast<int>(p.y_true_mm);
    StubModel stub(Variant::l3unet1d, [&](const nn::Tensor& x) { return map_1d(x, y); });
    const PredictionResult r = predict_volume(stub, p.volume, View::frontal);
    EXPECT_EQ(r.y_mm, y);
    EXPECT_EQ(r.slice_index, static_cast<int>(std::floor(y / p.thickness_mm + 0.5)));
    EXPECT_DOUBLE_EQ(r.slice_thickness_mm, p.thickness_mm);
  }
  Volume3D unit({100, 4, 4}, {1.0, 1.0, 1.0});
  StubModel stub(Variant::l3unet1d, [](const nn::Tensor& x) { return map_1d(x, 37); });
  EXPECT_EQ(predict_volume(stub, unit, View::sagittal).slice_index, 37);
  Volume3D thick({40, 4, 4}, {5.0, 1.0, 1.0});
  StubModel at103(Variant::l3unet1d, [](const nn::Tensor& x) { return map_1d(x, 103); });
  EXPECT_EQ(predict_volume(at103, thick, View::frontal).slice_index, 21);
}

TEST(Inference, TimingHarness) {
  int calls = 0;
  const TimingStats t = time_runs([&] {
    ++calls;
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }, 5, 2);
  EXPECT_EQ(calls, 7);
  ASSERT_EQ(t.samples_s.size(), 5u);
  EXPECT_GE(t.min_s, 0.0019);
  EXPECT_GE(t.median_s, t.min_s);
  EXPECT_THROW(time_runs([] {}, 0), DomainError);
}

TEST(Inference, PredictionJsonRoundTrip) {
  TempDir tmp;
  PredictionResult r;
  r.image_id = "case_1";
  r.view = View::sagittal;
  r.variant = Variant::baseline_regression_dual;
  r.y_mm = 123.0;
  r.slice_index = 49;
  r.confidence = 0.25;
  r.low_confidence = true;
  r.elapsed_s = 0.5;
  r.slice_thickness_mm = 2.5;
  write_prediction_json(tmp / "p.json", r);
  const PredictionResult b = read_prediction_json(tmp / "p.json");
  EXPECT_EQ(b.image_id, r.image_id);
  EXPECT_EQ(b.view, r.view);
  EXPECT_EQ(b.variant, r.variant);
  EXPECT_EQ(b.y_mm, r.y_mm);
  EXPECT_EQ(b.slice_index, r.slice_index);
  EXPECT_EQ(b.confidence, r.confidence);
  EXPECT_EQ(b.low_confidence, r.low_confidence);
  EXPECT_EQ(b.slice_thickness_mm, r.slice_thickness_mm);
  std::ofstream(tmp / "bad.json") << "{\"y_mm\": 3}";
  EXPECT_THROW(read_prediction_json(tmp / "bad.json"), FormatError);
}

TEST(Inference, OverlayMarksPredictionAndTruth) {
  TempDir tmp;
  const MipImage img = int8_image(50, 8, 0.0f);
  PredictionResult r;
  r.y_mm = 10;
  r.map = Image2D(50, 1, 0.0f);
  r.map.at(30, 0) = 1.0f;
  write_overlay_png(tmp / "o.png", img, r, 20.0);
  const png::Raster ras = png::read(tmp / "o.png");
  ASSERT_EQ(ras.channels, 3);
  auto px = [&](int row, int col, int ch) { return ras.bytes[((49 - row) * 8 + col) * 3 + ch]; };
  EXPECT_EQ(px(10, 3, 0), 255);
  EXPECT_EQ(px(10, 3, 1), 0);
  EXPECT_EQ(px(20, 3, 1), 255);
  EXPECT_EQ(px(20, 3, 0), 0);
  EXPECT_EQ(px(5, 3, 0), 127);  // plain gray
  EXPECT_EQ(px(30, 3, 0), 191);  // half heat blend
  EXPECT_EQ(px(30, 3, 2), 64);
}
