#include "mipslice/inference.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "mipslice/error.hpp"
#include "mipslice/png_io.hpp"

namespace mipslice {

namespace fs = std::filesystem;
using nlohmann::json;
using nn::Tensor;

std::pair<MipImage, PadRecord> pad_to_divisible(const MipImage& img, int factor) {
  if (factor < 1) throw DomainError("pad_to_divisible: factor must be >= 1");
  PadRecord rec;
  rec.rows = img.rows();
  rec.cols = img.cols();
  rec.pad_rows = (factor - rec.rows % factor) % factor;
  rec.pad_cols = (factor - rec.cols % factor) % factor;
  MipImage out = img;
  if (rec.pad_rows == 0 && rec.pad_cols == 0) return {out, rec};
  out.pixels = Image2D(rec.rows + rec.pad_rows, rec.cols + rec.pad_cols, kPadValue);
  for (int r = 0; r < rec.rows; ++r) {
    auto src = img.pixels.row(r);
    std::copy(src.begin(), src.end(), out.pixels.row(r).begin());
  }
  out.pad_rows = img.pad_rows + rec.pad_rows;
  out.pad_cols = img.pad_cols + rec.pad_cols;
  return {out, rec};
}

MipImage unpad(const MipImage& img, const PadRecord& rec) {
  if (img.rows() != rec.rows + rec.pad_rows || img.cols() != rec.cols + rec.pad_cols) {
    throw ShapeError("unpad: image does not match the pad record");
  }
  MipImage out = img;
  out.pixels = Image2D(rec.rows, rec.cols);
  for (int r = 0; r < rec.rows; ++r) {
    auto src = img.pixels.row(r);
    std::copy(src.begin(), src.begin() + rec.cols, out.pixels.row(r).begin());
  }
  out.pad_rows = img.pad_rows - rec.pad_rows;
  out.pad_cols = img.pad_cols - rec.pad_cols;
  return out;
}

Tensor image_to_input(const Image2D& img) {
  Tensor t({1, 1, img.rows(), img.cols()});
  auto src = img.values();
  auto dst = t.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] / 127.0f;
  return t;
}

namespace {

int slices_of(double height_mm, double thickness) {
  return std::max(1, static_cast<int>(std::lround(height_mm / thickness)));
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void fill_identity(PredictionResult& res, const MipImage& img, const Model& model) {
  res.image_id = img.source_id;
  res.view = img.view;
  res.variant = model.variant();
  res.slice_thickness_mm = img.slice_thickness_mm;
}

}  // namespace

PredictionResult localize_peak(Image2D map, double row_spacing, double slice_thickness_mm) {
  if (map.empty()) throw ShapeError("localize_peak: empty map");
  int best_row = 0;
  float best = map.at(0, 0);
  for (int r = 0; r < map.rows(); ++r) {
    for (float v : map.row(r)) {
      if (v > best) {
        best = v;
        best_row = r;
      }
    }
  }
  PredictionResult res;
  res.y_mm = best_row * row_spacing;
  res.confidence = best;
  res.low_confidence = best < kLowConfidenceThreshold;
  res.slice_thickness_mm = slice_thickness_mm;
  res.slice_index = slice_index_for_y(res.y_mm, slice_thickness_mm, slices_of(map.rows() * row_spacing, slice_thickness_mm));
  res.map = std::move(map);
  return res;
}

PredictionResult predict(const Model& model, const MipImage& img) {
  if (!is_confidence_map_variant(model.variant())) {
    throw DomainError("predict: " + to_string(model.variant()) + " is not a confidence-map model");
  }
  img.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const auto [padded, rec] = pad_to_divisible(img, model.config().downsample_factor());
  const Tensor out = model.infer(image_to_input(padded.pixels));
  const int cols = model.variant() == Variant::l3unet1d ? 1 : rec.cols;
  Image2D map(rec.rows, cols);
  for (int r = 0; r < rec.rows; ++r) {
    for (int c = 0; c < cols; ++c) map.at(r, c) = out.at(0, 0, r, c);
  }
  PredictionResult res = localize_peak(std::move(map), img.row_spacing, img.slice_thickness_mm);
  fill_identity(res, img, model);
  res.elapsed_s = seconds_since(t0);
  return res;
}

PredictionResult sliding_window_predict(const Model& model, const MipImage& img, int stride) {
  if (is_confidence_map_variant(model.variant())) {
    throw DomainError("sliding_window_predict: " + to_string(model.variant()) + " is not a window regressor");
  }
  if (stride < 1) throw DomainError("sliding_window_predict: stride must be >= 1");
  img.validate();
  const auto t0 = std::chrono::steady_clock::now();
  constexpr int kh = kBaselineCropHeight;
  constexpr int kw = kBaselineCropWidth;

  // Centre the image in a canvas at least one window tall and exactly one wide.
  const int rows = std::max(img.rows(), kh);
  Image2D canvas(rows, kw, kPadValue);
  const int shift = (kw - img.cols()) / 2;  // negative when the image is wider
  for (int r = 0; r < img.rows(); ++r) {
    for (int c = 0; c < kw; ++c) {
      const int src = c - shift;
      if (src >= 0 && src < img.cols()) canvas.at(r, c) = img.pixels.at(r, src);
    }
  }

  std::vector<int> offsets;
  for (int o = 0; o + kh <= rows; o += stride) offsets.push_back(o);
  const bool dual = model.variant() == Variant::baseline_regression_dual;
  constexpr int kBatch = 8;
  std::vector<double> local_y(offsets.size());
  std::vector<double> presence(offsets.size(), 1.0);
  for (std::size_t first = 0; first < offsets.size(); first += kBatch) {
    const int n = static_cast<int>(std::min<std::size_t>(kBatch, offsets.size() - first));
    Tensor batch({n, 1, kh, kw});
    for (int b = 0; b < n; ++b) {
      float* dst = batch.sample(b);
      const float* src = canvas.values().data() + static_cast<std::size_t>(offsets[first + b]) * kw;
      for (int i = 0; i < kh * kw; ++i) dst[i] = src[i] / 127.0f;
    }
    const Tensor out = model.infer(batch);
    for (int b = 0; b < n; ++b) {
      local_y[first + b] = out.at(b, 0, 0, 0) * kh;
      if (dual) presence[first + b] = out.at(b, 1, 0, 0);
    }
  }

  PredictionResult res;
  fill_identity(res, img, model);
  if (dual) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < offsets.size(); ++i) {
      if (presence[i] > presence[best]) best = i;
    }
    res.y_mm = offsets[best] + std::clamp(local_y[best], 0.0, kh - 1.0);
    res.confidence = presence[best];
  } else {
    std::vector<double> votes;
    for (std::size_t i = 0; i < offsets.size(); ++i) {
      if (local_y[i] >= 0.0 && local_y[i] < kh) votes.push_back(offsets[i] + local_y[i]);
    }
    res.confidence = static_cast<double>(votes.size()) / offsets.size();
    if (votes.empty()) {
      for (std::size_t i = 0; i < offsets.size(); ++i) votes.push_back(offsets[i] + std::clamp(local_y[i], 0.0, kh - 1.0));
    }
    std::sort(votes.begin(), votes.end());
    res.y_mm = votes[(votes.size() - 1) / 2];
  }
  res.y_mm = std::clamp(std::round(res.y_mm), 0.0, static_cast<double>(img.rows() - 1)) * img.row_spacing;
  res.low_confidence = res.confidence < kLowConfidenceThreshold;
  res.slice_index = slice_index_for_y(res.y_mm, img.slice_thickness_mm, slices_of(img.height_mm(), img.slice_thickness_mm));
  res.elapsed_s = seconds_since(t0);
  return res;
}

PredictionResult predict_any(const Model& model, const MipImage& img, int stride) {
  return is_confidence_map_variant(model.variant()) ? predict(model, img) : sliding_window_predict(model, img, stride);
}

PredictionResult predict_volume(const Model& model, const Volume3D& vol, View view, int stride) {
  const auto t0 = std::chrono::steady_clock::now();
  const MipPair pair = preprocess_volume(vol);
  PredictionResult res = predict_any(model, view == View::frontal ? pair.frontal : pair.sagittal, stride);
  res.slice_index = slice_index_for_y(vol, res.y_mm);
  res.slice_thickness_mm = vol.spacing().slice;
  res.elapsed_s = seconds_since(t0);
  return res;
}

TimingStats time_runs(const std::function<void()>& fn, int runs, int warmups) {
  if (runs < 1) throw DomainError("time_runs: runs must be >= 1");
  for (int i = 0; i < warmups; ++i) fn();
  TimingStats stats;
  for (int i = 0; i < runs; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    stats.samples_s.push_back(seconds_since(t0));
  }
  std::vector<double> sorted = stats.samples_s;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t m = sorted.size() / 2;
  stats.median_s = sorted.size() % 2 ? sorted[m] : 0.5 * (sorted[m - 1] + sorted[m]);
  stats.min_s = sorted.front();
  return stats;
}

void write_prediction_json(const fs::path& path, const PredictionResult& r) {
  const json j = {{"image_id", r.image_id},
                  {"view", to_string(r.view)},
                  {"variant", to_string(r.variant)},
                  {"y_mm", r.y_mm},
                  {"slice_index", r.slice_index},
                  {"confidence", r.confidence},
                  {"low_confidence", r.low_confidence},
                  {"elapsed_s", r.elapsed_s},
                  {"slice_thickness_mm", r.slice_thickness_mm}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

PredictionResult read_prediction_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  PredictionResult r;
  try {
    const json j = json::parse(in);
    r.image_id = j.at("image_id").get<std::string>();
    r.view = view_from_string(j.value("view", std::string("frontal")));
    r.variant = variant_from_string(j.value("variant", std::string("l3unet2d")));
    r.y_mm = j.at("y_mm").get<double>();
    r.slice_index = j.value("slice_index", 0);
    r.confidence = j.value("confidence", 0.0);
    r.low_confidence = j.value("low_confidence", r.confidence < kLowConfidenceThreshold);
    r.elapsed_s = j.value("elapsed_s", 0.0);
    r.slice_thickness_mm = j.value("slice_thickness_mm", 1.0);
  } catch (const json::exception& e) {
    throw FormatError("malformed prediction " + path.string() + ": " + e.what());
  }
  return r;
}

void write_overlay_png(const fs::path& path, const MipImage& img, const PredictionResult& result,
                       std::optional<double> ground_truth_mm) {
  png::Raster raster;
  raster.rows = img.rows();
  raster.cols = img.cols();
  raster.channels = 3;
  raster.bytes.assign(static_cast<std::size_t>(raster.rows) * raster.cols * 3, 0);
  const bool has_map = result.map.rows() == img.rows() && (result.map.cols() == img.cols() || result.map.cols() == 1);
  auto put = [&](int row, int col, double r, double g, double b) {
    const std::size_t at = (static_cast<std::size_t>(raster.rows - 1 - row) * raster.cols + col) * 3;
    raster.bytes[at] = static_cast<std::uint8_t>(std::clamp(std::lround(r), 0L, 255L));
    raster.bytes[at + 1] = static_cast<std::uint8_t>(std::clamp(std::lround(g), 0L, 255L));
    raster.bytes[at + 2] = static_cast<std::uint8_t>(std::clamp(std::lround(b), 0L, 255L));
  };
  for (int r = 0; r < img.rows(); ++r) {
    for (int c = 0; c < img.cols(); ++c) {
      const double gray = std::clamp(img.pixels.at(r, c) + 127.0, 0.0, 254.0);
      double alpha = 0.0;
      if (has_map) alpha = 0.5 * std::clamp<double>(result.map.at(r, result.map.cols() == 1 ? 0 : c), 0.0, 1.0);
      // Heat colour (255, 160, 0) blended over the gray MIP.
      put(r, c, (1 - alpha) * gray + alpha * 255.0, (1 - alpha) * gray + alpha * 160.0, (1 - alpha) * gray);
    }
  }
  auto line = [&](double y_mm, double r, double g, double b) {
    const long row = std::lround(y_mm / img.row_spacing);
    if (row < 0 || row >= img.rows()) return;
    for (int c = 0; c < img.cols(); ++c) put(static_cast<int>(row), c, r, g, b);
  };
  if (ground_truth_mm) line(*ground_truth_mm, 0, 255, 0);
  line(result.y_mm, 255, 0, 0);
  png::write(path, raster);
}

}  // namespace mipslice
