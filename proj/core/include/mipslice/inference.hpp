#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mipslice/mip.hpp"
#include "mipslice/models.hpp"
#include "mipslice/nn/tensor.hpp"
#include "mipslice/volume.hpp"

namespace mipslice {

/// Pixel value used for padding: the bottom of the int8 window (air).
inline constexpr float kPadValue = -127.0f;

struct PadRecord {
  int rows = 0;  ///< original extent
  int cols = 0;
  int pad_rows = 0;  ///< rows appended above the original (superior side, high row indices)
  int pad_cols = 0;  ///< columns appended on the right

  bool operator==(const PadRecord&) const = default;
};

/// Appends kPadValue rows/columns until both extents are multiples of `factor`.
std::pair<MipImage, PadRecord> pad_to_divisible(const MipImage& img, int factor);
MipImage unpad(const MipImage& img, const PadRecord& record);

/// (1, 1, H, W) network input: pixel / 127.
nn::Tensor image_to_input(const Image2D& img);

struct PredictionResult {
  std::string image_id;
  View view = View::frontal;
  Variant variant = Variant::l3unet2d;
  double y_mm = 0.0;
  int slice_index = 0;
  double confidence = 0.0;
  bool low_confidence = true;
  /// Confidence map cropped to the input extent: H x W (2D) or H x 1 (1D).
  /// Empty for the sliding-window regressors.
  Image2D map;
  double elapsed_s = 0.0;
  double slice_thickness_mm = 1.0;
};

inline constexpr double kLowConfidenceThreshold = 0.5;

/// Peak localisation on a confidence map: row of the maximum (smallest row on
/// ties), confidence = map value there. Fills y_mm, confidence, low_confidence
/// and slice_index (against an image of `row_spacing` mm rows projected from
/// `slice_thickness_mm` slices).
PredictionResult localize_peak(Image2D map, double row_spacing = 1.0, double slice_thickness_mm = 1.0);

/// Whole-image prediction with a confidence-map model: pad, forward, crop,
/// localise. Throws DomainError for the regressors.
PredictionResult predict(const Model& model, const MipImage& img);

/// Scans 100 x 512 windows bottom-to-top with the given stride. The image is
/// centred horizontally and padded to 512 columns when narrower (cropped when
/// wider). Dual models report the window with the highest presence probability;
/// single-output models report the lower median of in-window votes with the vote
/// fraction as confidence. Throws DomainError for confidence-map models.
PredictionResult sliding_window_predict(const Model& model, const MipImage& img, int stride = 1);

/// predict or sliding_window_predict depending on the variant.
PredictionResult predict_any(const Model& model, const MipImage& img, int stride = 1);

/// preprocess_volume -> predict on the chosen view -> slice index in `vol`.
PredictionResult predict_volume(const Model& model, const Volume3D& vol, View view, int stride = 1);

struct TimingStats {
  double median_s = 0.0;
  double min_s = 0.0;
  std::vector<double> samples_s;
};

/// Runs `fn` `warmups` times untimed, then `runs` timed runs.
TimingStats time_runs(const std::function<void()>& fn, int runs = 10, int warmups = 2);

/// {image_id, view, variant, y_mm, slice_index, confidence, low_confidence,
///  elapsed_s, slice_thickness_mm}
void write_prediction_json(const std::filesystem::path& path, const PredictionResult& result);
PredictionResult read_prediction_json(const std::filesystem::path& path);

/// RGB PNG: the MIP with the confidence map blended in, the prediction as a red
/// line and the ground truth (when given) as a green line.
void write_overlay_png(const std::filesystem::path& path, const MipImage& img, const PredictionResult& result,
                       std::optional<double> ground_truth_mm = std::nullopt);

}  // namespace mipslice
