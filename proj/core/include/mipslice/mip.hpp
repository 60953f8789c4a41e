#pragma once

#include <filesystem>
#include <string>
#include <utility>

#include "mipslice/image.hpp"
#include "mipslice/volume.hpp"

namespace mipslice {

enum class View { frontal, sagittal };
enum class IntensityDomain { hu, int8 };

std::string to_string(View view);
View view_from_string(const std::string& name);

/// 2D projection of a CT volume. Rows run inferior -> superior (row 0 is the
/// inferior-most slice); columns run left -> right (frontal) or
/// anterior -> posterior (sagittal).
struct MipImage {
  Image2D pixels;
  double row_spacing = 1.0;  ///< mm per row
  double col_spacing = 1.0;  ///< mm per column
  IntensityDomain domain = IntensityDomain::hu;
  View view = View::frontal;
  std::string source_id;
  /// Slice spacing of the volume the image was projected from.
  double slice_thickness_mm = 1.0;
  /// Rows/columns appended by padding (see inference::pad_to_divisible).
  int pad_rows = 0;
  int pad_cols = 0;

  int rows() const { return pixels.rows(); }
  int cols() const { return pixels.cols(); }
  double height_mm() const { return rows() * row_spacing; }
  double width_mm() const { return cols() * col_spacing; }

  /// Throws on broken invariants: empty grid, non-positive spacing,
  /// int8-domain pixels that are non-integral or outside [-127, 127].
  void validate() const;
};

struct HuWindow {
  double low = 100.0;
  double high = 1500.0;
};

/// out(i, k) = max_j vol(i, j, k); spacing (slice, lr).
MipImage project_frontal(const Volume3D& vol);

/// out(i, j) = max over k in [c - w, c + w] of vol(i, j, k) with c = extent2 / 2
/// and w = round(half_width_mm / lr spacing), clamped to the grid.
MipImage project_sagittal_restricted(const Volume3D& vol, double half_width_mm = 20.0);

/// Linear interpolation onto a 1x1 mm grid; new extent = round(extent * spacing).
MipImage resample_to_1mm(const MipImage& img);

/// Clamp to the window, then map low -> -127 and high -> 127, rounding to nearest.
float quantize_hu(double hu, const HuWindow& window = {});
MipImage threshold_and_quantize(const MipImage& img, const HuWindow& window = {});

struct MipPair {
  MipImage frontal;
  MipImage sagittal;
};

/// project -> resample_to_1mm -> threshold_and_quantize for both views.
MipPair preprocess_volume(const Volume3D& vol, double sagittal_half_width_mm = 20.0);

/// Writes <stem>.png (8-bit gray, value = int8 + 127, superior row first) and
/// <stem>.json {source_id, view, height_mm, width_mm, original_slice_thickness_mm}.
void save_mip(const MipImage& img, const std::filesystem::path& stem);

/// Accepts the .png or the .json path (or the bare stem).
MipImage load_mip(const std::filesystem::path& path);

/// "<dir>/<id>.<view>", the naming used for image sets on disk.
std::filesystem::path mip_stem(const std::filesystem::path& dir, const std::string& id, View view);

}  // namespace mipslice
