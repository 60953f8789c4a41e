#pragma once

#include <cstdint>
#include <vector>

#include "mipslice/mip.hpp"
#include "mipslice/random.hpp"

namespace mipslice {

struct AugmentConfig {
  double flip_h_prob = 0.5;
  double scale_min = 0.8;
  double scale_max = 1.2;
  double intensity_offset_min = -70.0;
  double intensity_offset_max = 70.0;

  double piecewise_affine_prob = 0.5;
  int piecewise_affine_grid = 4;          ///< control points per axis
  double piecewise_affine_jitter_px = 2.0;  ///< std-dev of control point displacement

  double dropout_prob = 0.5;
  int dropout_count_min = 0;
  int dropout_count_max = 3;
  int dropout_size_min = 10;
  int dropout_size_max = 60;

  double overexposure_prob = 0.5;
  int overexposure_count_min = 0;
  int overexposure_count_max = 3;
  int overexposure_size_min = 10;
  int overexposure_size_max = 60;

  double thickness_prob = 0.5;
  double max_simulated_thickness_mm = 7.0;

  /// Seed for the convenience overload of augment() that owns its rng.
  std::uint64_t seed = 0;

  /// Every transform disabled: augment() returns its input unchanged.
  static AugmentConfig identity();
  /// Throws ConfigError on inverted or out-of-range settings.
  void validate() const;

  bool operator==(const AugmentConfig&) const = default;
};

struct Region {
  int row = 0;
  int col = 0;
  int height = 0;
  int width = 0;

  bool operator==(const Region&) const = default;
};

/// Every sampled parameter, in application order.
struct AppliedTransforms {
  bool flipped = false;
  double scale = 1.0;
  /// Row/column displacement of each control point (grid x grid, row-major);
  /// empty when the deformation was not applied.
  std::vector<double> affine_dy;
  std::vector<double> affine_dx;
  double thickness_mm = 1.0;
  double intensity_offset = 0.0;
  std::vector<Region> dropouts;
  std::vector<Region> overexposures;
};

struct AugmentResult {
  MipImage image;
  int y_true = 0;
  AppliedTransforms applied;
};

/// Random flip, isotropic scale, piecewise-affine warp, thickness simulation,
/// intensity offset, dropped-out and over-exposed rectangles, then rounding and
/// clamping to [-127, 127]. `y_true` is a row index of `img` and is mapped
/// through the geometric transforms.
AugmentResult augment(const MipImage& img, int y_true, const AugmentConfig& cfg, Rng& rng);
AugmentResult augment(const MipImage& img, int y_true, const AugmentConfig& cfg);

/// Smoothly displaces the image by control point offsets interpolated bilinearly
/// over the grid; out(r, c) = in(r + dy(r, c), c + dx(r, c)).
Image2D piecewise_affine(const Image2D& img, int grid, const std::vector<double>& dy, const std::vector<double>& dx);
/// Row displacement dy at (row, col) of the interpolated field.
double piecewise_affine_row_shift(int rows, int cols, int grid, const std::vector<double>& dy, double row, double col);

/// Reduces vertical resolution to that of `thickness_mm`-thick slices (area
/// average over round(H / thickness) rows) and interpolates back to the
/// original height linearly. Width and height are unchanged.
MipImage simulate_thickness(const MipImage& img, double thickness_mm);

}  // namespace mipslice
