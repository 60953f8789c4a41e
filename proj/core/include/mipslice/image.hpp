#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace mipslice {

/// Row-major 2D grid of float samples. Row 0 is the inferior-most row.
class Image2D {
 public:
  Image2D() = default;
  Image2D(int rows, int cols, float fill = 0.0f);
  Image2D(int rows, int cols, std::vector<float> values);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  float& at(int r, int c) { return values_[static_cast<std::size_t>(r) * cols_ + c]; }
  float at(int r, int c) const { return values_[static_cast<std::size_t>(r) * cols_ + c]; }

  std::span<float> values() { return values_; }
  std::span<const float> values() const { return values_; }
  std::span<float> row(int r) { return {values_.data() + static_cast<std::size_t>(r) * cols_, static_cast<std::size_t>(cols_)}; }
  std::span<const float> row(int r) const {
    return {values_.data() + static_cast<std::size_t>(r) * cols_, static_cast<std::size_t>(cols_)};
  }

  float min() const;
  float max() const;

  bool operator==(const Image2D&) const = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<float> values_;
};

/// Mirror columns (left-right).
Image2D flip_horizontal(const Image2D& img);

/// Bilinear sample with coordinates clamped to the grid.
float sample_bilinear(const Image2D& img, double r, double c);

/// Linear resampling where output pixel (r, c) reads the input at
/// (r / row_scale, c / col_scale). Coordinates are clamped to the input grid,
/// so constant images stay constant.
Image2D resample_linear(const Image2D& img, int out_rows, int out_cols, double row_scale, double col_scale);

}  // namespace mipslice
