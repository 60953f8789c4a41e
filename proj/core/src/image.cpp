#include "mipslice/image.hpp"

#include <algorithm>
#include <cmath>

#include "mipslice/error.hpp"

namespace mipslice {

Image2D::Image2D(int rows, int cols, float fill) : rows_(rows), cols_(cols) {
  if (rows < 0 || cols < 0) throw ShapeError("Image2D: negative dimensions");
  values_.assign(static_cast<std::size_t>(rows) * cols, fill);
}

Image2D::Image2D(int rows, int cols, std::vector<float> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (rows < 0 || cols < 0 || values_.size() != static_cast<std::size_t>(rows) * cols) {
    throw ShapeError("Image2D: value count does not match dimensions");
  }
}

float Image2D::min() const { return values_.empty() ? 0.0f : *std::min_element(values_.begin(), values_.end()); }
float Image2D::max() const { return values_.empty() ? 0.0f : *std::max_element(values_.begin(), values_.end()); }

Image2D flip_horizontal(const Image2D& img) {
  Image2D out(img.rows(), img.cols());
  for (int r = 0; r < img.rows(); ++r) {
    auto src = img.row(r);
    auto dst = out.row(r);
    std::reverse_copy(src.begin(), src.end(), dst.begin());
  }
  return out;
}

float sample_bilinear(const Image2D& img, double r, double c) {
  r = std::clamp(r, 0.0, static_cast<double>(img.rows() - 1));
  c = std::clamp(c, 0.0, static_cast<double>(img.cols() - 1));
  const int r0 = static_cast<int>(std::floor(r));
  const int c0 = static_cast<int>(std::floor(c));
  const int r1 = std::min(r0 + 1, img.rows() - 1);
  const int c1 = std::min(c0 + 1, img.cols() - 1);
  const double fr = r - r0;
  const double fc = c - c0;
  const double top = (1.0 - fc) * img.at(r0, c0) + fc * img.at(r0, c1);
  const double bottom = (1.0 - fc) * img.at(r1, c0) + fc * img.at(r1, c1);
  return static_cast<float>((1.0 - fr) * top + fr * bottom);
}

Image2D resample_linear(const Image2D& img, int out_rows, int out_cols, double row_scale, double col_scale) {
  if (img.empty()) throw ShapeError("resample_linear: empty input");
  if (out_rows < 1 || out_cols < 1) throw ShapeError("resample_linear: output must be at least 1x1");
  if (!(row_scale > 0.0) || !(col_scale > 0.0)) throw DomainError("resample_linear: scales must be positive");

  // Separable: interpolate along columns first, then rows.
  Image2D horiz(img.rows(), out_cols);
  for (int c = 0; c < out_cols; ++c) {
    const double src = std::clamp(c / col_scale, 0.0, static_cast<double>(img.cols() - 1));
    const int c0 = static_cast<int>(std::floor(src));
    const int c1 = std::min(c0 + 1, img.cols() - 1);
    const double f = src - c0;
    for (int r = 0; r < img.rows(); ++r) {
      horiz.at(r, c) = static_cast<float>((1.0 - f) * img.at(r, c0) + f * img.at(r, c1));
    }
  }
  Image2D out(out_rows, out_cols);
  for (int r = 0; r < out_rows; ++r) {
    const double src = std::clamp(r / row_scale, 0.0, static_cast<double>(img.rows() - 1));
    const int r0 = static_cast<int>(std::floor(src));
    const int r1 = std::min(r0 + 1, img.rows() - 1);
    const double f = src - r0;
    auto a = horiz.row(r0);
    auto b = horiz.row(r1);
    auto dst = out.row(r);
    for (int c = 0; c < out_cols; ++c) {
      dst[c] = static_cast<float>((1.0 - f) * a[c] + f * b[c]);
    }
  }
  return out;
}

}  // namespace mipslice
