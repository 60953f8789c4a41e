#include "mipslice/augment.hpp"

#include <algorithm>
#include <cmath>

#include "mipslice/error.hpp"

namespace mipslice {

AugmentConfig AugmentConfig::identity() {
  AugmentConfig c;
  c.flip_h_prob = 0.0;
  c.scale_min = c.scale_max = 1.0;
  c.intensity_offset_min = c.intensity_offset_max = 0.0;
  c.piecewise_affine_prob = 0.0;
  c.dropout_prob = 0.0;
  c.overexposure_prob = 0.0;
  c.thickness_prob = 0.0;
  c.max_simulated_thickness_mm = 1.0;
  return c;
}

void AugmentConfig::validate() const {
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string("augment: ") + name + " must be in [0, 1]");
  };
  prob(flip_h_prob, "flip_h_prob");
  prob(piecewise_affine_prob, "piecewise_affine_prob");
  prob(dropout_prob, "dropout_prob");
  prob(overexposure_prob, "overexposure_prob");
  prob(thickness_prob, "thickness_prob");
  if (!(scale_min > 0.0) || !(scale_max >= scale_min)) throw ConfigError("augment: scale range must be within (0, inf)");
  if (!(intensity_offset_max >= intensity_offset_min)) throw ConfigError("augment: inverted intensity offset range");
  if (piecewise_affine_grid < 2) throw ConfigError("augment: piecewise_affine_grid must be >= 2");
  if (!(piecewise_affine_jitter_px >= 0.0)) throw ConfigError("augment: piecewise_affine_jitter_px must be >= 0");
  auto counts = [](int lo, int hi, int smin, int smax, const char* name) {
    if (lo < 0 || hi < lo || smin < 1 || smax < smin) throw ConfigError(std::string("augment: bad ") + name + " ranges");
  };
  counts(dropout_count_min, dropout_count_max, dropout_size_min, dropout_size_max, "dropout");
  counts(overexposure_count_min, overexposure_count_max, overexposure_size_min, overexposure_size_max, "overexposure");
  if (!(max_simulated_thickness_mm >= 1.0)) throw ConfigError("augment: max_simulated_thickness_mm must be >= 1");
}

namespace {

struct FieldCoord {
  int i0, i1;
  double f;
};

FieldCoord grid_coord(double pos, int extent, int grid) {
  const double g = extent > 1 ? pos * (grid - 1) / (extent - 1) : 0.0;
  const double clamped = std::clamp(g, 0.0, static_cast<double>(grid - 1));
  const int i0 = std::min(static_cast<int>(std::floor(clamped)), grid - 1);
  const int i1 = std::min(i0 + 1, grid - 1);
  return {i0, i1, clamped - i0};
}

double field_at(const std::vector<double>& f, int grid, const FieldCoord& r, const FieldCoord& c) {
  auto v = [&](int i, int j) { return f[static_cast<std::size_t>(i) * grid + j]; };
  const double top = (1.0 - c.f) * v(r.i0, c.i0) + c.f * v(r.i0, c.i1);
  const double bottom = (1.0 - c.f) * v(r.i1, c.i0) + c.f * v(r.i1, c.i1);
  return (1.0 - r.f) * top + r.f * bottom;
}

std::vector<Region> sample_regions(Rng& rng, int rows, int cols, double prob, int count_min, int count_max,
                                   int size_min, int size_max) {
  std::vector<Region> out;
  if (!bernoulli(rng, prob)) return out;
  const int count = uniform_int(rng, count_min, count_max);
  for (int i = 0; i < count; ++i) {
    Region r;
    r.height = std::min(uniform_int(rng, size_min, size_max), rows);
    r.width = std::min(uniform_int(rng, size_min, size_max), cols);
    r.row = uniform_int(rng, 0, rows - r.height);
    r.col = uniform_int(rng, 0, cols - r.width);
    if (r.height > 0 && r.width > 0) out.push_back(r);
  }
  return out;
}

void fill_region(Image2D& img, const Region& r, float value) {
  for (int y = r.row; y < r.row + r.height; ++y) {
    auto row = img.row(y);
    std::fill(row.begin() + r.col, row.begin() + r.col + r.width, value);
  }
}

}  // namespace

Image2D piecewise_affine(const Image2D& img, int grid, const std::vector<double>& dy, const std::vector<double>& dx) {
  const auto n = static_cast<std::size_t>(grid) * grid;
  if (grid < 2 || dy.size() != n || dx.size() != n) throw ShapeError("piecewise_affine: control grid size mismatch");
  Image2D out(img.rows(), img.cols());
  std::vector<FieldCoord> cc(img.cols());
  for (int c = 0; c < img.cols(); ++c) cc[c] = grid_coord(c, img.cols(), grid);
  for (int r = 0; r < img.rows(); ++r) {
    const FieldCoord rc = grid_coord(r, img.rows(), grid);
    for (int c = 0; c < img.cols(); ++c) {
      out.at(r, c) = sample_bilinear(img, r + field_at(dy, grid, rc, cc[c]), c + field_at(dx, grid, rc, cc[c]));
    }
  }
  return out;
}

double piecewise_affine_row_shift(int rows, int cols, int grid, const std::vector<double>& dy, double row, double col) {
  return field_at(dy, grid, grid_coord(row, rows, grid), grid_coord(col, cols, grid));
}

MipImage simulate_thickness(const MipImage& img, double thickness_mm) {
  if (!(thickness_mm >= 1.0)) throw DomainError("simulate_thickness: thickness must be >= 1 mm");
  const int rows = img.rows();
  const int cols = img.cols();
  const int low_rows = std::max(1, static_cast<int>(std::lround(rows / thickness_mm)));
  MipImage out = img;
  if (low_rows == rows) return out;
  const double f = static_cast<double>(rows) / low_rows;

  // Box-filter each coarse row over its footprint [k f, (k + 1) f).
  std::vector<double> low(static_cast<std::size_t>(low_rows) * cols, 0.0);
  for (int k = 0; k < low_rows; ++k) {
    const double a = k * f;
    const double b = (k + 1) * f;
    double* dst = low.data() + static_cast<std::size_t>(k) * cols;
    for (int r = static_cast<int>(std::floor(a)); r < std::min(rows, static_cast<int>(std::ceil(b))); ++r) {
      const double w = (std::min(b, r + 1.0) - std::max(a, static_cast<double>(r))) / f;
      if (w <= 0.0) continue;
      auto src = img.pixels.row(r);
      for (int c = 0; c < cols; ++c) dst[c] += w * src[c];
    }
  }
  // Pixel-centred linear interpolation back to the full height.
  for (int r = 0; r < rows; ++r) {
    const double pos = std::clamp((r + 0.5) / f - 0.5, 0.0, static_cast<double>(low_rows - 1));
    const int k0 = static_cast<int>(std::floor(pos));
    const int k1 = std::min(k0 + 1, low_rows - 1);
    const double t = pos - k0;
    const double* a = low.data() + static_cast<std::size_t>(k0) * cols;
    const double* b = low.data() + static_cast<std::size_t>(k1) * cols;
    auto dst = out.pixels.row(r);
    for (int c = 0; c < cols; ++c) dst[c] = static_cast<float>((1.0 - t) * a[c] + t * b[c]);
  }
  if (out.domain == IntensityDomain::int8) {
    for (float& v : out.pixels.values()) v = std::clamp(std::nearbyint(v), -127.0f, 127.0f);
  }
  return out;
}

AugmentResult augment(const MipImage& img, int y_true, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  img.validate();
  if (img.domain != IntensityDomain::int8) throw DomainError("augment: expects an int8-domain image");
  AugmentResult res;
  res.image = img;
  res.y_true = y_true;
  auto& out = res.image;
  auto& applied = res.applied;

  applied.flipped = bernoulli(rng, cfg.flip_h_prob);
  if (applied.flipped) out.pixels = flip_horizontal(out.pixels);

  applied.scale = uniform(rng, cfg.scale_min, cfg.scale_max);
  if (applied.scale != 1.0) {
    const int rows = std::max(1, static_cast<int>(std::lround(out.rows() * applied.scale)));
    const int cols = std::max(1, static_cast<int>(std::lround(out.cols() * applied.scale)));
    out.pixels = resample_linear(out.pixels, rows, cols, applied.scale, applied.scale);
    res.y_true = std::clamp(static_cast<int>(std::lround(applied.scale * res.y_true)), 0, rows - 1);
  }

  if (bernoulli(rng, cfg.piecewise_affine_prob) && cfg.piecewise_affine_jitter_px > 0.0) {
    const int g = cfg.piecewise_affine_grid;
    std::normal_distribution<double> jitter(0.0, cfg.piecewise_affine_jitter_px);
    applied.affine_dy.resize(static_cast<std::size_t>(g) * g);
    applied.affine_dx.resize(applied.affine_dy.size());
    for (std::size_t i = 0; i < applied.affine_dy.size(); ++i) {
      applied.affine_dy[i] = jitter(rng);
      applied.affine_dx[i] = jitter(rng);
    }
    out.pixels = piecewise_affine(out.pixels, g, applied.affine_dy, applied.affine_dx);
    const double shift =
        piecewise_affine_row_shift(out.rows(), out.cols(), g, applied.affine_dy, res.y_true, (out.cols() - 1) / 2.0);
    res.y_true = std::clamp(static_cast<int>(std::lround(res.y_true - shift)), 0, out.rows() - 1);
  }

  if (bernoulli(rng, cfg.thickness_prob)) {
    applied.thickness_mm = uniform(rng, 1.0, cfg.max_simulated_thickness_mm);
    out = simulate_thickness(out, applied.thickness_mm);
  }

  applied.intensity_offset = uniform(rng, cfg.intensity_offset_min, cfg.intensity_offset_max);
  if (applied.intensity_offset != 0.0) {
    const auto off = static_cast<float>(applied.intensity_offset);
    for (float& v : out.pixels.values()) v += off;
  }

  applied.dropouts = sample_regions(rng, out.rows(), out.cols(), cfg.dropout_prob, cfg.dropout_count_min,
                                    cfg.dropout_count_max, cfg.dropout_size_min, cfg.dropout_size_max);
  for (const auto& r : applied.dropouts) fill_region(out.pixels, r, -127.0f);
  applied.overexposures =
      sample_regions(rng, out.rows(), out.cols(), cfg.overexposure_prob, cfg.overexposure_count_min,
                     cfg.overexposure_count_max, cfg.overexposure_size_min, cfg.overexposure_size_max);
  for (const auto& r : applied.overexposures) fill_region(out.pixels, r, 127.0f);

  for (float& v : out.pixels.values()) v = std::clamp(std::nearbyint(v), -127.0f, 127.0f);
  out.domain = IntensityDomain::int8;
  return res;
}

AugmentResult augment(const MipImage& img, int y_true, const AugmentConfig& cfg) {
  Rng rng = make_rng(cfg.seed);
  return augment(img, y_true, cfg, rng);
}

}  // namespace mipslice
