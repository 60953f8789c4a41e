#include "mipslice/mip.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "mipslice/error.hpp"
#include "mipslice/png_io.hpp"

namespace mipslice {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(View view) { return view == View::frontal ? "frontal" : "sagittal"; }

View view_from_string(const std::string& name) {
  if (name == "frontal") return View::frontal;
  if (name == "sagittal" || name == "sagittal_restricted") return View::sagittal;
  throw DomainError("unknown view '" + name + "' (expected frontal or sagittal)");
}

void MipImage::validate() const {
  if (pixels.rows() < 1 || pixels.cols() < 1) throw ShapeError("MipImage: empty pixel grid");
  if (!(row_spacing > 0.0) || !(col_spacing > 0.0)) throw MetadataError("MipImage: spacing must be positive");
  if (domain == IntensityDomain::int8) {
    for (float v : pixels.values()) {
      if (!(v >= -127.0f && v <= 127.0f) || v != std::nearbyint(v)) {
        throw FormatError("MipImage: int8-domain pixel outside [-127, 127] or non-integral");
      }
    }
  }
}

MipImage project_frontal(const Volume3D& vol) {
  const auto& s = vol.shape();
  MipImage out;
  out.pixels = Image2D(s[0], s[2], -std::numeric_limits<float>::infinity());
  for (int i = 0; i < s[0]; ++i) {
    auto dst = out.pixels.row(i);
    for (int j = 0; j < s[1]; ++j) {
      const float* src = vol.data().data() + vol.index(i, j, 0);
      for (int k = 0; k < s[2]; ++k) dst[k] = std::max(dst[k], src[k]);
    }
  }
  out.row_spacing = vol.spacing().slice;
  out.col_spacing = vol.spacing().lr;
  out.domain = IntensityDomain::hu;
  out.view = View::frontal;
  out.source_id = vol.id();
  out.slice_thickness_mm = vol.spacing().slice;
  return out;
}

MipImage project_sagittal_restricted(const Volume3D& vol, double half_width_mm) {
  if (!(half_width_mm > 0.0)) throw DomainError("project_sagittal_restricted: half width must be positive");
  const auto& s = vol.shape();
  const int center = s[2] / 2;
  const auto w = static_cast<long long>(std::llround(half_width_mm / vol.spacing().lr));
  const int k0 = static_cast<int>(std::max<long long>(0, center - w));
  const int k1 = static_cast<int>(std::min<long long>(s[2] - 1, center + w));

  MipImage out;
  out.pixels = Image2D(s[0], s[1], -std::numeric_limits<float>::infinity());
  for (int i = 0; i < s[0]; ++i) {
    auto dst = out.pixels.row(i);
    for (int j = 0; j < s[1]; ++j) {
      const float* src = vol.data().data() + vol.index(i, j, 0);
      float m = dst[j];
      for (int k = k0; k <= k1; ++k) m = std::max(m, src[k]);
      dst[j] = m;
    }
  }
  out.row_spacing = vol.spacing().slice;
  out.col_spacing = vol.spacing().ap;
  out.domain = IntensityDomain::hu;
  out.view = View::sagittal;
  out.source_id = vol.id();
  out.slice_thickness_mm = vol.spacing().slice;
  return out;
}

MipImage resample_to_1mm(const MipImage& img) {
  if (!(img.row_spacing > 0.0) || !(img.col_spacing > 0.0)) {
    throw MetadataError("resample_to_1mm: spacing must be positive");
  }
  MipImage out = img;
  if (img.row_spacing == 1.0 && img.col_spacing == 1.0) return out;
  const int rows = std::max(1, static_cast<int>(std::lround(img.rows() * img.row_spacing)));
  const int cols = std::max(1, static_cast<int>(std::lround(img.cols() * img.col_spacing)));
  out.pixels = resample_linear(img.pixels, rows, cols, img.row_spacing, img.col_spacing);
  out.row_spacing = 1.0;
  out.col_spacing = 1.0;
  return out;
}

float quantize_hu(double hu, const HuWindow& window) {
  const double clamped = std::clamp(hu, window.low, window.high);
  const double mapped = -127.0 + (clamped - window.low) / (window.high - window.low) * 254.0;
  return static_cast<float>(std::round(mapped));
}

MipImage threshold_and_quantize(const MipImage& img, const HuWindow& window) {
  if (img.domain != IntensityDomain::hu) throw DomainError("threshold_and_quantize: image is not in HU");
  MipImage out = img;
  for (float& v : out.pixels.values()) v = quantize_hu(v, window);
  out.domain = IntensityDomain::int8;
  return out;
}

MipPair preprocess_volume(const Volume3D& vol, double sagittal_half_width_mm) {
  vol.validate();
  MipPair pair{threshold_and_quantize(resample_to_1mm(project_frontal(vol))),
               threshold_and_quantize(resample_to_1mm(project_sagittal_restricted(vol, sagittal_half_width_mm)))};
  return pair;
}

fs::path mip_stem(const fs::path& dir, const std::string& id, View view) {
  return dir / (id + "." + to_string(view));
}

namespace {

fs::path strip_known_extension(const fs::path& path) {
  if (path.extension() == ".png" || path.extension() == ".json") {
    fs::path stem = path;
    stem.replace_extension();
    return stem;
  }
  return path;
}

}  // namespace

void save_mip(const MipImage& img, const fs::path& stem_in) {
  if (img.domain != IntensityDomain::int8) throw DomainError("save_mip: quantize the image before saving");
  img.validate();
  const fs::path stem = strip_known_extension(stem_in);
  png::Raster raster;
  raster.rows = img.rows();
  raster.cols = img.cols();
  raster.channels = 1;
  raster.bytes.resize(img.pixels.size());
  for (int r = 0; r < img.rows(); ++r) {
    // PNG rows run top-down, i.e. superior first.
    const int src_row = img.rows() - 1 - r;
    for (int c = 0; c < img.cols(); ++c) {
      raster.bytes[static_cast<std::size_t>(r) * img.cols() + c] =
          static_cast<std::uint8_t>(static_cast<int>(img.pixels.at(src_row, c)) + 127);
    }
  }
  png::write(fs::path(stem).concat(".png"), raster);

  const json meta = {
      {"source_id", img.source_id},
      {"view", to_string(img.view)},
      {"height_mm", img.height_mm()},
      {"width_mm", img.width_mm()},
      {"original_slice_thickness_mm", img.slice_thickness_mm},
  };
  const fs::path sidecar = fs::path(stem).concat(".json");
  std::ofstream out(sidecar);
  if (!out) throw IoError("cannot write " + sidecar.string());
  out << meta.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + sidecar.string());
}

MipImage load_mip(const fs::path& path) {
  const fs::path stem = strip_known_extension(path);
  const fs::path sidecar = fs::path(stem).concat(".json");
  std::ifstream in(sidecar);
  if (!in) throw IoError("cannot open MIP sidecar " + sidecar.string());
  json meta;
  try {
    meta = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("malformed MIP sidecar " + sidecar.string() + ": " + e.what());
  }
  const png::Raster raster = png::read(fs::path(stem).concat(".png"));
  if (raster.channels != 1) throw FormatError("MIP PNG must be single-channel: " + stem.string());

  MipImage img;
  img.pixels = Image2D(raster.rows, raster.cols);
  for (int r = 0; r < raster.rows; ++r) {
    const int dst_row = raster.rows - 1 - r;
    for (int c = 0; c < raster.cols; ++c) {
      const int byte = raster.bytes[static_cast<std::size_t>(r) * raster.cols + c];
      img.pixels.at(dst_row, c) = static_cast<float>(std::min(byte, 254) - 127);
    }
  }
  img.domain = IntensityDomain::int8;
  img.source_id = meta.value("source_id", stem.filename().string());
  img.view = view_from_string(meta.value("view", std::string("frontal")));
  img.slice_thickness_mm = meta.value("original_slice_thickness_mm", 1.0);
  const double height = meta.value("height_mm", static_cast<double>(raster.rows));
  const double width = meta.value("width_mm", static_cast<double>(raster.cols));
  img.row_spacing = height / raster.rows;
  img.col_spacing = width / raster.cols;
  img.validate();
  return img;
}

}  // namespace mipslice
