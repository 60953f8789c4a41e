#include <cmath>
#include <fstream>
#include <string>

#include <json.hpp>

#include "mipslice/error.hpp"
#include "mipslice/volume.hpp"
#include "nifti.hpp"

namespace mipslice {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_spacing(const Spacing& s) {
  for (double v : {s.slice, s.ap, s.lr}) {
    if (!(v > 0.0) || !std::isfinite(v)) throw MetadataError("volume spacing must be positive and finite");
  }
}

void check_shape(const Volume3D::Shape& shape) {
  for (int e : shape) {
    if (e < 1) throw ShapeError("volume extents must all be >= 1");
  }
}

std::size_t voxel_count(const Volume3D::Shape& s) { return static_cast<std::size_t>(s[0]) * s[1] * s[2]; }

constexpr const char* kAxisOrder = "SI,AP,LR";

struct RawPaths {
  fs::path sidecar;
  fs::path payload;
};

RawPaths raw_paths(const fs::path& path) {
  fs::path stem = path;
  stem.replace_extension();
  return {fs::path(stem).concat(".json"), fs::path(stem).concat(".raw")};
}

Volume3D load_raw(const fs::path& path) {
  const RawPaths paths = raw_paths(path);
  std::ifstream meta_in(paths.sidecar);
  if (!meta_in) throw IoError("cannot open volume sidecar " + paths.sidecar.string());
  json meta;
  try {
    meta = json::parse(meta_in);
  } catch (const json::exception& e) {
    throw FormatError("malformed volume sidecar " + paths.sidecar.string() + ": " + e.what());
  }
  if (!meta.contains("shape") || !meta["shape"].is_array() || meta["shape"].size() != 3) {
    throw FormatError("volume sidecar: shape must have rank 3");
  }
  if (!meta.contains("spacing") || !meta["spacing"].is_array() || meta["spacing"].size() != 3) {
    throw MetadataError("volume sidecar: spacing missing");
  }
  if (meta.value("axis_order", std::string(kAxisOrder)) != kAxisOrder) {
    throw FormatError("volume sidecar: unsupported axis_order");
  }
  const std::string dtype = meta.value("dtype", std::string("float32"));
  Volume3D::Shape shape{meta["shape"][0].get<int>(), meta["shape"][1].get<int>(), meta["shape"][2].get<int>()};
  check_shape(shape);
  Spacing spacing{meta["spacing"][0].get<double>(), meta["spacing"][1].get<double>(), meta["spacing"][2].get<double>()};
  check_spacing(spacing);

  std::ifstream in(paths.payload, std::ios::binary);
  if (!in) throw IoError("cannot open volume payload " + paths.payload.string());
  std::vector<float> data(voxel_count(shape));
  if (dtype == "float32") {
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
  } else if (dtype == "int16") {
    std::vector<std::int16_t> tmp(data.size());
    in.read(reinterpret_cast<char*>(tmp.data()), static_cast<std::streamsize>(tmp.size() * sizeof(std::int16_t)));
    std::copy(tmp.begin(), tmp.end(), data.begin());
  } else {
    throw FormatError("volume sidecar: unsupported dtype " + dtype);
  }
  if (!in) throw IoError("truncated volume payload " + paths.payload.string());
  std::string id = meta.value("id", paths.sidecar.stem().string());
  return Volume3D(shape, spacing, std::move(id), std::move(data));
}

void save_raw(const Volume3D& vol, const fs::path& path) {
  const RawPaths paths = raw_paths(path);
  const auto& s = vol.shape();
  const auto& sp = vol.spacing();
  json meta = {
      {"id", vol.id()},
      {"shape", {s[0], s[1], s[2]}},
      {"spacing", {sp.slice, sp.ap, sp.lr}},
      {"dtype", "float32"},
      {"axis_order", kAxisOrder},
  };
  std::ofstream payload(paths.payload, std::ios::binary);
  if (!payload) throw IoError("cannot write " + paths.payload.string());
  payload.write(reinterpret_cast<const char*>(vol.data().data()),
                static_cast<std::streamsize>(vol.size() * sizeof(float)));
  if (!payload) throw IoError("write failed for " + paths.payload.string());
  std::ofstream sidecar(paths.sidecar);
  if (!sidecar) throw IoError("cannot write " + paths.sidecar.string());
  sidecar << meta.dump(2) << '\n';
  if (!sidecar) throw IoError("write failed for " + paths.sidecar.string());
}

}  // namespace

Volume3D::Volume3D(Shape shape, Spacing spacing, std::string id)
    : Volume3D(shape, spacing, std::move(id), std::vector<float>(voxel_count(shape), 0.0f)) {}

Volume3D::Volume3D(Shape shape, Spacing spacing, std::string id, std::vector<float> data)
    : shape_(shape), spacing_(spacing), id_(std::move(id)), data_(std::move(data)) {
  check_shape(shape_);
  check_spacing(spacing_);
  if (data_.size() != voxel_count(shape_)) throw ShapeError("volume data size does not match shape");
}

void Volume3D::validate() const {
  check_shape(shape_);
  check_spacing(spacing_);
  for (float v : data_) {
    if (!std::isfinite(v)) throw FormatError("volume contains non-finite HU values");
  }
}

bool is_nifti_path(const fs::path& path) {
  const std::string name = path.filename().string();
  auto ends_with = [&](std::string_view suffix) {
    return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  return ends_with(".nii") || ends_with(".nii.gz");
}

Volume3D load_volume(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("no such file: " + path.string());
  Volume3D vol = is_nifti_path(path) ? nifti::read(path) : load_raw(path);
  if (is_nifti_path(path)) {
    std::string id = path.filename().string();
    for (std::string_view ext : {".nii.gz", ".nii"}) {
      if (id.size() > ext.size() && id.ends_with(ext)) {
        id.resize(id.size() - ext.size());
        break;
      }
    }
    vol.set_id(std::move(id));
  }
  vol.validate();
  return vol;
}

void save_volume(const Volume3D& vol, const fs::path& path) {
  if (is_nifti_path(path)) {
    nifti::write(vol, path);
  } else {
    save_raw(vol, path);
  }
}

int slice_index_for_y(double y_mm, double slice_spacing, int slices) {
  if (!std::isfinite(y_mm) || y_mm < 0.0) throw DomainError("slice_index_for_y: y_mm must be non-negative");
  if (!(slice_spacing > 0.0)) throw DomainError("slice_index_for_y: slice spacing must be positive");
  if (slices < 1) throw DomainError("slice_index_for_y: volume has no slices");
  const auto idx = static_cast<long long>(std::floor(y_mm / slice_spacing + 0.5));
  return static_cast<int>(std::clamp<long long>(idx, 0, slices - 1));
}

int slice_index_for_y(const Volume3D& vol, double y_mm) {
  return slice_index_for_y(y_mm, vol.spacing().slice, vol.shape()[0]);
}

}  // namespace mipslice
