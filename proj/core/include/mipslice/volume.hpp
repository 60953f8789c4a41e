#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace mipslice {

/// Voxel size in mm, one entry per axis of the fixed convention:
/// axis0 = slice (inferior -> superior), axis1 = anterior -> posterior,
/// axis2 = left -> right.
struct Spacing {
  double slice = 1.0;  ///< axis0, often called sz
  double ap = 1.0;     ///< axis1, sy
  double lr = 1.0;     ///< axis2, sx

  bool operator==(const Spacing&) const = default;
};

/// 3D CT grid in Hounsfield units, row-major with axis2 fastest.
class Volume3D {
 public:
  using Shape = std::array<int, 3>;

  Volume3D() = default;
  /// Zero-filled volume. Throws ShapeError / MetadataError on invalid input.
  Volume3D(Shape shape, Spacing spacing, std::string id = {});
  Volume3D(Shape shape, Spacing spacing, std::string id, std::vector<float> data);

  const Shape& shape() const { return shape_; }
  const Spacing& spacing() const { return spacing_; }
  const std::string& id() const { return id_; }
  void set_id(std::string id) { id_ = std::move(id); }

  std::size_t size() const { return data_.size(); }
  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k;
  }
  float& at(int i, int j, int k) { return data_[index(i, j, k)]; }
  float at(int i, int j, int k) const { return data_[index(i, j, k)]; }

  /// Extent along the slice axis in mm (slices x slice spacing).
  double height_mm() const { return shape_[0] * spacing_.slice; }

  /// Throws if any invariant (rank, positive finite spacing, finite HU) is broken.
  void validate() const;

  bool operator==(const Volume3D&) const = default;

 private:
  Shape shape_{0, 0, 0};
  Spacing spacing_;
  std::string id_;
  std::vector<float> data_;
};

/// Loads a NIfTI-1 file (.nii / .nii.gz) or the raw fallback format
/// (<stem>.json sidecar + <stem>.raw payload; either path is accepted).
/// Axes are reordered to the convention documented on Spacing.
Volume3D load_volume(const std::filesystem::path& path);

/// Writes by extension: .nii, .nii.gz, or raw (.json / .raw).
void save_volume(const Volume3D& vol, const std::filesystem::path& path);

/// Nearest slice for a position along axis0, measured from the inferior-most
/// slice: round-half-up(y_mm / slice_spacing) clamped to [0, slices - 1].
/// Throws DomainError for negative or non-finite y_mm.
int slice_index_for_y(double y_mm, double slice_spacing, int slices);
int slice_index_for_y(const Volume3D& vol, double y_mm);

/// True when the path names a NIfTI file.
bool is_nifti_path(const std::filesystem::path& path);

}  // namespace mipslice
