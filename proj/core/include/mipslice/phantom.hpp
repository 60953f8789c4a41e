#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mipslice/mip.hpp"
#include "mipslice/random.hpp"
#include "mipslice/volume.hpp"

namespace mipslice {

/// Synthetic spine. Lengths are in mm (= px of the 1 mm MIPs).
struct PhantomConfig {
  int n_vertebrae_min = 12;  ///< levels above the sacrum; more are added if the stack would end inside the field of view
  int n_vertebrae_max = 20;
  int lumbar_height_min = 24;
  int lumbar_height_max = 30;
  int thoracic_height_min = 16;
  int thoracic_height_max = 24;
  int gap_min = 7;  ///< intervertebral disc
  int gap_max = 12;
  int body_width_min = 36;
  int body_width_max = 50;
  int body_depth_min = 26;
  int body_depth_max = 34;
  int transverse_height = 8;
  int pedicle_height = 12;
  int sacrum_height_min = 60;
  int sacrum_height_max = 90;
  int sacrum_width_min = 44;
  int sacrum_width_max = 60;
  int fov_height_min = 256;
  int fov_height_max = 480;
  int width_mm = 128;  ///< left-right extent
  int depth_mm = 64;   ///< anterior-posterior extent
  double thickness_min_mm = 1.0;
  double thickness_max_mm = 5.0;
  double noise_hu = 20.0;
  double bone_hu_min = 350.0;
  double bone_hu_max = 700.0;
  int max_retries = 20;

  void validate() const;
};

/// Axis-aligned bright box; z runs inferior -> superior within the field of
/// view, x is left-right, y anterior-posterior, all half-open [lo, hi).
struct Box {
  int z0 = 0, z1 = 0;
  int x0 = 0, x1 = 0;
  int y0 = 0, y1 = 0;
  float hu = 0.0f;
};

struct PhantomGeometry {
  int fov_height = 0;
  int spine_col = 0;      ///< left-right centre of the vertebral column
  int sacrum_top = 0;     ///< first row above the sacrum (may be outside the FOV)
  std::vector<Box> bodies;  ///< vertebral bodies above the sacrum, bottom-up (L5, L4, L3, ...)
  std::vector<Box> boxes;   ///< every rendered box except the sacrum wedge
  int sacrum_bottom = 0;
  int sacrum_half_width_top = 0;
  int sacrum_half_width_bottom = 0;
  int sacrum_y0 = 0, sacrum_y1 = 0;
  float sacrum_hu = 0.0f;
};

struct Phantom {
  std::string id;
  /// CT volume at the simulated slice thickness (HU, spacing {thickness, 1, 1}).
  /// Empty unless requested.
  Volume3D volume;
  MipImage frontal;   ///< noisy, thickness-simulated, int8
  MipImage sagittal;
  Image2D clean_frontal;  ///< noise-free 1 mm frontal MIP (int8) for oracle checks
  double y_true_mm = 0.0;  ///< middle of the third body above the sacrum, floored to whole mm
  double thickness_mm = 1.0;
  PhantomGeometry geometry;
};

/// Throws DomainError when no valid field of view is found within max_retries.
Phantom generate_phantom(const PhantomConfig& cfg, Rng& rng, const std::string& id = "phantom", bool keep_volume = false);

/// Rule-based landmark recovery: walks the column bottom-up, counts bright runs
/// (the first is the sacrum unless the image starts inside a disc), and returns
/// the middle row of the third run above the sacrum, or -1.
int oracle_l3_row(const Image2D& frontal, int col, float threshold = -110.0f);

std::string phantom_id(int index);

/// n phantoms, phantom i drawn from make_rng(seed, {i}).
std::vector<Phantom> generate_dataset(int n, const PhantomConfig& cfg, std::uint64_t seed, bool keep_volumes = false);

/// Writes <dir>/<id>.frontal.{png,json}, <dir>/<id>.sagittal.{png,json},
/// <dir>/annotations.csv (annotator "phantom") and, optionally,
/// <dir>/volumes/<id>.nii.gz. Phantoms are generated one at a time.
void write_phantom_dataset(const std::filesystem::path& dir, int n, const PhantomConfig& cfg, std::uint64_t seed,
                           bool write_volumes = true);

}  // namespace mipslice
