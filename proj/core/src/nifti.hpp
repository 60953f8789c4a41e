#pragma once

#include <filesystem>

#include "mipslice/volume.hpp"

namespace mipslice::nifti {

Volume3D read(const std::filesystem::path& path);
void write(const Volume3D& vol, const std::filesystem::path& path);

}  // namespace mipslice::nifti
