#include "nifti.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <vector>

#include "mipslice/error.hpp"

namespace mipslice::nifti {
namespace {

#pragma pack(push, 1)
struct Header {
  std::int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration;
  float toffset;
  std::int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code;
  std::int16_t sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4];
  float srow_y[4];
  float srow_z[4];
  char intent_name[16];
  char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Header) == 348);
static_assert(offsetof(Header, dim) == 40);
static_assert(offsetof(Header, pixdim) == 76);
static_assert(offsetof(Header, qform_code) == 252);
static_assert(offsetof(Header, magic) == 344);

enum DataType : std::int16_t {
  kUInt8 = 2,
  kInt16 = 4,
  kInt32 = 8,
  kFloat32 = 16,
  kFloat64 = 64,
  kInt8 = 256,
  kUInt16 = 512,
  kUInt32 = 768,
};

template <class T>
void swap_bytes(T& v) {
  auto* p = reinterpret_cast<unsigned char*>(&v);
  std::reverse(p, p + sizeof(T));
}

void swap_header(Header& h) {
  swap_bytes(h.sizeof_hdr);
  for (auto& d : h.dim) swap_bytes(d);
  swap_bytes(h.datatype);
  swap_bytes(h.bitpix);
  for (auto& p : h.pixdim) swap_bytes(p);
  swap_bytes(h.vox_offset);
  swap_bytes(h.scl_slope);
  swap_bytes(h.scl_inter);
  swap_bytes(h.qform_code);
  swap_bytes(h.sform_code);
  swap_bytes(h.quatern_b);
  swap_bytes(h.quatern_c);
  swap_bytes(h.quatern_d);
  for (int i = 0; i < 4; ++i) {
    swap_bytes(h.srow_x[i]);
    swap_bytes(h.srow_y[i]);
    swap_bytes(h.srow_z[i]);
  }
}

struct GzCloser {
  void operator()(gzFile f) const {
    if (f) gzclose(f);
  }
};
using GzHandle = std::unique_ptr<std::remove_pointer_t<gzFile>, GzCloser>;

void read_exact(gzFile f, void* dst, std::size_t bytes, const std::filesystem::path& path) {
  auto* out = static_cast<unsigned char*>(dst);
  while (bytes > 0) {
    const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(bytes, 1u << 30));
    const int got = gzread(f, out, chunk);
    if (got <= 0) throw IoError("nifti: truncated file " + path.string());
    out += got;
    bytes -= static_cast<std::size_t>(got);
  }
}

int bytes_per_voxel(std::int16_t datatype) {
  switch (datatype) {
    case kUInt8:
    case kInt8:
      return 1;
    case kInt16:
    case kUInt16:
      return 2;
    case kInt32:
    case kUInt32:
    case kFloat32:
      return 4;
    case kFloat64:
      return 8;
    default:
      return 0;
  }
}

template <class T>
float load_scalar(const unsigned char* p, bool swap) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  if (swap) swap_bytes(v);
  return static_cast<float>(v);
}

float decode_voxel(const unsigned char* p, std::int16_t datatype, bool swap) {
  switch (datatype) {
    case kUInt8: return load_scalar<std::uint8_t>(p, false);
    case kInt8: return load_scalar<std::int8_t>(p, false);
    case kInt16: return load_scalar<std::int16_t>(p, swap);
    case kUInt16: return load_scalar<std::uint16_t>(p, swap);
    case kInt32: return load_scalar<std::int32_t>(p, swap);
    case kUInt32: return load_scalar<std::uint32_t>(p, swap);
    case kFloat32: return load_scalar<float>(p, swap);
    case kFloat64: return load_scalar<double>(p, swap);
    default: return 0.0f;
  }
}

using Mat3 = std::array<std::array<double, 3>, 3>;  // [world][voxel axis]

Mat3 orientation(const Header& h) {
  Mat3 m{};
  if (h.sform_code > 0) {
    for (int a = 0; a < 3; ++a) {
      m[0][a] = h.srow_x[a];
      m[1][a] = h.srow_y[a];
      m[2][a] = h.srow_z[a];
    }
    return m;
  }
  if (h.qform_code > 0) {
    const double b = h.quatern_b, c = h.quatern_c, d = h.quatern_d;
    const double a = std::sqrt(std::max(0.0, 1.0 - (b * b + c * c + d * d)));
    const Mat3 r{{{a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)},
                  {2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)},
                  {2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b}}};
    const double qfac = h.pixdim[0] < 0 ? -1.0 : 1.0;
    const std::array<double, 3> scale{h.pixdim[1], h.pixdim[2], qfac * h.pixdim[3]};
    for (int w = 0; w < 3; ++w)
      for (int v = 0; v < 3; ++v) m[w][v] = r[w][v] * scale[v];
    return m;
  }
  // No orientation: take the stored layout (i = LR, j = AP, k = slice) as-is.
  // The j sign is chosen so that no flip happens below.
  m[0][0] = 1.0;
  m[1][1] = -1.0;
  m[2][2] = 1.0;
  return m;
}

struct AxisMap {
  std::array<int, 3> source_axis{};  // indexed by our axis (0 slice, 1 AP, 2 LR)
  std::array<bool, 3> flip{};
};

AxisMap axis_map(const Mat3& m) {
  // Greedy assignment of voxel axes to world axes by largest |cosine|.
  std::array<bool, 3> voxel_used{}, world_used{};
  std::array<int, 3> world_of_voxel{};
  std::array<double, 3> sign_of_voxel{};
  for (int round = 0; round < 3; ++round) {
    double best = -1.0;
    int bw = 0, bv = 0;
    for (int w = 0; w < 3; ++w) {
      if (world_used[w]) continue;
      for (int v = 0; v < 3; ++v) {
        if (voxel_used[v]) continue;
        if (std::abs(m[w][v]) > best) {
          best = std::abs(m[w][v]);
          bw = w;
          bv = v;
        }
      }
    }
    world_used[bw] = voxel_used[bv] = true;
    world_of_voxel[bv] = bw;
    sign_of_voxel[bv] = m[bw][bv] < 0 ? -1.0 : 1.0;
  }
  // RAS world: x -> our axis2 (+), y -> our axis1 (posterior = -y), z -> axis0 (+).
  constexpr std::array<int, 3> ours_for_world{2, 1, 0};
  constexpr std::array<double, 3> wanted_sign{1.0, -1.0, 1.0};
  AxisMap map;
  for (int v = 0; v < 3; ++v) {
    const int w = world_of_voxel[v];
    map.source_axis[ours_for_world[w]] = v;
    map.flip[ours_for_world[w]] = sign_of_voxel[v] != wanted_sign[w];
  }
  return map;
}

bool has_gz_suffix(const std::filesystem::path& p) { return p.extension() == ".gz"; }

}  // namespace

Volume3D read(const std::filesystem::path& path) {
  GzHandle f(gzopen(path.string().c_str(), "rb"));
  if (!f) throw IoError("nifti: cannot open " + path.string());

  Header h{};
  read_exact(f.get(), &h, sizeof(h), path);
  bool swap = false;
  if (h.sizeof_hdr != 348) {
    swap_header(h);
    if (h.sizeof_hdr != 348) throw FormatError("nifti: bad header size in " + path.string());
    swap = true;
  }
  if (std::memcmp(h.magic, "n+1", 4) != 0 && std::memcmp(h.magic, "ni1", 4) != 0) {
    throw FormatError("nifti: bad magic in " + path.string());
  }
  if (std::memcmp(h.magic, "ni1", 4) == 0) {
    throw FormatError("nifti: two-file (.hdr/.img) NIfTI is not supported: " + path.string());
  }

  const int rank = h.dim[0];
  if (rank < 3 || rank > 7) throw FormatError("nifti: rank " + std::to_string(rank) + " is not 3");
  for (int d = 4; d <= rank; ++d) {
    if (h.dim[d] != 1) throw FormatError("nifti: rank > 3 with non-singleton trailing dimension");
  }
  std::array<int, 3> vox_dims{h.dim[1], h.dim[2], h.dim[3]};
  for (int d : vox_dims) {
    if (d < 1) throw FormatError("nifti: non-positive dimension");
  }
  std::array<double, 3> vox_spacing{h.pixdim[1], h.pixdim[2], h.pixdim[3]};
  for (double s : vox_spacing) {
    if (!(s > 0.0) || !std::isfinite(s)) throw MetadataError("nifti: missing or non-positive voxel spacing");
  }
  const int bpv = bytes_per_voxel(h.datatype);
  if (bpv == 0) throw FormatError("nifti: unsupported datatype " + std::to_string(h.datatype));

  const std::size_t n = static_cast<std::size_t>(vox_dims[0]) * vox_dims[1] * vox_dims[2];
  const auto offset = static_cast<std::size_t>(h.vox_offset);
  if (offset < sizeof(Header)) throw FormatError("nifti: vox_offset inside header");
  std::vector<unsigned char> skip(offset - sizeof(Header));
  if (!skip.empty()) read_exact(f.get(), skip.data(), skip.size(), path);
  std::vector<unsigned char> raw(n * bpv);
  read_exact(f.get(), raw.data(), raw.size(), path);

  const bool scaled = h.scl_slope != 0.0f && std::isfinite(h.scl_slope);
  const AxisMap map = axis_map(orientation(h));
  const Volume3D::Shape shape{vox_dims[map.source_axis[0]], vox_dims[map.source_axis[1]],
                              vox_dims[map.source_axis[2]]};
  const Spacing spacing{vox_spacing[map.source_axis[0]], vox_spacing[map.source_axis[1]],
                        vox_spacing[map.source_axis[2]]};
  std::vector<float> data(n);
  const std::array<std::size_t, 3> stride{1, static_cast<std::size_t>(vox_dims[0]),
                                          static_cast<std::size_t>(vox_dims[0]) * vox_dims[1]};
  std::size_t out = 0;
  for (int a = 0; a < shape[0]; ++a) {
    for (int b = 0; b < shape[1]; ++b) {
      for (int c = 0; c < shape[2]; ++c, ++out) {
        const std::array<int, 3> ours{a, b, c};
        std::size_t src = 0;
        for (int t = 0; t < 3; ++t) {
          const int coord = map.flip[t] ? shape[t] - 1 - ours[t] : ours[t];
          src += stride[map.source_axis[t]] * coord;
        }
        float v = decode_voxel(raw.data() + src * bpv, h.datatype, swap);
        if (scaled) v = v * h.scl_slope + h.scl_inter;
        data[out] = v;
      }
    }
  }
  return Volume3D(shape, spacing, path.filename().string(), std::move(data));
}

void write(const Volume3D& vol, const std::filesystem::path& path) {
  Header h{};
  h.sizeof_hdr = 348;
  h.regular = 'r';
  const auto& s = vol.shape();
  h.dim[0] = 3;
  h.dim[1] = static_cast<std::int16_t>(s[2]);
  h.dim[2] = static_cast<std::int16_t>(s[1]);
  h.dim[3] = static_cast<std::int16_t>(s[0]);
  for (int d = 4; d < 8; ++d) h.dim[d] = 1;
  if (s[0] > 32767 || s[1] > 32767 || s[2] > 32767) throw FormatError("nifti: dimension exceeds NIfTI-1 range");
  h.datatype = kFloat32;
  h.bitpix = 32;
  const auto& sp = vol.spacing();
  h.pixdim[0] = -1.0f;  // qfac
  h.pixdim[1] = static_cast<float>(sp.lr);
  h.pixdim[2] = static_cast<float>(sp.ap);
  h.pixdim[3] = static_cast<float>(sp.slice);
  for (int d = 4; d < 8; ++d) h.pixdim[d] = 1.0f;
  h.vox_offset = 352.0f;
  h.scl_slope = 1.0f;
  h.xyzt_units = 2;  // mm
  std::strncpy(h.descrip, "mipslice", sizeof(h.descrip) - 1);
  // i -> +x (right), j -> -y (posterior), k -> +z (superior)
  h.qform_code = 1;
  h.sform_code = 1;
  h.quatern_b = 1.0f;
  h.srow_x[0] = h.pixdim[1];
  h.srow_y[1] = -h.pixdim[2];
  h.srow_z[2] = h.pixdim[3];
  std::memcpy(h.magic, "n+1", 4);
  const char extension[4] = {0, 0, 0, 0};

  static_assert(std::endian::native == std::endian::little, "writer assumes little-endian host");
  const auto bytes = std::as_bytes(vol.data());
  if (has_gz_suffix(path)) {
    GzHandle f(gzopen(path.string().c_str(), "wb6"));
    if (!f) throw IoError("nifti: cannot open for writing " + path.string());
    bool ok = gzwrite(f.get(), &h, sizeof(h)) == static_cast<int>(sizeof(h));
    ok = ok && gzwrite(f.get(), extension, 4) == 4;
    std::size_t done = 0;
    while (ok && done < bytes.size()) {
      const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
      ok = gzwrite(f.get(), bytes.data() + done, chunk) == static_cast<int>(chunk);
      done += chunk;
    }
    if (!ok || gzclose(f.release()) != Z_OK) throw IoError("nifti: write failed for " + path.string());
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("nifti: cannot open for writing " + path.string());
  out.write(reinterpret_cast<const char*>(&h), sizeof(h));
  out.write(extension, 4);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("nifti: write failed for " + path.string());
}

}  // namespace mipslice::nifti
