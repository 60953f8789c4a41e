#include "mipslice/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "mipslice/augment.hpp"
#include "mipslice/error.hpp"
#include "mipslice/targets.hpp"

namespace mipslice {

namespace fs = std::filesystem;

void PhantomConfig::validate() const {
  auto range = [](double lo, double hi, const char* name, double min_lo) {
    if (!(lo >= min_lo) || !(hi >= lo)) throw ConfigError(std::string("phantom: bad ") + name + " range");
  };
  range(n_vertebrae_min, n_vertebrae_max, "n_vertebrae", 3);
  range(lumbar_height_min, lumbar_height_max, "lumbar_height", 4);
  range(thoracic_height_min, thoracic_height_max, "thoracic_height", 4);
  range(gap_min, gap_max, "gap", 2);
  range(body_width_min, body_width_max, "body_width", 8);
  range(body_depth_min, body_depth_max, "body_depth", 8);
  range(sacrum_height_min, sacrum_height_max, "sacrum_height", 20);
  range(sacrum_width_min, sacrum_width_max, "sacrum_width", 16);
  range(fov_height_min, fov_height_max, "fov_height", 64);
  range(thickness_min_mm, thickness_max_mm, "thickness", 1.0);
  range(bone_hu_min, bone_hu_max, "bone_hu", 150.0);
  if (transverse_height < 2 || pedicle_height < 2) throw ConfigError("phantom: process heights must be >= 2");
  if (width_mm < body_width_max + 40 || depth_mm < body_depth_max + 24) throw ConfigError("phantom: grid too small");
  if (!(noise_hu >= 0.0)) throw ConfigError("phantom: noise_hu must be >= 0");
  if (max_retries < 1) throw ConfigError("phantom: max_retries must be >= 1");
}

namespace {

float draw_hu(Rng& rng, const PhantomConfig& cfg) {
  return static_cast<float>(std::round(uniform(rng, cfg.bone_hu_min, cfg.bone_hu_max)));
}

void paint(Volume3D& vol, const Box& b) {
  const auto& s = vol.shape();
  const int z0 = std::max(b.z0, 0), z1 = std::min(b.z1, s[0]);
  const int y0 = std::max(b.y0, 0), y1 = std::min(b.y1, s[1]);
  const int x0 = std::max(b.x0, 0), x1 = std::min(b.x1, s[2]);
  for (int z = z0; z < z1; ++z) {
    for (int y = y0; y < y1; ++y) {
      float* row = &vol.at(z, y, 0);
      for (int x = x0; x < x1; ++x) row[x] = std::max(row[x], b.hu);
    }
  }
}

void paint_sacrum(Volume3D& vol, const PhantomGeometry& g) {
  const auto& s = vol.shape();
  const int height = g.sacrum_top - g.sacrum_bottom;
  for (int z = std::max(0, g.sacrum_bottom); z < std::min(g.sacrum_top, s[0]); ++z) {
    const double t = (z + 0.5 - g.sacrum_bottom) / height;  // 0 at the tip, 1 at the top
    const int half = static_cast<int>(std::lround(g.sacrum_half_width_bottom +
                                                  t * (g.sacrum_half_width_top - g.sacrum_half_width_bottom)));
    paint(vol, {z, z + 1, g.spine_col - half, g.spine_col + half, g.sacrum_y0, g.sacrum_y1, g.sacrum_hu});
  }
}

// Bodies, posterior elements, ribs and iliac wings in body coordinates (sacrum
// tip at z = 0). Returns the geometry shifted into the field of view.
std::optional<PhantomGeometry> draw_geometry(const PhantomConfig& cfg, Rng& rng) {
  PhantomGeometry g;
  g.spine_col = cfg.width_mm / 2 + uniform_int(rng, -4, 4);
  const int sacrum_height = uniform_int(rng, cfg.sacrum_height_min, cfg.sacrum_height_max);
  const int sacrum_width = uniform_int(rng, cfg.sacrum_width_min, cfg.sacrum_width_max);
  g.sacrum_bottom = 0;
  g.sacrum_top = sacrum_height;
  g.sacrum_half_width_top = sacrum_width / 2;
  g.sacrum_half_width_bottom = 6;
  const int ap_front = uniform_int(rng, 6, 10);
  g.sacrum_y0 = ap_front + 4;
  g.sacrum_y1 = ap_front + 4 + uniform_int(rng, 24, 32);
  g.sacrum_hu = draw_hu(rng, cfg);

  const int fov = uniform_int(rng, cfg.fov_height_min, cfg.fov_height_max);
  const int n_drawn = uniform_int(rng, cfg.n_vertebrae_min, cfg.n_vertebrae_max);

  // Transverse process reach beyond the body edge, L5 .. L1: L3 is the longest.
  const int tp_reach[5] = {uniform_int(rng, 10, 16), uniform_int(rng, 16, 22), uniform_int(rng, 24, 30),
                           uniform_int(rng, 16, 22), uniform_int(rng, 10, 16)};
  const int wing_reach = cfg.width_mm / 2 - 4;

  int z = g.sacrum_top;
  int fov_z0_hi = g.sacrum_top - 15;
  std::vector<Box> bodies;
  for (int level = 0;; ++level) {
    const bool lumbar = level < 5;
    const int gap = uniform_int(rng, cfg.gap_min, cfg.gap_max);
    const int h = lumbar ? uniform_int(rng, cfg.lumbar_height_min, cfg.lumbar_height_max)
                         : uniform_int(rng, cfg.thoracic_height_min, cfg.thoracic_height_max);
    const int half_w = uniform_int(rng, cfg.body_width_min, cfg.body_width_max) / 2;
    const int depth = uniform_int(rng, cfg.body_depth_min, cfg.body_depth_max);
    const int bz0 = z + gap;
    const int bz1 = bz0 + h;
    const int back = ap_front + depth;
    const int centre = (bz0 + bz1) / 2;
    Box body{bz0, bz1, g.spine_col - half_w, g.spine_col + half_w, ap_front, back, draw_hu(rng, cfg)};
    bodies.push_back(body);
    g.boxes.push_back(body);

    const float post_hu = draw_hu(rng, cfg);
    const int ph = std::min(cfg.pedicle_height, h - 2);
    for (int side : {-1, 1}) {
      const int px = g.spine_col + side * (half_w - 6);
      g.boxes.push_back({centre - ph / 2, centre - ph / 2 + ph, px - 3, px + 4, back, back + 8, post_hu});
      const int reach = lumbar ? tp_reach[level] : wing_reach - half_w;
      const int th = lumbar ? std::min(cfg.transverse_height, h / 2) : std::min(6, h / 2);
      const int inner = g.spine_col + side * half_w;
      const int outer = g.spine_col + side * (half_w + reach);
      // Transverse processes (lumbar) or ribs (thoracic), top edge at the body centre.
      g.boxes.push_back({centre - th, centre, std::min(inner, outer), std::max(inner, outer), back + 4, back + 12,
                         lumbar ? post_hu : post_hu * 0.8f});
    }
    g.boxes.push_back({bz0 + 3, bz1 - 3, g.spine_col - 4, g.spine_col + 4, back + 8,
                       std::min(cfg.depth_mm - 2, back + 24), post_hu});
    z = bz1;
    if (level + 1 >= n_drawn && z >= fov_z0_hi + fov + 10) break;
    if (level > 60) return std::nullopt;
  }

  const float wing_hu = static_cast<float>(std::round(uniform(rng, cfg.bone_hu_min * 0.8, cfg.bone_hu_max * 0.8)));
  const int wing_top = std::min(bodies[0].z1 - 4, g.sacrum_top + 12);
  for (int side : {-1, 1}) {
    const int inner = g.spine_col + side * (g.sacrum_half_width_top + 4);
    const int outer = g.spine_col + side * wing_reach;
    g.boxes.push_back({g.sacrum_bottom + 20, wing_top, std::min(inner, outer), std::max(inner, outer), ap_front + 2,
                       ap_front + 20, wing_hu});
  }

  // Field of view: keeps part of the sacrum and a margin above L3.
  const int l3_centre = (bodies[2].z0 + bodies[2].z1) / 2;
  const int lo = std::max(0, l3_centre + 30 - fov);
  const int hi = fov_z0_hi;
  if (lo > hi) return std::nullopt;
  const int z0 = uniform_int(rng, lo, hi);

  auto shift = [z0](Box& b) {
    b.z0 -= z0;
    b.z1 -= z0;
  };
  for (auto& b : g.boxes) shift(b);
  for (auto& b : bodies) shift(b);
  g.bodies = std::move(bodies);
  g.sacrum_bottom -= z0;
  g.sacrum_top -= z0;
  g.fov_height = fov;
  return g;
}

Volume3D render(const PhantomGeometry& g, const PhantomConfig& cfg) {
  Volume3D vol({g.fov_height, cfg.depth_mm, cfg.width_mm}, Spacing{1.0, 1.0, 1.0});
  paint_sacrum(vol, g);
  for (const auto& b : g.boxes) paint(vol, b);
  return vol;
}

MipImage noisy_mip(MipImage hu, const PhantomConfig& cfg, double thickness, Rng& rng) {
  if (cfg.noise_hu > 0.0) {
    std::normal_distribution<double> noise(0.0, cfg.noise_hu);
    for (float& v : hu.pixels.values()) v = static_cast<float>(v + noise(rng));
  }
  MipImage out = simulate_thickness(threshold_and_quantize(hu), thickness);
  out.slice_thickness_mm = thickness;
  return out;
}

// Averages consecutive 1 mm slices into slabs of the simulated thickness.
Volume3D thicken(const Volume3D& vol, int slabs) {
  const auto& s = vol.shape();
  const double f = static_cast<double>(s[0]) / slabs;
  Volume3D out({slabs, s[1], s[2]}, Spacing{f, 1.0, 1.0}, vol.id());
  const std::size_t plane = static_cast<std::size_t>(s[1]) * s[2];
  for (int k = 0; k < slabs; ++k) {
    const double a = k * f, b = (k + 1) * f;
    float* dst = out.data().data() + k * plane;
    for (int z = static_cast<int>(std::floor(a)); z < std::min(s[0], static_cast<int>(std::ceil(b))); ++z) {
      const double w = (std::min(b, z + 1.0) - std::max(a, static_cast<double>(z))) / f;
      if (w <= 0.0) continue;
      const float* src = vol.data().data() + z * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] += static_cast<float>(w * src[i]);
    }
  }
  return out;
}

}  // namespace

Phantom generate_phantom(const PhantomConfig& cfg, Rng& rng, const std::string& id, bool keep_volume) {
  cfg.validate();
  std::optional<PhantomGeometry> geometry;
  for (int attempt = 0; attempt < cfg.max_retries && !geometry; ++attempt) geometry = draw_geometry(cfg, rng);
  if (!geometry) throw DomainError("generate_phantom: no field of view containing L3 after retries");

  Phantom p;
  p.id = id;
  p.geometry = std::move(*geometry);
  const auto& l3 = p.geometry.bodies[2];
  p.y_true_mm = (l3.z0 + l3.z1) / 2;

  Volume3D vol = render(p.geometry, cfg);
  vol.set_id(id);
  const int slabs = std::max(1, static_cast<int>(std::lround(p.geometry.fov_height /
                                                              uniform(rng, cfg.thickness_min_mm, cfg.thickness_max_mm))));
  p.thickness_mm = static_cast<double>(p.geometry.fov_height) / slabs;

  MipImage frontal = project_frontal(vol);
  MipImage sagittal = project_sagittal_restricted(vol);
  p.clean_frontal = threshold_and_quantize(frontal).pixels;
  p.frontal = noisy_mip(std::move(frontal), cfg, p.thickness_mm, rng);
  p.sagittal = noisy_mip(std::move(sagittal), cfg, p.thickness_mm, rng);
  if (keep_volume) p.volume = thicken(vol, slabs);
  return p;
}

int oracle_l3_row(const Image2D& frontal, int col, float threshold) {
  if (col < 0 || col >= frontal.cols()) throw DomainError("oracle_l3_row: column outside the image");
  std::vector<std::pair<int, int>> runs;  // [start, end)
  int start = -1;
  for (int r = 0; r <= frontal.rows(); ++r) {
    const bool bright = r < frontal.rows() && frontal.at(r, col) > threshold;
    if (bright && start < 0) start = r;
    if (!bright && start >= 0) {
      runs.emplace_back(start, r);
      start = -1;
    }
  }
  if (runs.empty() || runs.front().first != 0) return -1;  // the sacrum must touch the bottom edge
  if (runs.size() < 4) return -1;
  return (runs[3].first + runs[3].second) / 2;
}

std::string phantom_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "phantom_%05d", index);
  return buf;
}

std::vector<Phantom> generate_dataset(int n, const PhantomConfig& cfg, std::uint64_t seed, bool keep_volumes) {
  if (n < 0) throw DomainError("generate_dataset: n must be >= 0");
  std::vector<Phantom> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    Rng rng = make_rng(seed, {static_cast<std::uint64_t>(i)});
    out.push_back(generate_phantom(cfg, rng, phantom_id(i), keep_volumes));
  }
  return out;
}

void write_phantom_dataset(const fs::path& dir, int n, const PhantomConfig& cfg, std::uint64_t seed, bool write_volumes) {
  if (n < 0) throw DomainError("write_phantom_dataset: n must be >= 0");
  fs::create_directories(dir);
  if (write_volumes) fs::create_directories(dir / "volumes");
  std::vector<Annotation> annotations;
  for (int i = 0; i < n; ++i) {
    Rng rng = make_rng(seed, {static_cast<std::uint64_t>(i)});
    const Phantom p = generate_phantom(cfg, rng, phantom_id(i), write_volumes);
    save_mip(p.frontal, mip_stem(dir, p.id, View::frontal));
    save_mip(p.sagittal, mip_stem(dir, p.id, View::sagittal));
    if (write_volumes) save_volume(p.volume, dir / "volumes" / (p.id + ".nii.gz"));
    annotations.push_back({p.id, "phantom", p.y_true_mm, false});
  }
  write_annotations_csv(dir / "annotations.csv", annotations);
}

}  // namespace mipslice
