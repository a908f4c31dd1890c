#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "tsbnet/model.hpp"
#include "tsbnet/pgm.hpp"
#include "tsbnet/rng.hpp"
#include "tsbnet/stereo_geometry.hpp"
#include "tsbnet/tensor.hpp"

namespace tsbnet {

// Physical hand-model constants (millimetres).
inline constexpr double kTipRadiusMm = 8.0;
inline constexpr double kBoneRadiusMm = 3.5;
inline constexpr double kPalmSemiUMm = 16.0;
inline constexpr double kPalmSemiVMm = 12.0;
inline constexpr double kMinTipDistMm = 15.0;
inline constexpr double kTipLenMinMm = 50.0;
inline constexpr double kTipLenMaxMm = 110.0;
inline constexpr double kZNearMm = 250.0;
inline constexpr double kZFarMm = 450.0;
inline constexpr double kFrameMarginPx = 20.0;
// Largest joint deviation (pixels, either view/axis) from the per-view joint
// centroid that a centroid-centred 160 px crop still contains once the
// offset is rounded to a whole pixel.
inline constexpr double kMaxCentroidDevPx = 78.0;
inline constexpr int kRejectionBudget = 1000;

inline const std::array<int, 3> kCropSizes = {240, 200, 160};

struct HandScene {
  std::array<Point3D, kNumJoints> joints;  // five fingertips, then palm root
  std::int64_t scene_id = 0;

  const Point3D& palm() const { return joints[kNumJoints - 1]; }
};

namespace detail_synth {

struct Vec3 {
  double x = 0, y = 0, z = 0;
};
inline Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
inline Vec3 cross(Vec3 a, Vec3 b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(Vec3 a) { return std::sqrt(a.x * a.x + a.y * a.y + a.z * a.z); }
inline Vec3 normalize(Vec3 a) {
  const double n = norm(a);
  return {a.x / n, a.y / n, a.z / n};
}

inline bool projection_ok(const StereoRig& rig, const StereoPixelPair& pp) {
  const double m = kFrameMarginPx;
  return pp.ul >= m && pp.ul <= rig.w - m && pp.ur >= m && pp.ur <= rig.w - m &&
         pp.vl >= m && pp.vl <= rig.h - m;
}

}  // namespace detail_synth

// Rejection-samples a hand pose: palm root uniform in the working volume,
// fingertips fanned around a depth-biased hand axis. Accepts only scenes
// that project inside both frames with margin and fit the smallest crop.
inline HandScene sample_scene(const StereoRig& rig, Rng& rng) {
  using detail_synth::Vec3;
  for (int attempt = 0; attempt < kRejectionBudget; ++attempt) {
    HandScene scene;
    Point3D& palm = scene.joints[kNumJoints - 1];
    palm = {rng.uniform(-80.0, 80.0), rng.uniform(-60.0, 60.0),
            rng.uniform(kZNearMm, kZFarMm)};

    // Hand axis biased toward the optical axis keeps the projected spread
    // small enough for the 160 px crop.
    const Vec3 axis = detail_synth::normalize(
        Vec3{rng.normal(), rng.normal(), 2.0 * rng.normal()});
    Vec3 helper{rng.normal(), rng.normal(), rng.normal()};
    Vec3 b1 = detail_synth::cross(axis, helper);
    if (detail_synth::norm(b1) < 1e-6) b1 = detail_synth::cross(axis, Vec3{1, 0, 0});
    b1 = detail_synth::normalize(b1);
    const Vec3 b2 = detail_synth::cross(axis, b1);

    for (int i = 0; i < kNumJoints - 1; ++i) {
      const double deg = -30.0 + 15.0 * i + rng.uniform(-6.0, 6.0);
      const double phi = deg * M_PI / 180.0;
      const double psi = rng.uniform(-10.0, 10.0) * M_PI / 180.0;
      const Vec3 dir = std::cos(psi) * (std::cos(phi) * axis + std::sin(phi) * b1) +
                       std::sin(psi) * b2;
      const double len = rng.uniform(kTipLenMinMm, kTipLenMaxMm);
      scene.joints[i] = {palm.x + len * dir.x, palm.y + len * dir.y,
                         palm.z + len * dir.z};
    }

    bool ok = true;
    for (const Point3D& j : scene.joints)
      if (j.z < kZNearMm || j.z > kZFarMm) ok = false;
    for (int i = 0; ok && i < kNumJoints - 1; ++i)
      for (int j = i + 1; j < kNumJoints - 1; ++j) {
        const double dx = scene.joints[i].x - scene.joints[j].x;
        const double dy = scene.joints[i].y - scene.joints[j].y;
        const double dz = scene.joints[i].z - scene.joints[j].z;
        if (std::sqrt(dx * dx + dy * dy + dz * dz) < kMinTipDistMm) {
          ok = false;
          break;
        }
      }
    if (!ok) continue;

    std::array<StereoPixelPair, kNumJoints> px;
    double c_ul = 0, c_ur = 0, c_v = 0;
    for (int j = 0; ok && j < kNumJoints; ++j) {
      px[j] = project_point(rig, scene.joints[j]);
      if (!detail_synth::projection_ok(rig, px[j])) ok = false;
      c_ul += px[j].ul;
      c_ur += px[j].ur;
      c_v += px[j].vl;
    }
    if (!ok) continue;
    c_ul /= kNumJoints;
    c_ur /= kNumJoints;
    c_v /= kNumJoints;
    for (const StereoPixelPair& pp : px)
      if (std::fabs(pp.ul - c_ul) > kMaxCentroidDevPx ||
          std::fabs(pp.ur - c_ur) > kMaxCentroidDevPx ||
          std::fabs(pp.vl - c_v) > kMaxCentroidDevPx)
        ok = false;
    if (!ok) continue;

    return scene;
  }
  throw std::runtime_error("sample_scene: rejection budget exhausted");
}

// ---------------------------------------------------------------------------
// Rendering. The mask is rasterized from per-row analytic intervals of the
// scene geometry and consumes no randomness, so it is identical across
// illumination draws and its row extent is exactly equal in both rectified
// views. The gray channel shades the same geometry, then applies the
// illumination gain, a low-frequency noisy background, and pixel noise.
// ---------------------------------------------------------------------------

namespace detail_synth {

struct Disk {
  double cu, cv, r;
};

struct Shaded {
  std::vector<float> level;  // geometry shading in [0,1], before illumination
  std::vector<std::uint8_t> mask;
  int w, h;
};

inline void mask_row_interval(std::vector<std::uint8_t>& mask, int w, int h, int row,
                              double lo, double hi, double center) {
  if (row < 0 || row >= h) return;
  int j0 = static_cast<int>(std::ceil(lo));
  int j1 = static_cast<int>(std::floor(hi));
  if (j0 > j1) {
    // interval narrower than a pixel: keep the row covered anyway
    j0 = j1 = static_cast<int>(std::llround(center));
  }
  j0 = std::max(j0, 0);
  j1 = std::min(j1, w - 1);
  for (int j = j0; j <= j1; ++j)
    mask[static_cast<std::size_t>(row) * w + j] = 1;
}

inline void mask_disk(std::vector<std::uint8_t>& mask, int w, int h, const Disk& d) {
  const int r0 = static_cast<int>(std::ceil(d.cv - d.r));
  const int r1 = static_cast<int>(std::floor(d.cv + d.r));
  for (int i = r0; i <= r1; ++i) {
    const double dv = i - d.cv;
    const double hw = std::sqrt(std::max(0.0, d.r * d.r - dv * dv));
    mask_row_interval(mask, w, h, i, d.cu - hw, d.cu + hw, d.cu);
  }
}

inline void mask_ellipse(std::vector<std::uint8_t>& mask, int w, int h, double cu,
                         double cv, double au, double av) {
  const int r0 = static_cast<int>(std::ceil(cv - av));
  const int r1 = static_cast<int>(std::floor(cv + av));
  for (int i = r0; i <= r1; ++i) {
    const double t = (i - cv) / av;
    const double hw = au * std::sqrt(std::max(0.0, 1.0 - t * t));
    mask_row_interval(mask, w, h, i, cu - hw, cu + hw, cu);
  }
}

inline void shade_max(Shaded& img, int i, int j, double v) {
  if (i < 0 || i >= img.h || j < 0 || j >= img.w || v <= 0.0) return;
  float& px = img.level[static_cast<std::size_t>(i) * img.w + j];
  px = std::max(px, static_cast<float>(v));
}

// Fingertip blob: Gaussian profile (sigma = r/2) rescaled to hit zero at the
// disk edge so the shading support matches the mask disk exactly.
inline void shade_blob(Shaded& img, const Disk& d) {
  const double sigma = d.r / 2.0;
  const double floor_v = std::exp(-2.0);
  const int i0 = static_cast<int>(std::floor(d.cv - d.r)),
            i1 = static_cast<int>(std::ceil(d.cv + d.r));
  const int j0 = static_cast<int>(std::floor(d.cu - d.r)),
            j1 = static_cast<int>(std::ceil(d.cu + d.r));
  for (int i = i0; i <= i1; ++i)
    for (int j = j0; j <= j1; ++j) {
      const double du = j - d.cu, dv = i - d.cv;
      const double dist = std::sqrt(du * du + dv * dv);
      if (dist >= d.r) continue;
      const double g = std::exp(-dist * dist / (2.0 * sigma * sigma));
      shade_max(img, i, j, (g - floor_v) / (1.0 - floor_v));
    }
}

// Bone sample disk with a one-pixel anti-aliased rim, level 0.55.
inline void shade_bone_disk(Shaded& img, const Disk& d) {
  const int i0 = static_cast<int>(std::floor(d.cv - d.r)),
            i1 = static_cast<int>(std::ceil(d.cv + d.r));
  const int j0 = static_cast<int>(std::floor(d.cu - d.r)),
            j1 = static_cast<int>(std::ceil(d.cu + d.r));
  for (int i = i0; i <= i1; ++i)
    for (int j = j0; j <= j1; ++j) {
      const double du = j - d.cu, dv = i - d.cv;
      const double dist = std::sqrt(du * du + dv * dv);
      shade_max(img, i, j, 0.55 * std::min(1.0, std::max(0.0, d.r - dist)));
    }
}

inline void shade_ellipse(Shaded& img, double cu, double cv, double au, double av) {
  const double edge = std::min(au, av);
  const int i0 = static_cast<int>(std::floor(cv - av)),
            i1 = static_cast<int>(std::ceil(cv + av));
  const int j0 = static_cast<int>(std::floor(cu - au)),
            j1 = static_cast<int>(std::ceil(cu + au));
  for (int i = i0; i <= i1; ++i)
    for (int j = j0; j <= j1; ++j) {
      const double du = (j - cu) / au, dv = (i - cv) / av;
      const double e = std::sqrt(du * du + dv * dv);
      shade_max(img, i, j, 0.5 * std::min(1.0, std::max(0.0, (1.0 - e) * edge)));
    }
}

// One view (left or right selected by `right_view`): geometry level + mask.
inline Shaded render_geometry(const StereoRig& rig, const HandScene& scene,
                              bool right_view) {
  Shaded img;
  img.w = rig.w;
  img.h = rig.h;
  img.level.assign(static_cast<std::size_t>(rig.w) * rig.h, 0.0f);
  img.mask.assign(static_cast<std::size_t>(rig.w) * rig.h, 0);

  const double fpx = rig.focal_px();
  auto proj_u = [&](const Point3D& p) {
    const StereoPixelPair pp = project_point(rig, p);
    return right_view ? pp.ur : pp.ul;
  };
  auto proj_v = [&](const Point3D& p) { return project_point(rig, p).vl; };

  const Point3D& palm = scene.palm();
  const double palm_u = proj_u(palm), palm_v = proj_v(palm);
  const double palm_au = fpx * kPalmSemiUMm / palm.z;
  const double palm_av = fpx * kPalmSemiVMm / palm.z;
  mask_ellipse(img.mask, img.w, img.h, palm_u, palm_v, palm_au, palm_av);
  shade_ellipse(img, palm_u, palm_v, palm_au, palm_av);

  for (int f = 0; f < kNumJoints - 1; ++f) {
    const Point3D& tip = scene.joints[f];

    // Bone: dense sample disks along the 3D segment. The sample count is a
    // function of both views' projected extents, so left and right renders
    // walk identical parameter values.
    const StereoPixelPair p0 = project_point(rig, palm);
    const StereoPixelPair p1 = project_point(rig, tip);
    const double span = std::max({std::fabs(p1.ul - p0.ul), std::fabs(p1.ur - p0.ur),
                                  std::fabs(p1.vl - p0.vl), 1.0});
    const int steps = static_cast<int>(std::ceil(span / 0.35)) + 1;
    for (int s = 0; s <= steps; ++s) {
      const double t = static_cast<double>(s) / steps;
      const Point3D q{palm.x + t * (tip.x - palm.x), palm.y + t * (tip.y - palm.y),
                      palm.z + t * (tip.z - palm.z)};
      const Disk d{proj_u(q), proj_v(q), fpx * kBoneRadiusMm / q.z};
      mask_disk(img.mask, img.w, img.h, d);
      shade_bone_disk(img, d);
    }

    const Disk blob{proj_u(tip), proj_v(tip), fpx * kTipRadiusMm / tip.z};
    mask_disk(img.mask, img.w, img.h, blob);
    shade_blob(img, blob);
  }
  return img;
}

// Low-frequency value noise on a 16 px lattice, bilinearly interpolated.
inline std::vector<float> background_field(int w, int h, Rng& rng) {
  const int cell = 16;
  const int gw = w / cell + 2, gh = h / cell + 2;
  std::vector<double> grid(static_cast<std::size_t>(gw) * gh);
  for (double& g : grid) g = rng.uniform();
  std::vector<float> bg(static_cast<std::size_t>(w) * h);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const double gy = static_cast<double>(i) / cell, gx = static_cast<double>(j) / cell;
      const int y0 = static_cast<int>(gy), x0 = static_cast<int>(gx);
      const double fy = gy - y0, fx = gx - x0;
      const double v00 = grid[static_cast<std::size_t>(y0) * gw + x0];
      const double v01 = grid[static_cast<std::size_t>(y0) * gw + x0 + 1];
      const double v10 = grid[static_cast<std::size_t>(y0 + 1) * gw + x0];
      const double v11 = grid[static_cast<std::size_t>(y0 + 1) * gw + x0 + 1];
      const double v = (1 - fy) * ((1 - fx) * v00 + fx * v01) +
                       fy * ((1 - fx) * v10 + fx * v11);
      bg[static_cast<std::size_t>(i) * w + j] = static_cast<float>(0.08 + 0.10 * v);
    }
  return bg;
}

inline PgmImage finish_gray(const Shaded& geo, Rng& rng) {
  const double gain = rng.uniform(0.5, 1.5);
  const std::vector<float> bg = background_field(geo.w, geo.h, rng);
  PgmImage img;
  img.w = geo.w;
  img.h = geo.h;
  img.pixels.resize(geo.level.size());
  for (std::size_t i = 0; i < geo.level.size(); ++i) {
    double v = std::max(gain * static_cast<double>(geo.level[i]),
                        static_cast<double>(bg[i]));
    v += rng.normal(0.0, 0.02);
    v = std::min(1.0, std::max(0.0, v));
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return img;
}

inline PgmImage mask_to_pgm(const Shaded& geo) {
  PgmImage img;
  img.w = geo.w;
  img.h = geo.h;
  img.pixels.resize(geo.mask.size());
  for (std::size_t i = 0; i < geo.mask.size(); ++i)
    img.pixels[i] = geo.mask[i] ? 255 : 0;
  return img;
}

}  // namespace detail_synth

struct RenderedViews {
  PgmImage left_gray, right_gray, left_mask, right_mask;
};

inline RenderedViews render_views(const StereoRig& rig, const HandScene& scene,
                                  Rng& rng) {
  const detail_synth::Shaded left = detail_synth::render_geometry(rig, scene, false);
  const detail_synth::Shaded right = detail_synth::render_geometry(rig, scene, true);
  RenderedViews out;
  out.left_gray = detail_synth::finish_gray(left, rng);
  out.right_gray = detail_synth::finish_gray(right, rng);
  out.left_mask = detail_synth::mask_to_pgm(left);
  out.right_mask = detail_synth::mask_to_pgm(right);
  return out;
}

// ---------------------------------------------------------------------------
// Cropping and samples
// ---------------------------------------------------------------------------

struct Sample {
  TensorF left, right;  // [2,96,96]: channel 0 gray, channel 1 mask
  std::array<PixelTriplet, kNumJoints> label_px;
  std::array<Point3D, kNumJoints> label_3d;
  std::array<double, kOutputDim> label_norm;
  CropMeta meta;
  std::int64_t scene_id = 0;
  int scale_choice = 240;
};

struct DatasetRecord {
  std::int64_t id = 0;
  std::string split;
  std::string left, right, left_mask, right_mask;  // paths relative to dataset dir
  std::array<Point3D, kNumJoints> joints_3d;
  std::array<StereoPixelPair, kNumJoints> joints_px;
  std::uint64_t scene_seed = 0;
};

struct Dataset {
  std::string dir;
  StereoRig rig;
  std::vector<DatasetRecord> records;

  // full frames cached when the dataset is small enough to hold in memory
  mutable std::vector<std::unique_ptr<std::array<PgmImage, 4>>> cache;

  Dataset() = default;
  Dataset(Dataset&&) = default;
  Dataset& operator=(Dataset&&) = default;
  // copies start with a cold cache
  Dataset(const Dataset& o) : dir(o.dir), rig(o.rig), records(o.records) {}
  Dataset& operator=(const Dataset& o) {
    dir = o.dir;
    rig = o.rig;
    records = o.records;
    cache.clear();
    return *this;
  }

  const std::array<PgmImage, 4>& frames(std::size_t idx) const {
    if (cache.empty()) cache.resize(records.size());
    if (!cache[idx]) {
      const DatasetRecord& r = records[idx];
      auto f = std::make_unique<std::array<PgmImage, 4>>();
      (*f)[0] = read_pgm(dir + "/" + r.left);
      (*f)[1] = read_pgm(dir + "/" + r.right);
      (*f)[2] = read_pgm(dir + "/" + r.left_mask);
      (*f)[3] = read_pgm(dir + "/" + r.right_mask);
      cache[idx] = std::move(f);
    }
    return *cache[idx];
  }

  void drop_frames(std::size_t idx) const {
    if (idx < cache.size()) cache[idx].reset();
  }
};

namespace detail_synth {

inline double clampd(double v, double lo, double hi) {
  return std::min(hi, std::max(lo, v));
}

// Bilinear sample of a full frame at continuous pixel coordinates.
inline float sample_bilinear(const PgmImage& img, double u, double v) {
  const int x0 = std::min(img.w - 2, std::max(0, static_cast<int>(std::floor(u))));
  const int y0 = std::min(img.h - 2, std::max(0, static_cast<int>(std::floor(v))));
  const double fx = clampd(u - x0, 0.0, 1.0), fy = clampd(v - y0, 0.0, 1.0);
  const double v00 = img.at(y0, x0), v01 = img.at(y0, x0 + 1);
  const double v10 = img.at(y0 + 1, x0), v11 = img.at(y0 + 1, x0 + 1);
  const double g = (1 - fy) * ((1 - fx) * v00 + fx * v01) +
                   fy * ((1 - fx) * v10 + fx * v11);
  return static_cast<float>(g / 255.0);
}

inline float sample_nearest_binary(const PgmImage& img, double u, double v) {
  const int x = std::min(img.w - 1, std::max(0, static_cast<int>(std::lround(u))));
  const int y = std::min(img.h - 1, std::max(0, static_cast<int>(std::lround(v))));
  return img.at(y, x) >= 128 ? 1.0f : 0.0f;
}

}  // namespace detail_synth

// Crop windows for one stereo record: per-view horizontal offsets centred on
// each view's joint centroid, one shared vertical offset.
inline CropMeta compute_crop(const StereoRig& rig,
                             const std::array<StereoPixelPair, kNumJoints>& joints,
                             int crop_size) {
  double cu_l = 0, cu_r = 0, cv = 0;
  for (const auto& pp : joints) {
    cu_l += pp.ul;
    cu_r += pp.ur;
    cv += pp.vl;
  }
  cu_l /= kNumJoints;
  cu_r /= kNumJoints;
  cv /= kNumJoints;

  const double S = crop_size;
  CropMeta m;
  m.offset_lx = detail_synth::clampd(std::llround(cu_l - S / 2), 0, rig.w - S);
  m.offset_rx = detail_synth::clampd(std::llround(cu_r - S / 2), 0, rig.w - S);
  m.offset_y = detail_synth::clampd(std::llround(cv - S / 2), 0, rig.h - S);
  m.scale = S / static_cast<double>(kInputSize);

  for (const auto& pp : joints) {
    const bool inside = pp.ul >= m.offset_lx && pp.ul <= m.offset_lx + S - 1 &&
                        pp.ur >= m.offset_rx && pp.ur <= m.offset_rx + S - 1 &&
                        pp.vl >= m.offset_y && pp.vl <= m.offset_y + S - 1;
    if (!inside)
      throw std::runtime_error("compute_crop: joint projections exceed the crop window");
  }
  return m;
}

inline Sample make_sample(const Dataset& ds, std::size_t idx, int scale_choice) {
  if (std::find(kCropSizes.begin(), kCropSizes.end(), scale_choice) == kCropSizes.end())
    throw std::invalid_argument("scale_choice must be one of 240/200/160");
  const DatasetRecord& rec = ds.records[idx];
  const std::array<PgmImage, 4>& fr = ds.frames(idx);

  Sample s;
  s.scene_id = rec.id;
  s.scale_choice = scale_choice;
  s.meta = compute_crop(ds.rig, rec.joints_px, scale_choice);
  s.label_3d = rec.joints_3d;
  for (int j = 0; j < kNumJoints; ++j) {
    s.label_px[j] = pixels_to_triplet(rec.joints_px[j]);
    const PixelTriplet n = normalize_triplet(s.label_px[j], s.meta);
    s.label_norm[3 * j] = n.s;
    s.label_norm[3 * j + 1] = n.q;
    s.label_norm[3 * j + 2] = n.t;
  }

  s.left = TensorF({2, kInputSize, kInputSize});
  s.right = TensorF({2, kInputSize, kInputSize});
  for (int i = 0; i < kInputSize; ++i) {
    const double v = s.meta.offset_y + s.meta.scale * i;
    for (int j = 0; j < kInputSize; ++j) {
      const double ul = s.meta.offset_lx + s.meta.scale * j;
      const double ur = s.meta.offset_rx + s.meta.scale * j;
      const std::size_t o = static_cast<std::size_t>(i) * kInputSize + j;
      s.left[o] = detail_synth::sample_bilinear(fr[0], ul, v);
      s.right[o] = detail_synth::sample_bilinear(fr[1], ur, v);
      s.left[kInputSize * kInputSize + o] = detail_synth::sample_nearest_binary(fr[2], ul, v);
      s.right[kInputSize * kInputSize + o] = detail_synth::sample_nearest_binary(fr[3], ur, v);
    }
  }
  return s;
}

// Per-epoch multi-scale choices, one per record; augmentation off = all 240.
inline std::vector<int> epoch_scale_choices(std::size_t n, bool augment, Rng& rng) {
  std::vector<int> out(n, kCropSizes[0]);
  if (augment)
    for (std::size_t i = 0; i < n; ++i)
      out[i] = kCropSizes[rng.uniform_int(kCropSizes.size())];
  return out;
}

// ---------------------------------------------------------------------------
// On-disk dataset
// ---------------------------------------------------------------------------

inline std::int64_t split_id_base(const std::string& split) {
  return split == "test" ? 1000000 : 0;
}

inline StereoRig load_rig_json(const std::string& path) {
  std::ifstream rf(path);
  if (!rf) throw std::runtime_error("missing rig file: " + path);
  const nlohmann::json rj = nlohmann::json::parse(rf);
  StereoRig rig;
  rig.f = rj.at("f").get<double>();
  rig.b = rj.at("b").get<double>();
  rig.lambda = rj.at("lambda").get<double>();
  rig.w = rj.at("w").get<int>();
  rig.h = rj.at("h").get<int>();
  rig.validate();
  return rig;
}

// Every record derives its rng from (seed, record id) and writes to files
// named after that id, so records can be produced on any number of threads;
// the manifest is assembled in record order after the workers join.
inline Dataset generate_dataset(int count, const std::string& split, std::uint64_t seed,
                                const std::string& out_dir, bool append = false,
                                const StereoRig* rig_override = nullptr,
                                int threads = 1) {
  namespace fs = std::filesystem;
  const StereoRig rig = rig_override ? *rig_override : default_rig();
  rig.validate();
  fs::create_directories(out_dir + "/images");

  {
    nlohmann::json rj{{"f", rig.f}, {"b", rig.b}, {"lambda", rig.lambda},
                      {"w", rig.w}, {"h", rig.h}};
    std::ofstream rf(out_dir + "/rig.json", std::ios::trunc);
    if (!rf) throw std::runtime_error("cannot write " + out_dir + "/rig.json");
    rf << rj.dump(2) << "\n";
  }

  std::vector<DatasetRecord> records(static_cast<std::size_t>(std::max(count, 0)));
  std::vector<std::string> lines(records.size());

  const auto make_record = [&](int i) {
    const std::int64_t id = split_id_base(split) + i;
    Rng scene_rng = substream(seed, "scene", static_cast<std::uint64_t>(id));
    HandScene scene = sample_scene(rig, scene_rng);
    scene.scene_id = id;
    Rng render_rng = substream(seed, "render", static_cast<std::uint64_t>(id));
    const RenderedViews views = render_views(rig, scene, render_rng);

    DatasetRecord rec;
    rec.id = id;
    rec.split = split;
    rec.scene_seed = static_cast<std::uint64_t>(id);
    const std::string stem = "images/" + split + "_" + std::to_string(id);
    rec.left = stem + "_l.pgm";
    rec.right = stem + "_r.pgm";
    rec.left_mask = stem + "_lm.pgm";
    rec.right_mask = stem + "_rm.pgm";
    write_pgm(out_dir + "/" + rec.left, views.left_gray);
    write_pgm(out_dir + "/" + rec.right, views.right_gray);
    write_pgm(out_dir + "/" + rec.left_mask, views.left_mask);
    write_pgm(out_dir + "/" + rec.right_mask, views.right_mask);

    nlohmann::json j;
    j["id"] = rec.id;
    j["split"] = rec.split;
    j["left"] = rec.left;
    j["right"] = rec.right;
    j["left_mask"] = rec.left_mask;
    j["right_mask"] = rec.right_mask;
    j["scene_seed"] = rec.scene_seed;
    nlohmann::json j3 = nlohmann::json::array(), jp = nlohmann::json::array();
    for (int k = 0; k < kNumJoints; ++k) {
      const Point3D& p = scene.joints[k];
      rec.joints_3d[k] = p;
      const StereoPixelPair pp = project_point(rig, p);
      rec.joints_px[k] = pp;
      j3.push_back({p.x, p.y, p.z});
      jp.push_back({pp.ul, pp.vl, pp.ur, pp.vr});
    }
    j["joints_3d"] = j3;
    j["joints_px"] = jp;
    lines[static_cast<std::size_t>(i)] = j.dump();
    records[static_cast<std::size_t>(i)] = std::move(rec);
  };

  const int workers = std::max(1, std::min(threads, count));
  if (workers <= 1) {
    for (int i = 0; i < count; ++i) make_record(i);
  } else {
    std::vector<std::thread> pool;
    std::mutex err_mutex;
    std::exception_ptr first_error;
    const int per = (count + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
      const int lo = w * per, hi = std::min(count, (w + 1) * per);
      if (lo >= hi) break;
      pool.emplace_back([&, lo, hi] {
        try {
          for (int i = lo; i < hi; ++i) make_record(i);
        } catch (...) {
          std::lock_guard<std::mutex> g(err_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      });
    }
    for (std::thread& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  std::ofstream mf(out_dir + "/manifest.jsonl",
                   append ? std::ios::app : std::ios::trunc);
  if (!mf) throw std::runtime_error("cannot write " + out_dir + "/manifest.jsonl");
  for (const std::string& line : lines) mf << line << "\n";
  if (!mf) throw std::runtime_error("failed writing manifest in " + out_dir);

  Dataset ds;
  ds.dir = out_dir;
  ds.rig = rig;
  ds.records = std::move(records);
  return ds;
}

inline Dataset load_dataset(const std::string& dir) {
  Dataset ds;
  ds.dir = dir;
  ds.rig = load_rig_json(dir + "/rig.json");

  std::ifstream mf(dir + "/manifest.jsonl");
  if (!mf) throw std::runtime_error("missing manifest.jsonl in " + dir);
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(mf, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error("manifest line " + std::to_string(line_no) +
                               " is not valid JSON: " + e.what());
    }
    DatasetRecord rec;
    try {
      rec.id = j.at("id").get<std::int64_t>();
      rec.split = j.at("split").get<std::string>();
      rec.left = j.at("left").get<std::string>();
      rec.right = j.at("right").get<std::string>();
      rec.left_mask = j.at("left_mask").get<std::string>();
      rec.right_mask = j.at("right_mask").get<std::string>();
      rec.scene_seed = j.at("scene_seed").get<std::uint64_t>();
      const auto& j3 = j.at("joints_3d");
      const auto& jp = j.at("joints_px");
      for (int k = 0; k < kNumJoints; ++k) {
        rec.joints_3d[k] = {j3.at(k).at(0).get<double>(), j3.at(k).at(1).get<double>(),
                            j3.at(k).at(2).get<double>()};
        rec.joints_px[k] = {jp.at(k).at(0).get<double>(), jp.at(k).at(1).get<double>(),
                            jp.at(k).at(2).get<double>(), jp.at(k).at(3).get<double>()};
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("manifest record " + std::to_string(line_no) +
                               " malformed: " + e.what());
    }
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

inline std::vector<std::size_t> split_indices(const Dataset& ds, const std::string& split) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < ds.records.size(); ++i)
    if (ds.records[i].split == split) out.push_back(i);
  return out;
}

// Full-scan validation: files, label finiteness, rectification, and the
// triangulation consistency of stored labels.
inline void validate_dataset(const Dataset& ds, double tol_mm = 1e-6) {
  namespace fs = std::filesystem;
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const DatasetRecord& r = ds.records[i];
    const std::string tag = "record id " + std::to_string(r.id);
    for (const std::string* p : {&r.left, &r.right, &r.left_mask, &r.right_mask})
      if (!fs::exists(ds.dir + "/" + *p))
        throw std::runtime_error(tag + ": missing image file " + *p);
    for (int k = 0; k < kNumJoints; ++k) {
      const Point3D& p3 = r.joints_3d[k];
      const StereoPixelPair& pp = r.joints_px[k];
      for (double v : {p3.x, p3.y, p3.z, pp.ul, pp.vl, pp.ur, pp.vr})
        if (!std::isfinite(v)) throw std::runtime_error(tag + ": non-finite label");
      if (pp.vl != pp.vr)
        throw std::runtime_error(tag + ": label rows differ between views");
      if (!(pp.ul > pp.ur))
        throw std::runtime_error(tag + ": non-positive disparity label");
      const Point3D re =
          bdm_forward(ds.rig, pixels_to_triplet(pp), DisparityGuard::strict);
      const double err = std::sqrt((re.x - p3.x) * (re.x - p3.x) +
                                   (re.y - p3.y) * (re.y - p3.y) +
                                   (re.z - p3.z) * (re.z - p3.z));
      if (err > tol_mm)
        throw std::runtime_error(tag + ": triangulated label diverges by " +
                                 std::to_string(err) + " mm");
    }
  }
}

}  // namespace tsbnet
