#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace tsbnet {

// Rectified pinhole stereo pair. f and b are in millimetres, lambda is the
// sensor pitch in mm per pixel, so f / lambda is the focal length in pixels.
struct StereoRig {
  double f = 4.0;
  double b = 40.0;
  double lambda = 0.01;
  int w = 640;
  int h = 480;

  double focal_px() const { return f / lambda; }

  void validate() const {
    if (!(f > 0.0 && b > 0.0 && lambda > 0.0 && w > 0 && h > 0))
      throw std::invalid_argument("stereo rig parameters must be positive");
  }
};

inline StereoRig default_rig() { return StereoRig{}; }

struct StereoPixelPair {
  double ul = 0.0, vl = 0.0, ur = 0.0, vr = 0.0;
};

// Per-joint network output unit: mean column, disparity, row.
struct PixelTriplet {
  double s = 0.0, q = 0.0, t = 0.0;
};

// Millimetres in the frame centred between the two cameras, z along the
// optical axes, y following image rows (downward).
struct Point3D {
  double x = 0.0, y = 0.0, z = 0.0;
};

struct TripletGrad {
  double s = 0.0, q = 0.0, t = 0.0;
};

struct PointGrad {
  double x = 0.0, y = 0.0, z = 0.0;
};

// Disparity guard. The depth map has a pole at zero disparity; clamp mode
// saturates q into [q_min, q_max] (gradient through q is zeroed there),
// strict mode refuses out-of-range disparity outright.
inline constexpr double kDisparityMin = 4.0;
inline constexpr double kDisparityMax = 400.0;

enum class DisparityGuard { clamp, strict };

inline StereoPixelPair project_point(const StereoRig& rig, const Point3D& p) {
  if (!(p.z > 0.0)) throw std::domain_error("project_point: z must be positive");
  const double fpx = rig.focal_px();
  StereoPixelPair out;
  out.ul = rig.w / 2.0 + fpx * (p.x + rig.b / 2.0) / p.z;
  out.ur = rig.w / 2.0 + fpx * (p.x - rig.b / 2.0) / p.z;
  out.vl = rig.h / 2.0 + fpx * p.y / p.z;
  out.vr = out.vl;
  return out;
}

inline PixelTriplet pixels_to_triplet(const StereoPixelPair& pair) {
  return PixelTriplet{(pair.ul + pair.ur) / 2.0, pair.ul - pair.ur,
                      (pair.vl + pair.vr) / 2.0};
}

inline double clamp_disparity(double q, bool* clamped = nullptr) {
  if (q < kDisparityMin) {
    if (clamped) *clamped = true;
    return kDisparityMin;
  }
  if (q > kDisparityMax) {
    if (clamped) *clamped = true;
    return kDisparityMax;
  }
  if (clamped) *clamped = false;
  return q;
}

// Triangulation: z = f*b / (lambda*q), x = (s - w/2) * lambda*z / f,
// y = (t - h/2) * lambda*z / f. `clamped_out` reports a saturated disparity
// in clamp mode.
inline Point3D bdm_forward(const StereoRig& rig, const PixelTriplet& trip,
                           DisparityGuard guard = DisparityGuard::clamp,
                           bool* clamped_out = nullptr) {
  bool clamped = false;
  const double q = clamp_disparity(trip.q, &clamped);
  if (clamped && guard == DisparityGuard::strict)
    throw std::domain_error("bdm_forward: disparity " + std::to_string(trip.q) +
                            " outside [" + std::to_string(kDisparityMin) + ", " +
                            std::to_string(kDisparityMax) + "]");
  if (clamped_out) *clamped_out = clamped;

  Point3D p;
  p.z = rig.f * rig.b / (rig.lambda * q);
  const double scale = rig.lambda * p.z / rig.f;  // == b / q
  p.x = (trip.s - rig.w / 2.0) * scale;
  p.y = (trip.t - rig.h / 2.0) * scale;
  return p;
}

// Closed-form adjoint of bdm_forward:
//   dL/ds = dL/dx * lambda*z/f
//   dL/dt = dL/dy * lambda*z/f
//   dL/dq = -(lambda*z/(f*b)) * (x*dL/dx + y*dL/dy + z*dL/dz)
// A clamped disparity propagates zero gradient through q.
inline TripletGrad bdm_backward(const StereoRig& rig, const PixelTriplet& trip,
                                const PointGrad& grad_out,
                                DisparityGuard guard = DisparityGuard::clamp) {
  bool clamped = false;
  const Point3D p = bdm_forward(rig, trip, guard, &clamped);
  const double scale = rig.lambda * p.z / rig.f;

  TripletGrad g;
  g.s = grad_out.x * scale;
  g.t = grad_out.y * scale;
  g.q = clamped ? 0.0
                : -(scale / rig.b) *
                      (p.x * grad_out.x + p.y * grad_out.y + p.z * grad_out.z);
  return g;
}

}  // namespace tsbnet
