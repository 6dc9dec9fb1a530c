#pragma once

// Image PSNR and normal mean angular error.

#include "reflfield/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace reflfield::metrics {

inline constexpr double kPsnrCap = 99.0;

inline double mse(const std::vector<Rgb>& a, const std::vector<Rgb>& b) {
  if (a.size() != b.size() || a.empty()) fail("psnr: image sizes differ (", a.size(), " vs ", b.size(), " pixels)");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += (a[i] - b[i]).square().sum();
  return sum / (3.0 * static_cast<double>(a.size()));
}

/// -10 log10(MSE) over all channels, capped at 99 dB (identical images).
inline double psnr(const std::vector<Rgb>& a, const std::vector<Rgb>& b) {
  const double e = mse(a, b);
  if (e == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(e));
}

/// Running sum of angular errors (degrees) over masked pixels.
struct AngularError {
  double sum_degrees = 0.0;
  std::size_t count = 0;

  double mean() const {
    if (count == 0) fail("normal_mae: empty mask");
    return sum_degrees / static_cast<double>(count);
  }
};

inline double angle_degrees(const Vec3& pred, const Vec3& gt) {
  if (!(pred.norm() > 0.0) || !(gt.norm() > 0.0)) return 90.0;
  return std::atan2(pred.cross(gt).norm(), pred.dot(gt)) * 180.0 / kPi;
}

/// Adds one image's masked pixels to `acc`.
inline void accumulate_mae(AngularError& acc, const std::vector<Vec3>& pred, const std::vector<Vec3>& gt,
                           const std::vector<std::uint8_t>& mask) {
  if (pred.size() != gt.size() || pred.size() != mask.size()) {
    fail("normal_mae: sizes differ (", pred.size(), " predicted, ", gt.size(), " reference, ", mask.size(), " mask)");
  }
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) continue;
    acc.sum_degrees += angle_degrees(pred[i], gt[i]);
    ++acc.count;
  }
}

inline double normal_mae(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt,
                         const std::vector<std::uint8_t>& mask) {
  AngularError acc;
  accumulate_mae(acc, pred, gt, mask);
  return acc.mean();
}

}  // namespace reflfield::metrics
