#pragma once

// Shared vocabulary types: 3-vectors, unit directions and the error type
// thrown by every module.

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>

namespace reflfield {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Rgb = Eigen::Array3d;

inline constexpr double kPi = std::numbers::pi;

/// Thrown for precondition violations and malformed inputs.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename... Args>
[[noreturn]] void fail(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  throw Error(os.str());
}

/// A direction on the unit sphere. Construction either checks the norm or
/// normalizes explicitly, so holders can rely on ||v|| = 1 within 1e-6.
class UnitVector3 {
 public:
  static constexpr double kTolerance = 1e-6;

  UnitVector3() : v_(0.0, 0.0, 1.0) {}

  /// Wraps a vector that is already unit length; throws otherwise.
  static UnitVector3 from_unit(const Vec3& v) {
    const double n = v.norm();
    if (!(std::abs(n - 1.0) <= kTolerance)) {
      fail("UnitVector3: norm ", n, " is not 1 within ", kTolerance);
    }
    return UnitVector3(v);
  }

  static UnitVector3 normalized(const Vec3& v) {
    const double n = v.norm();
    if (!(n > 0.0) || !std::isfinite(n)) fail("UnitVector3: cannot normalize vector of norm ", n);
    return UnitVector3(v / n);
  }

  static UnitVector3 from_xyz(double x, double y, double z) { return normalized(Vec3(x, y, z)); }

  const Vec3& vec() const { return v_; }
  double x() const { return v_.x(); }
  double y() const { return v_.y(); }
  double z() const { return v_.z(); }
  double dot(const UnitVector3& o) const { return v_.dot(o.v_); }
  UnitVector3 operator-() const { return UnitVector3(-v_); }

 private:
  explicit UnitVector3(const Vec3& v) : v_(v) {}
  Vec3 v_;
};

/// Right-handed orthonormal basis (t, b) completing n, continuous except on
/// the n.z = -1 seam (Duff et al. 2017).
inline void orthonormal_basis(const Vec3& n, Vec3& t, Vec3& b) {
  const double sign = std::copysign(1.0, n.z());
  const double a = -1.0 / (sign + n.z());
  const double c = n.x() * n.y() * a;
  t = Vec3(1.0 + sign * n.x() * n.x() * a, sign * c, -sign * n.x());
  b = Vec3(c, sign + n.y() * n.y() * a, -n.y());
}

}  // namespace reflfield
