#pragma once

// Spherical-harmonic numerics for the directional encoding:
//  - complex orthonormal harmonics Y_l^m (Condon-Shortley phase), evaluated in
//    Cartesian form so that they are polynomial in (x, y, z) and cheap to
//    differentiate,
//  - the vMF attenuation A_l(kappa) (quadrature oracle, closed form, and the
//    exponential approximation used for training),
//  - the integrated directional encoding and its non-integrated variant,
//  - vMF sampling and Monte-Carlo expectations used as verification oracles.

#include "reflfield/core.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <random>
#include <span>
#include <vector>

namespace reflfield::sph {

/// Mirror the outgoing direction wo about the normal n: 2(wo.n)n - wo.
inline UnitVector3 reflect(const UnitVector3& wo, const UnitVector3& n) {
  const Vec3 r = 2.0 * wo.dot(n) * n.vec() - wo.vec();
  return UnitVector3::normalized(r);
}

/// Legendre polynomial P_l(u) by the Bonnet recurrence.
template <typename Real>
Real eval_legendre(int ell, Real u) {
  if (ell < 0) fail("eval_legendre: negative degree ", ell);
  Real p0 = Real(1);
  if (ell == 0) return p0;
  Real p1 = u;
  for (int l = 1; l < ell; ++l) {
    Real p2 = (Real(2 * l + 1) * u * p1 - Real(l) * p0) / Real(l + 1);
    p0 = p1;
    p1 = p2;
  }
  return p1;
}

/// sqrt((2l+1)/(4 pi) * (l-m)!/(l+m)!)
inline double sh_normalization(int ell, int m) {
  double ratio = 1.0;
  for (int k = ell - m + 1; k <= ell + m; ++k) ratio /= static_cast<double>(k);
  return std::sqrt((2.0 * ell + 1.0) / (4.0 * kPi) * ratio);
}

/// Ordered set of harmonic degrees used by the encodings. Each degree l
/// contributes orders m = 0..l, i.e. 2l + 1 real components
/// (real part for m = 0, real then imaginary part for m > 0).
class SHIndexSet {
 public:
  SHIndexSet() : SHIndexSet(std::vector<int>{1, 2, 4}) {}

  explicit SHIndexSet(std::vector<int> degrees) : degrees_(std::move(degrees)) {
    if (degrees_.empty()) fail("SHIndexSet: empty degree list");
    for (std::size_t i = 0; i < degrees_.size(); ++i) {
      if (degrees_[i] < 1) fail("SHIndexSet: degree ", degrees_[i], " must be >= 1");
      if (i > 0 && degrees_[i] <= degrees_[i - 1]) fail("SHIndexSet: degrees must be strictly increasing");
    }
    int offset = 0;
    for (int l : degrees_) {
      offsets_.push_back(offset);
      offset += 2 * l + 1;
    }
    size_ = offset;
    norms_.assign(static_cast<std::size_t>(max_degree() + 1) * (max_degree() + 1), 0.0);
    for (int l = 0; l <= max_degree(); ++l)
      for (int m = 0; m <= l; ++m) norms_[norm_index(l, m)] = sh_normalization(l, m);
  }

  /// Frequency-doubling degrees {1, 2, 4, ..., 2^(levels-1)}.
  static SHIndexSet powers_of_two(int levels) {
    if (levels < 1) fail("SHIndexSet: need at least one level");
    std::vector<int> d;
    for (int i = 0; i < levels; ++i) d.push_back(1 << i);
    return SHIndexSet(std::move(d));
  }

  const std::vector<int>& degrees() const { return degrees_; }
  int max_degree() const { return degrees_.back(); }
  int size() const { return size_; }
  int offset_of(std::size_t degree_index) const { return offsets_[degree_index]; }
  double norm(int l, int m) const { return norms_[norm_index(l, m)]; }

  /// Position of the real part of (l, m) inside a degree block.
  static int real_slot(int m) { return m == 0 ? 0 : 2 * m - 1; }
  static int imag_slot(int m) { return 2 * m; }

  bool operator==(const SHIndexSet& o) const { return degrees_ == o.degrees_; }

 private:
  std::size_t norm_index(int l, int m) const {
    return static_cast<std::size_t>(l) * (max_degree() + 1) + static_cast<std::size_t>(m);
  }
  std::vector<int> degrees_;
  std::vector<int> offsets_;
  std::vector<double> norms_;
  int size_ = 0;
};

/// Flat encoding vector laid out as described by SHIndexSet.
using IDEVector = std::vector<double>;

namespace detail {

// Evaluates all harmonics of idx at (x, y, z). When jac is non-empty it
// receives d(component)/d(x, y, z), row-major [size x 3]. The Cartesian form
// Y = K * Pbar_l^m(z) * (x + iy)^m is a polynomial, so the derivatives are
// those of its extension off the sphere.
template <typename Real>
void sh_components(Real x, Real y, Real z, const SHIndexSet& idx, std::span<Real> out,
                   std::span<Real> jac) {
  using C = std::complex<Real>;
  const bool want_jac = !jac.empty();
  const int lmax = idx.max_degree();
  const auto& degrees = idx.degrees();
  const C xy(x, y);
  C cm(1, 0);       // (x + iy)^m
  C cm_prev(0, 0);  // (x + iy)^(m-1)
  Real pmm = Real(1);
  for (int m = 0; m <= lmax; ++m) {
    if (m > 0) {
      cm_prev = cm;
      cm *= xy;
      pmm *= -Real(2 * m - 1);
    }
    Real p_prev = Real(0), p_cur = pmm;
    Real dp_prev = Real(0), dp_cur = Real(0);
    std::size_t di = 0;
    while (di < degrees.size() && degrees[di] < m) ++di;
    for (int l = m; l <= lmax; ++l) {
      if (l > m) {
        Real p_next, dp_next;
        if (l == m + 1) {
          p_next = z * Real(2 * m + 1) * pmm;
          dp_next = Real(2 * m + 1) * pmm;
        } else {
          p_next = (Real(2 * l - 1) * z * p_cur - Real(l + m - 1) * p_prev) / Real(l - m);
          dp_next = (Real(2 * l - 1) * (p_cur + z * dp_cur) - Real(l + m - 1) * dp_prev) / Real(l - m);
        }
        p_prev = p_cur;
        dp_prev = dp_cur;
        p_cur = p_next;
        dp_cur = dp_next;
      }
      if (di < degrees.size() && degrees[di] == l) {
        const Real k = static_cast<Real>(idx.norm(l, m));
        const C y_lm = k * p_cur * cm;
        const int base = idx.offset_of(di);
        const int re = base + SHIndexSet::real_slot(m);
        out[re] = y_lm.real();
        if (m > 0) out[base + SHIndexSet::imag_slot(m)] = y_lm.imag();
        if (want_jac) {
          const C dx = (m > 0) ? k * p_cur * Real(m) * cm_prev : C(0, 0);
          const C dy = dx * C(0, 1);
          const C dz = k * dp_cur * cm;
          jac[3 * re + 0] = dx.real();
          jac[3 * re + 1] = dy.real();
          jac[3 * re + 2] = dz.real();
          if (m > 0) {
            const int im = base + SHIndexSet::imag_slot(m);
            jac[3 * im + 0] = dx.imag();
            jac[3 * im + 1] = dy.imag();
            jac[3 * im + 2] = dz.imag();
          }
        }
        ++di;
      }
    }
  }
}

}  // namespace detail

/// Complex harmonic Y_l^m(dir), returned as (real, imaginary).
inline std::complex<double> eval_sh(int ell, int m, const UnitVector3& dir) {
  if (ell < 0 || m < 0 || m > ell) fail("eval_sh: invalid index pair (l=", ell, ", m=", m, ")");
  if (ell == 0) return {sh_normalization(0, 0), 0.0};
  const SHIndexSet single({ell});
  std::vector<double> out(static_cast<std::size_t>(single.size()));
  detail::sh_components<double>(dir.x(), dir.y(), dir.z(), single, out, {});
  const double re = out[SHIndexSet::real_slot(m)];
  const double im = m > 0 ? out[SHIndexSet::imag_slot(m)] : 0.0;
  return {re, im};
}

/// n-point Gauss-Legendre rule on [-1, 1] (Newton iteration on P_n).
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

inline QuadratureRule gauss_legendre(int n) {
  if (n < 1) fail("gauss_legendre: need at least one node");
  QuadratureRule rule;
  rule.nodes.resize(static_cast<std::size_t>(n));
  rule.weights.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(kPi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = x;
      for (int l = 1; l < n; ++l) {
        const double p2 = ((2.0 * l + 1.0) * x * p1 - l * p0) / (l + 1.0);
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    double p0 = 1.0, p1 = x;
    for (int l = 1; l < n; ++l) {
      const double p2 = ((2.0 * l + 1.0) * x * p1 - l * p0) / (l + 1.0);
      p0 = p1;
      p1 = p2;
    }
    dp = n * (x * p1 - p0) / (x * x - 1.0);
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    rule.nodes[static_cast<std::size_t>(i)] = -x;
    rule.nodes[static_cast<std::size_t>(n - 1 - i)] = x;
    rule.weights[static_cast<std::size_t>(i)] = w;
    rule.weights[static_cast<std::size_t>(n - 1 - i)] = w;
  }
  return rule;
}

inline const QuadratureRule& gauss_legendre_128() {
  static const QuadratureRule rule = gauss_legendre(128);
  return rule;
}

/// A_l(kappa) = kappa / (2 sinh kappa) * int_{-1}^{1} P_l(u) e^{kappa u} du.
///
/// Evaluated with 128-point Gauss-Legendre panels after substituting
/// s = kappa (1 - u), which moves the exponential peak to s = 0 and keeps
/// the rule accurate for large kappa. Numerator and normalizer share the
/// nodes, so A_0 is exactly 1.
inline double attenuation_exact(int ell, double kappa) {
  if (ell < 0) fail("attenuation_exact: negative degree ", ell);
  if (!(kappa > 0.0)) fail("attenuation_exact: kappa must be positive, got ", kappa);
  const auto& rule = gauss_legendre_128();
  const double s_max = 2.0 * kappa;
  constexpr double kPanelEdge = 40.0;
  std::array<std::pair<double, double>, 2> panels{{{0.0, std::min(s_max, kPanelEdge)}, {kPanelEdge, s_max}}};
  const int panel_count = s_max > kPanelEdge ? 2 : 1;
  double num = 0.0, den = 0.0;
  for (int p = 0; p < panel_count; ++p) {
    const auto [a, b] = panels[static_cast<std::size_t>(p)];
    const double half = 0.5 * (b - a), mid = 0.5 * (b + a);
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
      const double s = mid + half * rule.nodes[i];
      const double w = half * rule.weights[i] * std::exp(-s);
      const double u = std::clamp(1.0 - s / kappa, -1.0, 1.0);
      num += w * eval_legendre(ell, u);
      den += w;
    }
  }
  return num / den;
}

/// Closed form A_l = kappa^-l sum_i (2l-i)!/(i!(l-i)!) (-2)^(i-l) b_i(kappa)
/// with b_i = kappa^i (i even) or kappa^i coth(kappa) (i odd). Subject to
/// catastrophic cancellation for small kappa; evaluate in extended precision.
template <typename Real>
Real attenuation_closed_form(int ell, const Real& kappa) {
  using std::cosh;
  using std::sinh;
  if (ell < 0) fail("attenuation_closed_form: negative degree ", ell);
  if (!(kappa > Real(0))) fail("attenuation_closed_form: kappa must be positive");
  auto factorial = [](int n) {
    Real f(1);
    for (int k = 2; k <= n; ++k) f *= Real(k);
    return f;
  };
  const Real coth = cosh(kappa) / sinh(kappa);
  Real sum(0);
  for (int i = 0; i <= ell; ++i) {
    Real term = factorial(2 * ell - i) / (factorial(i) * factorial(ell - i));
    for (int k = i; k < ell; ++k) term /= Real(-2);
    Real b(1);
    for (int k = 0; k < i; ++k) b *= kappa;
    if (i % 2 == 1) b *= coth;
    sum += term * b;
  }
  for (int k = 0; k < ell; ++k) sum /= kappa;
  return sum;
}

/// exp(-l(l+1) / (2 kappa)), the training-time attenuation.
template <typename Real>
Real attenuation_approx(int ell, Real kappa) {
  if (ell < 0) fail("attenuation_approx: negative degree ", ell);
  if (!(kappa > Real(0))) fail("attenuation_approx: kappa must be positive");
  return std::exp(-Real(ell * (ell + 1)) / (Real(2) * kappa));
}

namespace detail {

template <typename AttenuationFn>
IDEVector attenuated_encoding(const UnitVector3& wr, const SHIndexSet& idx, AttenuationFn&& attenuation) {
  IDEVector out(static_cast<std::size_t>(idx.size()));
  sh_components<double>(wr.x(), wr.y(), wr.z(), idx, out, {});
  const auto& deg = idx.degrees();
  for (std::size_t d = 0; d < deg.size(); ++d) {
    const double a = attenuation(deg[d]);
    for (int c = 0; c < 2 * deg[d] + 1; ++c) out[static_cast<std::size_t>(idx.offset_of(d) + c)] *= a;
  }
  return out;
}

}  // namespace detail

/// Integrated directional encoding with the exponential attenuation.
inline IDEVector ide(const UnitVector3& wr, double kappa, const SHIndexSet& idx) {
  if (!(kappa > 0.0)) fail("ide: kappa must be positive, got ", kappa);
  return detail::attenuated_encoding(wr, idx, [kappa](int l) { return attenuation_approx(l, kappa); });
}

/// Integrated directional encoding with the quadrature attenuation. This is
/// the exact vMF expectation of each harmonic; used by verification code.
inline IDEVector ide_exact(const UnitVector3& wr, double kappa, const SHIndexSet& idx) {
  if (!(kappa > 0.0)) fail("ide_exact: kappa must be positive, got ", kappa);
  return detail::attenuated_encoding(wr, idx, [kappa](int l) { return attenuation_exact(l, kappa); });
}

/// Harmonics of a single direction with no attenuation.
inline IDEVector directional_encoding(const UnitVector3& wr, const SHIndexSet& idx) {
  return detail::attenuated_encoding(wr, idx, [](int) { return 1.0; });
}

/// i.i.d. draws from vMF(mean, kappa); kappa = 0 is the uniform sphere.
/// The cosine to the mean is drawn by inverting its CDF,
/// w = 1 + log(u + (1 - u) e^{-2 kappa}) / kappa, written with log1p/expm1.
template <typename Rng>
std::vector<UnitVector3> sample_vmf(Rng& rng, const UnitVector3& mean, double kappa, std::size_t n) {
  if (!(kappa >= 0.0)) fail("sample_vmf: kappa must be non-negative, got ", kappa);
  std::vector<UnitVector3> out;
  out.reserve(n);
  Vec3 t, b;
  orthonormal_basis(mean.vec(), t, b);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const double em1 = std::expm1(-2.0 * kappa);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = uniform(rng);
    const double phi = 2.0 * kPi * uniform(rng);
    double w;
    if (kappa == 0.0) {
      w = 2.0 * u - 1.0;
    } else {
      w = 1.0 + std::log1p((1.0 - u) * em1) / kappa;
    }
    w = std::clamp(w, -1.0, 1.0);
    const double r = std::sqrt(std::max(0.0, 1.0 - w * w));
    const Vec3 v = r * std::cos(phi) * t + r * std::sin(phi) * b + w * mean.vec();
    out.push_back(UnitVector3::normalized(v));
  }
  return out;
}

/// Sample mean of a harmonic with its standard error, per component.
struct McEstimate {
  std::complex<double> mean;
  double stderr_re = 0.0;
  double stderr_im = 0.0;
};

/// Monte-Carlo estimate of E_{w ~ vMF(mean, kappa)}[Y_l^m(w)].
template <typename Rng>
McEstimate mc_sh_expectation(Rng& rng, const UnitVector3& mean, double kappa, int ell, int m, std::size_t n) {
  if (!(kappa > 0.0)) fail("mc_sh_expectation: kappa must be positive, got ", kappa);
  if (n < 2) fail("mc_sh_expectation: need at least two samples");
  double sr = 0, si = 0, qr = 0, qi = 0;
  for (const auto& w : sample_vmf(rng, mean, kappa, n)) {
    const auto y = eval_sh(ell, m, w);
    sr += y.real();
    si += y.imag();
    qr += y.real() * y.real();
    qi += y.imag() * y.imag();
  }
  const double nn = static_cast<double>(n);
  McEstimate e;
  e.mean = {sr / nn, si / nn};
  e.stderr_re = std::sqrt(std::max(0.0, (qr - sr * sr / nn) / (nn - 1.0)) / nn);
  e.stderr_im = std::sqrt(std::max(0.0, (qi - si * si / nn) / (nn - 1.0)) / nn);
  return e;
}

/// Per-component Monte-Carlo estimate of the whole encoding vector.
struct McEncodingEstimate {
  std::vector<double> mean;
  std::vector<double> stderr;
};

template <typename Rng>
McEncodingEstimate mc_encoding_expectation(Rng& rng, const UnitVector3& mean, double kappa,
                                           const SHIndexSet& idx, std::size_t n) {
  if (!(kappa > 0.0)) fail("mc_encoding_expectation: kappa must be positive, got ", kappa);
  if (n < 2) fail("mc_encoding_expectation: need at least two samples");
  const auto size = static_cast<std::size_t>(idx.size());
  std::vector<double> sum(size, 0.0), sq(size, 0.0), y(size);
  for (const auto& w : sample_vmf(rng, mean, kappa, n)) {
    detail::sh_components<double>(w.x(), w.y(), w.z(), idx, y, {});
    for (std::size_t c = 0; c < size; ++c) {
      sum[c] += y[c];
      sq[c] += y[c] * y[c];
    }
  }
  const double nn = static_cast<double>(n);
  McEncodingEstimate e;
  e.mean.resize(size);
  e.stderr.resize(size);
  for (std::size_t c = 0; c < size; ++c) {
    e.mean[c] = sum[c] / nn;
    e.stderr[c] = std::sqrt(std::max(0.0, (sq[c] - sum[c] * sum[c] / nn) / (nn - 1.0)) / nn);
  }
  return e;
}

}  // namespace reflfield::sph
