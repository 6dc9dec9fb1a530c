#pragma once

// Volume rendering of the field: pinhole camera rays, stratified samples,
// alpha-compositing weights, background blending and accumulated normals.

#include "reflfield/field.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <thread>
#include <utility>
#include <vector>

namespace reflfield::render {

using ad::Matrix;
using ad::Tape;
using ad::Var;
using field::Mode;

inline constexpr double kDefaultNear = 2.0;
inline constexpr double kDefaultFar = 6.0;

struct Ray {
  Vec3 origin = Vec3::Zero();
  UnitVector3 direction;
  double near = kDefaultNear;
  double far = kDefaultFar;

  void validate() const {
    if (!(near > 0.0) || !(near < far)) fail("Ray: need 0 < near < far, got near=", near, " far=", far);
  }
};

/// Pinhole camera in the synthetic-dataset convention: camera looks down -z
/// with +x right and +y up; pose maps camera to world.
struct Camera {
  Mat4 pose = Mat4::Identity();
  double camera_angle_x = 0.6911112;
  int width = 32;
  int height = 32;

  double focal() const { return 0.5 * width / std::tan(0.5 * camera_angle_x); }
};

inline void check_pose(const Mat4& pose) {
  const double det = pose.topLeftCorner<3, 3>().determinant();
  if (!std::isfinite(det) || std::abs(det) < 1e-9) fail("camera pose has a degenerate rotation (det=", det, ")");
}

/// One ray per pixel, row-major from the top-left pixel, through pixel centers.
inline std::vector<Ray> camera_rays(int width, int height, double camera_angle_x, const Mat4& pose,
                                    double near = kDefaultNear, double far = kDefaultFar) {
  if (width < 1 || height < 1) fail("camera_rays: image size must be positive, got ", width, "x", height);
  if (!(camera_angle_x > 0.0 && camera_angle_x < kPi)) fail("camera_rays: camera_angle_x must lie in (0, pi)");
  check_pose(pose);
  const double focal = 0.5 * width / std::tan(0.5 * camera_angle_x);
  const Mat3 rot = pose.topLeftCorner<3, 3>();
  const Vec3 origin = pose.topRightCorner<3, 1>();
  std::vector<Ray> rays;
  rays.reserve(static_cast<std::size_t>(width) * height);
  for (int j = 0; j < height; ++j) {
    for (int i = 0; i < width; ++i) {
      const Vec3 d_cam((i + 0.5 - 0.5 * width) / focal, -(j + 0.5 - 0.5 * height) / focal, -1.0);
      rays.push_back(Ray{origin, UnitVector3::normalized(rot * d_cam), near, far});
    }
  }
  return rays;
}

inline std::vector<Ray> camera_rays(const Camera& cam, double near = kDefaultNear, double far = kDefaultFar) {
  return camera_rays(cam.width, cam.height, cam.camera_angle_x, cam.pose, near, far);
}

/// Ascending sample distances and their interval lengths; the last interval
/// runs to the far bound.
struct SampleSet {
  std::vector<double> t;
  std::vector<double> delta;
};

inline SampleSet finish_samples(std::vector<double> t, double far) {
  SampleSet s;
  s.delta.resize(t.size());
  for (std::size_t i = 0; i + 1 < t.size(); ++i) s.delta[i] = t[i + 1] - t[i];
  s.delta.back() = far - t.back();
  s.t = std::move(t);
  return s;
}

/// One sample per equal bin of [near, far]: uniformly jittered with an rng,
/// bin midpoints without.
inline SampleSet stratified_samples(const Ray& ray, int n, std::mt19937_64* rng) {
  if (n < 2) fail("stratified_samples: need at least 2 samples, got ", n);
  ray.validate();
  const double bin = (ray.far - ray.near) / n;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> t(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double jitter = rng ? u(*rng) : 0.5;
    t[static_cast<std::size_t>(i)] = std::min(ray.near + (i + jitter) * bin, std::nextafter(ray.far, ray.near));
  }
  // Keep strictly increasing even if two jitters land on a shared boundary.
  for (std::size_t i = 1; i < t.size(); ++i) t[i] = std::max(t[i], std::nextafter(t[i - 1], ray.far));
  return finish_samples(std::move(t), ray.far);
}

/// w_i = exp(-sum_{j<i} tau_j delta_j) (1 - exp(-tau_i delta_i)).
inline std::vector<double> quadrature_weights(std::span<const double> taus, const SampleSet& samples) {
  if (taus.size() != samples.delta.size()) {
    fail("quadrature_weights: ", taus.size(), " densities for ", samples.delta.size(), " samples");
  }
  std::vector<double> w(taus.size());
  double transmittance = 1.0, total = 0.0;
  for (std::size_t i = 0; i < taus.size(); ++i) {
    if (!(taus[i] >= 0.0)) fail("quadrature_weights: negative density ", taus[i], " at sample ", i);
    const double od = taus[i] * samples.delta[i];
    // Capped so a left-to-right sum never rounds above 1.
    w[i] = std::min(transmittance * -std::expm1(-od), 1.0 - total);
    total += w[i];
    transmittance *= std::exp(-od);
  }
  return w;
}

/// Batched weights on the tape: tau and delta are [R x S].
/// d w_i / d tau_k = delta_k (T_{k+1} [i = k] - w_i [i > k]).
template <typename Real>
Var<Real> quadrature_weights(const Var<Real>& tau, const Matrix<Real>& delta) {
  if (tau.rows() != delta.rows() || tau.cols() != delta.cols()) {
    fail("quadrature_weights: densities [", tau.rows(), "x", tau.cols(), "] vs intervals [", delta.rows(), "x",
         delta.cols(), "]");
  }
  const auto R = tau.rows(), S = tau.cols();
  const auto& tv = tau.value();
  Matrix<Real> w(R, S), trans_after(R, S);
  for (Eigen::Index r = 0; r < R; ++r) {
    Real acc = Real(0);
    for (Eigen::Index s = 0; s < S; ++s) {
      const Real od = tv(r, s) * delta(r, s);
      const Real before = std::exp(-acc);
      acc += od;
      w(r, s) = before * -std::expm1(-od);
      trans_after(r, s) = std::exp(-acc);
    }
  }
  const int it = tau.id();
  return tau.tape().record(std::move(w), {tau}, [it, delta, trans_after](Tape<Real>& t, int self) {
    const auto& g = t.grad(self);
    const auto& wv = t.value(self);
    Matrix<Real> gt(g.rows(), g.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      Real tail = Real(0);  // sum_{i > k} w_i g_i
      for (Eigen::Index s = g.cols(); s-- > 0;) {
        gt(r, s) = delta(r, s) * (trans_after(r, s) * g(r, s) - tail);
        tail += wv(r, s) * g(r, s);
      }
    }
    t.accumulate(it, gt);
  });
}

/// Clamps rounding overshoot of a convex combination back into [0, 1];
/// the gradient passes through unchanged.
template <typename Real>
Var<Real> clamp_rounding(const Var<Real>& a) {
  const int ia = a.id();
  Matrix<Real> v = a.value().cwiseMax(Real(0)).cwiseMin(Real(1));
  return a.tape().record(std::move(v), {a}, [ia](Tape<Real>& t, int self) { t.accumulate(ia, t.grad(self)); });
}

inline Rgb composite(std::span<const double> weights, std::span<const Rgb> colors, const Rgb& background) {
  if (weights.size() != colors.size()) {
    fail("composite: ", weights.size(), " weights for ", colors.size(), " colors");
  }
  Rgb c = Rgb::Zero();
  double total = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    c += weights[i] * colors[i];
    total += weights[i];
  }
  return (c + (1.0 - total) * background).cwiseMax(0.0).cwiseMin(1.0);
}

struct AccumulatedNormal {
  Vec3 sum = Vec3::Zero();         // N = sum_i w_i n_i
  Vec3 normalized = Vec3::Zero();  // N / sqrt(|N|^2 + eps)
};

inline Vec3 guarded_normalize(const Vec3& v) { return v / std::sqrt(v.squaredNorm() + 1e-20); }

inline AccumulatedNormal accumulate_normals(std::span<const double> weights, std::span<const Vec3> normals) {
  if (weights.size() != normals.size()) {
    fail("accumulate_normals: ", weights.size(), " weights for ", normals.size(), " normals");
  }
  AccumulatedNormal a;
  for (std::size_t i = 0; i < weights.size(); ++i) a.sum += weights[i] * normals[i];
  a.normalized = guarded_normalize(a.sum);
  return a;
}

struct RenderOptions {
  int samples = 64;
  int importance_samples = 0;  // optional second pass on the same network
  Mode mode = Mode::eval;
  std::mt19937_64* rng = nullptr;  // train mode: jitter and bottleneck noise
  Rgb background = Rgb::Ones();
  bool density_normals = true;
  field::EditOverrides edits{};
};

/// Tape results for a batch of R rays with S samples each.
template <typename Real>
struct RayBatch {
  Eigen::Index rays = 0, samples = 0;
  Matrix<Real> t;      // [R x S]
  Matrix<Real> dirs;   // [R*S x 3] ray directions per sample
  field::ShadedPoints<Real> points;
  Var<Real> weights;   // [R x S]
  Var<Real> opacity;   // [R x 1]
  Var<Real> color;     // [R x 3]
  Var<Real> density_normal_sum;    // [R x 3], invalid without density normals
  Var<Real> predicted_normal_sum;  // [R x 3]
};

namespace detail {

// Places n extra samples by inverting the piecewise-constant CDF of the
// first-pass weights over the bins [t_i, t_i + delta_i].
inline std::vector<double> importance_resample(const SampleSet& coarse, std::span<const double> w, int n,
                                               std::mt19937_64* rng, double far) {
  std::vector<double> cdf(w.size() + 1, 0.0);
  for (std::size_t i = 0; i < w.size(); ++i) cdf[i + 1] = cdf[i] + w[i] + 1e-5;
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<double> t = coarse.t;
  for (int k = 0; k < n; ++k) {
    const double u = ((rng ? uni(*rng) : 0.5) + k) / n * cdf.back();
    const auto it = std::upper_bound(cdf.begin() + 1, cdf.end(), u);
    const auto bin = static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - cdf.begin() - 1, static_cast<std::ptrdiff_t>(w.size()) - 1));
    const double frac = (u - cdf[bin]) / std::max(cdf[bin + 1] - cdf[bin], 1e-300);
    t.push_back(std::min(coarse.t[bin] + frac * coarse.delta[bin], std::nextafter(far, 0.0)));
  }
  std::sort(t.begin(), t.end());
  for (std::size_t i = 1; i < t.size(); ++i) t[i] = std::max(t[i], std::nextafter(t[i - 1], far));
  return t;
}

}  // namespace detail

template <typename Real>
RayBatch<Real> render_rays(const field::BoundField<Real>& f, const field::FieldConfig& cfg, std::span<const Ray> rays,
                           const RenderOptions& opt) {
  if (rays.empty()) fail("render_rays: empty ray batch");
  if (opt.mode == Mode::train && !opt.rng) fail("render_rays: train mode needs a random source");
  auto& tape = f.spatial.weights.front().tape();
  const auto R = static_cast<Eigen::Index>(rays.size());
  std::mt19937_64* jitter = opt.mode == Mode::train ? opt.rng : nullptr;

  std::vector<SampleSet> sets;
  sets.reserve(rays.size());
  for (const auto& ray : rays) sets.push_back(stratified_samples(ray, opt.samples, jitter));

  if (opt.importance_samples > 0) {
    // First pass: densities only, outside the gradient path.
    Tape<Real> scratch;
    const auto spatial = ad::bind(scratch, *f.spatial.network, false);
    Matrix<Real> pts(R * opt.samples, 3);
    for (Eigen::Index r = 0; r < R; ++r)
      for (int s = 0; s < opt.samples; ++s) {
        const auto& ray = rays[static_cast<std::size_t>(r)];
        const Vec3 x = ray.origin + sets[static_cast<std::size_t>(r)].t[static_cast<std::size_t>(s)] * ray.direction.vec();
        pts.row(r * opt.samples + s) = x.cast<Real>().transpose();
      }
    const auto raw = ad::forward(spatial, scratch.constant(ad::positional_encoding_values(pts, cfg.pe_levels))).value();
    const Matrix<Real> tau = ad::softplus_values<Real>(Matrix<Real>(raw.col(0)));
    for (Eigen::Index r = 0; r < R; ++r) {
      auto& set = sets[static_cast<std::size_t>(r)];
      std::vector<double> taus(static_cast<std::size_t>(opt.samples));
      for (int s = 0; s < opt.samples; ++s) taus[static_cast<std::size_t>(s)] = tau(r * opt.samples + s, 0);
      const auto w = quadrature_weights(taus, set);
      set = finish_samples(detail::importance_resample(set, w, opt.importance_samples, jitter, rays[static_cast<std::size_t>(r)].far),
                           rays[static_cast<std::size_t>(r)].far);
    }
  }

  const auto S = static_cast<Eigen::Index>(sets.front().t.size());
  RayBatch<Real> b;
  b.rays = R;
  b.samples = S;
  b.t.resize(R, S);
  Matrix<Real> delta(R, S), pts(R * S, 3);
  b.dirs.resize(R * S, 3);
  for (Eigen::Index r = 0; r < R; ++r) {
    const auto& ray = rays[static_cast<std::size_t>(r)];
    const auto& set = sets[static_cast<std::size_t>(r)];
    for (Eigen::Index s = 0; s < S; ++s) {
      const double t = set.t[static_cast<std::size_t>(s)];
      b.t(r, s) = static_cast<Real>(t);
      delta(r, s) = static_cast<Real>(set.delta[static_cast<std::size_t>(s)]);
      pts.row(r * S + s) = (ray.origin + t * ray.direction.vec()).cast<Real>().transpose();
      b.dirs.row(r * S + s) = ray.direction.vec().cast<Real>().transpose();
    }
  }

  field::ShadeOptions so;
  so.mode = opt.mode;
  so.rng = opt.rng;
  so.density_normals = opt.density_normals;
  so.edits = opt.edits;
  b.points = field::shade_points(f, cfg, pts, b.dirs, so);

  b.weights = quadrature_weights(ad::reshape(b.points.tau, R, S), delta);
  b.opacity = ad::sum_rows(b.weights);
  Matrix<Real> bg(R, 3);
  for (Eigen::Index r = 0; r < R; ++r)
    for (int j = 0; j < 3; ++j) bg(r, j) = static_cast<Real>(opt.background(j));
  const Var<Real> bg_var = tape.constant(bg);
  b.color = clamp_rounding(
      ad::add_const(ad::sub(ad::weighted_row_sum(b.weights, b.points.color), ad::scale_rows(bg_var, b.opacity)), bg));
  if (b.points.density_normal.valid()) b.density_normal_sum = ad::weighted_row_sum(b.weights, b.points.density_normal);
  b.predicted_normal_sum = ad::weighted_row_sum(b.weights, b.points.predicted_normal);
  return b;
}

/// Plain per-ray results.
struct RenderOutput {
  Rgb color = Rgb::Zero();
  double opacity = 0.0;
  AccumulatedNormal density_normal;
  AccumulatedNormal predicted_normal;
  double depth = 0.0;  // sum w t / max(sum w, eps)
};

template <typename Real>
std::vector<RenderOutput> extract_outputs(const RayBatch<Real>& b) {
  std::vector<RenderOutput> out(static_cast<std::size_t>(b.rays));
  const auto& w = b.weights.value();
  for (Eigen::Index r = 0; r < b.rays; ++r) {
    auto& o = out[static_cast<std::size_t>(r)];
    for (int j = 0; j < 3; ++j) o.color(j) = b.color.value()(r, j);
    o.opacity = b.opacity.value()(r, 0);
    if (b.density_normal_sum.valid()) {
      o.density_normal.sum = field::vec_of(b.density_normal_sum.value(), r);
      o.density_normal.normalized = guarded_normalize(o.density_normal.sum);
    }
    o.predicted_normal.sum = field::vec_of(b.predicted_normal_sum.value(), r);
    o.predicted_normal.normalized = guarded_normalize(o.predicted_normal.sum);
    double wt = 0.0;
    for (Eigen::Index s = 0; s < b.samples; ++s) wt += static_cast<double>(w(r, s)) * b.t(r, s);
    o.depth = wt / std::max(o.opacity, 1e-10);
  }
  return out;
}

template <typename Real>
RenderOutput render_ray(const field::FieldParams<Real>& p, const field::FieldConfig& cfg, const Ray& ray,
                        const RenderOptions& opt) {
  ray.validate();
  p.check_against(cfg);
  Tape<Real> tape;
  const auto f = field::bind(tape, p, false);
  return extract_outputs(render_rays(f, cfg, std::span<const Ray>(&ray, 1), opt)).front();
}

struct RenderedImage {
  int width = 0, height = 0;
  std::vector<Rgb> color;
  std::vector<double> opacity;
  std::vector<Vec3> normal;            // normalized accumulated density normals
  std::vector<Vec3> predicted_normal;  // normalized accumulated predicted normals
  std::vector<double> depth;
};

/// Eval-mode image. Pixels are processed in fixed chunks; workers take
/// chunks round-robin, so the result does not depend on the worker count.
template <typename Real>
RenderedImage render_image(const field::FieldParams<Real>& p, const field::FieldConfig& cfg, const Camera& cam,
                           RenderOptions opt, int workers = 1, int chunk = 256, double near = kDefaultNear,
                           double far = kDefaultFar) {
  p.check_against(cfg);
  if (workers < 1) fail("render_image: need at least one worker");
  opt.mode = Mode::eval;
  opt.rng = nullptr;
  const auto rays = camera_rays(cam, near, far);
  RenderedImage img;
  img.width = cam.width;
  img.height = cam.height;
  const auto n = rays.size();
  img.color.resize(n);
  img.opacity.resize(n);
  img.normal.resize(n);
  img.predicted_normal.resize(n);
  img.depth.resize(n);
  const std::size_t chunks = (n + static_cast<std::size_t>(chunk) - 1) / static_cast<std::size_t>(chunk);
  auto work = [&](std::size_t first_chunk, std::size_t stride) {
    for (std::size_t c = first_chunk; c < chunks; c += stride) {
      const std::size_t begin = c * static_cast<std::size_t>(chunk);
      const std::size_t end = std::min(n, begin + static_cast<std::size_t>(chunk));
      Tape<Real> tape;
      const auto f = field::bind(tape, p, false);
      const auto outs = extract_outputs(render_rays(f, cfg, std::span<const Ray>(rays.data() + begin, end - begin), opt));
      for (std::size_t i = begin; i < end; ++i) {
        const auto& o = outs[i - begin];
        img.color[i] = o.color;
        img.opacity[i] = o.opacity;
        img.normal[i] = o.density_normal.normalized;
        img.predicted_normal[i] = o.predicted_normal.normalized;
        img.depth[i] = o.depth;
      }
    }
  };
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work, static_cast<std::size_t>(w), static_cast<std::size_t>(workers));
  }
  return img;
}

}  // namespace reflfield::render
