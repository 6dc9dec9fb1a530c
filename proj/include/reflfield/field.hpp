#pragma once

// The scene representation: a spatial network producing density, bottleneck,
// diffuse color, specular tint, roughness and a predicted normal, and a
// directional network producing specular color from an encoding of the
// reflected view direction. Every ablation of the structured model is a
// FieldConfig toggle.

#include "reflfield/network.hpp"
#include "reflfield/sphmath.hpp"

#include <algorithm>
#include <cstdint>
#include <optional>
#include <random>
#include <string>

namespace reflfield::field {

using ad::Matrix;
using ad::Tape;
using ad::Var;

enum class DirectionEncoding { integrated, spherical, positional };

inline const char* to_string(DirectionEncoding e) {
  switch (e) {
    case DirectionEncoding::integrated: return "integrated";
    case DirectionEncoding::spherical: return "spherical";
    case DirectionEncoding::positional: return "positional";
  }
  return "?";
}

inline DirectionEncoding direction_encoding_from_string(const std::string& s) {
  if (s == "integrated" || s == "ide") return DirectionEncoding::integrated;
  if (s == "spherical" || s == "sh") return DirectionEncoding::spherical;
  if (s == "positional" || s == "pe") return DirectionEncoding::positional;
  fail("unknown direction encoding '", s, "' (expected integrated, spherical or positional)");
}

struct FieldConfig {
  int spatial_depth = 4;
  int spatial_width = 64;
  int directional_depth = 4;
  int directional_width = 64;
  int pe_levels = 6;            // spatial positional encoding
  int direction_pe_levels = 4;  // only for DirectionEncoding::positional
  sph::SHIndexSet degrees{};
  int bottleneck_width = 16;

  bool use_reflection = true;
  DirectionEncoding encoding = DirectionEncoding::integrated;
  bool concat_viewdir = false;
  bool input_ndotwo = true;  // off = "fixed lobe"
  bool use_diffuse = true;
  bool use_tint = true;
  bool use_roughness = true;
  bool use_predicted_normals = true;
  double bottleneck_noise = 0.1;  // std of train-time noise on the bottleneck

  void validate() const {
    if (spatial_depth < 1 || spatial_width < 1 || directional_depth < 1 || directional_width < 1) {
      fail("FieldConfig: network widths and depths must be >= 1");
    }
    if (pe_levels < 0 || direction_pe_levels < 0) fail("FieldConfig: encoding levels must be >= 0");
    if (bottleneck_width < 0) fail("FieldConfig: bottleneck width must be >= 0");
    if (!(bottleneck_noise >= 0.0)) fail("FieldConfig: bottleneck noise std must be >= 0");
  }

  // Spatial head layout: [tau, b..., c_d(3), s(3), rho, n'(3)].
  int spatial_output_width() const { return 1 + bottleneck_width + 3 + 3 + 1 + 3; }
  int head_bottleneck() const { return 1; }
  int head_diffuse() const { return 1 + bottleneck_width; }
  int head_tint() const { return head_diffuse() + 3; }
  int head_roughness() const { return head_tint() + 3; }
  int head_normal() const { return head_roughness() + 1; }

  int spatial_input_width() const { return static_cast<int>(ad::positional_encoding_width(3, pe_levels)); }

  int direction_encoding_width() const {
    return encoding == DirectionEncoding::positional
               ? static_cast<int>(ad::positional_encoding_width(3, direction_pe_levels))
               : degrees.size();
  }

  int directional_input_width() const {
    return direction_encoding_width() + (input_ndotwo ? 1 : 0) + bottleneck_width +
           (concat_viewdir ? degrees.size() : 0);
  }
};

inline constexpr double kDensityBias = -1.0;
inline constexpr double kRoughnessBias = -1.0;
/// kappa = 1/rho is capped here so its gradient cannot overflow.
inline constexpr double kKappaCap = 1e6;

template <typename Real>
struct FieldParams {
  ad::DenseNetwork<Real> spatial;
  ad::DenseNetwork<Real> directional;

  template <typename To>
  FieldParams<To> cast() const {
    return {spatial.template cast<To>(), directional.template cast<To>()};
  }

  FieldParams zeros_like() const { return {spatial.zeros_like(), directional.zeros_like()}; }

  /// Every parameter tensor in a fixed order (spatial first).
  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    for (auto* net : {&spatial, &directional})
      for (auto& l : net->layers) {
        fn(l.weight);
        fn(l.bias);
      }
  }
  template <typename Fn>
  void for_each_tensor(Fn&& fn) const {
    for (const auto* net : {&spatial, &directional})
      for (const auto& l : net->layers) {
        fn(l.weight);
        fn(l.bias);
      }
  }

  void check_against(const FieldConfig& cfg) const {
    spatial.validate();
    directional.validate();
    if (spatial.input_width() != cfg.spatial_input_width() || spatial.output_width() != cfg.spatial_output_width()) {
      fail("FieldParams: spatial network is ", spatial.input_width(), "->", spatial.output_width(),
           ", configuration expects ", cfg.spatial_input_width(), "->", cfg.spatial_output_width());
    }
    if (directional.input_width() != cfg.directional_input_width() || directional.output_width() != 3) {
      fail("FieldParams: directional network is ", directional.input_width(), "->", directional.output_width(),
           ", configuration expects ", cfg.directional_input_width(), "->3");
    }
  }
};

template <typename Real>
FieldParams<Real> init_field(const FieldConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  FieldParams<Real> p;
  p.spatial = ad::make_mlp<Real>(cfg.spatial_input_width(), cfg.spatial_width, cfg.spatial_depth,
                                 cfg.spatial_output_width(), rng);
  p.directional =
      ad::make_mlp<Real>(cfg.directional_input_width(), cfg.directional_width, cfg.directional_depth, 3, rng);
  auto& bias = p.spatial.layers.back().bias;
  bias(0, 0) = static_cast<Real>(kDensityBias);
  bias(0, cfg.head_roughness()) = static_cast<Real>(kRoughnessBias);
  return p;
}

/// Shade-time material edits. Geometry is never touched.
struct EditOverrides {
  double roughness_scale = 1.0;         // rho <- scale * rho (kappa scaled inversely)
  std::optional<Rgb> diffuse_override;  // replaces c_d
  double tint_scale = 1.0;              // s <- scale * s

  bool neutral() const { return roughness_scale == 1.0 && !diffuse_override && tint_scale == 1.0; }
  void validate() const {
    if (!(roughness_scale > 0.0)) fail("edit: roughness scale must be > 0");
    if (!(tint_scale >= 0.0)) fail("edit: tint scale must be >= 0");
    if (diffuse_override && ((*diffuse_override < 0.0).any() || (*diffuse_override > 1.0).any())) {
      fail("edit: diffuse override must lie in [0, 1]");
    }
  }
};

// ------------------------------------------------------------ tone mapping

/// Linear to sRGB transfer.
template <typename Real>
Real srgb_encode(Real x) {
  return x <= Real(0.0031308) ? Real(12.92) * x : Real(1.055) * std::pow(x, Real(1) / Real(2.4)) - Real(0.055);
}

template <typename Real>
Real srgb_encode_derivative(Real x) {
  return x <= Real(0.0031308) ? Real(12.92) : Real(1.055) / Real(2.4) * std::pow(x, Real(1) / Real(2.4) - Real(1));
}

inline double srgb_decode(double y) {
  return y <= 0.04045 ? y / 12.92 : std::pow((y + 0.055) / 1.055, 2.4);
}

/// gamma(x): sRGB transfer then clip to [0, 1]; zero gradient outside.
template <typename Real>
Real tonemap(Real x) {
  return std::clamp(srgb_encode(x), Real(0), Real(1));
}

template <typename Real>
Var<Real> tonemap(const Var<Real>& x) {
  const int ix = x.id();
  Matrix<Real> v = x.value().unaryExpr([](Real a) { return tonemap(a); });
  return x.tape().record(std::move(v), {x}, [ix](Tape<Real>& t, int self) {
    const auto& xv = t.value(ix);
    Matrix<Real> d = xv.unaryExpr([](Real a) {
      const Real y = srgb_encode(a);
      return (y > Real(0) && y < Real(1)) ? srgb_encode_derivative(a) : Real(0);
    });
    t.accumulate(ix, t.grad(self).cwiseProduct(d));
  });
}

/// gamma(c_d + s * c_s) for single colors.
inline Rgb compose_color(const Rgb& diffuse, const Rgb& tint, const Rgb& specular) {
  const Rgb lin = diffuse + tint * specular;
  return lin.unaryExpr([](double a) { return tonemap(a); });
}

// ---------------------------------------------------- encoding tape ops

/// Harmonic encoding of unit directions [N x 3]; with kappa [N x 1], each
/// degree is attenuated by exp(-l(l+1)/(2 kappa)) (integrated encoding).
template <typename Real>
Var<Real> harmonic_encoding(const Var<Real>& dirs, const Var<Real>* kappa, const sph::SHIndexSet& idx) {
  if (dirs.cols() != 3) fail("harmonic_encoding: directions must be [N x 3]");
  if (kappa && (kappa->cols() != 1 || kappa->rows() != dirs.rows())) {
    fail("harmonic_encoding: kappa [", kappa->rows(), "x", kappa->cols(), "] does not match directions [", dirs.rows(),
         "x3]");
  }
  const auto N = dirs.rows();
  const auto C = static_cast<Eigen::Index>(idx.size());
  const auto& dv = dirs.value();
  Matrix<Real> raw(N, C), jac(N, C * 3), out(N, C);
  std::vector<Real> ll1(static_cast<std::size_t>(C));
  const auto& deg = idx.degrees();
  for (std::size_t d = 0; d < deg.size(); ++d)
    for (int c = 0; c < 2 * deg[d] + 1; ++c) ll1[static_cast<std::size_t>(idx.offset_of(d) + c)] = Real(deg[d] * (deg[d] + 1));
  Matrix<Real> att = Matrix<Real>::Ones(N, C);
  for (Eigen::Index i = 0; i < N; ++i) {
    sph::detail::sh_components<Real>(dv(i, 0), dv(i, 1), dv(i, 2), idx, std::span<Real>(raw.row(i).data(), C),
                                     std::span<Real>(jac.row(i).data(), C * 3));
    if (kappa) {
      const Real k = kappa->value()(i, 0);
      for (Eigen::Index c = 0; c < C; ++c) att(i, c) = std::exp(-ll1[static_cast<std::size_t>(c)] / (Real(2) * k));
    }
  }
  out = raw.cwiseProduct(att);
  const int id = dirs.id();
  const int ik = kappa ? kappa->id() : -1;
  auto& tape = dirs.tape();
  auto rule = [id, ik, raw = std::move(raw), jac = std::move(jac), att, ll1](Tape<Real>& t, int self) {
    const auto& g = t.grad(self);
    const auto N = g.rows(), C = g.cols();
    const Matrix<Real> ga = g.cwiseProduct(att);
    if (t.requires_grad(id)) {
      Matrix<Real> gd = Matrix<Real>::Zero(N, 3);
      for (Eigen::Index i = 0; i < N; ++i)
        for (Eigen::Index c = 0; c < C; ++c)
          for (int j = 0; j < 3; ++j) gd(i, j) += ga(i, c) * jac(i, 3 * c + j);
      t.accumulate(id, gd);
    }
    if (ik >= 0 && t.requires_grad(ik)) {
      const auto& kv = t.value(ik);
      Matrix<Real> gk(N, 1);
      for (Eigen::Index i = 0; i < N; ++i) {
        const Real k = kv(i, 0);
        Real s = 0;
        for (Eigen::Index c = 0; c < C; ++c) s += ga(i, c) * raw(i, c) * ll1[static_cast<std::size_t>(c)];
        gk(i, 0) = s / (Real(2) * k * k);
      }
      t.accumulate(ik, gk);
    }
  };
  if (kappa) return tape.record(std::move(out), {dirs, *kappa}, std::move(rule));
  return tape.record(std::move(out), {dirs}, std::move(rule));
}

// ----------------------------------------------------------------- shading

template <typename Real>
struct BoundField {
  ad::BoundNetwork<Real> spatial;
  ad::BoundNetwork<Real> directional;
};

template <typename Real>
BoundField<Real> bind(Tape<Real>& tape, const FieldParams<Real>& p, bool trainable) {
  return {ad::bind(tape, p.spatial, trainable), ad::bind(tape, p.directional, trainable)};
}

template <typename Real>
FieldParams<Real> collect_gradients(const BoundField<Real>& b) {
  return {ad::collect_gradients(b.spatial), ad::collect_gradients(b.directional)};
}

enum class Mode { train, eval };

struct ShadeOptions {
  Mode mode = Mode::eval;
  std::mt19937_64* rng = nullptr;  // bottleneck noise in train mode
  bool density_normals = true;     // needed for R_p, reflection ablation, evaluation
  EditOverrides edits{};
};

/// Per-point outputs of a shaded batch, all [N x k] tape values.
template <typename Real>
struct ShadedPoints {
  Var<Real> raw;              // spatial head pre-activations
  Var<Real> tau;              // [N x 1]
  Var<Real> bottleneck;       // [N x B] (noise-free)
  Var<Real> diffuse;          // [N x 3]
  Var<Real> tint;             // [N x 3]
  Var<Real> roughness;        // [N x 1]
  Var<Real> kappa;            // [N x 1]
  Var<Real> predicted_raw;    // [N x 3]
  Var<Real> predicted_normal; // [N x 3]
  Var<Real> density_gradient; // [N x 3], invalid unless requested
  Var<Real> density_normal;   // [N x 3], invalid unless requested
  Var<Real> specular;         // [N x 3]
  Var<Real> color;            // [N x 3]
};

/// Full per-point pipeline. points and view_dirs (unit ray directions d)
/// are [N x 3]; the outgoing direction is wo = -d.
template <typename Real>
ShadedPoints<Real> shade_points(const BoundField<Real>& f, const FieldConfig& cfg, const Matrix<Real>& points,
                                const Matrix<Real>& view_dirs, const ShadeOptions& opt) {
  if (points.cols() != 3 || view_dirs.cols() != 3 || points.rows() != view_dirs.rows()) {
    fail("shade_points: points [", points.rows(), "x", points.cols(), "] and directions [", view_dirs.rows(), "x",
         view_dirs.cols(), "] must both be [N x 3]");
  }
  auto& tape = f.spatial.weights.front().tape();
  const auto N = points.rows();
  const bool need_density_normals = opt.density_normals || !cfg.use_predicted_normals;
  ShadedPoints<Real> s;

  if (need_density_normals) {
    auto sg = ad::spatial_gradient(f.spatial, points, cfg.pe_levels, 0);
    s.raw = sg.trace.output;
    // tau = softplus(raw): grad tau = sigmoid(raw) * grad raw.
    s.density_gradient = ad::scale_rows(sg.gradient, ad::sigmoid(ad::slice_cols(s.raw, 0, 1)));
    s.density_normal = -ad::normalize_rows(s.density_gradient);
  } else {
    s.raw = ad::forward(f.spatial, tape.constant(ad::positional_encoding_values(points, cfg.pe_levels)));
  }
  s.tau = ad::softplus(ad::slice_cols(s.raw, 0, 1));
  s.bottleneck = ad::slice_cols(s.raw, cfg.head_bottleneck(), cfg.bottleneck_width);
  s.diffuse = ad::sigmoid(ad::slice_cols(s.raw, cfg.head_diffuse(), 3));
  s.tint = ad::sigmoid(ad::slice_cols(s.raw, cfg.head_tint(), 3));
  s.roughness = ad::softplus(ad::slice_cols(s.raw, cfg.head_roughness(), 1));
  s.predicted_raw = ad::slice_cols(s.raw, cfg.head_normal(), 3);
  s.predicted_normal = ad::normalize_rows(s.predicted_raw);

  const Matrix<Real> wo_m = -view_dirs;
  const Var<Real> wo = tape.constant(wo_m);
  const Var<Real> normal = cfg.use_predicted_normals ? s.predicted_normal : s.density_normal;
  const Var<Real> ndotwo = ad::dot_rows(normal, wo);

  Var<Real> dir = wo;
  if (cfg.use_reflection) {
    dir = ad::sub(ad::scale(ad::scale_rows(normal, ndotwo), Real(2)), wo);
  }

  Var<Real> rough = s.roughness;
  if (opt.edits.roughness_scale != 1.0) rough = ad::scale(rough, static_cast<Real>(opt.edits.roughness_scale));
  s.kappa = ad::reciprocal_capped(rough, static_cast<Real>(kKappaCap));

  Var<Real> encoded;
  switch (cfg.encoding) {
    case DirectionEncoding::integrated:
      encoded = cfg.use_roughness ? harmonic_encoding(dir, &s.kappa, cfg.degrees)
                                  : harmonic_encoding<Real>(dir, nullptr, cfg.degrees);
      break;
    case DirectionEncoding::spherical: encoded = harmonic_encoding<Real>(dir, nullptr, cfg.degrees); break;
    case DirectionEncoding::positional: encoded = ad::positional_encoding(dir, cfg.direction_pe_levels); break;
  }

  std::vector<Var<Real>> inputs{encoded};
  if (cfg.input_ndotwo) inputs.push_back(ndotwo);
  if (cfg.bottleneck_width > 0) {
    Var<Real> b = s.bottleneck;
    if (opt.mode == Mode::train && cfg.bottleneck_noise > 0.0) {
      if (!opt.rng) fail("shade_points: train mode with bottleneck noise needs a random source");
      std::normal_distribution<double> noise(0.0, cfg.bottleneck_noise);
      Matrix<Real> eps(N, cfg.bottleneck_width);
      for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = static_cast<Real>(noise(*opt.rng));
      b = ad::add_const(b, eps);
    }
    inputs.push_back(b);
  }
  if (cfg.concat_viewdir) inputs.push_back(harmonic_encoding<Real>(wo, nullptr, cfg.degrees));
  s.specular = ad::sigmoid(ad::forward(f.directional, ad::concat_cols<Real>(inputs)));

  Var<Real> diffuse = s.diffuse;
  if (opt.edits.diffuse_override) {
    Matrix<Real> c(N, 3);
    for (Eigen::Index i = 0; i < N; ++i)
      for (int j = 0; j < 3; ++j) c(i, j) = static_cast<Real>((*opt.edits.diffuse_override)(j));
    diffuse = tape.constant(std::move(c));
  }
  Var<Real> tint = cfg.use_tint ? s.tint : tape.constant(Matrix<Real>::Ones(N, 3));
  if (opt.edits.tint_scale != 1.0) tint = ad::scale(tint, static_cast<Real>(opt.edits.tint_scale));
  Var<Real> linear = ad::mul(tint, s.specular);
  if (cfg.use_diffuse) linear = ad::add(diffuse, linear);
  s.color = tonemap(linear);
  return s;
}

// ------------------------------------------------- single-point conveniences

struct SpatialOutput {
  double tau = 0;
  Eigen::VectorXd bottleneck;
  Rgb diffuse = Rgb::Zero();
  Rgb tint = Rgb::Zero();
  double roughness = 0;
  Vec3 predicted_raw = Vec3::Zero();
};

template <typename Real>
Matrix<Real> row_of(const Vec3& v) {
  Matrix<Real> m(1, 3);
  m << static_cast<Real>(v.x()), static_cast<Real>(v.y()), static_cast<Real>(v.z());
  return m;
}

template <typename Real>
Vec3 vec_of(const Matrix<Real>& m, Eigen::Index row = 0) {
  return Vec3(m(row, 0), m(row, 1), m(row, 2));
}

template <typename Real>
SpatialOutput spatial_forward(const FieldParams<Real>& p, const FieldConfig& cfg, const Vec3& x) {
  p.check_against(cfg);
  Tape<Real> tape;
  const auto b = ad::bind(tape, p.spatial, false);
  const auto raw = ad::forward(b, tape.constant(ad::positional_encoding_values(row_of<Real>(x), cfg.pe_levels))).value();
  const Matrix<Real> act = ad::softplus_values<Real>(raw);
  const Matrix<Real> sig = ad::sigmoid_values<Real>(raw);
  SpatialOutput o;
  o.tau = act(0, 0);
  o.bottleneck = raw.row(0).segment(cfg.head_bottleneck(), cfg.bottleneck_width).transpose().template cast<double>();
  for (int j = 0; j < 3; ++j) {
    o.diffuse(j) = sig(0, cfg.head_diffuse() + j);
    o.tint(j) = sig(0, cfg.head_tint() + j);
    o.predicted_raw(j) = raw(0, cfg.head_normal() + j);
  }
  o.roughness = act(0, cfg.head_roughness());
  return o;
}

/// n' = raw / sqrt(|raw|^2 + 1e-20); the zero vector maps to zero.
inline Vec3 predicted_normal(const SpatialOutput& o) {
  return o.predicted_raw / std::sqrt(o.predicted_raw.squaredNorm() + 1e-20);
}

/// -grad tau / |grad tau| at x (guarded).
template <typename Real>
Vec3 density_normal(const FieldParams<Real>& p, const FieldConfig& cfg, const Vec3& x) {
  Tape<Real> tape;
  const auto b = ad::bind(tape, p.spatial, false);
  auto sg = ad::spatial_gradient(b, row_of<Real>(x), cfg.pe_levels, 0);
  const auto grad = ad::scale_rows(sg.gradient, ad::sigmoid(ad::slice_cols(sg.trace.output, 0, 1)));
  return vec_of((-ad::normalize_rows(grad)).value());
}

/// Specular color for one encoded direction. kappa is ignored unless the
/// configuration uses the integrated encoding with roughness.
template <typename Real>
Rgb directional_forward(const FieldParams<Real>& p, const FieldConfig& cfg, const Eigen::VectorXd& bottleneck,
                        const UnitVector3& wr, double kappa, double ndotwo, const UnitVector3& wo) {
  p.check_against(cfg);
  if (bottleneck.size() != cfg.bottleneck_width) {
    fail("directional_forward: bottleneck has ", bottleneck.size(), " entries, configuration expects ",
         cfg.bottleneck_width);
  }
  Tape<Real> tape;
  const auto b = ad::bind(tape, p.directional, false);
  const auto dir = tape.constant(row_of<Real>(wr.vec()));
  Var<Real> encoded;
  if (cfg.encoding == DirectionEncoding::positional) {
    encoded = ad::positional_encoding(dir, cfg.direction_pe_levels);
  } else if (cfg.encoding == DirectionEncoding::integrated && cfg.use_roughness) {
    if (!(kappa > 0.0)) fail("directional_forward: kappa must be positive");
    const auto k = tape.constant(Matrix<Real>::Constant(1, 1, static_cast<Real>(std::min(kappa, kKappaCap))));
    encoded = harmonic_encoding(dir, &k, cfg.degrees);
  } else {
    encoded = harmonic_encoding<Real>(dir, nullptr, cfg.degrees);
  }
  std::vector<Var<Real>> inputs{encoded};
  if (cfg.input_ndotwo) inputs.push_back(tape.constant(Matrix<Real>::Constant(1, 1, static_cast<Real>(ndotwo))));
  if (cfg.bottleneck_width > 0) inputs.push_back(tape.constant(bottleneck.transpose().template cast<Real>()));
  if (cfg.concat_viewdir) inputs.push_back(harmonic_encoding<Real>(tape.constant(row_of<Real>(wo.vec())), nullptr, cfg.degrees));
  const auto out = ad::sigmoid(ad::forward(b, ad::concat_cols<Real>(inputs))).value();
  return Rgb(out(0, 0), out(0, 1), out(0, 2));
}

struct PointShade {
  double tau = 0;
  Rgb color = Rgb::Zero();
  Vec3 density_normal = Vec3::Zero();
  Vec3 predicted_normal = Vec3::Zero();
};

template <typename Real>
PointShade shade_point(const FieldParams<Real>& p, const FieldConfig& cfg, const Vec3& x, const UnitVector3& d,
                       Mode mode, std::mt19937_64* rng, const EditOverrides& edits = {}) {
  p.check_against(cfg);
  Tape<Real> tape;
  const auto b = bind(tape, p, false);
  ShadeOptions opt;
  opt.mode = mode;
  opt.rng = rng;
  opt.edits = edits;
  const auto s = shade_points(b, cfg, row_of<Real>(x), row_of<Real>(d.vec()), opt);
  PointShade out;
  out.tau = s.tau.value()(0, 0);
  out.color = Rgb(s.color.value()(0, 0), s.color.value()(0, 1), s.color.value()(0, 2));
  out.density_normal = vec_of(s.density_normal.value());
  out.predicted_normal = vec_of(s.predicted_normal.value());
  return out;
}

}  // namespace reflfield::field
