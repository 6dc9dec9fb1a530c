#pragma once

// Command implementations behind the reflfield executable.

#include "reflfield/config.hpp"
#include "reflfield/gradcheck.hpp"
#include "reflfield/metrics.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif
#if defined(__SSE__)
#include <xmmintrin.h>
#endif

namespace reflfield::app {

/// Keeps freed tape buffers in the heap instead of returning them to the OS
/// after every step (glibc only; a no-op elsewhere).
inline void retain_heap() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);
#endif
}

/// Flush-to-zero and denormals-are-zero on the calling thread; threads it
/// starts afterwards inherit the mode.
inline void flush_denormals() {
#if defined(__SSE__)
  _mm_setcsr(_mm_getcsr() | 0x8040);
#endif
}

inline render::RenderOptions render_options(const cfg::RenderSettings& r, const field::EditOverrides& edits = {}) {
  render::RenderOptions opt;
  opt.samples = r.samples;
  opt.importance_samples = r.importance_samples;
  opt.background = r.background;
  opt.density_normals = true;
  opt.edits = edits;
  return opt;
}

/// Camera i of the dataset at the configured render resolution.
inline render::Camera view_camera(const scene::SceneDataset& ds, std::size_t i, const cfg::RenderSettings& r) {
  auto cam = ds.camera(i);
  if (r.width > 0) cam.width = r.width;
  if (r.height > 0) cam.height = r.height;
  return cam;
}

inline std::vector<render::RenderedImage> render_views(const field::FieldParams<float>& params,
                                                       const field::FieldConfig& fcfg, const scene::SceneDataset& ds,
                                                       const cfg::RenderSettings& r,
                                                       const field::EditOverrides& edits = {}) {
  std::vector<render::RenderedImage> out;
  for (std::size_t i = 0; i < ds.frames.size(); ++i) {
    out.push_back(render::render_image(params, fcfg, view_camera(ds, i, r), render_options(r, edits), r.workers, 256,
                                       ds.near, ds.far));
  }
  return out;
}

inline std::string frame_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "r_%03zu", i);
  return buf;
}

/// <dir>/r_NNN.png, r_NNN_normal.png, r_NNN_opacity.png.
inline void write_views(const std::vector<render::RenderedImage>& views, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < views.size(); ++i) {
    const auto& v = views[i];
    const auto base = (dir / frame_name(i)).string();
    io::write_png(base + ".png", io::rgb_image(v.width, v.height, v.color));
    io::write_png(base + "_normal.png", io::normal_image(v.width, v.height, v.normal));
    io::write_png(base + "_opacity.png", io::gray_image(v.width, v.height, v.opacity));
  }
}

struct EvalResult {
  std::vector<double> psnr;
  std::vector<double> mae;  // per image; empty when the dataset has no normals
  double psnr_mean = 0.0;
  double mae_mean = 0.0;  // pooled over all masked pixels
  bool has_mae = false;
};

/// MAE mask: the reference mask when present, else predicted opacity > 0.5.
inline std::vector<std::uint8_t> mae_mask(const scene::Frame& f, const render::RenderedImage& v) {
  if (!f.mask.empty()) return f.mask;
  std::vector<std::uint8_t> m(v.opacity.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = v.opacity[i] > 0.5 ? 1 : 0;
  return m;
}

inline EvalResult evaluate(const std::vector<render::RenderedImage>& views, const scene::SceneDataset& ds) {
  if (views.size() != ds.frames.size()) fail("eval: ", views.size(), " renders for ", ds.frames.size(), " frames");
  EvalResult r;
  metrics::AngularError pooled;
  bool normals = true;
  for (const auto& f : ds.frames) normals = normals && !f.normals.empty();
  for (std::size_t i = 0; i < views.size(); ++i) {
    const auto& f = ds.frames[i];
    if (views[i].width != ds.width || views[i].height != ds.height) {
      fail("eval: render size ", views[i].width, "x", views[i].height, " differs from test images ", ds.width, "x",
           ds.height);
    }
    r.psnr.push_back(metrics::psnr(views[i].color, f.image));
    if (normals) {
      metrics::AngularError one;
      const auto mask = mae_mask(f, views[i]);
      metrics::accumulate_mae(one, views[i].normal, f.normals, mask);
      metrics::accumulate_mae(pooled, views[i].normal, f.normals, mask);
      r.mae.push_back(one.count ? one.mean() : 0.0);
    }
  }
  double s = 0.0;
  for (double p : r.psnr) s += p;
  r.psnr_mean = s / static_cast<double>(r.psnr.size());
  if (normals) {
    r.mae_mean = pooled.mean();
    r.has_mae = true;
  }
  return r;
}

inline void write_results(std::ostream& os, const EvalResult& r) {
  os << "# psnr_mean: mean of per-image PSNR (dB, 99 = identical)\n";
  if (r.has_mae) os << "# mae_mean: pooled over all masked pixels of all test images (degrees)\n";
  os << std::setprecision(9);
  os << "psnr_mean=" << r.psnr_mean << "\n";
  if (r.has_mae) os << "mae_mean=" << r.mae_mean << "\n";
  for (std::size_t i = 0; i < r.psnr.size(); ++i) {
    os << "psnr_" << frame_name(i) << "=" << r.psnr[i] << "\n";
    if (r.has_mae) os << "mae_" << frame_name(i) << "=" << r.mae[i] << "\n";
  }
}

// ---------------------------------------------------------------- commands

inline void run_oracle_gen(const cfg::RunConfig& c, std::ostream& log) {
  scene::generate_dataset(scene::glossy_sphere(), c.scene, c.scene_dir);
  log << "wrote " << c.scene.n_train << " train and " << c.scene.n_test << " test views to " << c.scene_dir.string()
      << "\n";
}

inline train::TrainResult run_train(const cfg::RunConfig& c, std::ostream& log) {
  const auto ds = scene::load_dataset(c.scene_dir, "train", scene::LoadOptions{false, c.render.background});
  auto t = c.train;
  t.background = c.render.background;
  auto res = train::train(scene::ray_pool(ds), c.field, t, train::TrainOutputs{c.out_dir, {}});
  const auto& last = res.log.back();
  log << "trained " << t.iterations << " steps; final " << train::format_log_row(last) << "\n";
  return res;
}

inline field::FieldParams<float> load_params(const cfg::RunConfig& c) {
  const auto path = c.checkpoint_path();
  if (!std::filesystem::exists(path)) fail("missing checkpoint ", path.string());
  return train::load_checkpoint<float>(path, c.field);
}

/// Renders the test cameras to <out>/render (or <out>/edit when `edited`).
inline std::vector<render::RenderedImage> run_render(const cfg::RunConfig& c, bool edited, std::ostream& log) {
  const auto params = load_params(c);
  const auto ds = scene::load_dataset(c.scene_dir, "test", scene::LoadOptions{false, c.render.background});
  auto views = render_views(params, c.field, ds, c.render, edited ? c.edits : field::EditOverrides{});
  const auto dir = c.out_dir / (edited ? "edit" : "render");
  write_views(views, dir);
  log << "rendered " << views.size() << " views to " << dir.string() << "\n";
  return views;
}

inline EvalResult run_eval(const cfg::RunConfig& c, std::ostream& log) {
  const auto params = load_params(c);
  const auto ds = scene::load_dataset(c.scene_dir, "test", scene::LoadOptions{false, c.render.background});
  auto r = c.render;
  r.width = r.height = 0;
  const auto res = evaluate(render_views(params, c.field, ds, r), ds);
  std::filesystem::create_directories(c.out_dir);
  const auto path = c.out_dir / "results.txt";
  std::ofstream os(path);
  if (!os) fail("cannot write ", path.string());
  write_results(os, res);
  log << "psnr_mean=" << res.psnr_mean;
  if (res.has_mae) log << " mae_mean=" << res.mae_mean;
  log << " (" << path.string() << ")\n";
  return res;
}

// ------------------------------------------------------------------ verify

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

namespace detail {

inline SuiteResult verify_vmf_expectation() {
  const sph::SHIndexSet idx;
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> logk(std::log(0.5), std::log(500.0));
  std::normal_distribution<double> g;
  int outside = 0, total = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const auto mu = UnitVector3::from_xyz(g(rng), g(rng), g(rng));
    const double kappa = std::exp(logk(rng));
    const auto exact = sph::ide_exact(mu, kappa, idx);
    const auto mc = sph::mc_encoding_expectation(rng, mu, kappa, idx, 20000);
    for (std::size_t c = 0; c < mc.mean.size(); ++c) {
      ++total;
      if (std::abs(mc.mean[c] - exact[c]) > 4.0 * mc.stderr[c] + 1e-12) ++outside;
    }
  }
  std::ostringstream os;
  os << outside << "/" << total << " components beyond 4 SE";
  return {"vmf-sh expectation (MC)", outside <= 1, os.str()};
}

inline SuiteResult verify_recurrence() {
  double worst = 0.0;
  for (double kappa : {0.1, 1.0, 10.0, 100.0}) {
    for (int l = 2; l <= 8; ++l) {
      const double lhs = sph::attenuation_exact(l, kappa);
      const double rhs = sph::attenuation_exact(l - 2, kappa) - (2.0 * l - 1.0) / kappa * sph::attenuation_exact(l - 1, kappa);
      worst = std::max(worst, std::abs(lhs - rhs));
    }
    worst = std::max(worst, std::abs(sph::attenuation_exact(0, kappa) - 1.0));
    worst = std::max(worst, std::abs(sph::attenuation_exact(1, kappa) - (1.0 / std::tanh(kappa) - 1.0 / kappa)));
  }
  std::ostringstream os;
  os << "max residual " << std::scientific << std::setprecision(2) << worst;
  return {"attenuation recurrence", worst < 1e-8, os.str()};
}

inline field::BoundField<double> bound_from(const field::FieldParams<double>& p,
                                            const std::vector<ad::Var<double>>& v) {
  field::BoundField<double> b;
  b.spatial.network = &p.spatial;
  b.directional.network = &p.directional;
  std::size_t k = 0;
  for (std::size_t i = 0; i < p.spatial.layers.size(); ++i) {
    b.spatial.weights.push_back(v[k++]);
    b.spatial.biases.push_back(v[k++]);
  }
  for (std::size_t i = 0; i < p.directional.layers.size(); ++i) {
    b.directional.weights.push_back(v[k++]);
    b.directional.biases.push_back(v[k++]);
  }
  return b;
}

inline SuiteResult verify_gradients() {
  field::FieldConfig fc;
  fc.spatial_depth = 2;
  fc.spatial_width = 6;
  fc.directional_depth = 1;
  fc.directional_width = 6;
  fc.pe_levels = 1;
  fc.bottleneck_width = 2;
  fc.bottleneck_noise = 0.0;
  auto params = field::init_field<double>(fc, 7);
  auto& head = params.spatial.layers.back().bias;
  head(0, 0) = 1.0;
  // Keep predicted normals away from the zero vector, where normalization has a kink.
  head(0, fc.head_normal()) = 0.2;
  head(0, fc.head_normal() + 1) = -0.3;
  head(0, fc.head_normal() + 2) = 0.9;
  std::vector<render::Ray> rays;
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g;
  for (int i = 0; i < 2; ++i)
    rays.push_back(render::Ray{Vec3(0.3 * g(rng), 0.3 * g(rng), 3.0), UnitVector3::from_xyz(0.1 * g(rng), 0.1 * g(rng), -1.0),
                               2.0, 4.0});
  const ad::Matrix<double> gt = ad::Matrix<double>::Constant(2, 3, 0.3);
  render::RenderOptions opt;
  opt.samples = 4;
  std::vector<ad::Matrix<double>> flat;
  params.for_each_tensor([&flat](const ad::Matrix<double>& m) { flat.push_back(m); });
  double worst = 0.0;
  for (int which = 0; which < 3; ++which) {
    const auto fn = [&, which](gradcheck::T&, const std::vector<gradcheck::V>& v) {
      const auto batch = render::render_rays(bound_from(params, v), fc, rays, opt);
      if (which == 0) return loss::data_loss(batch.color, gt);
      if (which == 1) return loss::predicted_normal_loss(batch.weights, batch.points.density_normal, batch.points.predicted_normal);
      return loss::orientation_loss(batch.weights, batch.points.predicted_normal, batch.dirs);
    };
    worst = std::max(worst, gradcheck::max_relative_error(fn, flat));
  }
  std::ostringstream os;
  os << "max relative error " << std::scientific << std::setprecision(2) << worst;
  return {"autodiff gradient check", worst < 1e-3, os.str()};
}

}  // namespace detail

/// Prints a suite table; true when every suite passes.
inline bool run_verify(std::ostream& os) {
  std::vector<SuiteResult> results;
  for (auto fn : {detail::verify_vmf_expectation, detail::verify_recurrence, detail::verify_gradients}) {
    try {
      results.push_back(fn());
    } catch (const std::exception& e) {
      results.push_back({"(suite error)", false, e.what()});
    }
  }
  bool ok = true;
  os << std::left << std::setw(28) << "suite" << std::setw(8) << "result" << "detail\n";
  for (const auto& r : results) {
    os << std::left << std::setw(28) << r.name << std::setw(8) << (r.passed ? "PASS" : "FAIL") << r.detail << "\n";
    ok = ok && r.passed;
  }
  return ok;
}

}  // namespace reflfield::app
