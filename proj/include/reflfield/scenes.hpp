#pragma once

// Analytic glossy-sphere scene under distant light (ground-truth images and
// normals), and the NeRF-synthetic dataset layout on disk.

#include "reflfield/field.hpp"
#include "reflfield/image_io.hpp"
#include "reflfield/renderer.hpp"
#include "reflfield/trainer.hpp"

#include "json.hpp"

#include <array>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

namespace reflfield::scene {

struct Material {
  Rgb diffuse = Rgb::Constant(0.2);
  Rgb tint = Rgb::Constant(0.8);
  double phong_exponent = 100.0;
};

struct LightLobe {
  UnitVector3 direction;
  double kappa = 10.0;
  Rgb radiance = Rgb::Ones();
};

/// Sphere whose x >= 0 hemisphere uses materials[0] and x < 0 materials[1],
/// lit by ambient light plus smooth vMF-shaped lobes.
struct OracleScene {
  Vec3 center = Vec3::Zero();
  double radius = 1.0;
  std::array<Material, 2> materials{};
  Rgb ambient = Rgb::Zero();
  std::vector<LightLobe> lobes;

  void validate() const {
    if (!(radius > 0.0)) fail("OracleScene: radius must be > 0");
    if ((ambient < 0.0).any()) fail("OracleScene: ambient radiance must be >= 0");
    for (const auto& l : lobes) {
      if ((l.radiance < 0.0).any()) fail("OracleScene: lobe radiance must be >= 0");
      if (!(l.kappa >= 0.0)) fail("OracleScene: lobe kappa must be >= 0");
    }
    for (const auto& m : materials) {
      if (!(m.phong_exponent > 0.0)) fail("OracleScene: Phong exponent must be > 0");
      if ((m.diffuse < 0.0).any() || (m.diffuse > 1.0).any() || (m.tint < 0.0).any() || (m.tint > 1.0).any()) {
        fail("OracleScene: diffuse albedo and tint must lie in [0, 1]");
      }
    }
  }

  const Material& material_at(const Vec3& normal) const { return normal.x() >= 0.0 ? materials[0] : materials[1]; }
};

/// Two-roughness glossy sphere: a near-mirror half and a blurry half.
inline OracleScene glossy_sphere() {
  OracleScene s;
  s.materials[0] = Material{Rgb(0.04, 0.04, 0.05), Rgb(0.9, 0.9, 0.9), 1000.0};
  s.materials[1] = Material{Rgb(0.22, 0.07, 0.04), Rgb(0.7, 0.7, 0.7), 40.0};
  s.ambient = Rgb(0.03, 0.03, 0.035);
  s.lobes = {
      {UnitVector3::from_xyz(0.0, 0.0, 1.0), 3.0, Rgb(0.55, 0.65, 0.9)},
      {UnitVector3::from_xyz(0.6, 0.4, 0.7), 150.0, Rgb(3.0, 2.7, 2.2)},
      {UnitVector3::from_xyz(-0.8, 0.5, 0.1), 25.0, Rgb(1.2, 0.25, 0.15)},
      {UnitVector3::from_xyz(0.2, -0.9, -0.3), 12.0, Rgb(0.15, 0.5, 1.0)},
  };
  return s;
}

struct Hit {
  double t = 0.0;
  Vec3 normal = Vec3::UnitZ();
};

/// Nearest positive root of |o + t d - c|^2 = r^2.
inline std::optional<Hit> ray_sphere_intersect(const render::Ray& ray, const Vec3& center, double radius) {
  const Vec3 oc = ray.origin - center;
  const double b = oc.dot(ray.direction.vec());
  const double c = oc.squaredNorm() - radius * radius;
  const double disc = b * b - c;
  if (disc < 0.0) return std::nullopt;
  const double sq = std::sqrt(disc);
  double t = -b - sq;
  if (t <= 0.0) t = -b + sq;
  if (t <= 0.0) return std::nullopt;
  return Hit{t, (ray.origin + t * ray.direction.vec() - center) / radius};
}

/// ambient + sum_k radiance_k exp(kappa_k (dir . lobe_k - 1)).
inline Rgb env_radiance(const UnitVector3& dir, const OracleScene& s) {
  Rgb L = s.ambient;
  for (const auto& l : s.lobes) L += l.radiance * std::exp(l.kappa * (dir.dot(l.direction) - 1.0));
  return L;
}

inline constexpr int kAzimuthSteps = 128;
inline constexpr int kPolarSteps = 64;

namespace detail {

// Midpoint rule over (u, phi) in the frame of `axis`, where the polar
// cosine is t = u^(1/power) so that the weight t^(power-1) dt becomes du/power.
inline Rgb lobe_integral(const Vec3& axis, double power, const OracleScene& s) {
  Vec3 tx, ty;
  orthonormal_basis(axis, tx, ty);
  Rgb acc = Rgb::Zero();
  const double du = 1.0 / kPolarSteps, dphi = 2.0 * kPi / kAzimuthSteps;
  for (int i = 0; i < kPolarSteps; ++i) {
    const double u = (i + 0.5) * du;
    const double t = std::pow(u, 1.0 / power);
    const double r = std::sqrt(std::max(0.0, 1.0 - t * t));
    Rgb ring = Rgb::Zero();
    for (int k = 0; k < kAzimuthSteps; ++k) {
      const double phi = (k + 0.5) * dphi;
      const Vec3 w = t * axis + r * (std::cos(phi) * tx + std::sin(phi) * ty);
      ring += env_radiance(UnitVector3::normalized(w), s);
    }
    acc += ring;
  }
  return acc * du * dphi;
}

}  // namespace detail

/// Cosine-weighted irradiance E(n) = int_{n.w > 0} L(w) (n.w) dw.
inline Rgb irradiance(const UnitVector3& n, const OracleScene& s) {
  return 0.5 * detail::lobe_integral(n.vec(), 2.0, s);
}

/// int L(w) (alpha+1)/(2 pi) max(w . wr, 0)^alpha dw.
inline Rgb phong_filtered(const UnitVector3& wr, double alpha, const OracleScene& s) {
  return detail::lobe_integral(wr.vec(), alpha + 1.0, s) / (2.0 * kPi);
}

/// Linear outgoing radiance c_d E(n)/pi + s * F(w_r) toward wo.
inline Rgb oracle_shade(const UnitVector3& n, const UnitVector3& wo, const Material& m, const OracleScene& s) {
  const double c = n.dot(wo);
  if (!(c > 0.0)) fail("oracle_shade: view direction is behind the surface (n.wo = ", c, ")");
  const auto wr = sph::reflect(wo, n);
  return m.diffuse * irradiance(n, s) / kPi + m.tint * phong_filtered(wr, m.phong_exponent, s);
}

// ----------------------------------------------------------------- cameras

/// Camera-to-world pose at `eye` looking at the origin, world +z up.
inline Mat4 look_at_origin(const Vec3& eye) {
  const Vec3 back = eye.normalized();
  Vec3 right = Vec3::UnitZ().cross(back);
  if (right.norm() < 1e-8) right = Vec3::UnitX();
  right.normalize();
  const Vec3 up = back.cross(right);
  Mat4 m = Mat4::Identity();
  m.block<3, 1>(0, 0) = right;
  m.block<3, 1>(0, 1) = up;
  m.block<3, 1>(0, 2) = back;
  m.block<3, 1>(0, 3) = eye;
  return m;
}

/// Seeded uniform positions on the cap z/r >= min_z of a sphere of radius r.
inline std::vector<Mat4> cap_poses(std::mt19937_64& rng, int count, double radius = 4.0, double min_z = -0.3) {
  std::uniform_real_distribution<double> uz(min_z, 1.0), uphi(0.0, 2.0 * kPi);
  std::vector<Mat4> out;
  for (int i = 0; i < count; ++i) {
    const double z = uz(rng), phi = uphi(rng), r = std::sqrt(std::max(0.0, 1.0 - z * z));
    out.push_back(look_at_origin(radius * Vec3(r * std::cos(phi), r * std::sin(phi), z)));
  }
  return out;
}

// ----------------------------------------------------------------- dataset

struct Frame {
  std::string file_path;
  Mat4 pose = Mat4::Identity();
  std::vector<Rgb> image;
  std::vector<Vec3> normals;     // empty when no normal map
  std::vector<std::uint8_t> mask;  // empty when unknown; 1 = foreground
};

struct SceneDataset {
  double camera_angle_x = 0.0;
  int width = 0;
  int height = 0;
  double near = render::kDefaultNear;
  double far = render::kDefaultFar;
  std::vector<Frame> frames;

  render::Camera camera(std::size_t i) const {
    return render::Camera{frames.at(i).pose, camera_angle_x, width, height};
  }
};

struct OracleImage {
  io::Image8 color;
  io::Image8 normal;
  io::Image8 mask;
};

/// Ground truth for one camera: tone-mapped shading, world normals, mask.
inline OracleImage render_oracle(const OracleScene& s, const render::Camera& cam, const Rgb& background = Rgb::Ones()) {
  const auto rays = render::camera_rays(cam);
  std::vector<Rgb> col(rays.size(), background);
  std::vector<Vec3> nrm(rays.size(), Vec3::Zero());
  std::vector<double> msk(rays.size(), 0.0);
  for (std::size_t i = 0; i < rays.size(); ++i) {
    const auto hit = ray_sphere_intersect(rays[i], s.center, s.radius);
    if (!hit) continue;
    const auto n = UnitVector3::normalized(hit->normal);
    const auto wo = -rays[i].direction;
    if (!(n.dot(wo) > 0.0)) continue;  // tangent grazing: treat as miss
    const Rgb lin = oracle_shade(n, wo, s.material_at(n.vec()), s);
    col[i] = lin.unaryExpr([](double a) { return field::tonemap(a); });
    nrm[i] = n.vec();
    msk[i] = 1.0;
  }
  return {io::rgb_image(cam.width, cam.height, col), io::normal_image(cam.width, cam.height, nrm),
          io::gray_image(cam.width, cam.height, msk)};
}

struct GenerateOptions {
  int n_train = 30;
  int n_test = 20;
  int width = 32;
  int height = 32;
  double camera_angle_x = 0.6911112;
  double camera_radius = 4.0;
  std::uint64_t seed = 0;
  int workers = 1;
};

namespace detail {

inline nlohmann::json pose_json(const Mat4& m) {
  auto rows = nlohmann::json::array();
  for (int r = 0; r < 4; ++r) {
    auto row = nlohmann::json::array();
    for (int c = 0; c < 4; ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail("cannot write ", path.string());
  os << text;
  if (!os) fail("write failed: ", path.string());
}

}  // namespace detail

/// Writes transforms_{train,test}.json and per-frame color, normal and mask PNGs.
inline void generate_dataset(const OracleScene& s, const GenerateOptions& opt, const std::filesystem::path& out_dir) {
  s.validate();
  if (opt.n_train < 1 || opt.n_test < 1) fail("generate_dataset: need at least one train and one test view");
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "train", ec);
  std::filesystem::create_directories(out_dir / "test", ec);
  if (ec || !std::filesystem::is_directory(out_dir / "test")) {
    fail("generate_dataset: cannot create ", out_dir.string(), (ec ? " (" + ec.message() + ")" : std::string()));
  }
  std::mt19937_64 rng(opt.seed);
  for (const std::string split : {"train", "test"}) {
    const int count = split == "train" ? opt.n_train : opt.n_test;
    const auto poses = cap_poses(rng, count, opt.camera_radius);
    nlohmann::json j;
    j["camera_angle_x"] = opt.camera_angle_x;
    j["near"] = render::kDefaultNear;
    j["far"] = render::kDefaultFar;
    j["frames"] = nlohmann::json::array();
    std::vector<std::string> names;
    for (int i = 0; i < count; ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "r_%03d", i);
      names.push_back(name);
      j["frames"].push_back({{"file_path", "./" + split + "/" + name}, {"transform_matrix", detail::pose_json(poses[i])}});
    }
    detail::write_text(out_dir / ("transforms_" + split + ".json"), j.dump(2) + "\n");
    auto work = [&](int first, int stride) {
      for (int i = first; i < count; i += stride) {
        const render::Camera cam{poses[static_cast<std::size_t>(i)], opt.camera_angle_x, opt.width, opt.height};
        const auto img = render_oracle(s, cam);
        const auto base = out_dir / split / names[static_cast<std::size_t>(i)];
        io::write_png(base.string() + ".png", img.color);
        io::write_png(base.string() + "_normal.png", img.normal);
        io::write_png(base.string() + "_mask.png", img.mask);
      }
    };
    if (opt.workers <= 1) {
      work(0, 1);
    } else {
      std::vector<std::jthread> pool;
      for (int w = 0; w < opt.workers; ++w) pool.emplace_back(work, w, opt.workers);
    }
  }
}

struct LoadOptions {
  bool linear = false;  // apply the inverse sRGB transfer to colors
  Rgb background = Rgb::Ones();
};

inline std::filesystem::path image_path(const std::filesystem::path& dir, const std::string& file_path,
                                        const std::string& suffix = "") {
  std::filesystem::path p = dir / file_path;
  std::string s = p.lexically_normal().string();
  if (s.size() >= 4 && s.compare(s.size() - 4, 4, ".png") == 0) s.erase(s.size() - 4);
  return s + suffix + ".png";
}

inline void check_pose_matrix(const Mat4& m, const std::string& where) {
  const Mat3 r = m.topLeftCorner<3, 3>();
  if ((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-4 || r.determinant() <= 0.0) {
    fail(where, ": transform_matrix rotation is not orthonormal and right-handed within 1e-4");
  }
}

/// Loads one split ("train" or "test") of a NeRF-synthetic style directory.
inline SceneDataset load_dataset(const std::filesystem::path& dir, const std::string& split,
                                 const LoadOptions& opt = {}) {
  const auto json_path = dir / ("transforms_" + split + ".json");
  std::ifstream is(json_path);
  if (!is) fail("cannot open camera file ", json_path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    fail(json_path.string(), ": malformed JSON (", e.what(), ")");
  }
  SceneDataset ds;
  try {
    ds.camera_angle_x = j.at("camera_angle_x").get<double>();
    ds.near = j.value("near", render::kDefaultNear);
    ds.far = j.value("far", render::kDefaultFar);
    const auto& frames = j.at("frames");
    if (!frames.is_array() || frames.empty()) fail("no frames");
    for (const auto& f : frames) {
      Frame fr;
      fr.file_path = f.at("file_path").get<std::string>();
      const auto& m = f.at("transform_matrix");
      if (!m.is_array() || m.size() != 4) fail("transform_matrix of ", fr.file_path, " is not 4x4");
      for (int r = 0; r < 4; ++r) {
        if (!m[r].is_array() || m[r].size() != 4) fail("transform_matrix of ", fr.file_path, " is not 4x4");
        for (int c = 0; c < 4; ++c) fr.pose(r, c) = m[r][c].get<double>();
      }
      ds.frames.push_back(std::move(fr));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(json_path.string(), ": ", e.what());
  } catch (const Error& e) {
    fail(json_path.string(), ": ", e.what());
  }
  for (auto& fr : ds.frames) {
    check_pose_matrix(fr.pose, json_path.string() + " (" + fr.file_path + ")");
    const auto path = image_path(dir, fr.file_path);
    const auto img = io::read_png(path);
    if (ds.width == 0) {
      ds.width = img.width;
      ds.height = img.height;
    } else if (img.width != ds.width || img.height != ds.height) {
      fail(path.string(), ": resolution ", img.width, "x", img.height, " differs from ", ds.width, "x", ds.height);
    }
    fr.image = io::colors_of(img, opt.background);
    if (opt.linear)
      for (auto& c : fr.image) c = c.unaryExpr([](double v) { return field::srgb_decode(v); });
    const auto npath = image_path(dir, fr.file_path, "_normal");
    if (std::filesystem::exists(npath)) {
      const auto n = io::read_png(npath);
      if (n.width != ds.width || n.height != ds.height) fail(npath.string(), ": normal map resolution mismatch");
      fr.normals = io::normals_of(n);
    }
    const auto mpath = image_path(dir, fr.file_path, "_mask");
    if (std::filesystem::exists(mpath)) {
      const auto m = io::read_png(mpath);
      if (m.width != ds.width || m.height != ds.height) fail(mpath.string(), ": mask resolution mismatch");
      fr.mask.resize(m.pixel_count());
      for (std::size_t i = 0; i < fr.mask.size(); ++i) fr.mask[i] = m.at(i, 0) >= 128 ? 1 : 0;
    } else if (img.channels == 4 || img.channels == 2) {
      fr.mask.resize(img.pixel_count());
      for (std::size_t i = 0; i < fr.mask.size(); ++i) fr.mask[i] = img.at(i, img.channels - 1) >= 128 ? 1 : 0;
    }
  }
  return ds;
}

/// Every pixel of every frame as a training ray.
inline train::RayPool ray_pool(const SceneDataset& ds) {
  train::RayPool pool;
  for (std::size_t i = 0; i < ds.frames.size(); ++i) {
    auto rays = render::camera_rays(ds.camera(i), ds.near, ds.far);
    pool.rays.insert(pool.rays.end(), rays.begin(), rays.end());
    pool.colors.insert(pool.colors.end(), ds.frames[i].image.begin(), ds.frames[i].image.end());
  }
  return pool;
}

}  // namespace reflfield::scene
