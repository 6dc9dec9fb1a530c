#include "reflfield/scenes.hpp"

#include <gtest/gtest.h>

#include <Eigen/Geometry>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>

using namespace reflfield;
using namespace reflfield::scene;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("reflfield_test_scenes_" + name);
  std::filesystem::remove_all(p);
  return p;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

OracleScene constant_env(double L) {
  OracleScene s;
  s.ambient = Rgb::Constant(L);
  return s;
}

Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Eigen::Quaterniond q(g(rng), g(rng), g(rng), g(rng));
  return q.normalized().toRotationMatrix();
}

}  // namespace

TEST(RaySphere, AxialHit) {
  const render::Ray r{Vec3(0, 0, 3), UnitVector3::from_xyz(0, 0, -1)};
  const auto h = ray_sphere_intersect(r, Vec3::Zero(), 1.0);
  ASSERT_TRUE(h);
  EXPECT_NEAR(h->t, 2.0, 1e-15);
  EXPECT_NEAR((h->normal - Vec3::UnitZ()).norm(), 0.0, 1e-15);
}

TEST(RaySphere, PointingAwayMisses) {
  const render::Ray r{Vec3(0, 0, 3), UnitVector3::from_xyz(0, 0, 1)};
  EXPECT_FALSE(ray_sphere_intersect(r, Vec3::Zero(), 1.0));
  const render::Ray side{Vec3(0, 1.5, 3), UnitVector3::from_xyz(0, 0, -1)};
  EXPECT_FALSE(ray_sphere_intersect(side, Vec3::Zero(), 1.0));
}

TEST(RaySphere, GrazingHitHasPerpendicularNormal) {
  const double b = 1.0 - 1e-6;
  const render::Ray r{Vec3(b, 0, 3), UnitVector3::from_xyz(0, 0, -1)};
  const auto h = ray_sphere_intersect(r, Vec3::Zero(), 1.0);
  ASSERT_TRUE(h);
  // |n.d| = sqrt(1 - b^2) ~ 1.41e-3
  EXPECT_NEAR(std::abs(h->normal.dot(r.direction.vec())), std::sqrt(1.0 - b * b), 1e-9);
  EXPECT_LT(std::abs(h->normal.dot(r.direction.vec())), 2e-3);
  EXPECT_NEAR(h->normal.norm(), 1.0, 1e-12);
}

TEST(RaySphere, InsideOriginUsesFarRoot) {
  const render::Ray r{Vec3::Zero(), UnitVector3::from_xyz(1, 0, 0)};
  const auto h = ray_sphere_intersect(r, Vec3::Zero(), 2.0);
  ASSERT_TRUE(h);
  EXPECT_NEAR(h->t, 2.0, 1e-15);
}

TEST(EnvRadiance, Examples) {
  const auto s = constant_env(1.0);
  EXPECT_TRUE((env_radiance(UnitVector3::from_xyz(0.3, -0.2, 0.9), s) == Rgb::Ones()).all());
  OracleScene l;
  l.ambient = Rgb(0.1, 0.2, 0.3);
  l.lobes = {{UnitVector3::from_xyz(0, 1, 0), 10.0, Rgb(1.0, 2.0, 3.0)}};
  EXPECT_NEAR((env_radiance(UnitVector3::from_xyz(0, 1, 0), l) - Rgb(1.1, 2.2, 3.3)).abs().maxCoeff(), 0.0, 1e-15);
  l.ambient = Rgb::Zero();
  const Rgb anti = env_radiance(UnitVector3::from_xyz(0, -1, 0), l);
  EXPECT_NEAR(anti(0), std::exp(-20.0), 1e-20);
  EXPECT_NEAR(anti(2), 3.0 * std::exp(-20.0), 1e-20);
}

TEST(OracleShade, ConstantEnvironmentDiffuse) {
  const auto s = constant_env(0.7);
  const Material m{Rgb(0.2, 0.5, 0.9), Rgb::Zero(), 50.0};
  const auto n = UnitVector3::from_xyz(0.1, 0.4, 0.8);
  const Rgb out = oracle_shade(n, UnitVector3::from_xyz(0.2, 0.3, 0.9), m, s);
  EXPECT_NEAR((out - 0.7 * m.diffuse).cwiseAbs().maxCoeff(), 0.0, 1e-12);
}

TEST(OracleShade, ConstantEnvironmentSpecularLobeIntegratesToOne) {
  const auto s = constant_env(1.0);
  for (double alpha : {1.0, 30.0, 1000.0}) {
    const Rgb f = phong_filtered(UnitVector3::from_xyz(0.3, -0.1, 0.5), alpha, s);
    EXPECT_NEAR(f(0), 1.0, 1e-12) << alpha;
  }
}

TEST(OracleShade, BlackMaterialIsBlack) {
  const auto s = glossy_sphere();
  const Material m{Rgb::Zero(), Rgb::Zero(), 20.0};
  EXPECT_TRUE((oracle_shade(UnitVector3::from_xyz(0, 0, 1), UnitVector3::from_xyz(0, 0.5, 1), m, s) == 0.0).all());
}

TEST(OracleShade, MirrorLimitMatchesEnvironment) {
  OracleScene s;
  s.lobes = {{UnitVector3::from_xyz(0.2, 0.5, 0.8), 100.0, Rgb(1.0, 0.5, 2.0)}};
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  for (int i = 0; i < 10; ++i) {
    // Reflected directions at and around the lobe center.
    const auto wr = UnitVector3::normalized(s.lobes[0].direction.vec() + 0.08 * Vec3(g(rng), g(rng), g(rng)));
    const Rgb f = phong_filtered(wr, 1e4, s);
    const Rgb e = env_radiance(wr, s);
    EXPECT_LT(((f - e).cwiseAbs() / e).maxCoeff(), 0.05) << i;
  }
}

TEST(OracleShade, RejectsBackFacingView) {
  const auto s = glossy_sphere();
  EXPECT_THROW(oracle_shade(UnitVector3::from_xyz(0, 0, 1), UnitVector3::from_xyz(0, 0.5, -1), s.materials[0], s),
               Error);
}

TEST(OracleShade, InvariantToJointRotation) {
  const auto base = glossy_sphere();
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 20; ++trial) {
    const Mat3 R = random_rotation(rng);
    const auto n = UnitVector3::normalized(Vec3(g(rng), g(rng), g(rng)));
    auto wo = UnitVector3::normalized(n.vec() + 0.9 * Vec3(g(rng), g(rng), g(rng)).normalized());
    if (n.dot(wo) < 0.05) wo = n;
    const Material& m = base.materials[trial % 2];
    OracleScene rot = base;
    for (auto& l : rot.lobes) l.direction = UnitVector3::normalized(R * l.direction.vec());
    const Rgb a = oracle_shade(n, wo, m, base);
    const Rgb b = oracle_shade(UnitVector3::normalized(R * n.vec()), UnitVector3::normalized(R * wo.vec()), m, rot);
    EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-3) << trial << ": " << a.transpose() << " vs " << b.transpose();
  }
}

TEST(OracleShade, EnergyBoundedForBoundedEnvironment) {
  OracleScene s;
  s.ambient = Rgb::Constant(0.5);
  s.lobes = {{UnitVector3::from_xyz(0, 0, 1), 20.0, Rgb::Constant(0.5)}};
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 30; ++i) {
    const Material m{Rgb::Constant(u(rng)), Rgb::Constant(u(rng)), 1.0 + 500.0 * u(rng)};
    const auto n = UnitVector3::normalized(Vec3(g(rng), g(rng), g(rng)));
    const auto wo = UnitVector3::normalized(n.vec() + 0.5 * Vec3(g(rng), g(rng), g(rng)).normalized());
    if (n.dot(wo) <= 0.0) continue;
    EXPECT_LE(oracle_shade(n, wo, m, s).maxCoeff(), 2.0 + 1e-9);
  }
}

TEST(Scene, ValidateRejectsBadInputs) {
  auto s = glossy_sphere();
  s.validate();
  s.radius = 0.0;
  EXPECT_THROW(s.validate(), Error);
  s = glossy_sphere();
  s.lobes[0].radiance(1) = -1.0;
  EXPECT_THROW(s.validate(), Error);
}

TEST(Cameras, LookAtPosesAreValidAndFaceTheOrigin) {
  std::mt19937_64 rng(1);
  for (const auto& m : cap_poses(rng, 50)) {
    render::check_pose(m);
    EXPECT_NEAR((m.block<3, 1>(0, 3).norm()), 4.0, 1e-12);
    // Camera looks down -z.
    const Vec3 fwd = -m.block<3, 1>(0, 2);
    const Vec3 to_origin = -m.block<3, 1>(0, 3).normalized();
    EXPECT_NEAR(fwd.dot(to_origin), 1.0, 1e-12);
  }
}

TEST(Png, RoundTripRandomImage) {
  const auto dir = temp_dir("png");
  std::filesystem::create_directories(dir);
  std::mt19937_64 rng(9);
  for (int channels : {1, 3, 4}) {
    io::Image8 img{7, 5, channels, {}};
    for (std::size_t i = 0; i < img.pixel_count() * channels; ++i) img.data.push_back(static_cast<std::uint8_t>(rng()));
    const auto path = dir / ("img" + std::to_string(channels) + ".png");
    io::write_png(path, img);
    const auto back = io::read_png(path);
    EXPECT_EQ(back.width, 7);
    EXPECT_EQ(back.height, 5);
    EXPECT_EQ(back.channels, channels);
    EXPECT_EQ(back.data, img.data);
  }
  std::filesystem::remove_all(dir);
}

TEST(Png, NormalRoundTripWithinQuantization) {
  const auto dir = temp_dir("normal");
  std::filesystem::create_directories(dir);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  std::vector<Vec3> n;
  for (int i = 0; i < 64; ++i) n.push_back(Vec3(g(rng), g(rng), g(rng)).normalized());
  io::write_png(dir / "n.png", io::normal_image(8, 8, n));
  const auto back = io::normals_of(io::read_png(dir / "n.png"));
  for (std::size_t i = 0; i < n.size(); ++i) EXPECT_LE((back[i] - n[i]).cwiseAbs().maxCoeff(), 1.0 / 255.0 + 1e-12);
  std::filesystem::remove_all(dir);
}

TEST(Png, MissingFileNamesThePath) {
  try {
    io::read_png("/nonexistent/reflfield.png");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/reflfield.png"), std::string::npos);
  }
}

class GeneratedDataset : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new std::filesystem::path(temp_dir("dataset"));
    opt_.n_train = 30;
    opt_.n_test = 4;
    opt_.width = 32;
    opt_.height = 32;
    opt_.seed = 42;
    generate_dataset(glossy_sphere(), opt_, *dir_);
  }
  static void TearDownTestSuite() {
    std::filesystem::remove_all(*dir_);
    delete dir_;
  }
  static std::filesystem::path* dir_;
  static GenerateOptions opt_;
};

std::filesystem::path* GeneratedDataset::dir_ = nullptr;
GenerateOptions GeneratedDataset::opt_;

TEST_F(GeneratedDataset, FileCounts) {
  int images = 0, normals = 0, masks = 0;
  for (const auto& e : std::filesystem::directory_iterator(*dir_ / "train")) {
    const auto name = e.path().filename().string();
    if (name.ends_with("_normal.png")) ++normals;
    else if (name.ends_with("_mask.png")) ++masks;
    else if (name.ends_with(".png")) ++images;
  }
  EXPECT_EQ(images, 30);
  EXPECT_EQ(normals, 30);
  EXPECT_EQ(masks, 30);
  EXPECT_TRUE(std::filesystem::exists(*dir_ / "transforms_train.json"));
  EXPECT_TRUE(std::filesystem::exists(*dir_ / "transforms_test.json"));
}

TEST_F(GeneratedDataset, SameSeedIsByteIdentical) {
  const auto other = temp_dir("dataset_again");
  auto opt = opt_;
  opt.workers = 3;
  generate_dataset(glossy_sphere(), opt, other);
  for (const auto& e : std::filesystem::recursive_directory_iterator(*dir_)) {
    if (!e.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(e.path(), *dir_);
    EXPECT_EQ(slurp(e.path()), slurp(other / rel)) << rel;
  }
  std::filesystem::remove_all(other);
}

TEST_F(GeneratedDataset, ForegroundNormalsFaceTheCamera) {
  const auto ds = load_dataset(*dir_, "train");
  ASSERT_EQ(ds.frames.size(), 30u);
  int fg = 0;
  for (std::size_t f = 0; f < ds.frames.size(); ++f) {
    const auto rays = render::camera_rays(ds.camera(f));
    const auto& fr = ds.frames[f];
    ASSERT_EQ(fr.normals.size(), rays.size());
    ASSERT_EQ(fr.mask.size(), rays.size());
    for (std::size_t i = 0; i < rays.size(); ++i) {
      if (!fr.mask[i]) continue;
      ++fg;
      // Quantization can push a grazing normal slightly past 90 degrees.
      EXPECT_LT(fr.normals[i].normalized().dot(rays[i].direction.vec()), 8e-3);
    }
  }
  EXPECT_GT(fg, 30 * 50);
}

TEST_F(GeneratedDataset, ReRenderFromLoadedPosesIsBitExact) {
  const auto ds = load_dataset(*dir_, "test");
  const auto s = glossy_sphere();
  for (std::size_t f = 0; f < ds.frames.size(); ++f) {
    const auto img = render_oracle(s, ds.camera(f));
    const auto stored = io::read_png(image_path(*dir_, ds.frames[f].file_path));
    EXPECT_EQ(img.color.data, stored.data) << f;
  }
}

TEST_F(GeneratedDataset, LoaderMetadataAndLinearFlag) {
  const auto ds = load_dataset(*dir_, "train");
  EXPECT_EQ(ds.width, 32);
  EXPECT_EQ(ds.height, 32);
  EXPECT_NEAR(ds.camera_angle_x, 0.6911112, 1e-12);
  EXPECT_EQ(ds.near, 2.0);
  EXPECT_EQ(ds.far, 6.0);
  const auto lin = load_dataset(*dir_, "train", LoadOptions{true});
  for (std::size_t i = 0; i < 50; ++i) {
    const double v = ds.frames[0].image[i](0);
    EXPECT_NEAR(lin.frames[0].image[i](0), field::srgb_decode(v), 1e-15);
    EXPECT_LE(lin.frames[0].image[i](0), v + 1e-15);
  }
  const auto pool = ray_pool(ds);
  EXPECT_EQ(pool.rays.size(), 30u * 32u * 32u);
  EXPECT_EQ(pool.colors.size(), pool.rays.size());
}

TEST(LoadDataset, MissingCameraFileIsNamed) {
  const auto dir = temp_dir("missing");
  std::filesystem::create_directories(dir);
  try {
    load_dataset(dir, "train");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("transforms_train.json"), std::string::npos);
  }
  std::filesystem::remove_all(dir);
}

TEST(LoadDataset, MalformedFilesReportPathAndReason) {
  const auto dir = temp_dir("malformed");
  std::filesystem::create_directories(dir / "train");
  auto expect_error = [&](const std::string& json, const std::string& needle, bool names_json = true) {
    std::ofstream(dir / "transforms_train.json") << json;
    try {
      load_dataset(dir, "train");
      ADD_FAILURE() << "no error for " << json;
    } catch (const Error& e) {
      const std::string msg = e.what();
      if (names_json) EXPECT_NE(msg.find("transforms_train.json"), std::string::npos) << msg;
      EXPECT_NE(msg.find(needle), std::string::npos) << msg;
    }
  };
  expect_error("{ not json", "malformed JSON");
  expect_error(R"({"frames": []})", "camera_angle_x");
  expect_error(R"({"camera_angle_x": 0.7, "frames": [{"file_path": "./train/a", "transform_matrix": [[1,0,0,0]]}]})",
               "4x4");
  expect_error(R"({"camera_angle_x": 0.7, "frames": [{"file_path": "./train/a",
      "transform_matrix": [[2,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]}]})",
               "orthonormal");
  // Valid JSON, missing image.
  expect_error(R"({"camera_angle_x": 0.7, "frames": [{"file_path": "./train/a",
      "transform_matrix": [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]}]})",
               "train/a.png", false);
  std::filesystem::remove_all(dir);
}

TEST(LoadDataset, AlphaChannelBecomesMaskAndIsComposited) {
  const auto dir = temp_dir("alpha");
  std::filesystem::create_directories(dir / "train");
  io::Image8 img{2, 1, 4, {255, 0, 0, 255, 0, 0, 0, 0}};
  io::write_png(dir / "train" / "a.png", img);
  std::ofstream(dir / "transforms_train.json") << R"({"camera_angle_x": 0.7, "frames": [{"file_path": "./train/a.png",
      "transform_matrix": [[1,0,0,0],[0,1,0,0],[0,0,1,4],[0,0,0,1]]}]})";
  const auto ds = load_dataset(dir, "train");
  ASSERT_EQ(ds.frames[0].mask.size(), 2u);
  EXPECT_EQ(ds.frames[0].mask[0], 1);
  EXPECT_EQ(ds.frames[0].mask[1], 0);
  EXPECT_TRUE((ds.frames[0].image[0] == Rgb(1, 0, 0)).all());
  EXPECT_TRUE((ds.frames[0].image[1] == Rgb(1, 1, 1)).all());
  std::filesystem::remove_all(dir);
}
