#pragma once

// INI run configuration (Boost.PropertyTree). Every key is optional; unknown
// sections or keys are rejected so typos do not silently fall back to defaults.
//
//   [paths]   scene, out, checkpoint
//   [scene]   n_train, n_test, width, height, camera_angle_x, camera_radius, seed, workers
//   [field]   spatial_depth, spatial_width, directional_depth, directional_width,
//             pe_levels, direction_pe_levels, degrees (e.g. 1,2,4), bottleneck_width,
//             use_reflection, encoding (integrated|spherical|positional), concat_viewdir,
//             input_ndotwo, use_diffuse, use_tint, use_roughness, use_predicted_normals,
//             bottleneck_noise
//   [train]   iterations, batch_rays, samples, importance_samples, lr_init, lr_final,
//             warmup_steps, beta1, beta2, epsilon, clip_norm, seed, lambda_p, lambda_o,
//             gradient_stop (none|weights|density_normals), checkpoint_every, workers
//   [render]  width, height, samples, importance_samples, workers, background (r,g,b)
//   [edit]    roughness_scale, diffuse_rgb (r,g,b), tint_scale

#include "reflfield/scenes.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>

namespace reflfield::cfg {

struct RenderSettings {
  int width = 0;   // 0: dataset resolution
  int height = 0;
  int samples = 64;
  int importance_samples = 0;
  int workers = 1;
  Rgb background = Rgb::Ones();
};

struct RunConfig {
  std::filesystem::path scene_dir;
  std::filesystem::path out_dir;
  std::filesystem::path checkpoint;  // empty: <out>/final.rfld
  scene::GenerateOptions scene;
  field::FieldConfig field;
  train::TrainConfig train;
  RenderSettings render;
  field::EditOverrides edits;

  std::filesystem::path checkpoint_path() const { return checkpoint.empty() ? out_dir / "final.rfld" : checkpoint; }

  void validate() const {
    if (scene_dir.empty()) fail("config: [paths] scene must be set");
    if (out_dir.empty()) fail("config: [paths] out must be set");
    field.validate();
    train.validate();
    edits.validate();
    if (render.width < 0 || render.height < 0) fail("config: render size must be >= 0");
    if (render.samples < 2) fail("config: render needs at least 2 samples per ray");
    if (render.workers < 1) fail("config: render needs at least one worker");
  }
};

inline Rgb parse_rgb(const std::string& text, const std::string& what) {
  std::stringstream ss(text);
  std::string part;
  std::vector<double> v;
  while (std::getline(ss, part, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(part, &used));
      if (part.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      fail(what, ": '", text, "' is not a list of three numbers");
    }
  }
  if (v.size() != 3) fail(what, ": '", text, "' is not a list of three numbers");
  return Rgb(v[0], v[1], v[2]);
}

inline std::vector<int> parse_int_list(const std::string& text, const std::string& what) {
  std::stringstream ss(text);
  std::string part;
  std::vector<int> v;
  while (std::getline(ss, part, ',')) {
    try {
      v.push_back(std::stoi(part));
    } catch (const std::exception&) {
      fail(what, ": '", text, "' is not a comma-separated integer list");
    }
  }
  return v;
}

namespace detail {

class Reader {
 public:
  explicit Reader(const boost::property_tree::ptree& t) : tree_(t) {}

  template <typename T>
  void get(const std::string& section, const std::string& key, T& out) {
    known_[section].insert(key);
    const auto v = tree_.get_optional<std::string>(boost::property_tree::ptree::path_type(section + "." + key, '.'));
    if (!v) return;
    if constexpr (std::is_same_v<T, bool>) {
      if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") out = true;
      else if (*v == "false" || *v == "0" || *v == "no" || *v == "off") out = false;
      else fail("config: [", section, "] ", key, " = '", *v, "' is not a boolean");
    } else if constexpr (std::is_same_v<T, std::string>) {
      out = *v;
    } else if constexpr (std::is_same_v<T, std::filesystem::path>) {
      out = *v;
    } else {
      std::istringstream is(*v);
      T parsed{};
      if (!(is >> parsed) || !(is >> std::ws).eof()) fail("config: [", section, "] ", key, " = '", *v, "' is not valid");
      out = parsed;
    }
  }

  std::optional<std::string> raw(const std::string& section, const std::string& key) {
    known_[section].insert(key);
    const auto v = tree_.get_optional<std::string>(boost::property_tree::ptree::path_type(section + "." + key, '.'));
    if (!v) return std::nullopt;
    return *v;
  }

  void reject_unknown() const {
    for (const auto& [section, sub] : tree_) {
      const auto it = known_.find(section);
      if (it == known_.end()) fail("config: unknown section [", section, "]");
      if (!sub.data().empty() && sub.empty()) fail("config: key '", section, "' outside any section");
      for (const auto& [key, value] : sub) {
        if (!it->second.count(key)) fail("config: unknown key '", key, "' in [", section, "]");
      }
    }
  }

 private:
  const boost::property_tree::ptree& tree_;
  std::map<std::string, std::set<std::string>> known_;
};

}  // namespace detail

/// Parses INI text; `base` resolves relative paths.
inline RunConfig parse_run_config(std::istream& is, const std::filesystem::path& base = {}) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(is, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    fail("config: ", e.message(), " (line ", e.line(), ")");
  }
  RunConfig c;
  detail::Reader r(tree);
  r.get("paths", "scene", c.scene_dir);
  r.get("paths", "out", c.out_dir);
  r.get("paths", "checkpoint", c.checkpoint);

  r.get("scene", "n_train", c.scene.n_train);
  r.get("scene", "n_test", c.scene.n_test);
  r.get("scene", "width", c.scene.width);
  r.get("scene", "height", c.scene.height);
  r.get("scene", "camera_angle_x", c.scene.camera_angle_x);
  r.get("scene", "camera_radius", c.scene.camera_radius);
  r.get("scene", "seed", c.scene.seed);
  r.get("scene", "workers", c.scene.workers);

  auto& f = c.field;
  r.get("field", "spatial_depth", f.spatial_depth);
  r.get("field", "spatial_width", f.spatial_width);
  r.get("field", "directional_depth", f.directional_depth);
  r.get("field", "directional_width", f.directional_width);
  r.get("field", "pe_levels", f.pe_levels);
  r.get("field", "direction_pe_levels", f.direction_pe_levels);
  if (const auto d = r.raw("field", "degrees")) f.degrees = sph::SHIndexSet(parse_int_list(*d, "config: [field] degrees"));
  r.get("field", "bottleneck_width", f.bottleneck_width);
  r.get("field", "use_reflection", f.use_reflection);
  if (const auto e = r.raw("field", "encoding")) f.encoding = field::direction_encoding_from_string(*e);
  r.get("field", "concat_viewdir", f.concat_viewdir);
  r.get("field", "input_ndotwo", f.input_ndotwo);
  r.get("field", "use_diffuse", f.use_diffuse);
  r.get("field", "use_tint", f.use_tint);
  r.get("field", "use_roughness", f.use_roughness);
  r.get("field", "use_predicted_normals", f.use_predicted_normals);
  r.get("field", "bottleneck_noise", f.bottleneck_noise);

  auto& t = c.train;
  r.get("train", "iterations", t.iterations);
  r.get("train", "batch_rays", t.batch_rays);
  r.get("train", "samples", t.samples);
  r.get("train", "importance_samples", t.importance_samples);
  r.get("train", "lr_init", t.lr_init);
  r.get("train", "lr_final", t.lr_final);
  r.get("train", "warmup_steps", t.warmup_steps);
  r.get("train", "beta1", t.beta1);
  r.get("train", "beta2", t.beta2);
  r.get("train", "epsilon", t.epsilon);
  r.get("train", "clip_norm", t.clip_norm);
  r.get("train", "seed", t.seed);
  r.get("train", "lambda_p", t.weights.lambda_p);
  r.get("train", "lambda_o", t.weights.lambda_o);
  if (const auto g = r.raw("train", "gradient_stop")) t.gradient_stop = loss::gradient_stop_from_string(*g);
  r.get("train", "checkpoint_every", t.checkpoint_every);
  r.get("train", "workers", t.workers);

  c.render.samples = t.samples;
  c.render.importance_samples = t.importance_samples;
  r.get("render", "width", c.render.width);
  r.get("render", "height", c.render.height);
  r.get("render", "samples", c.render.samples);
  r.get("render", "importance_samples", c.render.importance_samples);
  r.get("render", "workers", c.render.workers);
  if (const auto b = r.raw("render", "background")) c.render.background = parse_rgb(*b, "config: [render] background");
  t.background = c.render.background;

  r.get("edit", "roughness_scale", c.edits.roughness_scale);
  if (const auto d = r.raw("edit", "diffuse_rgb")) c.edits.diffuse_override = parse_rgb(*d, "config: [edit] diffuse_rgb");
  r.get("edit", "tint_scale", c.edits.tint_scale);

  r.reject_unknown();
  for (auto* p : {&c.scene_dir, &c.out_dir, &c.checkpoint})
    if (!p->empty() && p->is_relative()) *p = base / *p;
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail("config: cannot open ", path.string());
  try {
    return parse_run_config(is, path.parent_path());
  } catch (const Error& e) {
    fail(path.string(), ": ", e.what());
  }
}

}  // namespace reflfield::cfg
