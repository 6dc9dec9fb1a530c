// reflfield <command> --config <path> [--seed N] [--deterministic] [--out <dir>]
//
// Commands: oracle-gen, train, render, eval, edit, verify.

#include "reflfield/app.hpp"

#include "CLI11.hpp"

#include <iostream>

using namespace reflfield;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool needs_config = true) {
  auto* opt = cmd->add_option("--config", c.config, "INI run configuration");
  if (needs_config) opt->required();
  cmd->add_option("--seed", c.seed, "seed override (scene seed for oracle-gen, training seed otherwise)");
  cmd->add_flag("--deterministic", c.deterministic, "single worker for training and rendering");
  cmd->add_option("--out", c.out, "output directory override");
}

cfg::RunConfig resolve(const Common& c, bool scene_seed) {
  auto rc = cfg::load_run_config(c.config);
  if (!c.out.empty()) rc.out_dir = c.out;
  if (c.seed) (scene_seed ? rc.scene.seed : rc.train.seed) = *c.seed;
  if (c.deterministic) {
    rc.train.workers = 1;
    rc.render.workers = 1;
    rc.scene.workers = 1;
  }
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reflection-parameterized radiance fields at desk scale"};
  app.require_subcommand(1);
  Common common;
  std::optional<double> roughness_scale, tint_scale;
  std::string diffuse_rgb;

  auto* gen = app.add_subcommand("oracle-gen", "write the analytic glossy-sphere dataset");
  auto* trn = app.add_subcommand("train", "train a field on the training split");
  auto* rnd = app.add_subcommand("render", "render the test cameras");
  auto* evl = app.add_subcommand("eval", "PSNR and normal MAE on the test split");
  auto* edt = app.add_subcommand("edit", "render the test cameras with material overrides");
  auto* ver = app.add_subcommand("verify", "run the built-in math and gradient checks");
  for (auto* c : {gen, trn, rnd, evl, edt}) add_common(c, common);
  add_common(ver, common, false);
  edt->add_option("--roughness-scale", roughness_scale, "rho <- scale * rho");
  edt->add_option("--diffuse-rgb", diffuse_rgb, "replace the diffuse color, r,g,b in [0,1]");
  edt->add_option("--tint-scale", tint_scale, "s <- scale * s");

  CLI11_PARSE(app, argc, argv);
  app::retain_heap();
  app::flush_denormals();

  try {
    if (gen->parsed()) {
      app::run_oracle_gen(resolve(common, true), std::cout);
    } else if (trn->parsed()) {
      app::run_train(resolve(common, false), std::cout);
    } else if (rnd->parsed()) {
      app::run_render(resolve(common, false), false, std::cout);
    } else if (evl->parsed()) {
      app::run_eval(resolve(common, false), std::cout);
    } else if (edt->parsed()) {
      auto rc = resolve(common, false);
      if (roughness_scale) rc.edits.roughness_scale = *roughness_scale;
      if (tint_scale) rc.edits.tint_scale = *tint_scale;
      if (!diffuse_rgb.empty()) rc.edits.diffuse_override = cfg::parse_rgb(diffuse_rgb, "--diffuse-rgb");
      rc.edits.validate();
      app::run_render(rc, true, std::cout);
    } else if (ver->parsed()) {
      return app::run_verify(std::cout) ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "reflfield: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
