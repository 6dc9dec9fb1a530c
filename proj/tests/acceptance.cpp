// Acceptance checks, one line per criterion.
//
//   acceptance [N ...]   run the listed criteria (default: all of 1..9)

#include "reflfield/app.hpp"
#include "reflfield/gradcheck.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <sstream>

using namespace reflfield;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

std::string sci(double v) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(2) << v;
  return os.str();
}

fs::path work_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("reflfield_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) fail("cannot read ", p.string());
  return {std::istreambuf_iterator<char>(is), {}};
}

cfg::RunConfig config(const std::string& name, const fs::path& scene, const fs::path& out) {
  auto c = cfg::load_run_config(fs::path(REFLFIELD_CONFIG_DIR) / (name + ".ini"));
  c.scene_dir = scene;
  c.out_dir = out;
  c.checkpoint.clear();
  return c;
}

Outcome vmf_expectation() {
  const auto t0 = Clock::now();
  const sph::SHIndexSet idx;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> logk(std::log(0.5), std::log(500.0));
  std::normal_distribution<double> g;
  int outside = 0, beyond2 = 0, total = 0;
  double worst = 0.0, z2 = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto mu = UnitVector3::from_xyz(g(rng), g(rng), g(rng));
    const double kappa = std::exp(logk(rng));
    const auto exact = sph::ide_exact(mu, kappa, idx);
    const auto mc = sph::mc_encoding_expectation(rng, mu, kappa, idx, 200000);
    for (std::size_t c = 0; c < mc.mean.size(); ++c) {
      ++total;
      const double diff = std::abs(mc.mean[c] - exact[c]);
      if (diff > 3.0 * mc.stderr[c] + 1e-12) ++outside;
      if (mc.stderr[c] > 0.0) {
        const double z = diff / mc.stderr[c];
        worst = std::max(worst, z);
        z2 += z * z;
        if (z > 2.0) ++beyond2;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {outside == 0 && secs < 120.0,
          std::to_string(outside) + "/" + std::to_string(total) + " components beyond 3 SE (max " + fmt(worst, 3) +
              " SE; mean z^2 " + fmt(z2 / total, 3) + ", " + std::to_string(beyond2) + " beyond 2 SE vs " +
              fmt(0.0455 * total, 3) + " expected), " + fmt(secs, 3) + " s"};
}

Outcome recurrence() {
  double rec = 0.0, closed = 0.0;
  for (double kappa : {0.1, 1.0, 10.0, 100.0}) {
    for (int l = 2; l <= 8; ++l) {
      const double rhs =
          sph::attenuation_exact(l - 2, kappa) - (2.0 * l - 1.0) / kappa * sph::attenuation_exact(l - 1, kappa);
      rec = std::max(rec, std::abs(sph::attenuation_exact(l, kappa) - rhs));
    }
    closed = std::max(closed, std::abs(sph::attenuation_exact(0, kappa) - 1.0));
    closed = std::max(closed, std::abs(sph::attenuation_exact(1, kappa) - (1.0 / std::tanh(kappa) - 1.0 / kappa)));
  }
  return {rec <= 1e-8 && closed <= 1e-10, "recurrence residual " + sci(rec) + ", A0/A1 error " + sci(closed)};
}

Outcome approximation() {
  const double a1_exact = std::abs(sph::attenuation_exact(1, 10.0) - std::exp(-0.1));
  double worst_ratio = 0.0;
  for (int l = 1; l <= 4; ++l) {
    for (double kappa : {50.0, 100.0, 200.0}) {
      const double e1 = std::abs(sph::attenuation_approx(l, kappa) - sph::attenuation_exact(l, kappa));
      const double e2 = std::abs(sph::attenuation_approx(l, 2 * kappa) - sph::attenuation_exact(l, 2 * kappa));
      worst_ratio = std::max(worst_ratio, e2 / e1);
    }
  }
  return {a1_exact < 0.006 && worst_ratio <= 0.35,
          "|A1(10) - exp(-0.1)| = " + fmt(a1_exact) + ", worst err(2k)/err(k) = " + fmt(worst_ratio, 3)};
}

Outcome gradients() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g;
  for (std::uint64_t seed : {3u, 4u}) {
    field::FieldConfig fc;
    fc.spatial_depth = 2;
    fc.spatial_width = 6;
    fc.directional_depth = 1;
    fc.directional_width = 6;
    fc.pe_levels = 1;
    fc.bottleneck_width = 2;
    fc.bottleneck_noise = 0.0;
    auto params = field::init_field<double>(fc, seed);
    for (auto* net : {&params.spatial, &params.directional})
      for (auto& l : net->layers) l.bias = l.bias.unaryExpr([&](double) { return 0.3 * g(rng); });
    params.spatial.layers.back().bias(0, 0) = 1.0 + 0.2 * g(rng);
    std::vector<render::Ray> rays;
    for (int i = 0; i < 2; ++i)
      rays.push_back(render::Ray{Vec3(0.3 * g(rng), 0.3 * g(rng), 3.0),
                                 UnitVector3::from_xyz(0.1 * g(rng), 0.1 * g(rng), -1.0), 2.0, 4.0});
    const ad::Matrix<double> gt = ad::Matrix<double>::Constant(2, 3, 0.3);
    render::RenderOptions opt;
    opt.samples = 4;
    std::vector<ad::Matrix<double>> flat;
    params.for_each_tensor([&flat](const ad::Matrix<double>& m) { flat.push_back(m); });
    for (int which = 0; which < 3; ++which) {
      const auto fn = [&, which](gradcheck::T&, const std::vector<gradcheck::V>& v) {
        const auto batch = render::render_rays(app::detail::bound_from(params, v), fc, rays, opt);
        if (which == 0) return loss::data_loss(batch.color, gt);
        if (which == 1)
          return loss::predicted_normal_loss(batch.weights, batch.points.density_normal, batch.points.predicted_normal);
        return loss::orientation_loss(batch.weights, batch.points.predicted_normal, batch.dirs);
      };
      worst = std::max(worst, gradcheck::max_relative_error(fn, flat));
    }
  }

  // Composite color with respect to density.
  const int R = 3, S = 6;
  ad::Matrix<double> tau(R, S), delta(R, S), colors(R * S, 3), proj(R, 3);
  for (Eigen::Index i = 0; i < tau.size(); ++i) tau.data()[i] = std::abs(g(rng)) + 0.05;
  for (Eigen::Index i = 0; i < delta.size(); ++i) delta.data()[i] = 0.1 + 0.4 * std::abs(g(rng));
  for (Eigen::Index i = 0; i < colors.size(); ++i) colors.data()[i] = std::abs(g(rng));
  for (Eigen::Index i = 0; i < proj.size(); ++i) proj.data()[i] = g(rng);
  const auto composite = [&](gradcheck::T& t, const std::vector<gradcheck::V>& v) {
    const auto w = render::quadrature_weights(v[0], delta);
    return ad::sum_all(ad::mul_const(ad::weighted_row_sum(w, t.constant(colors)), proj));
  };
  worst = std::max(worst, gradcheck::max_relative_error(composite, {tau}));
  const double secs = seconds_since(t0);
  return {worst < 1e-3 && secs < 60.0,
          "max relative error " + sci(worst) + " over data, R_p, R_o, composite; " + fmt(secs, 3) + " s"};
}

Outcome quadrature() {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> len(1, 64);
  std::uniform_real_distribution<double> logtau(std::log(1e-4), std::log(1e4)), u(0.0, 1.0);
  double min_w = 1.0, max_w = 0.0, max_sum = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    const int n = len(rng);
    render::SampleSet s;
    std::vector<double> taus(static_cast<std::size_t>(n));
    double t = 2.0;
    for (int i = 0; i < n; ++i) {
      taus[static_cast<std::size_t>(i)] = u(rng) < 0.2 ? 0.0 : std::exp(logtau(rng));
      const double d = 1e-3 + u(rng);
      s.t.push_back(t);
      s.delta.push_back(d);
      t += d;
    }
    const auto w = render::quadrature_weights(taus, s);
    double sum = 0.0;
    for (double x : w) {
      min_w = std::min(min_w, x);
      max_w = std::max(max_w, x);
      sum += x;
    }
    max_sum = std::max(max_sum, sum);
  }
  render::SampleSet hand;
  hand.t = {0.0, 1.0};
  hand.delta = {1.0, 1.0};
  const std::vector<double> tau{1.0, 2.0};
  const auto w = render::quadrature_weights(tau, hand);
  const double e1 = std::exp(-1.0);
  const double hand_err = std::max(std::abs(w[0] - (1.0 - e1)), std::abs(w[1] - e1 * (1.0 - std::exp(-2.0))));
  const bool ok = min_w >= 0.0 && max_w <= 1.0 && max_sum <= 1.0 && hand_err <= 1e-6;
  return {ok, "weights in [" + fmt(min_w) + ", " + fmt(max_w) + "], max sum " + fmt(max_sum, 17) +
                  ", hand case (" + fmt(w[0], 7) + ", " + fmt(w[1], 7) + ") error " + sci(hand_err)};
}

struct RunStats {
  app::EvalResult eval;
  double seconds = 0.0;
};

RunStats train_and_eval(const std::string& name, const fs::path& scene, const fs::path& root) {
  const auto c = config(name, scene, root / name);
  std::ofstream log(root / (name + ".log"));
  const auto t0 = Clock::now();
  app::run_train(c, log);
  RunStats s;
  s.eval = app::run_eval(c, log);
  s.seconds = seconds_since(t0);
  std::cout << "  " << name << ": psnr " << fmt(s.eval.psnr_mean) << " dB, mae " << fmt(s.eval.mae_mean)
            << " deg, " << fmt(s.seconds, 4) << " s" << std::endl;
  return s;
}

std::map<std::string, RunStats> g_runs;

void ensure_training_runs() {
  if (!g_runs.empty()) return;
  const auto root = work_dir("ordering");
  const auto base = config("full", root / "data", root / "full");
  app::run_oracle_gen(base, std::cout);
  for (const char* name : {"full", "no_reflection", "no_orientation"}) g_runs[name] = train_and_eval(name, base.scene_dir, root);
}

Outcome reflection_ordering() {
  ensure_training_runs();
  const auto& f = g_runs["full"];
  const auto& b = g_runs["no_reflection"];
  const double dpsnr = f.eval.psnr_mean - b.eval.psnr_mean;
  const double dmae = b.eval.mae_mean - f.eval.mae_mean;
  const double slowest = std::max(f.seconds, b.seconds);
  return {dpsnr >= 1.0 && dmae >= 15.0 && slowest < 1200.0,
          "full vs no-reflection baseline: PSNR +" + fmt(dpsnr) + " dB (need 1), MAE -" + fmt(dmae) +
              " deg (need 15), slowest run " + fmt(slowest, 4) + " s"};
}

Outcome orientation_ordering() {
  ensure_training_runs();
  const auto& f = g_runs["full"];
  const auto& n = g_runs["no_orientation"];
  const double dmae = n.eval.mae_mean - f.eval.mae_mean;
  return {dmae >= 5.0 && n.seconds < 1200.0,
          "full vs lambda_o = 0: MAE " + fmt(f.eval.mae_mean) + " vs " + fmt(n.eval.mae_mean) + " deg, margin " +
              fmt(dmae) + " (need 5)"};
}

bool same_colors(const std::vector<Rgb>& a, const std::vector<Rgb>& b) {
  return std::equal(a.begin(), a.end(), b.begin(), b.end(), [](const Rgb& x, const Rgb& y) { return (x == y).all(); });
}

void use_small_scene(cfg::RunConfig& c) {
  c.scene.n_train = 6;
  c.scene.n_test = 3;
  c.scene.width = 16;
  c.scene.height = 16;
}

Outcome edit_semantics() {
  const auto root = work_dir("edit");
  auto c = config("full", root / "data", root / "run");
  use_small_scene(c);
  c.train.iterations = 150;
  c.train.warmup_steps = 20;
  std::ostringstream log;
  app::run_oracle_gen(c, log);
  app::run_train(c, log);
  const auto plain = app::run_render(c, false, log);
  const auto neutral = app::run_render(c, true, log);
  bool neutral_same = true;
  for (std::size_t i = 0; i < plain.size(); ++i)
    neutral_same = neutral_same && fs::exists(root / "run/edit") &&
                   slurp(root / "run/render" / (app::frame_name(i) + ".png")) ==
                       slurp(root / "run/edit" / (app::frame_name(i) + ".png"));
  for (std::size_t i = 0; i < plain.size(); ++i) {
    neutral_same = neutral_same && same_colors(plain[i].color, neutral[i].color) && plain[i].opacity == neutral[i].opacity &&
                   plain[i].normal == neutral[i].normal && plain[i].depth == neutral[i].depth;
  }

  std::vector<field::EditOverrides> edits(3);
  edits[0].roughness_scale = 3.0;
  edits[1].diffuse_override = Rgb(0.1, 0.6, 0.2);
  edits[2].tint_scale = 0.25;
  bool local = true, changed = true;
  for (const auto& e : edits) {
    c.edits = e;
    const auto v = app::run_render(c, true, log);
    bool any_diff = false;
    for (std::size_t i = 0; i < v.size(); ++i) {
      local = local && v[i].opacity == plain[i].opacity && v[i].normal == plain[i].normal &&
              v[i].predicted_normal == plain[i].predicted_normal && v[i].depth == plain[i].depth;
      any_diff = any_diff || !same_colors(v[i].color, plain[i].color);
    }
    changed = changed && any_diff;
  }
  return {neutral_same && local && changed,
          std::string("neutral edit ") + (neutral_same ? "bit-identical" : "DIFFERS") + "; roughness/diffuse/tint edits " +
              (local ? "keep" : "CHANGE") + " opacity, normals and depth; color " +
              (changed ? "changes under every edit" : "UNCHANGED under some edit")};
}

Outcome determinism() {
  const auto root = work_dir("determinism");
  auto base = config("full", root / "data", root / "a");
  use_small_scene(base);
  base.train.iterations = 300;
  base.train.warmup_steps = 32;
  base.train.checkpoint_every = 100;
  base.train.workers = 1;
  base.render.workers = 1;
  std::ostringstream log;
  app::run_oracle_gen(base, log);
  for (const char* run : {"a", "b"}) {
    auto c = base;
    c.out_dir = root / run;
    app::run_train(c, log);
    app::run_render(c, false, log);
  }
  std::size_t compared = 0, differing = 0;
  for (const auto& entry : fs::recursive_directory_iterator(root / "a")) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), root / "a");
    ++compared;
    const auto other = root / "b" / rel;
    if (!fs::exists(other) || slurp(entry.path()) != slurp(other)) {
      ++differing;
      std::cout << "  differs: " << rel.string() << std::endl;
    }
  }
  const bool has_ckpt = fs::exists(root / "a/final.rfld");
  return {has_ckpt && compared > 0 && differing == 0,
          std::to_string(compared) + " files (checkpoints, logs, renders) compared, " + std::to_string(differing) +
              " differ"};
}

}  // namespace

int main(int argc, char** argv) {
  app::retain_heap();
  app::flush_denormals();
  const std::map<int, std::function<Outcome()>> criteria{
      {1, vmf_expectation},     {2, recurrence},           {3, approximation},
      {4, gradients},           {5, quadrature},           {6, reflection_ordering},
      {7, orientation_ordering}, {8, edit_semantics},      {9, determinism},
  };
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
  if (selected.empty())
    for (const auto& [n, fn] : criteria) selected.push_back(n);

  bool all = true;
  for (int n : selected) {
    const auto it = criteria.find(n);
    if (it == criteria.end()) {
      std::cerr << "acceptance: unknown criterion " << n << "\n";
      return 2;
    }
    Outcome o;
    try {
      o = it->second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    std::cout << "criterion " << n << " " << (o.pass ? "PASS" : "FAIL") << ": " << o.detail << std::endl;
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
