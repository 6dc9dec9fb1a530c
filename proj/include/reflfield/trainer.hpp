#pragma once

// Optimization: log-linear learning rate with warmup, Adam, global-norm
// clipping, seeded ray batching, checkpoints and the loss log.

#include "reflfield/losses.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace reflfield::train {

using ad::Matrix;

struct TrainConfig {
  int iterations = 3000;
  int batch_rays = 1024;
  int samples = 64;
  int importance_samples = 0;
  double lr_init = 2e-3;
  double lr_final = 2e-5;
  int warmup_steps = 512;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-6;
  double clip_norm = 1e-3;
  std::uint64_t seed = 0;
  loss::LossWeights weights{};
  loss::GradientStop gradient_stop = loss::GradientStop::none;
  int checkpoint_every = 500;
  int workers = 1;
  Rgb background = Rgb::Ones();

  void validate() const {
    if (!(iterations > warmup_steps && warmup_steps >= 0)) {
      fail("TrainConfig: need iterations > warmup >= 0, got ", iterations, " and ", warmup_steps);
    }
    if (!(lr_init >= lr_final && lr_final > 0.0)) fail("TrainConfig: need lr_init >= lr_final > 0");
    if (batch_rays < 1) fail("TrainConfig: batch size must be >= 1");
    if (samples < 2) fail("TrainConfig: need at least 2 samples per ray");
    if (importance_samples < 0) fail("TrainConfig: importance samples must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && epsilon > 0.0)) {
      fail("TrainConfig: invalid Adam hyperparameters");
    }
    if (!(clip_norm > 0.0)) fail("TrainConfig: clip norm must be > 0");
    if (checkpoint_every < 1) fail("TrainConfig: checkpoint interval must be >= 1");
    if (workers < 1) fail("TrainConfig: need at least one worker");
    weights.validate();
  }
};

/// exp((1-s) ln lr_init + s ln lr_final) * min(1, step/warmup), s = step/iterations.
inline double lr_at(int step, const TrainConfig& cfg) {
  if (step < 0 || step >= cfg.iterations) fail("lr_at: step ", step, " outside [0, ", cfg.iterations, ")");
  const double s = static_cast<double>(step) / cfg.iterations;
  const double base = std::exp((1.0 - s) * std::log(cfg.lr_init) + s * std::log(cfg.lr_final));
  const double ramp = cfg.warmup_steps > 0 ? std::min(1.0, static_cast<double>(step) / cfg.warmup_steps) : 1.0;
  return base * ramp;
}

// --------------------------------------------------------------- optimizer

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-6;
};

template <typename Real>
struct AdamState {
  std::vector<Matrix<Real>> m, v;
  long step = 0;

  static AdamState zeros_for(const std::vector<Matrix<Real>*>& params) {
    AdamState s;
    for (const auto* p : params) {
      s.m.push_back(Matrix<Real>::Zero(p->rows(), p->cols()));
      s.v.push_back(Matrix<Real>::Zero(p->rows(), p->cols()));
    }
    return s;
  }
};

/// Bias-corrected Adam: theta -= lr * mhat / (sqrt(vhat) + eps).
template <typename Real>
void adam_step(const std::vector<Matrix<Real>*>& params, const std::vector<const Matrix<Real>*>& grads,
               AdamState<Real>& state, double lr, const AdamHyper& h = {}) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    fail("adam_step: ", params.size(), " parameters, ", grads.size(), " gradients, ", state.m.size(), " moments");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& g = *grads[i];
    if (g.rows() != params[i]->rows() || g.cols() != params[i]->cols() || state.m[i].rows() != g.rows() ||
        state.m[i].cols() != g.cols()) {
      fail("adam_step: tensor ", i, " parameter [", params[i]->rows(), "x", params[i]->cols(), "] vs gradient [",
           g.rows(), "x", g.cols(), "]");
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  const auto b1 = static_cast<Real>(h.beta1), b2 = static_cast<Real>(h.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& g = *grads[i];
    state.m[i] = b1 * state.m[i] + (Real(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (Real(1) - b2) * g.cwiseProduct(g);
    const auto mhat = (state.m[i].array() / static_cast<Real>(c1));
    const auto vhat = (state.v[i].array() / static_cast<Real>(c2));
    params[i]->array() -= static_cast<Real>(lr) * mhat / (vhat.sqrt() + static_cast<Real>(h.epsilon));
  }
}

/// Scales every gradient by max_norm/g when the global norm g exceeds
/// max_norm. Returns the norm before clipping.
template <typename Real>
double clip_gradients(const std::vector<Matrix<Real>*>& grads, double max_norm) {
  if (!(max_norm > 0.0)) fail("clip_gradients: max norm must be > 0");
  double sq = 0.0;
  for (const auto* g : grads) sq += g->template cast<double>().squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const auto s = static_cast<Real>(max_norm / norm);
    for (auto* g : grads) *g *= s;
  }
  return norm;
}

template <typename Real>
std::vector<Matrix<Real>*> tensors_of(field::FieldParams<Real>& p) {
  std::vector<Matrix<Real>*> out;
  p.for_each_tensor([&out](Matrix<Real>& m) { out.push_back(&m); });
  return out;
}

// ------------------------------------------------------------- checkpoints

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

/// Every setting that shapes training, one key=value per line.
inline std::string canonical_config(const field::FieldConfig& f, const TrainConfig& t) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "spatial=" << f.spatial_depth << "x" << f.spatial_width << "\ndirectional=" << f.directional_depth << "x"
     << f.directional_width << "\npe_levels=" << f.pe_levels << "\ndirection_pe_levels=" << f.direction_pe_levels
     << "\ndegrees=";
  for (int d : f.degrees.degrees()) os << d << ",";
  os << "\nbottleneck=" << f.bottleneck_width << "\nuse_reflection=" << f.use_reflection
     << "\nencoding=" << field::to_string(f.encoding) << "\nconcat_viewdir=" << f.concat_viewdir
     << "\ninput_ndotwo=" << f.input_ndotwo << "\nuse_diffuse=" << f.use_diffuse << "\nuse_tint=" << f.use_tint
     << "\nuse_roughness=" << f.use_roughness << "\nuse_predicted_normals=" << f.use_predicted_normals
     << "\nbottleneck_noise=" << f.bottleneck_noise << "\niterations=" << t.iterations << "\nbatch_rays=" << t.batch_rays
     << "\nsamples=" << t.samples << "\nimportance_samples=" << t.importance_samples << "\nlr=" << t.lr_init << ","
     << t.lr_final << "\nwarmup=" << t.warmup_steps << "\nadam=" << t.beta1 << "," << t.beta2 << "," << t.epsilon
     << "\nclip_norm=" << t.clip_norm << "\nseed=" << t.seed << "\nlambda_p=" << t.weights.lambda_p
     << "\nlambda_o=" << t.weights.lambda_o << "\ngradient_stop=" << loss::to_string(t.gradient_stop)
     << "\nworkers=" << t.workers << "\nbackground=" << t.background.transpose() << "\n";
  return os.str();
}

template <typename Real>
void save_checkpoint(const std::filesystem::path& path, const field::FieldParams<Real>& p) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail("cannot write checkpoint ", path.string());
  ad::write_checkpoint<Real>(os, {&p.spatial, &p.directional});
}

template <typename Real>
field::FieldParams<Real> load_checkpoint(const std::filesystem::path& path, const field::FieldConfig& cfg) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("cannot open checkpoint ", path.string());
  auto p = field::init_field<Real>(cfg, 0);
  try {
    ad::assign_checkpoint<Real>(ad::read_checkpoint(is), {&p.spatial, &p.directional});
  } catch (const Error& e) {
    fail(path.string(), ": ", e.what());
  }
  return p;
}

// ------------------------------------------------------------------- loop

/// Training rays with their target colors (display space, [0,1]).
struct RayPool {
  std::vector<render::Ray> rays;
  std::vector<Rgb> colors;
};

struct LogRow {
  int step = 0;
  double data = 0, rp = 0, ro = 0, total = 0, lr = 0;
  double grad_norm = 0;  // before clipping
};

inline std::string format_log_row(const LogRow& r) {
  std::ostringstream os;
  os << std::setprecision(9) << r.step << " " << r.data << " " << r.rp << " " << r.ro << " " << r.total << " " << r.lr << " " << r.grad_norm;
  return os.str();
}

struct TrainResult {
  field::FieldParams<float> params;
  std::vector<LogRow> log;
};

struct TrainOutputs {
  std::filesystem::path out_dir;  // empty: nothing written
  std::function<void(const LogRow&)> on_step;
};

namespace detail {

struct WorkerResult {
  field::FieldParams<float> grads;
  double data = 0, rp = 0, ro = 0, total = 0;
};

// One worker's share of a batch: losses are per-ray means over the shard,
// rescaled by shard/batch so the shards sum to the batch mean.
inline WorkerResult run_shard(const field::FieldParams<float>& params, const field::FieldConfig& fcfg,
                              const TrainConfig& cfg, std::span<const render::Ray> rays,
                              const Matrix<float>& gt, std::uint64_t seed, double share) {
  std::mt19937_64 rng(seed);
  ad::Tape<float> tape;
  const auto bound = field::bind(tape, params, true);
  render::RenderOptions opt;
  opt.samples = cfg.samples;
  opt.importance_samples = cfg.importance_samples;
  opt.mode = field::Mode::train;
  opt.rng = &rng;
  opt.background = cfg.background;
  opt.density_normals = cfg.weights.lambda_p != 0.0 || !fcfg.use_predicted_normals;
  const auto batch = render::render_rays(bound, fcfg, rays, opt);
  const auto bl = loss::batch_loss(batch, gt, cfg.weights, cfg.gradient_stop);
  const auto scaled = ad::scale(bl.total, static_cast<float>(share));
  tape.backward(scaled);
  WorkerResult r;
  r.grads = field::collect_gradients(bound);
  r.data = share * bl.data.value()(0, 0);
  r.rp = bl.rp.valid() ? share * bl.rp.value()(0, 0) : 0.0;
  r.ro = bl.ro.valid() ? share * bl.ro.value()(0, 0) : 0.0;
  r.total = share * bl.total.value()(0, 0);
  return r;
}

inline void write_sidecar(const std::filesystem::path& path, int step, std::uint64_t hash) {
  std::ofstream os(path);
  if (!os) fail("cannot write ", path.string());
  os << "step=" << step << "\nconfig_hash=" << std::hex << std::setw(16) << std::setfill('0') << hash << "\n";
}

}  // namespace detail

/// Trains a field from scratch (or from `initial`) on the ray pool.
inline TrainResult train(const RayPool& pool, const field::FieldConfig& fcfg, const TrainConfig& cfg,
                         const TrainOutputs& out = {}, const field::FieldParams<float>* initial = nullptr) {
  fcfg.validate();
  cfg.validate();
  if (pool.rays.empty() || pool.rays.size() != pool.colors.size()) {
    fail("train: need a non-empty ray pool with one color per ray (", pool.rays.size(), " rays, ", pool.colors.size(),
         " colors)");
  }
  TrainResult res;
  res.params = initial ? *initial : field::init_field<float>(fcfg, cfg.seed);
  res.params.check_against(fcfg);
  auto tensors = tensors_of(res.params);
  auto adam = AdamState<float>::zeros_for(tensors);
  const AdamHyper hyper{cfg.beta1, cfg.beta2, cfg.epsilon};
  const std::uint64_t hash = fnv1a(canonical_config(fcfg, cfg));

  std::ofstream log;
  if (!out.out_dir.empty()) {
    std::filesystem::create_directories(out.out_dir);
    log.open(out.out_dir / "loss_log.txt");
    if (!log) fail("cannot write ", (out.out_dir / "loss_log.txt").string());
    log << "# step data rp ro total lr grad_norm\n";
  }
  auto checkpoint = [&](int step, const std::string& name) {
    if (out.out_dir.empty()) return;
    save_checkpoint(out.out_dir / (name + ".rfld"), res.params);
    detail::write_sidecar(out.out_dir / (name + ".txt"), step, hash);
  };

  std::mt19937_64 master(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  std::uniform_int_distribution<std::size_t> pick(0, pool.rays.size() - 1);
  const int B = cfg.batch_rays;
  const int W = std::min(cfg.workers, B);
  std::vector<render::Ray> rays(static_cast<std::size_t>(B));
  Matrix<float> gt(B, 3);

  for (int step = 0; step < cfg.iterations; ++step) {
    for (int i = 0; i < B; ++i) {
      const auto k = pick(master);
      rays[static_cast<std::size_t>(i)] = pool.rays[k];
      for (int j = 0; j < 3; ++j) gt(i, j) = static_cast<float>(pool.colors[k](j));
    }
    std::vector<std::uint64_t> seeds(static_cast<std::size_t>(W));
    for (auto& s : seeds) s = master();

    std::vector<detail::WorkerResult> parts(static_cast<std::size_t>(W));
    auto shard = [&](int w) {
      const int begin = B * w / W, end = B * (w + 1) / W;
      parts[static_cast<std::size_t>(w)] = detail::run_shard(
          res.params, fcfg, cfg, std::span<const render::Ray>(rays.data() + begin, static_cast<std::size_t>(end - begin)),
          Matrix<float>(gt.middleRows(begin, end - begin)), seeds[static_cast<std::size_t>(w)],
          static_cast<double>(end - begin) / B);
    };
    if (W == 1) {
      shard(0);
    } else {
      std::vector<std::jthread> pool_threads;
      for (int w = 0; w < W; ++w) pool_threads.emplace_back(shard, w);
    }

    // Fixed-order reduction.
    auto grads = std::move(parts[0].grads);
    LogRow row{step, parts[0].data, parts[0].rp, parts[0].ro, parts[0].total, lr_at(step, cfg)};
    auto gt_tensors = tensors_of(grads);
    for (int w = 1; w < W; ++w) {
      auto other = tensors_of(parts[static_cast<std::size_t>(w)].grads);
      for (std::size_t i = 0; i < gt_tensors.size(); ++i) *gt_tensors[i] += *other[i];
      row.data += parts[static_cast<std::size_t>(w)].data;
      row.rp += parts[static_cast<std::size_t>(w)].rp;
      row.ro += parts[static_cast<std::size_t>(w)].ro;
      row.total += parts[static_cast<std::size_t>(w)].total;
    }
    if (!std::isfinite(row.total)) fail("training diverged: non-finite loss at step ", step);

    row.grad_norm = clip_gradients(gt_tensors, cfg.clip_norm);
    std::vector<const Matrix<float>*> cgrads(gt_tensors.begin(), gt_tensors.end());
    adam_step(tensors, cgrads, adam, row.lr, hyper);

    res.log.push_back(row);
    if (log) log << format_log_row(row) << "\n";
    if (out.on_step) out.on_step(row);
    if ((step + 1) % cfg.checkpoint_every == 0 && step + 1 < cfg.iterations) {
      std::ostringstream name;
      name << "ckpt_" << std::setw(6) << std::setfill('0') << step + 1;
      checkpoint(step + 1, name.str());
    }
  }
  checkpoint(cfg.iterations, "final");
  return res;
}

}  // namespace reflfield::train
