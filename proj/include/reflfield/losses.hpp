#pragma once

// Training objectives: photometric data loss, the predicted-normal penalty
// R_p and the orientation penalty R_o, each averaged over rays.

#include "reflfield/renderer.hpp"

#include <span>
#include <string>

namespace reflfield::loss {

using ad::Matrix;
using ad::Var;

struct LossWeights {
  double lambda_p = 3e-4;
  double lambda_o = 0.1;

  void validate() const {
    if (!(lambda_p >= 0.0) || !(lambda_o >= 0.0)) fail("LossWeights: weights must be >= 0");
  }
};

/// Where the regularizers cut the gradient. none: through everything.
enum class GradientStop { none, weights, density_normals };

inline GradientStop gradient_stop_from_string(const std::string& s) {
  if (s == "none") return GradientStop::none;
  if (s == "weights") return GradientStop::weights;
  if (s == "density_normals") return GradientStop::density_normals;
  fail("unknown gradient stop '", s, "' (expected none, weights or density_normals)");
}

inline const char* to_string(GradientStop g) {
  switch (g) {
    case GradientStop::none: return "none";
    case GradientStop::weights: return "weights";
    case GradientStop::density_normals: return "density_normals";
  }
  return "?";
}

// ------------------------------------------------------------ plain values

inline double data_loss(std::span<const Rgb> pred, std::span<const Rgb> gt) {
  if (pred.size() != gt.size()) fail("data_loss: ", pred.size(), " predictions for ", gt.size(), " targets");
  if (pred.empty()) fail("data_loss: empty batch");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - gt[i]).matrix().squaredNorm();
  return s / static_cast<double>(pred.size());
}

/// One ray: sum_i w_i |n_i - n'_i|^2.
inline double predicted_normal_loss(std::span<const double> w, std::span<const Vec3> n, std::span<const Vec3> np) {
  if (w.size() != n.size() || w.size() != np.size()) {
    fail("predicted_normal_loss: ", w.size(), " weights, ", n.size(), " density normals, ", np.size(),
         " predicted normals");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * (n[i] - np[i]).squaredNorm();
  return s;
}

/// One ray: sum_i w_i max(0, n'_i . d)^2.
inline double orientation_loss(std::span<const double> w, std::span<const Vec3> np, const UnitVector3& d) {
  if (w.size() != np.size()) fail("orientation_loss: ", w.size(), " weights for ", np.size(), " normals");
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double c = std::max(0.0, np[i].dot(d.vec()));
    s += w[i] * c * c;
  }
  return s;
}

inline double total_loss(double data, double rp, double ro, const LossWeights& lw) {
  return data + lw.lambda_p * rp + lw.lambda_o * ro;
}

// ------------------------------------------------------------- tape values

/// mean_r |C_r - C_gt,r|^2 for [R x 3] colors.
template <typename Real>
Var<Real> data_loss(const Var<Real>& pred, const Matrix<Real>& gt) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols()) {
    fail("data_loss: predictions [", pred.rows(), "x", pred.cols(), "] vs targets [", gt.rows(), "x", gt.cols(), "]");
  }
  return ad::scale(ad::sum_all(ad::square(ad::add_const(pred, Matrix<Real>(-gt)))), Real(1) / Real(pred.rows()));
}

/// weights [R x S]; normals [R*S x 3], ray-major.
template <typename Real>
Var<Real> predicted_normal_loss(const Var<Real>& weights, const Var<Real>& density_normals,
                                const Var<Real>& predicted_normals) {
  if (density_normals.rows() != weights.rows() * weights.cols() || predicted_normals.rows() != density_normals.rows()) {
    fail("predicted_normal_loss: weights [", weights.rows(), "x", weights.cols(), "] vs normals [",
         density_normals.rows(), "x3] and [", predicted_normals.rows(), "x3]");
  }
  const auto per_sample = ad::sum_rows(ad::square(ad::sub(density_normals, predicted_normals)));
  return ad::scale(ad::sum_all(ad::weighted_row_sum(weights, per_sample)), Real(1) / Real(weights.rows()));
}

/// view_dirs [R*S x 3] are the ray directions d of each sample.
template <typename Real>
Var<Real> orientation_loss(const Var<Real>& weights, const Var<Real>& predicted_normals, const Matrix<Real>& view_dirs) {
  if (predicted_normals.rows() != weights.rows() * weights.cols() || view_dirs.rows() != predicted_normals.rows()) {
    fail("orientation_loss: weights [", weights.rows(), "x", weights.cols(), "] vs normals [",
         predicted_normals.rows(), "x3] and directions [", view_dirs.rows(), "x3]");
  }
  const auto facing = ad::relu(ad::dot_rows(predicted_normals, weights.tape().constant(view_dirs)));
  return ad::scale(ad::sum_all(ad::weighted_row_sum(weights, ad::square(facing))), Real(1) / Real(weights.rows()));
}

template <typename Real>
Var<Real> total_loss(const Var<Real>& data, const Var<Real>* rp, const Var<Real>* ro, const LossWeights& lw) {
  Var<Real> t = data;
  if (rp && lw.lambda_p != 0.0) t = ad::add(t, ad::scale(*rp, static_cast<Real>(lw.lambda_p)));
  if (ro && lw.lambda_o != 0.0) t = ad::add(t, ad::scale(*ro, static_cast<Real>(lw.lambda_o)));
  return t;
}

template <typename Real>
struct BatchLoss {
  Var<Real> data;
  Var<Real> rp;  // invalid when lambda_p = 0
  Var<Real> ro;  // invalid when lambda_o = 0
  Var<Real> total;
};

/// All three terms for a rendered batch against [R x 3] target colors.
template <typename Real>
BatchLoss<Real> batch_loss(const render::RayBatch<Real>& b, const Matrix<Real>& gt, const LossWeights& lw,
                           GradientStop stop = GradientStop::none) {
  lw.validate();
  BatchLoss<Real> l;
  l.data = data_loss(b.color, gt);
  const Var<Real> w = stop == GradientStop::weights ? ad::detach(b.weights) : b.weights;
  if (lw.lambda_p != 0.0) {
    if (!b.points.density_normal.valid()) fail("batch_loss: R_p needs density normals in the rendered batch");
    const Var<Real> n = stop == GradientStop::density_normals ? ad::detach(b.points.density_normal)
                                                                : b.points.density_normal;
    l.rp = predicted_normal_loss(w, n, b.points.predicted_normal);
  }
  if (lw.lambda_o != 0.0) l.ro = orientation_loss(w, b.points.predicted_normal, b.dirs);
  l.total = total_loss(l.data, l.rp.valid() ? &l.rp : nullptr, l.ro.valid() ? &l.ro : nullptr, lw);
  return l;
}

}  // namespace reflfield::loss
