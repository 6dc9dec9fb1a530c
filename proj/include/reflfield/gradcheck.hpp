#pragma once

// Central finite differences against tape gradients, 64-bit.

#include "reflfield/autodiff.hpp"

#include <algorithm>
#include <functional>
#include <vector>

namespace reflfield::gradcheck {

using M = reflfield::ad::Matrix<double>;
using V = reflfield::ad::Var<double>;
using T = reflfield::ad::Tape<double>;
using Fn = std::function<V(T&, const std::vector<V>&)>;

inline double evaluate(const Fn& f, const std::vector<M>& inputs) {
  T tape;
  std::vector<V> leaves;
  for (const auto& m : inputs) leaves.push_back(tape.constant(m));
  return f(tape, leaves).value()(0, 0);
}

/// Largest per-input relative error ||analytic - numeric|| / max(||numeric||, floor).
inline double max_relative_error(const Fn& f, const std::vector<M>& inputs, double h = 1e-5, double floor = 1e-8) {
  T tape;
  std::vector<V> leaves;
  for (const auto& m : inputs) leaves.push_back(tape.leaf(m));
  tape.backward(f(tape, leaves));
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    M analytic = leaves[k].grad();
    if (analytic.size() == 0) analytic = M::Zero(inputs[k].rows(), inputs[k].cols());
    M numeric(inputs[k].rows(), inputs[k].cols());
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      auto plus = inputs, minus = inputs;
      plus[k].data()[i] += h;
      minus[k].data()[i] -= h;
      numeric.data()[i] = (evaluate(f, plus) - evaluate(f, minus)) / (2 * h);
    }
    const double scale = std::max(numeric.norm(), floor);
    worst = std::max(worst, (analytic - numeric).norm() / scale);
  }
  return worst;
}

}  // namespace reflfield::gradcheck
