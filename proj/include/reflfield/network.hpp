#pragma once

// Dense ReLU networks on the autodiff tape, the masked-Jacobian construction
// of input gradients, and the little-endian parameter checkpoint format.

#include "reflfield/autodiff.hpp"

#include <array>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <random>
#include <string>
#include <vector>

namespace reflfield::ad {

enum class Activation : std::uint8_t { linear = 0, relu = 1 };

template <typename Real>
struct DenseLayer {
  Matrix<Real> weight;  // [out x in]
  Matrix<Real> bias;    // [1 x out]
  Activation activation = Activation::linear;
};

template <typename Real>
struct DenseNetwork {
  std::vector<DenseLayer<Real>> layers;

  Eigen::Index input_width() const { return layers.empty() ? 0 : layers.front().weight.cols(); }
  Eigen::Index output_width() const { return layers.empty() ? 0 : layers.back().weight.rows(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

  void validate() const {
    if (layers.empty()) fail("DenseNetwork: no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      if (l.bias.rows() != 1 || l.bias.cols() != l.weight.rows()) {
        fail("DenseNetwork: layer ", i, " bias [", l.bias.rows(), "x", l.bias.cols(), "] does not match weight [",
             l.weight.rows(), "x", l.weight.cols(), "]");
      }
      if (i > 0 && layers[i - 1].weight.rows() != l.weight.cols()) {
        fail("DenseNetwork: layer ", i, " expects width ", l.weight.cols(), " but layer ", i - 1, " produces ",
             layers[i - 1].weight.rows());
      }
    }
  }

  template <typename To>
  DenseNetwork<To> cast() const {
    DenseNetwork<To> out;
    for (const auto& l : layers) out.layers.push_back({l.weight.template cast<To>(), l.bias.template cast<To>(), l.activation});
    return out;
  }

  /// Same shapes, all zeros (gradient accumulators, optimizer moments).
  DenseNetwork zeros_like() const {
    DenseNetwork out = *this;
    for (auto& l : out.layers) {
      l.weight.setZero();
      l.bias.setZero();
    }
    return out;
  }
};

/// ReLU hidden layers (He-uniform) and a linear output layer (Xavier-uniform);
/// biases start at zero.
template <typename Real, typename Rng>
DenseNetwork<Real> make_mlp(int input_width, int hidden_width, int hidden_layers, int output_width, Rng& rng) {
  if (input_width < 1 || hidden_width < 1 || hidden_layers < 1 || output_width < 1) {
    fail("make_mlp: widths and depth must be >= 1");
  }
  auto uniform_fill = [&rng](Matrix<Real>& m, double limit) {
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Real>(dist(rng));
  };
  DenseNetwork<Real> net;
  int in = input_width;
  for (int i = 0; i < hidden_layers; ++i) {
    DenseLayer<Real> l{Matrix<Real>(hidden_width, in), Matrix<Real>::Zero(1, hidden_width), Activation::relu};
    uniform_fill(l.weight, std::sqrt(6.0 / in));
    net.layers.push_back(std::move(l));
    in = hidden_width;
  }
  DenseLayer<Real> head{Matrix<Real>(output_width, in), Matrix<Real>::Zero(1, output_width), Activation::linear};
  uniform_fill(head.weight, std::sqrt(6.0 / (in + output_width)));
  net.layers.push_back(std::move(head));
  return net;
}

/// A network whose parameters have been placed on a tape.
template <typename Real>
struct BoundNetwork {
  const DenseNetwork<Real>* network = nullptr;
  std::vector<Var<Real>> weights;
  std::vector<Var<Real>> biases;
};

/// Registers every parameter once per tape; trainable parameters become
/// gradient-collecting leaves, otherwise constants.
template <typename Real>
BoundNetwork<Real> bind(Tape<Real>& tape, const DenseNetwork<Real>& net, bool trainable) {
  net.validate();
  BoundNetwork<Real> b;
  b.network = &net;
  for (const auto& l : net.layers) {
    b.weights.push_back(trainable ? tape.leaf(l.weight) : tape.constant(l.weight));
    b.biases.push_back(trainable ? tape.leaf(l.bias) : tape.constant(l.bias));
  }
  return b;
}

/// Gradients of every parameter after Tape::backward, shaped like the network.
template <typename Real>
DenseNetwork<Real> collect_gradients(const BoundNetwork<Real>& b) {
  DenseNetwork<Real> g = b.network->zeros_like();
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    if (b.weights[i].grad().size() != 0) g.layers[i].weight = b.weights[i].grad();
    if (b.biases[i].grad().size() != 0) g.layers[i].bias = b.biases[i].grad();
  }
  return g;
}

template <typename Real>
struct ForwardTrace {
  Var<Real> output;
  /// 1 where a ReLU unit was active, per hidden layer ([N x width]).
  std::vector<Matrix<Real>> active;
};

template <typename Real>
ForwardTrace<Real> forward_traced(const BoundNetwork<Real>& b, const Var<Real>& input) {
  const auto& layers = b.network->layers;
  if (input.cols() != b.network->input_width()) {
    fail("forward: input width ", input.cols(), " does not match network input width ", b.network->input_width());
  }
  ForwardTrace<Real> trace;
  Var<Real> h = input;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    Var<Real> z = linear(h, b.weights[i], b.biases[i]);
    if (layers[i].activation == Activation::relu) {
      trace.active.push_back((z.value().array() > Real(0)).template cast<Real>().matrix());
      h = relu(z);
    } else {
      h = z;
    }
  }
  trace.output = h;
  return trace;
}

template <typename Real>
Var<Real> forward(const BoundNetwork<Real>& b, const Var<Real>& input) {
  return forward_traced(b, input).output;
}

/// Pushes input-space tangents through the network: for a ReLU network the
/// Jacobian is W_L D_{L-1} W_{L-1} ... D_1 W_1 with D_k the activity masks of
/// the traced forward pass. Tangent rows are interleaved `dims` per input row
/// (row dims*i + j belongs to input row i). Built from ordinary tape ops, so
/// losses on the result differentiate back into the weights.
template <typename Real>
Var<Real> propagate_tangents(const BoundNetwork<Real>& b, const ForwardTrace<Real>& trace, const Var<Real>& tangents,
                             Eigen::Index dims) {
  const auto& layers = b.network->layers;
  Var<Real> t = tangents;
  std::size_t mask_index = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    t = matmul_nt(t, b.weights[i]);
    if (layers[i].activation == Activation::relu) {
      const auto& m = trace.active[mask_index++];
      Matrix<Real> tiled(m.rows() * dims, m.cols());
      for (Eigen::Index r = 0; r < m.rows(); ++r) tiled.middleRows(r * dims, dims) = m.row(r).replicate(dims, 1);
      t = mul_const(t, std::move(tiled));
    }
  }
  return t;
}

template <typename Real>
struct SpatialGradient {
  ForwardTrace<Real> trace;  // forward pass at the query points
  Var<Real> gradient;        // [N x 3], d output[column] / d x
};

/// Gradient of one output column of net(PE(x)) w.r.t. the 3-D input points,
/// as a differentiable tape value.
template <typename Real>
SpatialGradient<Real> spatial_gradient(const BoundNetwork<Real>& b, const Matrix<Real>& points, int pe_levels,
                                       Eigen::Index column) {
  if (points.cols() != 3) fail("spatial_gradient: points must be [N x 3], got [", points.rows(), "x", points.cols(), "]");
  auto& tape = b.weights.front().tape();
  SpatialGradient<Real> out;
  const Var<Real> encoded = tape.constant(positional_encoding_values(points, pe_levels));
  out.trace = forward_traced(b, encoded);
  const Var<Real> seeds = tape.constant(positional_encoding_tangents(points, pe_levels));
  const Var<Real> tangents = propagate_tangents(b, out.trace, seeds, 3);
  out.gradient = reshape(slice_cols(tangents, column, 1), points.rows(), 3);
  return out;
}

// ---------------------------------------------------------------- checkpoint
//
// Little-endian: "RFLD", u32 version, u32 layer count, then per layer
// u32 rows (out), u32 cols (in), rows*cols f32 weights (row-major),
// rows f32 bias. Activations are not stored; they follow the configuration.

inline constexpr std::array<char, 4> kCheckpointMagic{'R', 'F', 'L', 'D'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b.data(), 4);
}

inline void put_f32(std::ostream& os, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(os, v);
}

inline std::uint32_t get_u32(std::istream& is) {
  std::array<unsigned char, 4> b{};
  is.read(reinterpret_cast<char*>(b.data()), 4);
  if (!is) fail("checkpoint: unexpected end of data");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline float get_f32(std::istream& is) {
  const std::uint32_t v = get_u32(is);
  float f;
  std::memcpy(&f, &v, 4);
  return f;
}

}  // namespace detail

/// Writes the layers of several networks back to back as one layer list.
template <typename Real>
void write_checkpoint(std::ostream& os, const std::vector<const DenseNetwork<Real>*>& networks) {
  std::uint32_t count = 0;
  for (const auto* n : networks) count += static_cast<std::uint32_t>(n->layers.size());
  os.write(kCheckpointMagic.data(), 4);
  detail::put_u32(os, kCheckpointVersion);
  detail::put_u32(os, count);
  for (const auto* n : networks) {
    for (const auto& l : n->layers) {
      detail::put_u32(os, static_cast<std::uint32_t>(l.weight.rows()));
      detail::put_u32(os, static_cast<std::uint32_t>(l.weight.cols()));
      for (Eigen::Index i = 0; i < l.weight.size(); ++i) detail::put_f32(os, static_cast<float>(l.weight.data()[i]));
      for (Eigen::Index i = 0; i < l.bias.size(); ++i) detail::put_f32(os, static_cast<float>(l.bias.data()[i]));
    }
  }
  if (!os) fail("checkpoint: write failed");
}

/// Reads a layer list; activations are left as linear.
inline std::vector<DenseLayer<float>> read_checkpoint(std::istream& is) {
  std::array<char, 4> magic{};
  is.read(magic.data(), 4);
  if (!is || magic != kCheckpointMagic) fail("checkpoint: bad magic (expected RFLD)");
  const auto version = detail::get_u32(is);
  if (version != kCheckpointVersion) fail("checkpoint: unsupported version ", version);
  const auto count = detail::get_u32(is);
  std::vector<DenseLayer<float>> layers;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto rows = detail::get_u32(is), cols = detail::get_u32(is);
    if (rows == 0 || cols == 0 || rows > (1u << 16) || cols > (1u << 16)) {
      fail("checkpoint: implausible layer ", i, " shape ", rows, "x", cols);
    }
    DenseLayer<float> l{Matrix<float>(rows, cols), Matrix<float>(1, rows), Activation::linear};
    for (Eigen::Index k = 0; k < l.weight.size(); ++k) l.weight.data()[k] = detail::get_f32(is);
    for (Eigen::Index k = 0; k < l.bias.size(); ++k) l.bias.data()[k] = detail::get_f32(is);
    layers.push_back(std::move(l));
  }
  return layers;
}

/// Copies a flat layer list into existing networks, checking every shape.
template <typename Real>
void assign_checkpoint(const std::vector<DenseLayer<float>>& layers, const std::vector<DenseNetwork<Real>*>& networks) {
  std::size_t k = 0;
  for (auto* n : networks) {
    for (auto& l : n->layers) {
      if (k >= layers.size()) fail("checkpoint: holds ", layers.size(), " layers, configuration needs more");
      const auto& src = layers[k];
      if (src.weight.rows() != l.weight.rows() || src.weight.cols() != l.weight.cols()) {
        fail("checkpoint: layer ", k, " is ", src.weight.rows(), "x", src.weight.cols(), ", configuration expects ",
             l.weight.rows(), "x", l.weight.cols());
      }
      l.weight = src.weight.template cast<Real>();
      l.bias = src.bias.template cast<Real>();
      ++k;
    }
  }
  if (k != layers.size()) fail("checkpoint: holds ", layers.size(), " layers, configuration expects ", k);
}

}  // namespace reflfield::ad
