#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cegan/autodiff.hpp"
#include "cegan/rng.hpp"
#include "cegan/tensor.hpp"

namespace cegan {

enum class Activation : std::uint8_t { Relu = 0, Tanh = 1 };
enum class OutputActivation : std::uint8_t { Identity = 0, Tanh = 1 };

/// Dense network architecture: layer sizes plus activation choices.
struct MlpSpec {
  std::vector<std::size_t> layer_sizes;
  Activation hidden_activation = Activation::Relu;
  OutputActivation output_activation = OutputActivation::Identity;

  void validate() const {
    if (layer_sizes.size() < 2)
      throw std::invalid_argument("MlpSpec: need at least 2 layers");
    for (std::size_t s : layer_sizes)
      if (s == 0) throw std::invalid_argument("MlpSpec: layer sizes must be positive");
  }

  std::size_t layer_count() const { return layer_sizes.size() - 1; }
  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t output_dim() const { return layer_sizes.back(); }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l)
      n += layer_sizes[l] * layer_sizes[l + 1] + layer_sizes[l + 1];
    return n;
  }

  /// Offset of layer l's weight block in the flat parameter vector.
  std::size_t weight_offset(std::size_t l) const {
    std::size_t off = 0;
    for (std::size_t i = 0; i < l; ++i)
      off += layer_sizes[i] * layer_sizes[i + 1] + layer_sizes[i + 1];
    return off;
  }
  std::size_t bias_offset(std::size_t l) const {
    return weight_offset(l) + layer_sizes[l] * layer_sizes[l + 1];
  }

  bool operator==(const MlpSpec&) const = default;
};

/// Flat parameter vector; layout is per layer (weights row-major in x out,
/// then bias) in layer order.
struct ParamVector {
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  bool operator==(const ParamVector&) const = default;
};

struct AdamState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::uint64_t step_count = 0;

  static AdamState zeros(std::size_t n) {
    AdamState s;
    s.first_moment.assign(n, 0.0);
    s.second_moment.assign(n, 0.0);
    return s;
  }
  bool operator==(const AdamState&) const = default;
};

inline constexpr double kAdamEpsilon = 1e-8;

/// Fan-in scaled zero-mean normal init: sqrt(2/fan_in) ahead of relu,
/// sqrt(1/fan_in) otherwise. Biases start at zero.
inline ParamVector init_params(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  ParamVector p;
  p.values.assign(spec.param_count(), 0.0);
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const std::size_t fan_in = spec.layer_sizes[l];
    const std::size_t fan_out = spec.layer_sizes[l + 1];
    const bool last = (l + 1 == spec.layer_count());
    const bool relu_gain = !last && spec.hidden_activation == Activation::Relu;
    const double scale = std::sqrt((relu_gain ? 2.0 : 1.0) / double(fan_in));
    double* w = p.values.data() + spec.weight_offset(l);
    for (std::size_t i = 0; i < fan_in * fan_out; ++i) w[i] = scale * rng.normal();
    // biases stay zero
  }
  return p;
}

/// Handles into a tape-built MLP forward pass.
struct MlpOnTape {
  NodeId input = kNoNode;
  NodeId output = kNoNode;       // after output activation
  NodeId raw_output = kNoNode;   // final pre-activation
  std::vector<NodeId> weights;   // per-layer leaves
  std::vector<NodeId> biases;
  std::vector<NodeId> preacts;   // per-layer pre-activation nodes
  std::vector<NodeId> hiddens;   // per-hidden-layer activation nodes
};

/// Build the network forward pass on a tape. When track_params is false the
/// parameters enter as constants (frozen network inside another objective).
inline MlpOnTape mlp_forward(Tape& tape, const MlpSpec& spec,
                             std::span<const double> params, NodeId input,
                             bool track_params, const std::string& prefix = "") {
  spec.validate();
  if (params.size() != spec.param_count())
    throw std::invalid_argument("mlp_forward: parameter count " +
                                std::to_string(params.size()) + " != expected " +
                                std::to_string(spec.param_count()));
  if (tape.value(input).cols() != spec.input_dim())
    throw std::invalid_argument("mlp_forward: input has " +
                                std::to_string(tape.value(input).cols()) +
                                " columns, spec expects " +
                                std::to_string(spec.input_dim()));
  MlpOnTape net;
  net.input = input;
  NodeId h = input;
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const std::size_t in = spec.layer_sizes[l];
    const std::size_t out = spec.layer_sizes[l + 1];
    Tensor w(in, out);
    for (std::size_t i = 0; i < in * out; ++i) w[i] = params[spec.weight_offset(l) + i];
    Tensor b(1, out);
    for (std::size_t i = 0; i < out; ++i) b[i] = params[spec.bias_offset(l) + i];
    const std::string wname = prefix + "w" + std::to_string(l);
    const std::string bname = prefix + "b" + std::to_string(l);
    NodeId wn = track_params ? tape.leaf(std::move(w), wname)
                             : tape.constant(std::move(w), wname);
    NodeId bn = track_params ? tape.leaf(std::move(b), bname)
                             : tape.constant(std::move(b), bname);
    net.weights.push_back(wn);
    net.biases.push_back(bn);
    NodeId a = tape.add_bias(tape.matmul(h, wn), bn);
    net.preacts.push_back(a);
    if (l + 1 == spec.layer_count()) {
      net.raw_output = a;
      net.output = spec.output_activation == OutputActivation::Tanh ? tape.tanh(a) : a;
    } else {
      h = spec.hidden_activation == Activation::Relu ? tape.relu(a) : tape.tanh(a);
      net.hiddens.push_back(h);
    }
  }
  return net;
}

/// Collect d(root)/d(params) from a tape after backward(), in layout order.
inline std::vector<double> collect_param_grads(const Tape& tape, const MlpSpec& spec,
                                               const MlpOnTape& net) {
  std::vector<double> g(spec.param_count(), 0.0);
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    Tensor wg = tape.grad(net.weights[l]);
    Tensor bg = tape.grad(net.biases[l]);
    double* wdst = g.data() + spec.weight_offset(l);
    for (std::size_t i = 0; i < wg.size(); ++i) wdst[i] = wg[i];
    double* bdst = g.data() + spec.bias_offset(l);
    for (std::size_t i = 0; i < bg.size(); ++i) bdst[i] = bg[i];
  }
  return g;
}

/// Value-level forward pass (no gradients). Shares the matmul kernel with
/// the tape so both paths produce bit-identical outputs.
inline Tensor mlp_value_forward(const MlpSpec& spec, std::span<const double> params,
                                const Tensor& input, bool apply_output_activation = true) {
  spec.validate();
  if (params.size() != spec.param_count())
    throw std::invalid_argument("mlp_value_forward: bad parameter count");
  if (input.cols() != spec.input_dim())
    throw std::invalid_argument("mlp_value_forward: input has " +
                                std::to_string(input.cols()) +
                                " columns, spec expects " +
                                std::to_string(spec.input_dim()));
  Tensor h = input;
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const std::size_t in = spec.layer_sizes[l];
    const std::size_t out = spec.layer_sizes[l + 1];
    Tensor w(in, out);
    const double* wsrc = params.data() + spec.weight_offset(l);
    for (std::size_t i = 0; i < in * out; ++i) w[i] = wsrc[i];
    const double* b = params.data() + spec.bias_offset(l);
    Tensor a(h.rows(), out);
    detail::matmul_acc(h, w, a);
    for (std::size_t r = 0; r < a.rows(); ++r) {
      double* arow = a.row_ptr(r);
      for (std::size_t j = 0; j < out; ++j) arow[j] += b[j];
    }
    if (l + 1 == spec.layer_count()) {
      if (apply_output_activation && spec.output_activation == OutputActivation::Tanh)
        for (auto& v : a.data()) v = std::tanh(v);
      return a;
    }
    if (spec.hidden_activation == Activation::Relu)
      for (auto& v : a.data()) v = v > 0.0 ? v : 0.0;
    else
      for (auto& v : a.data()) v = std::tanh(v);
    h = std::move(a);
  }
  return h;  // unreachable: layer_count >= 1
}

inline Tensor generator_forward(const MlpSpec& spec, const ParamVector& params,
                                const Tensor& z) {
  return mlp_value_forward(spec, params.values, z);
}

struct DiscriminatorOut {
  Tensor c;  // raw final pre-activation, batch x 1
  Tensor d;  // sigmoid(c)
};

inline DiscriminatorOut discriminator_forward(const MlpSpec& spec,
                                              const ParamVector& params,
                                              const Tensor& x) {
  if (spec.output_activation != OutputActivation::Identity)
    throw std::invalid_argument(
        "discriminator_forward: discriminator output activation must be identity");
  DiscriminatorOut out;
  out.c = mlp_value_forward(spec, params.values, x, /*apply_output_activation=*/false);
  out.d = out.c;
  for (auto& v : out.d.data()) v = sigmoid_scalar(v);
  return out;
}

struct AdamParams {
  double learning_rate = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
};

/// Bias-corrected Adam, minimization convention. Throws on non-finite
/// gradient components, which signals an exploding loss upstream.
inline void adam_step(ParamVector& params, std::span<const double> grads,
                      AdamState& state, const AdamParams& hp) {
  if (grads.size() != params.values.size())
    throw std::invalid_argument("adam_step: gradient length mismatch");
  if (state.first_moment.size() != params.values.size())
    throw std::invalid_argument("adam_step: state length mismatch");
  if (!(hp.learning_rate > 0.0) || hp.beta1 < 0.0 || hp.beta1 >= 1.0 ||
      hp.beta2 < 0.0 || hp.beta2 >= 1.0)
    throw std::invalid_argument("adam_step: bad hyperparameters");
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!std::isfinite(grads[i]))
      throw std::domain_error("adam_step: non-finite gradient at coordinate " +
                              std::to_string(i));
  state.step_count += 1;
  const double bc1 = 1.0 - std::pow(hp.beta1, double(state.step_count));
  const double bc2 = 1.0 - std::pow(hp.beta2, double(state.step_count));
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const double g = grads[i];
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = hp.beta1 * m + (1.0 - hp.beta1) * g;
    v = hp.beta2 * v + (1.0 - hp.beta2) * (g * g);
    const double mhat = m / bc1;
    const double vhat = v / bc2;
    params.values[i] -= hp.learning_rate * mhat / (std::sqrt(vhat) + kAdamEpsilon);
  }
}

}  // namespace cegan
