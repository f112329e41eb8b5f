#pragma once

// Fully-connected closure network with a fixed-structure reverse-mode tape.
//
// Flat parameter layout, layer by layer from input to output:
//   W_0 (row-major, fan_in x fan_out), b_0 (fan_out), W_1, b_1, ..., W_L, b_L
// Hidden layers apply the activation; the final layer is linear.

#include "l96/types.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace l96 {

enum class Activation { Tanh, Relu };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct MlpArchitecture {
  std::size_t input_dim = 1;
  std::size_t hidden_layers = 1;  // 0 gives a single affine layer
  std::size_t hidden_width = 1;
  std::size_t output_dim = 1;
  Activation activation = Activation::Tanh;

  void validate() const;
  std::size_t parameter_count() const;
  /// (fan_in, fan_out) per layer, input to output.
  std::vector<std::pair<std::size_t, std::size_t>> layer_shapes() const;

  bool operator==(const MlpArchitecture&) const = default;
};

struct ClosureParams {
  MlpArchitecture arch;
  std::vector<double> flat;

  ClosureParams() = default;
  ClosureParams(MlpArchitecture a, std::vector<double> f);

  static ClosureParams zeros(const MlpArchitecture& a);
  /// Glorot-uniform weights, zero biases.
  static ClosureParams glorot(const MlpArchitecture& a, std::uint64_t seed);

  std::size_t size() const { return flat.size(); }
};

/// Per-layer matrices; flatten(unflatten(p)) == p exactly.
struct MlpLayers {
  std::vector<Mat> weights;  // fan_in x fan_out
  std::vector<RowVec> biases;
};

MlpLayers unflatten(const ClosureParams& p);
ClosureParams flatten(const MlpArchitecture& arch, const MlpLayers& layers);

/// Activations kept by the forward pass for the backward pass.
struct MlpTape {
  std::vector<Mat> activations;  // [0] = input, [l] = post-activation of hidden layer l
};

/// Single-input forward pass.
Vec mlp_forward(const ClosureParams& params, std::span<const double> input);

/// Batched forward pass: one row per input. Fills `tape` when given.
Mat mlp_forward_batch(const ClosureParams& params, const Mat& input, MlpTape* tape = nullptr);

/// Accumulates d(objective)/d(theta) into `grad` given d(objective)/d(output), and writes
/// d(objective)/d(input) to `d_input` when non-null.
void mlp_backward(const ClosureParams& params, const MlpTape& tape, const Mat& d_output, std::span<double> grad,
                  Mat* d_input);

/// Elementwise activation used by the network (exposed for oracles and tests).
void apply_activation(Activation a, Mat& z);

struct ValueAndGradient {
  double value = 0.0;
  std::vector<double> gradient;
};

/// Objective built from the taped operations: returns its value and accumulates its
/// gradient into the (zero-initialised) span.
using Objective = std::function<double(const ClosureParams&, std::span<double>)>;

/// Evaluates an objective and its exact reverse-mode gradient. Throws GradientError if the
/// value or any gradient component is non-finite.
ValueAndGradient grad_through(const Objective& objective, const ClosureParams& params);

}  // namespace l96
