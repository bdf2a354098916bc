#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "survgrad/matrix.hpp"
#include "survgrad/rng.hpp"

namespace survgrad {

enum class Activation { relu, tanh, identity };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view name);

struct DenseLayer {
  Matrix weight;              // out x in
  std::vector<double> bias;   // out
  Activation activation = Activation::identity;

  std::size_t in_width() const { return weight.cols(); }
  std::size_t out_width() const { return weight.rows(); }
};

// Sequential stack of fully connected layers. Dropout (inverted) is applied
// after the activation of every hidden layer, never after the output layer,
// and only in training mode.
class DenseNet {
 public:
  DenseNet() = default;
  DenseNet(std::vector<DenseLayer> layers, double dropout_rate);

  // widths = {input, hidden..., output}. Hidden layers use `hidden`, the
  // output layer is the identity. Weights ~ U(-sqrt(6/fan_in), sqrt(6/fan_in)),
  // biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  static DenseNet initialize(std::span<const std::size_t> widths, Activation hidden,
                             double dropout_rate, std::uint64_t seed);

  std::size_t input_width() const;
  std::size_t output_width() const;
  std::size_t depth() const { return layers_.size(); }
  std::size_t parameter_count() const;
  double dropout_rate() const { return dropout_rate_; }
  bool empty() const { return layers_.empty(); }

  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }

 private:
  std::vector<DenseLayer> layers_;
  double dropout_rate_ = 0.0;
};

enum class Mode { train, eval };

// Forward intermediates for one batch.
struct Tape {
  Mode mode = Mode::eval;
  std::vector<Matrix> inputs;       // input to each layer (after the previous layer's dropout)
  std::vector<Matrix> activations;  // act(W x + b) of each layer, before dropout
  std::vector<Matrix> masks;        // scaled dropout masks; empty matrix when not applied
};

struct ForwardResult {
  Matrix output;
  Tape tape;
};

ForwardResult forward(const DenseNet& net, const Matrix& batch, Mode mode, Rng& rng);
// Eval-mode forward, which never touches an RNG.
ForwardResult forward(const DenseNet& net, const Matrix& batch);
// Eval-mode forward without keeping a tape.
Matrix predict(const DenseNet& net, const Matrix& batch);

struct ParameterGradients {
  std::vector<Matrix> weight;
  std::vector<std::vector<double>> bias;

  static ParameterGradients zeros_like(const DenseNet& net);
  void add(const ParameterGradients& other);
  void scale(double factor);
};

struct Gradients {
  ParameterGradients params;
  Matrix inputs;
};

// Gradients of L = sum(upstream .* output).
Gradients backward(const DenseNet& net, const Tape& tape, const Matrix& upstream,
                   bool want_params, bool want_inputs);
ParameterGradients backward_params(const DenseNet& net, const Tape& tape, const Matrix& upstream);
Matrix backward_inputs(const DenseNet& net, const Tape& tape, const Matrix& upstream);

struct AdamState {
  std::vector<Matrix> m_weight, v_weight;
  std::vector<std::vector<double>> m_bias, v_bias;
  std::size_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState for_net(const DenseNet& net);
};

void adam_step(DenseNet& net, const ParameterGradients& grads, AdamState& state,
               double learning_rate);

nlohmann::json to_json(const DenseNet& net);
DenseNet dense_net_from_json(const nlohmann::json& doc);

}  // namespace survgrad
