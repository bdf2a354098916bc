#include "survgrad/dense_net.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace survgrad {

namespace {

constexpr int kFormatVersion = 1;

void apply_activation(Activation a, Matrix& m) {
  auto v = m.values();
  switch (a) {
    case Activation::relu:
      for (double& x : v) x = x > 0.0 ? x : 0.0;
      break;
    case Activation::tanh:
      for (double& x : v) x = std::tanh(x);
      break;
    case Activation::identity:
      break;
  }
}

// Multiplies `delta` in place by act'(z), expressed through y = act(z).
void apply_activation_derivative(Activation a, const Matrix& y, Matrix& delta) {
  auto d = delta.values();
  auto yv = y.values();
  switch (a) {
    case Activation::relu:
      for (std::size_t i = 0; i < d.size(); ++i) {
        if (yv[i] <= 0.0) d[i] = 0.0;
      }
      break;
    case Activation::tanh:
      for (std::size_t i = 0; i < d.size(); ++i) d[i] *= 1.0 - yv[i] * yv[i];
      break;
    case Activation::identity:
      break;
  }
}

void check_tape(const DenseNet& net, const Tape& tape, const Matrix& upstream) {
  if (net.empty()) throw StateError("backward on an empty network");
  if (tape.inputs.size() != net.depth() || tape.activations.size() != net.depth()) {
    throw ShapeError("tape does not belong to this network");
  }
  const Matrix& out = tape.activations.back();
  if (upstream.rows() != out.rows() || upstream.cols() != out.cols()) {
    throw ShapeError("upstream " + shape_string(upstream) + " does not match output " +
                     shape_string(out));
  }
}

}  // namespace

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::relu:
      return "relu";
    case Activation::tanh:
      return "tanh";
    case Activation::identity:
      return "identity";
  }
  return "identity";
}

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  if (name == "identity") return Activation::identity;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

DenseNet::DenseNet(std::vector<DenseLayer> layers, double dropout_rate)
    : layers_(std::move(layers)), dropout_rate_(dropout_rate) {
  if (!(dropout_rate_ >= 0.0 && dropout_rate_ < 1.0)) {
    throw ConfigError("dropout rate must lie in [0, 1)");
  }
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    if (layer.bias.size() != layer.out_width()) throw ShapeError("bias width mismatch in layer " + std::to_string(l));
    if (l > 0 && layer.in_width() != layers_[l - 1].out_width()) {
      throw ShapeError("layer " + std::to_string(l) + " input width does not chain");
    }
  }
}

DenseNet DenseNet::initialize(std::span<const std::size_t> widths, Activation hidden,
                              double dropout_rate, std::uint64_t seed) {
  if (widths.size() < 2) throw ConfigError("a network needs at least input and output widths");
  Rng rng(seed);
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t fan_in = widths[l], fan_out = widths[l + 1];
    if (fan_in == 0 || fan_out == 0) throw ConfigError("layer widths must be positive");
    const double w_bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    const double b_bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> w_dist(-w_bound, w_bound);
    std::uniform_real_distribution<double> b_dist(-b_bound, b_bound);
    DenseLayer layer;
    layer.weight = Matrix(fan_out, fan_in);
    for (double& w : layer.weight.values()) w = w_dist(rng);
    layer.bias.resize(fan_out);
    for (double& b : layer.bias) b = b_dist(rng);
    layer.activation = (l + 2 == widths.size()) ? Activation::identity : hidden;
    layers.push_back(std::move(layer));
  }
  return DenseNet(std::move(layers), dropout_rate);
}

std::size_t DenseNet::input_width() const { return layers_.empty() ? 0 : layers_.front().in_width(); }

std::size_t DenseNet::output_width() const { return layers_.empty() ? 0 : layers_.back().out_width(); }

std::size_t DenseNet::parameter_count() const {
  std::size_t count = 0;
  for (const auto& layer : layers_) count += layer.weight.size() + layer.bias.size();
  return count;
}

ForwardResult forward(const DenseNet& net, const Matrix& batch, Mode mode, Rng& rng) {
  if (net.empty()) throw StateError("forward on an empty network");
  if (batch.cols() != net.input_width()) {
    throw ShapeError("batch has " + std::to_string(batch.cols()) + " columns, network expects " +
                     std::to_string(net.input_width()));
  }
  const bool dropout = mode == Mode::train && net.dropout_rate() > 0.0;
  const double keep = 1.0 - net.dropout_rate();

  ForwardResult result;
  Tape& tape = result.tape;
  tape.mode = mode;
  const std::size_t depth = net.depth();
  tape.inputs.reserve(depth);
  tape.activations.reserve(depth);
  tape.masks.resize(depth);

  tape.inputs.push_back(batch);
  for (std::size_t l = 0; l < depth; ++l) {
    const DenseLayer& layer = net.layers()[l];
    Matrix z;
    matmul_transposed(tape.inputs[l], layer.weight, z);
    for (std::size_t r = 0; r < z.rows(); ++r) {
      auto row = z.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] += layer.bias[c];
    }
    apply_activation(layer.activation, z);
    const bool last = l + 1 == depth;
    if (last) {
      result.output = z;
    } else if (dropout) {
      Matrix mask(z.rows(), z.cols());
      Matrix next = z;
      auto mv = mask.values();
      auto nv = next.values();
      // One engine draw seeds a splitmix64 stream; two 32-bit uniforms per step.
      const auto threshold = static_cast<std::uint64_t>(keep * 4294967296.0);
      const double scale = 1.0 / keep;
      std::uint64_t state = rng();
      const std::size_t size = mv.size();
      for (std::size_t i = 0; i < size; i += 2) {
        state += 0x9e3779b97f4a7c15ULL;
        std::uint64_t bits = state;
        bits = (bits ^ (bits >> 30)) * 0xbf58476d1ce4e5b9ULL;
        bits = (bits ^ (bits >> 27)) * 0x94d049bb133111ebULL;
        bits ^= bits >> 31;
        mv[i] = (bits & 0xffffffffULL) < threshold ? scale : 0.0;
        nv[i] *= mv[i];
        if (i + 1 < size) {
          mv[i + 1] = (bits >> 32) < threshold ? scale : 0.0;
          nv[i + 1] *= mv[i + 1];
        }
      }
      tape.masks[l] = std::move(mask);
      tape.inputs.push_back(std::move(next));
    } else {
      tape.inputs.push_back(z);
    }
    tape.activations.push_back(std::move(z));
  }
  return result;
}

ForwardResult forward(const DenseNet& net, const Matrix& batch) {
  Rng unused(0);
  return forward(net, batch, Mode::eval, unused);
}

Matrix predict(const DenseNet& net, const Matrix& batch) {
  if (net.empty()) throw StateError("predict on an empty network");
  if (batch.cols() != net.input_width()) {
    throw ShapeError("batch has " + std::to_string(batch.cols()) + " columns, network expects " +
                     std::to_string(net.input_width()));
  }
  Matrix current = batch;
  Matrix z;
  for (const DenseLayer& layer : net.layers()) {
    matmul_transposed(current, layer.weight, z);
    for (std::size_t r = 0; r < z.rows(); ++r) {
      auto row = z.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] += layer.bias[c];
    }
    apply_activation(layer.activation, z);
    std::swap(current, z);
  }
  return current;
}

ParameterGradients ParameterGradients::zeros_like(const DenseNet& net) {
  ParameterGradients g;
  for (const auto& layer : net.layers()) {
    g.weight.emplace_back(layer.weight.rows(), layer.weight.cols());
    g.bias.emplace_back(layer.bias.size(), 0.0);
  }
  return g;
}

void ParameterGradients::add(const ParameterGradients& other) {
  if (other.weight.size() != weight.size()) throw ShapeError("gradient sets differ in depth");
  for (std::size_t l = 0; l < weight.size(); ++l) {
    auto a = weight[l].values();
    auto b = other.weight[l].values();
    if (a.size() != b.size()) throw ShapeError("gradient weight shapes differ");
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    for (std::size_t i = 0; i < bias[l].size(); ++i) bias[l][i] += other.bias[l][i];
  }
}

void ParameterGradients::scale(double factor) {
  for (auto& w : weight) {
    for (double& v : w.values()) v *= factor;
  }
  for (auto& b : bias) {
    for (double& v : b) v *= factor;
  }
}

Gradients backward(const DenseNet& net, const Tape& tape, const Matrix& upstream,
                   bool want_params, bool want_inputs) {
  check_tape(net, tape, upstream);
  Gradients grads;
  if (want_params) grads.params = ParameterGradients::zeros_like(net);

  Matrix delta = upstream;  // dL/d(layer output), before the activation derivative
  Matrix next;
  for (std::size_t l = net.depth(); l-- > 0;) {
    const DenseLayer& layer = net.layers()[l];
    if (l + 1 < net.depth() && !tape.masks[l].empty()) {
      auto d = delta.values();
      auto m = tape.masks[l].values();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] *= m[i];
    }
    apply_activation_derivative(layer.activation, tape.activations[l], delta);
    if (want_params) {
      accumulate_transposed_product(delta, tape.inputs[l], grads.params.weight[l]);
      auto& db = grads.params.bias[l];
      for (std::size_t r = 0; r < delta.rows(); ++r) {
        auto row = delta.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) db[c] += row[c];
      }
    }
    if (l > 0 || want_inputs) {
      matmul(delta, layer.weight, next);
      std::swap(delta, next);
    }
  }
  if (want_inputs) grads.inputs = std::move(delta);
  return grads;
}

ParameterGradients backward_params(const DenseNet& net, const Tape& tape, const Matrix& upstream) {
  return backward(net, tape, upstream, true, false).params;
}

Matrix backward_inputs(const DenseNet& net, const Tape& tape, const Matrix& upstream) {
  return backward(net, tape, upstream, false, true).inputs;
}

AdamState AdamState::for_net(const DenseNet& net) {
  AdamState s;
  for (const auto& layer : net.layers()) {
    s.m_weight.emplace_back(layer.weight.rows(), layer.weight.cols());
    s.v_weight.emplace_back(layer.weight.rows(), layer.weight.cols());
    s.m_bias.emplace_back(layer.bias.size(), 0.0);
    s.v_bias.emplace_back(layer.bias.size(), 0.0);
  }
  return s;
}

void adam_step(DenseNet& net, const ParameterGradients& grads, AdamState& state,
               double learning_rate) {
  auto& layers = net.layers();
  if (grads.weight.size() != layers.size() || state.m_weight.size() != layers.size()) {
    throw ShapeError("adam_step: gradient/state depth does not match network");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  auto update = [&](std::span<double> param, std::span<const double> g, std::span<double> m,
                    std::span<double> v) {
    if (param.size() != g.size() || param.size() != m.size() || param.size() != v.size()) {
      throw ShapeError("adam_step: parameter shape mismatch");
    }
    for (std::size_t i = 0; i < param.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      param[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  };
  for (std::size_t l = 0; l < layers.size(); ++l) {
    update(layers[l].weight.values(), grads.weight[l].values(), state.m_weight[l].values(),
           state.v_weight[l].values());
    update(layers[l].bias, grads.bias[l], state.m_bias[l], state.v_bias[l]);
  }
}

nlohmann::json to_json(const DenseNet& net) {
  nlohmann::json doc;
  doc["format"] = "survgrad.dense_net";
  doc["version"] = kFormatVersion;
  doc["dropout"] = net.dropout_rate();
  auto& layers = doc["layers"] = nlohmann::json::array();
  for (const auto& layer : net.layers()) {
    layers.push_back({{"in", layer.in_width()},
                      {"out", layer.out_width()},
                      {"activation", std::string(to_string(layer.activation))},
                      {"weight", layer.weight.storage()},
                      {"bias", layer.bias}});
  }
  return doc;
}

DenseNet dense_net_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("format").get<std::string>() != "survgrad.dense_net") {
      throw ConfigError("not a dense network document");
    }
    if (doc.at("version").get<int>() != kFormatVersion) {
      throw ConfigError("unsupported dense network version " + doc.at("version").dump());
    }
    std::vector<DenseLayer> layers;
    for (const auto& item : doc.at("layers")) {
      DenseLayer layer;
      const auto in = item.at("in").get<std::size_t>();
      const auto out = item.at("out").get<std::size_t>();
      layer.weight = Matrix(out, in, item.at("weight").get<std::vector<double>>());
      layer.bias = item.at("bias").get<std::vector<double>>();
      layer.activation = parse_activation(item.at("activation").get<std::string>());
      layers.push_back(std::move(layer));
    }
    return DenseNet(std::move(layers), doc.at("dropout").get<double>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed dense network document: ") + e.what());
  }
}

}  // namespace survgrad
