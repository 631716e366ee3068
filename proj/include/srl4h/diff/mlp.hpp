#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "srl4h/diff/tape.hpp"
#include "srl4h/rng.hpp"

namespace srl4h::diff {

template <typename T>
struct Layer {
  Matrix<T> weight;  // [out x in]
  Matrix<T> bias;    // [out x 1]
};

// Fully connected stack with ELU between layers. The output is linear unless
// `elu_output` is set.
template <typename T>
struct MlpParams {
  std::vector<Layer<T>> layers;
  bool elu_output = false;

  Index input_dim() const { return layers.empty() ? 0 : layers.front().weight.cols(); }
  Index output_dim() const { return layers.empty() ? 0 : layers.back().weight.rows(); }

  std::size_t num_params() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
  }

  // dims = {in, h1, ..., out}
  static MlpParams zeros(std::span<const Index> dims) {
    if (dims.size() < 2) throw ConfigError("mlp: need at least input and output dimension");
    MlpParams p;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
      if (dims[i] <= 0 || dims[i + 1] <= 0) throw ConfigError("mlp: layer dimensions must be positive");
      p.layers.push_back({Matrix<T>::Zero(dims[i + 1], dims[i]), Matrix<T>::Zero(dims[i + 1], 1)});
    }
    return p;
  }

  // U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  static MlpParams uniform_init(std::span<const Index> dims, Rng& rng) {
    MlpParams p = zeros(dims);
    for (auto& l : p.layers) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(l.weight.cols()));
      for (Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = static_cast<T>(uniform(rng, -bound, bound));
      for (Index i = 0; i < l.bias.size(); ++i) l.bias.data()[i] = static_cast<T>(uniform(rng, -bound, bound));
    }
    return p;
  }

  void validate() const {
    if (layers.empty()) throw ConfigError("mlp: no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      if (l.bias.rows() != l.weight.rows() || l.bias.cols() != 1) {
        throw ConfigError("mlp: layer " + std::to_string(i) + " bias does not match weight rows");
      }
      if (i > 0 && layers[i - 1].weight.rows() != l.weight.cols()) {
        throw ConfigError("mlp: layer " + std::to_string(i) + " input " + std::to_string(l.weight.cols()) +
                          " does not chain with previous output " + std::to_string(layers[i - 1].weight.rows()));
      }
      if (!l.weight.allFinite() || !l.bias.allFinite()) {
        throw ConfigError("mlp: layer " + std::to_string(i) + " has non-finite entries");
      }
    }
  }

  // Parameter tensors in a fixed order: w0, b0, w1, b1, ...
  std::vector<Matrix<T>*> tensors() {
    std::vector<Matrix<T>*> out;
    for (auto& l : layers) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
    return out;
  }
  std::vector<const Matrix<T>*> tensors() const {
    std::vector<const Matrix<T>*> out;
    for (const auto& l : layers) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
    return out;
  }

  template <typename U>
  MlpParams<U> cast() const {
    MlpParams<U> out;
    out.elu_output = elu_output;
    for (const auto& l : layers) out.layers.push_back({l.weight.template cast<U>(), l.bias.template cast<U>()});
    return out;
  }
};

namespace detail {
template <typename T>
inline void elu_inplace(Matrix<T>& m) {
  m = Tape<T>::elu_values(m);
}
}  // namespace detail

// Tape-free batched forward. Produces the same values as the tape path.
template <typename T>
Matrix<T> mlp_forward(const MlpParams<T>& p, const Matrix<T>& x) {
  if (p.layers.empty()) throw ConfigError("mlp: no layers");
  if (x.rows() != p.input_dim()) {
    throw ConfigError("mlp: input dimension " + std::to_string(x.rows()) + " != expected " +
                      std::to_string(p.input_dim()));
  }
  Matrix<T> h = x;
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    Matrix<T> y = p.layers[i].weight * h;
    y.colwise() += p.layers[i].bias.col(0);
    if (i + 1 < p.layers.size() || p.elu_output) detail::elu_inplace(y);
    h = std::move(y);
  }
  return h;
}

// Tape handles for an MLP's parameters.
struct MlpVars {
  std::vector<Var> weights;
  std::vector<Var> biases;
  bool elu_output = false;
};

template <typename T>
MlpVars bind_params(Tape<T>& tape, const MlpParams<T>& p, bool trainable = true) {
  MlpVars v;
  v.elu_output = p.elu_output;
  for (const auto& l : p.layers) {
    v.weights.push_back(trainable ? tape.leaf(l.weight) : tape.constant(l.weight));
    v.biases.push_back(trainable ? tape.leaf(l.bias) : tape.constant(l.bias));
  }
  return v;
}

template <typename T>
Var mlp_forward(Tape<T>& tape, const MlpVars& v, Var x) {
  Var h = x;
  for (std::size_t i = 0; i < v.weights.size(); ++i) {
    h = tape.affine(v.weights[i], v.biases[i], h);
    if (i + 1 < v.weights.size() || v.elu_output) h = tape.elu(h);
  }
  return h;
}

// Gradients in the same layout as the parameters they belong to.
template <typename T>
MlpParams<T> collect_grads(const Tape<T>& tape, const MlpVars& v) {
  MlpParams<T> g;
  g.elu_output = v.elu_output;
  for (std::size_t i = 0; i < v.weights.size(); ++i) {
    g.layers.push_back({tape.grad(v.weights[i]), tape.grad(v.biases[i])});
  }
  return g;
}

// Single-sample forward that keeps its tape for a later backprop() call.
template <typename T>
struct MlpTape {
  Tape<T> tape;
  MlpVars params;
  Var input;
  Var output;
};

template <typename T>
struct MlpApplyResult {
  Vector<T> y;
  MlpTape<T> tape;
};

template <typename T>
MlpApplyResult<T> mlp_apply(const MlpParams<T>& p, const Vector<T>& x, TapeMode mode = TapeMode::kSingleUse) {
  if (p.layers.empty()) throw ConfigError("mlp: no layers");
  if (x.size() != p.input_dim()) {
    throw ConfigError("mlp: input dimension " + std::to_string(x.size()) + " != expected " +
                      std::to_string(p.input_dim()));
  }
  MlpApplyResult<T> r{Vector<T>(), MlpTape<T>{Tape<T>(mode), {}, {}, {}}};
  auto& mt = r.tape;
  mt.params = bind_params(mt.tape, p);
  mt.input = mt.tape.leaf(Matrix<T>(x));
  mt.output = mlp_forward(mt.tape, mt.params, mt.input);
  r.y = mt.tape.value(mt.output).col(0);
  return r;
}

template <typename T>
struct BackpropResult {
  MlpParams<T> param_grads;
  Vector<T> input_grad;
};

template <typename T>
BackpropResult<T> backprop(MlpTape<T>& mt, const Vector<T>& dloss_dy) {
  const auto& out = mt.tape.value(mt.output);
  if (dloss_dy.size() != out.rows()) {
    throw ConfigError("backprop: upstream gradient has " + std::to_string(dloss_dy.size()) +
                      " entries, output has " + std::to_string(out.rows()));
  }
  mt.tape.backward(mt.output, Matrix<T>(dloss_dy));
  return {collect_grads(mt.tape, mt.params), mt.tape.grad(mt.input).col(0)};
}

}  // namespace srl4h::diff
