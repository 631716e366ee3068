#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "srl4h/diff/tape.hpp"

namespace srl4h::diff {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct OptimState {
  std::vector<Matrix<T>> m;
  std::vector<Matrix<T>> v;
  std::uint64_t step = 0;
  AdamConfig config;

  static OptimState for_params(std::span<Matrix<T>* const> params, AdamConfig cfg = {}) {
    OptimState s;
    s.config = cfg;
    for (const auto* p : params) {
      s.m.push_back(Matrix<T>::Zero(p->rows(), p->cols()));
      s.v.push_back(Matrix<T>::Zero(p->rows(), p->cols()));
    }
    return s;
  }
};

template <typename T>
bool all_finite(std::span<const Matrix<T>> grads) {
  for (const auto& g : grads) {
    if (!g.allFinite()) return false;
  }
  return true;
}

// Bias-corrected Adam. Returns false and leaves everything untouched when a
// gradient entry is not finite.
template <typename T>
bool adam_step(std::span<Matrix<T>* const> params, std::span<const Matrix<T>> grads, OptimState<T>& state,
               double lr) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw ConfigError("adam: parameter, gradient and state counts differ");
  }
  if (!(lr > 0.0)) throw ConfigError("adam: learning rate must be positive");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->rows() != grads[i].rows() || params[i]->cols() != grads[i].cols() ||
        state.m[i].rows() != grads[i].rows() || state.m[i].cols() != grads[i].cols()) {
      throw ConfigError("adam: shape mismatch at tensor " + std::to_string(i));
    }
  }
  if (!all_finite(grads)) return false;

  state.step += 1;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const T b1 = static_cast<T>(c.beta1);
  const T b2 = static_cast<T>(c.beta2);
  const T bc1 = static_cast<T>(1.0 - std::pow(c.beta1, t));
  const T bc2 = static_cast<T>(1.0 - std::pow(c.beta2, t));
  const T step_size = static_cast<T>(lr);
  const T eps = static_cast<T>(c.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    m = b1 * m + (T(1) - b1) * g;
    v = b2 * v + (T(1) - b2) * g.cwiseProduct(g);
    auto m_hat = m.array() / bc1;
    auto v_hat = v.array() / bc2;
    params[i]->array() -= step_size * m_hat / (v_hat.sqrt() + eps);
  }
  return true;
}

// Scales gradients in place so their joint L2 norm is at most max_norm.
// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(std::span<Matrix<T>> grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) sq += static_cast<double>(g.squaredNorm());
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const T scale = static_cast<T>(max_norm / (norm + 1e-6));
    for (auto& g : grads) g *= scale;
  }
  return norm;
}

// Exponential moving average of a parameter set. The shadow is never handed
// to a tape as a trainable leaf.
template <typename T>
struct EmaShadow {
  std::vector<Matrix<T>> shadow;
  double tau = 0.99;

  static EmaShadow copy_of(std::span<const Matrix<T>* const> online, double tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("ema: decay rate must lie in (0, 1)");
    EmaShadow s;
    s.tau = tau;
    for (const auto* p : online) s.shadow.push_back(*p);
    return s;
  }
};

// shadow <- tau * shadow + (1 - tau) * online
template <typename T>
void ema_update(EmaShadow<T>& s, std::span<const Matrix<T>* const> online) {
  if (online.size() != s.shadow.size()) throw ConfigError("ema: tensor count mismatch");
  const T tau = static_cast<T>(s.tau);
  for (std::size_t i = 0; i < online.size(); ++i) {
    if (online[i]->rows() != s.shadow[i].rows() || online[i]->cols() != s.shadow[i].cols()) {
      throw ConfigError("ema: shape mismatch at tensor " + std::to_string(i));
    }
    s.shadow[i] = tau * s.shadow[i] + (T(1) - tau) * (*online[i]);
  }
}

// Flattening helpers used by gradient checks.
template <typename T>
Eigen::VectorXd flatten(std::span<const Matrix<T>* const> tensors) {
  Index n = 0;
  for (const auto* t : tensors) n += t->size();
  Eigen::VectorXd out(n);
  Index k = 0;
  for (const auto* t : tensors) {
    for (Index i = 0; i < t->size(); ++i) out(k++) = static_cast<double>(t->data()[i]);
  }
  return out;
}

template <typename T>
void unflatten(const Eigen::VectorXd& flat, std::span<Matrix<T>* const> tensors) {
  Index k = 0;
  for (auto* t : tensors) {
    for (Index i = 0; i < t->size(); ++i) t->data()[i] = static_cast<T>(flat(k++));
  }
  if (k != flat.size()) throw ConfigError("unflatten: size mismatch");
}

}  // namespace srl4h::diff
