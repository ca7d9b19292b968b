#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "psgrank/errors.hpp"
#include "psgrank/linalg.hpp"

namespace psgrank {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moment estimates, one pair per parameter tensor, plus the
/// number of updates applied so far.
template <typename T>
struct AdamState {
  std::vector<Mat<T>> m;
  std::vector<Mat<T>> v;
  std::uint64_t step = 0;

  bool initialized() const { return !m.empty(); }
};

/// One bias-corrected Adam update. Every gradient is checked for finiteness
/// before any parameter moves.
template <typename T>
void adam_step(std::span<const NamedTensor<Mat<T>>> params,
               std::span<const NamedTensor<const Mat<T>>> grads, AdamState<T>& state,
               const AdamConfig& cfg) {
  if (params.size() != grads.size()) throw ShapeError("parameter and gradient lists differ in length");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].tensor->rows() != params[i].tensor->rows() ||
        grads[i].tensor->cols() != params[i].tensor->cols())
      throw ShapeError("gradient shape mismatch for " + params[i].name);
    if (!grads[i].tensor->allFinite())
      throw TrainingError("non-finite gradient for parameter " + grads[i].name);
  }
  if (!state.initialized()) {
    for (const auto& p : params) {
      state.m.push_back(Mat<T>::Zero(p.tensor->rows(), p.tensor->cols()));
      state.v.push_back(Mat<T>::Zero(p.tensor->rows(), p.tensor->cols()));
    }
  }
  if (state.m.size() != params.size()) throw StateError("optimizer state does not match parameters");

  ++state.step;
  const double t = static_cast<double>(state.step);
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T corr1 = static_cast<T>(1.0 - std::pow(cfg.beta1, t));
  const T corr2 = static_cast<T>(1.0 - std::pow(cfg.beta2, t));
  const T lr = static_cast<T>(cfg.learning_rate), eps = static_cast<T>(cfg.epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = *grads[i].tensor;
    m = b1 * m + (T(1) - b1) * g;
    v = b2 * v + (T(1) - b2) * g.cwiseProduct(g);
    auto m_hat = m.array() / corr1;
    auto v_hat = v.array() / corr2;
    params[i].tensor->array() -= lr * m_hat / (v_hat.sqrt() + eps);
  }
}

}  // namespace psgrank
