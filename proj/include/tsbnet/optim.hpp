#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "tsbnet/tensor.hpp"

namespace tsbnet {

// Defaults are the desk-scale schedule; full-scale runs override them.
struct TrainConfig {
  std::int64_t batch_size = 32;
  double lr0 = 0.005;
  double lr_decay_factor = 0.1;
  std::int64_t lr_decay_every = 2000;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  std::int64_t max_iters = 6000;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(lr0 > 0)) throw std::invalid_argument("TrainConfig: lr0 must be > 0");
    if (!(momentum >= 0 && momentum < 1))
      throw std::invalid_argument("TrainConfig: momentum must be in [0,1)");
    if (!(weight_decay >= 0))
      throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (lr_decay_every < 1)
      throw std::invalid_argument("TrainConfig: lr_decay_every must be >= 1");
  }
};

inline double learning_rate(const TrainConfig& c, std::int64_t iter) {
  return c.lr0 * std::pow(c.lr_decay_factor,
                          static_cast<double>(iter / c.lr_decay_every));
}

template <class T>
void sgd_step(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& velocity,
              const TrainConfig& c, std::int64_t iter) {
  if (!param.same_shape(grad) || !param.same_shape(velocity))
    throw std::invalid_argument("sgd_step: param/grad/velocity shape mismatch");
  const T lr = static_cast<T>(learning_rate(c, iter));
  const T mu = static_cast<T>(c.momentum);
  const T wd = static_cast<T>(c.weight_decay);
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = mu * velocity[i] + grad[i] + wd * param[i];
    param[i] -= lr * velocity[i];
  }
}

}  // namespace tsbnet
