#pragma once

#include "endoclip/rng.hpp"
#include "endoclip/tensor.hpp"

#include <string>
#include <vector>

namespace endoclip {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParameterList = std::vector<NamedTensor>;

/// Per-forward switches: dropout is active only when training with an rng.
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;
};

/// y = x W^T + b with W stored (out x in).
struct Linear {
  Tensor weight;
  Tensor bias;  // 1 x out, or undefined

  static Linear init(Index in, Index out, Rng& rng, bool with_bias = true);

  Index in_features() const { return weight.cols(); }
  Index out_features() const { return weight.rows(); }

  Tensor forward(Tape& tape, const Tensor& x) const;
  void collect(ParameterList& out, const std::string& prefix) const;
  void set_trainable(bool on);
};

struct LayerNormParams {
  Tensor gain;
  Tensor bias;

  static LayerNormParams init(Index d);
  Tensor forward(Tape& tape, const Tensor& x) const { return layer_norm(tape, x, gain, bias); }
  void collect(ParameterList& out, const std::string& prefix) const;
  void set_trainable(bool on);
};

Tensor normal_tensor(Index rows, Index cols, double stddev, Rng& rng, bool requires_grad = true);

}  // namespace endoclip
