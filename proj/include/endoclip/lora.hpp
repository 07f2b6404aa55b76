#pragma once

// Low-rank adapters: h = x W^T + gamma * (x A^T) B^T with W frozen,
// A (r x d_in) Kaiming-uniform and B (d_out x r) zero at initialization.

#include "endoclip/layers.hpp"

#include <cstdint>
#include <optional>

namespace endoclip {

struct LoraConfig {
  int rank = 4;
  double alpha = 8.0;
  double dropout = 0.1;

  double gamma() const { return alpha / static_cast<double>(rank); }
  /// Throws ConfigError. Dimensions, when given, enforce rank <= min(d1, d2) / 2.
  void validate(Index d1 = 0, Index d2 = 0) const;
};

struct LoraAdapter {
  Tensor a;     // r x d2, trainable
  Tensor b;     // d1 x r, trainable
  double gamma = 1.0;
  LoraConfig config;
  std::uint64_t seed = 0;
  Tensor base;  // d1 x d2, frozen; shared with the wrapped projection

  Index out_dim() const { return b.rows(); }
  Index in_dim() const { return a.cols(); }
  Index parameter_count() const { return a.size() + b.size(); }
};

LoraAdapter lora_init(Index d1, Index d2, const LoraConfig& config, std::uint64_t seed);

/// Base path plus scaled adapter path. When `training` and an rng is given,
/// inverted dropout at rate config.dropout masks the adapter input only.
Tensor lora_apply(Tape& tape, const LoraAdapter& adapter, const Tensor& x, bool training,
                  Rng* rng = nullptr);

/// A linear projection that can carry an adapter on its weight.
struct AdaptedLinear {
  Linear linear;
  std::optional<LoraAdapter> lora;

  Tensor forward(Tape& tape, const Tensor& x, const ForwardContext& ctx) const;
  /// Wraps the weight with a fresh adapter and freezes the base weight and bias.
  void attach(const LoraConfig& config, std::uint64_t seed);
  void collect(ParameterList& out, const std::string& prefix) const;
};

}  // namespace endoclip
