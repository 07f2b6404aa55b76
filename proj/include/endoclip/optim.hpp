#pragma once

#include "endoclip/layers.hpp"

#include <cstdint>
#include <map>
#include <string>

namespace endoclip {

struct AdamWConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  void validate() const;
};

struct AdamWState {
  struct Moments {
    Matrix m;
    Matrix v;
  };
  std::map<std::string, Moments> moments;  // keyed by parameter name
  std::uint64_t step = 0;
};

/// One AdamW update: p <- p (1 - lr wd), then p <- p - lr m_hat / (sqrt(v_hat) + eps)
/// with bias-corrected moments. Parameters without requires_grad are skipped;
/// a trainable parameter without a gradient raises ContractError.
void adamw_step(ParameterList& params, AdamWState& state, const AdamWConfig& cfg);

}  // namespace endoclip
