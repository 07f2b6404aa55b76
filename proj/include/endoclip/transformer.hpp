#pragma once

#include "endoclip/lora.hpp"

#include <vector>

namespace endoclip {

/// Fused Q/K/V/O projections for `heads` heads of width d_model / heads.
struct AttentionWeights {
  AdaptedLinear query;
  AdaptedLinear key;
  AdaptedLinear value;
  Linear output;
  int heads = 1;

  static AttentionWeights init(Index d_model, int heads, Rng& rng);
  Index head_dim() const { return query.linear.out_features() / heads; }
  void collect(ParameterList& out, const std::string& prefix) const;
  void set_trainable(bool on);
};

/// concat_h softmax(Q_h K_h^T / sqrt(d_head) + mask) V_h, then W_O.
/// `mask_bias`, when given, is added to every head's n x n score matrix.
Tensor mha_forward(Tape& tape, const Tensor& x, const AttentionWeights& w,
                   const ForwardContext& ctx, const Matrix* mask_bias = nullptr);

/// Pre-norm block: x + MHA(LN(x)), then x + MLP(LN(x)) with a GELU MLP.
struct TransformerBlock {
  LayerNormParams ln1;
  AttentionWeights attn;
  LayerNormParams ln2;
  Linear fc1;
  Linear fc2;

  static TransformerBlock init(Index d_model, int heads, int mlp_ratio, Rng& rng);
  Tensor forward(Tape& tape, const Tensor& x, const ForwardContext& ctx,
                 const Matrix* mask_bias = nullptr) const;
  void collect(ParameterList& out, const std::string& prefix) const;
  void set_trainable(bool on);
};

}  // namespace endoclip
