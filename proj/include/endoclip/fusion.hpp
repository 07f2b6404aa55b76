#pragma once

// Multi-level feature aggregation: a learnable fusion token attends over the
// CLS states of selected encoder blocks through a small transformer without
// positional embeddings, so the result is invariant to the source order.

#include "endoclip/encoders.hpp"

#include <cstdint>
#include <vector>

namespace endoclip {

struct FusionConfig {
  std::vector<int> selected_layers;  // 1-based, strictly increasing; empty = default policy
  int k = 3;
  int fusion_blocks = 1;
  int fusion_heads = 4;

  /// Explicit layers when given, otherwise select_layers(L, k).
  std::vector<int> resolve(int num_layers) const;
};

/// round(i * L / K) for i = 1..K, de-duplicated ascending. Throws ConfigError
/// unless 1 <= K <= L.
std::vector<int> select_layers(int num_layers, int k);

struct FusionModule {
  Tensor cls_fusion_token;  // 1 x d_model
  std::vector<TransformerBlock> blocks;
  LayerNormParams ln_post;
  Linear proj;  // d_model -> joint_dim, no bias

  static FusionModule init(Index d_model, Index joint_dim, const FusionConfig& config,
                           std::uint64_t seed);
  void collect(ParameterList& out, const std::string& prefix = "fusion") const;
};

/// [fusion token, selected CLS...] -> blocks -> position 0 -> ln -> proj ->
/// L2 normalize. Returns a 1 x joint_dim unit row.
Tensor fuse(Tape& tape, const std::vector<Tensor>& per_layer_cls, const FusionModule& module,
            const std::vector<int>& selected_layers, const ForwardContext& ctx = {});

}  // namespace endoclip
