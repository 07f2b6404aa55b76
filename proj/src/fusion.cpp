#include "endoclip/fusion.hpp"

#include "endoclip/errors.hpp"

#include <cmath>

namespace endoclip {

std::vector<int> select_layers(int num_layers, int k) {
  if (k < 1 || k > num_layers) {
    throw ConfigError("fusion: K = " + std::to_string(k) + " outside [1, " +
                      std::to_string(num_layers) + "]");
  }
  std::vector<int> out;
  for (int i = 1; i <= k; ++i) {
    const int idx = static_cast<int>(std::lround(static_cast<double>(i) * num_layers / k));
    if (out.empty() || out.back() != idx) out.push_back(idx);
  }
  return out;
}

std::vector<int> FusionConfig::resolve(int num_layers) const {
  if (selected_layers.empty()) return select_layers(num_layers, k);
  for (std::size_t i = 0; i < selected_layers.size(); ++i) {
    const int l = selected_layers[i];
    if (l < 1 || l > num_layers) {
      throw ConfigError("fusion: layer " + std::to_string(l) + " outside [1, " +
                        std::to_string(num_layers) + "]");
    }
    if (i > 0 && l <= selected_layers[i - 1]) {
      throw ConfigError("fusion: selected layers must be strictly increasing");
    }
  }
  return selected_layers;
}

FusionModule FusionModule::init(Index d_model, Index joint_dim, const FusionConfig& config,
                                std::uint64_t seed) {
  if (config.fusion_blocks < 1) throw ConfigError("fusion: fusion_blocks must be >= 1");
  Rng rng(seed);
  FusionModule m;
  m.cls_fusion_token = normal_tensor(1, d_model, 0.02, rng);
  for (int b = 0; b < config.fusion_blocks; ++b) {
    m.blocks.push_back(TransformerBlock::init(d_model, config.fusion_heads, 4, rng));
  }
  m.ln_post = LayerNormParams::init(d_model);
  m.proj = Linear::init(d_model, joint_dim, rng, false);
  return m;
}

void FusionModule::collect(ParameterList& out, const std::string& prefix) const {
  out.push_back({prefix + ".cls_fusion_token", cls_fusion_token});
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    blocks[b].collect(out, prefix + ".blocks." + std::to_string(b));
  }
  ln_post.collect(out, prefix + ".ln_post");
  proj.collect(out, prefix + ".proj");
}

Tensor fuse(Tape& tape, const std::vector<Tensor>& per_layer_cls, const FusionModule& module,
            const std::vector<int>& selected_layers, const ForwardContext& ctx) {
  if (selected_layers.empty()) throw ConfigError("fusion: no layers selected");
  std::vector<Tensor> tokens{module.cls_fusion_token};
  for (int l : selected_layers) {
    if (l < 1 || l > static_cast<int>(per_layer_cls.size())) {
      throw ConfigError("fusion: layer " + std::to_string(l) + " not produced by a " +
                        std::to_string(per_layer_cls.size()) + "-block encoder");
    }
    tokens.push_back(per_layer_cls[static_cast<std::size_t>(l - 1)]);
  }
  Tensor h = vstack(tape, tokens);
  for (const auto& block : module.blocks) h = block.forward(tape, h, ctx);
  Tensor pooled = module.ln_post.forward(tape, slice_rows(tape, h, 0, 1));
  return l2_normalize_rows(tape, module.proj.forward(tape, pooled));
}

}  // namespace endoclip
