#pragma once

// The full image-text model: ViT (optionally LoRA-adapted), optional
// multi-level fusion, linear classification head over the joint space, and
// the frozen text encoder.

#include "endoclip/config.hpp"

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace endoclip {

class MultimodalModel {
 public:
  /// Deterministic in (config.seed, config.text.seed, vocab).
  static MultimodalModel create(const TrainConfig& config, Vocabulary vocab);

  const TrainConfig& config() const { return config_; }
  const VisionTransformer& vit() const { return vit_; }
  const std::optional<FusionModule>& fusion() const { return fusion_; }
  const std::vector<int>& fusion_layers() const { return fusion_layers_; }
  const Linear& head() const { return head_; }
  const TextEncoder& text() const { return *text_; }

  /// 1 x joint_dim unit row: fused CLS when MFA is on, else the final CLS.
  Tensor embed_image(Tape& tape, const Image& image, const ForwardContext& ctx = {}) const;
  Tensor embed_images(Tape& tape, std::span<const Image> images,
                      const ForwardContext& ctx = {}) const;
  Tensor logits(Tape& tape, const Tensor& embeddings) const { return head_.forward(tape, embeddings); }

  /// Inference helpers (no gradients, no dropout).
  Matrix image_embeddings(std::span<const Image> images) const;
  std::vector<int> predict(const Matrix& embeddings) const;
  RowVector text_embedding(const std::string& prompt) const { return text_->encode(prompt); }

  /// Every persistent image-side tensor, named. Excludes the text encoder,
  /// which is regenerated from its seed.
  ParameterList parameters() const;
  /// The subset updated by the optimizer.
  ParameterList trainable_parameters() const;

 private:
  TrainConfig config_;
  VisionTransformer vit_;
  std::optional<FusionModule> fusion_;
  std::vector<int> fusion_layers_;
  Linear head_;
  std::shared_ptr<const TextEncoder> text_;
};

}  // namespace endoclip
