#pragma once

// Image tower (ViT emitting a CLS state after every block) and the frozen
// text tower that embeds prompts into the joint space.

#include "endoclip/image.hpp"
#include "endoclip/transformer.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace endoclip {

struct ViTConfig {
  Index image_size = 32;
  Index patch_size = 8;
  Index channels = 3;
  Index d_model = 64;
  int num_blocks = 4;
  int num_heads = 4;
  Index joint_dim = 32;
  int mlp_ratio = 4;

  void validate() const;
  Index grid() const { return image_size / patch_size; }
  Index num_patches() const { return grid() * grid(); }
  Index num_tokens() const { return 1 + num_patches(); }
};

struct EncoderOutput {
  std::vector<Tensor> cls_per_layer;  // L rows of width d_model, block order
  Tensor final_tokens;                // (1 + N) x d_model
};

struct VisionTransformer {
  ViTConfig config;
  Linear patch_proj;  // (C * P * P) -> d_model
  Tensor cls_token;   // 1 x d_model
  Tensor pos_embed;   // (1 + N) x d_model
  std::vector<TransformerBlock> blocks;
  LayerNormParams ln_post;
  Linear proj;  // d_model -> joint_dim, no bias

  static VisionTransformer init(const ViTConfig& config, std::uint64_t seed);

  bool has_lora() const;
  void collect(ParameterList& out, const std::string& prefix = "vit") const;
};

/// Flattens the image into (C * P * P)-wide patch rows in raster order.
Matrix extract_patches(const Image& image, const ViTConfig& config);

/// CLS token followed by projected patches, plus positional embeddings.
Tensor patch_embed(Tape& tape, const Image& image, const VisionTransformer& vit);

EncoderOutput encode_image(Tape& tape, const Image& image, const VisionTransformer& vit,
                           const ForwardContext& ctx = {});

/// Final-layer CLS through ln_post and proj, L2-normalized: the image
/// embedding used when multi-level fusion is disabled.
Tensor project_final_cls(Tape& tape, const EncoderOutput& out, const VisionTransformer& vit);

/// Wraps W_Q, W_K, W_V of every block with a fresh adapter and freezes those
/// base projections. Returns the number of adapters created (3 L).
std::size_t inject_lora(VisionTransformer& vit, const LoraConfig& config, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Text tower

inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kUnkId = 2;
inline constexpr std::size_t kContextLength = 32;

class Vocabulary {
 public:
  /// Only the reserved <pad>, <bos>, <unk> entries.
  Vocabulary();
  /// Reserved entries plus `words` in the given order (duplicates skipped).
  explicit Vocabulary(const std::vector<std::string>& words);

  /// Reserved entries, the prompt template and class-name words, and every
  /// word of `texts`, sorted.
  static Vocabulary build(const std::vector<std::string>& texts);
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  int id(std::string_view word) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  void add(const std::string& word);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// Lower-cased words split on anything that is not a letter or digit.
std::vector<std::string> split_words(std::string_view text);

/// [BOS, word ids..., PAD...] truncated or padded to kContextLength.
std::array<int, kContextLength> tokenize(std::string_view text, const Vocabulary& vocab);

struct TextConfig {
  Index width = 64;
  int blocks = 2;
  int heads = 4;
  Index joint_dim = 32;
  int mlp_ratio = 4;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Seeded, frozen text transformer. All tensors have requires_grad = false.
class TextEncoder {
 public:
  TextEncoder(const TextConfig& config, Vocabulary vocab);

  const TextConfig& config() const { return config_; }
  const Vocabulary& vocabulary() const { return vocab_; }
  void collect(ParameterList& out, const std::string& prefix = "text") const;

  /// Unit-norm joint-space embedding of the BOS position.
  RowVector encode(std::string_view prompt) const;
  Matrix encode_batch(const std::vector<std::string>& prompts) const;

 private:
  TextConfig config_;
  Vocabulary vocab_;
  Tensor token_embed_;  // |V| x width
  Tensor pos_embed_;    // context x width
  std::vector<TransformerBlock> blocks_;
  LayerNormParams ln_final_;
  Linear proj_;
};

inline RowVector encode_text(std::string_view prompt, const TextEncoder& enc) {
  return enc.encode(prompt);
}

}  // namespace endoclip
