#include "endoclip/model.hpp"

#include "endoclip/classes.hpp"

namespace endoclip {

namespace seeds {
constexpr std::uint64_t kVit = 1;
constexpr std::uint64_t kLora = 2;
constexpr std::uint64_t kFusion = 3;
constexpr std::uint64_t kHead = 4;
}  // namespace seeds

MultimodalModel MultimodalModel::create(const TrainConfig& config, Vocabulary vocab) {
  config.validate();
  MultimodalModel m;
  m.config_ = config;
  m.vit_ = VisionTransformer::init(config.vit, derive_seed(config.seed, seeds::kVit));
  if (config.ablation.lora) inject_lora(m.vit_, config.lora, derive_seed(config.seed, seeds::kLora));
  if (config.ablation.mfa) {
    m.fusion_layers_ = config.fusion.resolve(config.vit.num_blocks);
    m.fusion_ = FusionModule::init(config.vit.d_model, config.vit.joint_dim, config.fusion,
                                   derive_seed(config.seed, seeds::kFusion));
    // The single-layer projection path is bypassed.
    m.vit_.ln_post.set_trainable(false);
    m.vit_.proj.set_trainable(false);
  }
  Rng head_rng(derive_seed(config.seed, seeds::kHead));
  m.head_ = Linear::init(config.vit.joint_dim, kNumClasses, head_rng);
  m.text_ = std::make_shared<const TextEncoder>(config.text, std::move(vocab));
  return m;
}

Tensor MultimodalModel::embed_image(Tape& tape, const Image& image,
                                    const ForwardContext& ctx) const {
  EncoderOutput out = encode_image(tape, image, vit_, ctx);
  if (fusion_) return fuse(tape, out.cls_per_layer, *fusion_, fusion_layers_, ctx);
  return project_final_cls(tape, out, vit_);
}

Tensor MultimodalModel::embed_images(Tape& tape, std::span<const Image> images,
                                     const ForwardContext& ctx) const {
  std::vector<Tensor> rows;
  rows.reserve(images.size());
  for (const auto& img : images) rows.push_back(embed_image(tape, img, ctx));
  return vstack(tape, rows);
}

Matrix MultimodalModel::image_embeddings(std::span<const Image> images) const {
  Matrix out(static_cast<Index>(images.size()), config_.vit.joint_dim);
  for (std::size_t i = 0; i < images.size(); ++i) {
    Tape tape;  // discarded; inference needs no backward pass
    out.row(static_cast<Index>(i)) = embed_image(tape, images[i]).value().row(0);
  }
  return out;
}

std::vector<int> MultimodalModel::predict(const Matrix& embeddings) const {
  Tape tape;
  const Matrix z = logits(tape, Tensor(embeddings)).value();
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(z.rows()));
  for (Index i = 0; i < z.rows(); ++i) {
    Index best;
    z.row(i).maxCoeff(&best);
    out.push_back(static_cast<int>(best));
  }
  return out;
}

ParameterList MultimodalModel::parameters() const {
  ParameterList out;
  vit_.collect(out, "vit");
  if (fusion_) fusion_->collect(out, "fusion");
  head_.collect(out, "head");
  return out;
}

ParameterList MultimodalModel::trainable_parameters() const {
  ParameterList out;
  for (auto& p : parameters()) {
    if (p.tensor.requires_grad()) out.push_back(p);
  }
  return out;
}

}  // namespace endoclip
