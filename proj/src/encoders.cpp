#include "endoclip/encoders.hpp"

#include "endoclip/classes.hpp"
#include "endoclip/errors.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>

namespace endoclip {

void ViTConfig::validate() const {
  if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0) {
    throw ConfigError("vit: image_size " + std::to_string(image_size) +
                      " is not divisible by patch_size " + std::to_string(patch_size));
  }
  if (num_heads < 1 || d_model % num_heads != 0) {
    throw ConfigError("vit: d_model " + std::to_string(d_model) +
                      " is not divisible by num_heads " + std::to_string(num_heads));
  }
  if (num_blocks < 1) throw ConfigError("vit: num_blocks must be >= 1");
  if (channels < 1 || joint_dim < 1 || mlp_ratio < 1) {
    throw ConfigError("vit: channels, joint_dim and mlp_ratio must be positive");
  }
}

VisionTransformer VisionTransformer::init(const ViTConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  VisionTransformer vit;
  vit.config = config;
  const Index patch_dim = config.channels * config.patch_size * config.patch_size;
  vit.patch_proj = Linear::init(patch_dim, config.d_model, rng);
  vit.cls_token = normal_tensor(1, config.d_model, 0.02, rng);
  vit.pos_embed = normal_tensor(config.num_tokens(), config.d_model, 0.02, rng);
  for (int l = 0; l < config.num_blocks; ++l) {
    vit.blocks.push_back(
        TransformerBlock::init(config.d_model, config.num_heads, config.mlp_ratio, rng));
  }
  vit.ln_post = LayerNormParams::init(config.d_model);
  vit.proj = Linear::init(config.d_model, config.joint_dim, rng, false);
  return vit;
}

bool VisionTransformer::has_lora() const {
  return std::any_of(blocks.begin(), blocks.end(),
                     [](const TransformerBlock& b) { return b.attn.query.lora.has_value(); });
}

void VisionTransformer::collect(ParameterList& out, const std::string& prefix) const {
  patch_proj.collect(out, prefix + ".patch_proj");
  out.push_back({prefix + ".cls_token", cls_token});
  out.push_back({prefix + ".pos_embed", pos_embed});
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    blocks[l].collect(out, prefix + ".blocks." + std::to_string(l));
  }
  ln_post.collect(out, prefix + ".ln_post");
  proj.collect(out, prefix + ".proj");
}

Matrix extract_patches(const Image& image, const ViTConfig& config) {
  if (image.channels() != config.channels || image.height() != config.image_size ||
      image.width() != config.image_size) {
    throw DimensionError("patch_embed: image " + std::to_string(image.channels()) + "x" +
                         std::to_string(image.height()) + "x" + std::to_string(image.width()) +
                         " vs configured " + std::to_string(config.channels) + "x" +
                         std::to_string(config.image_size) + "x" +
                         std::to_string(config.image_size));
  }
  const Index p = config.patch_size;
  const Index g = config.grid();
  Matrix patches(g * g, config.channels * p * p);
  for (Index py = 0; py < g; ++py) {
    for (Index px = 0; px < g; ++px) {
      Index k = 0;
      for (Index c = 0; c < config.channels; ++c)
        for (Index y = 0; y < p; ++y)
          for (Index x = 0; x < p; ++x) patches(py * g + px, k++) = image.planes[c](py * p + y, px * p + x);
    }
  }
  return patches;
}

Tensor patch_embed(Tape& tape, const Image& image, const VisionTransformer& vit) {
  Tensor patches(extract_patches(image, vit.config));
  Tensor projected = vit.patch_proj.forward(tape, patches);
  const std::array<Tensor, 2> parts{vit.cls_token, projected};
  return add(tape, vstack(tape, parts), vit.pos_embed);
}

EncoderOutput encode_image(Tape& tape, const Image& image, const VisionTransformer& vit,
                           const ForwardContext& ctx) {
  EncoderOutput out;
  Tensor tokens = patch_embed(tape, image, vit);
  out.cls_per_layer.reserve(vit.blocks.size());
  for (const auto& block : vit.blocks) {
    tokens = block.forward(tape, tokens, ctx);
    out.cls_per_layer.push_back(slice_rows(tape, tokens, 0, 1));
  }
  out.final_tokens = tokens;
  return out;
}

Tensor project_final_cls(Tape& tape, const EncoderOutput& out, const VisionTransformer& vit) {
  Tensor h = vit.ln_post.forward(tape, out.cls_per_layer.back());
  return l2_normalize_rows(tape, vit.proj.forward(tape, h));
}

std::size_t inject_lora(VisionTransformer& vit, const LoraConfig& config, std::uint64_t seed) {
  if (vit.has_lora()) throw ContractError("inject_lora: model already carries adapters");
  config.validate(vit.config.d_model, vit.config.d_model);
  std::size_t count = 0;
  for (std::size_t l = 0; l < vit.blocks.size(); ++l) {
    auto& attn = vit.blocks[l].attn;
    attn.query.attach(config, derive_seed(seed, l, 0));
    attn.key.attach(config, derive_seed(seed, l, 1));
    attn.value.attach(config, derive_seed(seed, l, 2));
    count += 3;
  }
  return count;
}

// ---------------------------------------------------------------------------

Vocabulary::Vocabulary() {
  add("<pad>");
  add("<bos>");
  add("<unk>");
}

Vocabulary::Vocabulary(const std::vector<std::string>& words) : Vocabulary() {
  for (const auto& w : words) add(w);
}

void Vocabulary::add(const std::string& word) {
  if (index_.contains(word)) return;
  index_.emplace(word, static_cast<int>(tokens_.size()));
  tokens_.push_back(word);
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts) {
  std::set<std::string> words;
  for (auto w : split_words("A photo of a, Image description.")) words.insert(w);
  for (auto name : kClassNames) {
    for (auto w : split_words(name)) words.insert(w);
  }
  for (const auto& t : texts) {
    for (auto w : split_words(t)) words.insert(w);
  }
  return Vocabulary(std::vector<std::string>(words.begin(), words.end()));
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocabulary " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  if (lines.size() < 3 || lines[0] != "<pad>" || lines[1] != "<bos>" || lines[2] != "<unk>") {
    throw DataError(path.string() + ": ids 0-2 must be <pad>, <bos>, <unk>");
  }
  Vocabulary v;
  for (std::size_t i = 3; i < lines.size(); ++i) {
    if (v.index_.contains(lines[i])) {
      throw DataError(path.string() + ": duplicate token '" + lines[i] + "' on line " +
                      std::to_string(i + 1));
    }
    v.add(lines[i]);
  }
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write vocabulary " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

int Vocabulary::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnkId : it->second;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isalnum(u)) {
      cur.push_back(static_cast<char>(std::tolower(u)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

std::array<int, kContextLength> tokenize(std::string_view text, const Vocabulary& vocab) {
  std::array<int, kContextLength> ids;
  ids.fill(kPadId);
  ids[0] = kBosId;
  std::size_t pos = 1;
  for (const auto& w : split_words(text)) {
    if (pos == kContextLength) break;
    ids[pos++] = vocab.id(w);
  }
  return ids;
}

void TextConfig::validate() const {
  if (heads < 1 || width % heads != 0) {
    throw ConfigError("text: width " + std::to_string(width) + " is not divisible by heads " +
                      std::to_string(heads));
  }
  if (blocks < 1 || joint_dim < 1 || mlp_ratio < 1) {
    throw ConfigError("text: blocks, joint_dim and mlp_ratio must be positive");
  }
}

TextEncoder::TextEncoder(const TextConfig& config, Vocabulary vocab)
    : config_(config), vocab_(std::move(vocab)) {
  config_.validate();
  Rng rng(config_.seed);
  const auto n_vocab = static_cast<Index>(vocab_.size());
  token_embed_ = normal_tensor(n_vocab, config_.width, 1.0, rng, false);
  pos_embed_ = normal_tensor(static_cast<Index>(kContextLength), config_.width, 0.02, rng, false);
  for (int b = 0; b < config_.blocks; ++b) {
    auto block = TransformerBlock::init(config_.width, config_.heads, config_.mlp_ratio, rng);
    block.set_trainable(false);
    blocks_.push_back(std::move(block));
  }
  ln_final_ = LayerNormParams::init(config_.width);
  ln_final_.set_trainable(false);
  proj_ = Linear::init(config_.width, config_.joint_dim, rng, false);
  proj_.set_trainable(false);
}

void TextEncoder::collect(ParameterList& out, const std::string& prefix) const {
  out.push_back({prefix + ".token_embed", token_embed_});
  out.push_back({prefix + ".pos_embed", pos_embed_});
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    blocks_[b].collect(out, prefix + ".blocks." + std::to_string(b));
  }
  ln_final_.collect(out, prefix + ".ln_final");
  proj_.collect(out, prefix + ".proj");
}

RowVector TextEncoder::encode(std::string_view prompt) const {
  const auto ids = tokenize(prompt, vocab_);
  const auto n = static_cast<Index>(kContextLength);
  Matrix x(n, config_.width);
  Matrix mask = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    x.row(i) = token_embed_.value().row(ids[i]) + pos_embed_.value().row(i);
    if (ids[i] == kPadId) mask.col(i).setConstant(-1e30);
  }
  // Frozen weights: nothing is recorded.
  Tape tape;
  ForwardContext ctx;
  Tensor h(std::move(x));
  for (const auto& block : blocks_) h = block.forward(tape, h, ctx, &mask);
  Tensor pooled = ln_final_.forward(tape, slice_rows(tape, h, 0, 1));
  Tensor out = l2_normalize_rows(tape, proj_.forward(tape, pooled));
  return out.value().row(0);
}

Matrix TextEncoder::encode_batch(const std::vector<std::string>& prompts) const {
  Matrix out(static_cast<Index>(prompts.size()), config_.joint_dim);
  for (std::size_t i = 0; i < prompts.size(); ++i) out.row(static_cast<Index>(i)) = encode(prompts[i]);
  return out;
}

}  // namespace endoclip
