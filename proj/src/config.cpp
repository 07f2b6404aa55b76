#include "endoclip/config.hpp"

#include "endoclip/errors.hpp"

#include <fstream>
#include <initializer_list>

namespace endoclip {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (sfa_count < 0) throw ConfigError("sfa_count must be >= 0");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  optim.validate();
  loss.validate();
  vit.validate();
  text.validate();
  if (text.joint_dim != vit.joint_dim) {
    throw ConfigError("text.joint_dim must equal vit.joint_dim");
  }
  if (ablation.lora) lora.validate(vit.d_model, vit.d_model);
  if (ablation.mfa) {
    fusion.resolve(vit.num_blocks);
    if (fusion.fusion_heads < 1 || vit.d_model % fusion.fusion_heads != 0) {
      throw ConfigError("fusion: d_model is not divisible by fusion heads");
    }
  }
  augment.validate();
}

ojson to_json(const TrainConfig& c) {
  ojson j;
  j["seed"] = c.seed;
  j["epochs"] = c.epochs;
  j["max_steps"] = c.max_steps;
  j["batch_size"] = c.batch_size;
  j["optimizer"] = {{"lr", c.optim.lr},
                    {"betas", {c.optim.beta1, c.optim.beta2}},
                    {"eps", c.optim.eps},
                    {"weight_decay", c.optim.weight_decay}};
  j["loss"] = {{"mu1", c.loss.mu1}, {"mu2", c.loss.mu2}, {"temperature", c.temperature}};
  j["lora"] = {{"rank", c.lora.rank}, {"alpha", c.lora.alpha}, {"dropout", c.lora.dropout}};
  j["fusion"] = {{"selected_layers", c.fusion.selected_layers},
                 {"k", c.fusion.k},
                 {"blocks", c.fusion.fusion_blocks},
                 {"heads", c.fusion.fusion_heads}};
  const auto& a = c.augment;
  j["augment"] = {{"enabled", c.augment_images},
                  {"blur", a.enable_blur},
                  {"color", a.enable_color},
                  {"contrast", a.enable_contrast},
                  {"vertical_flip", a.vertical_flip},
                  {"horizontal_flip_classes", a.horizontal_flip_classes},
                  {"mask", a.enable_mask},
                  {"mask_patch", a.mask_patch},
                  {"mask_fraction", a.mask_fraction},
                  {"rng_seed", a.rng_seed}};
  j["sfa_count"] = c.sfa_count;
  j["ablation"] = {{"lora", c.ablation.lora}, {"mfa", c.ablation.mfa}, {"sfa", c.ablation.sfa}};
  j["vit"] = {{"image_size", c.vit.image_size}, {"patch_size", c.vit.patch_size},
              {"channels", c.vit.channels},     {"d_model", c.vit.d_model},
              {"num_blocks", c.vit.num_blocks}, {"num_heads", c.vit.num_heads},
              {"joint_dim", c.vit.joint_dim},   {"mlp_ratio", c.vit.mlp_ratio}};
  j["text"] = {{"width", c.text.width},         {"blocks", c.text.blocks},
               {"heads", c.text.heads},         {"joint_dim", c.text.joint_dim},
               {"mlp_ratio", c.text.mlp_ratio}, {"seed", c.text.seed}};
  return j;
}

namespace {

void check_keys(const json& obj, const std::string& section,
                std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError("config: '" + section + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("config: unknown key '" + section + key + "'");
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (auto it = obj.find(key); it != obj.end()) {
    try {
      out = it->get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
    }
  }
}

}  // namespace

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  check_keys(j, "", {"seed", "epochs", "max_steps", "batch_size", "optimizer", "loss", "lora",
                     "fusion", "augment", "sfa_count", "ablation", "vit", "text"});
  read(j, "seed", c.seed);
  read(j, "epochs", c.epochs);
  read(j, "max_steps", c.max_steps);
  read(j, "batch_size", c.batch_size);
  read(j, "sfa_count", c.sfa_count);
  if (auto it = j.find("optimizer"); it != j.end()) {
    check_keys(*it, "optimizer.", {"lr", "betas", "eps", "weight_decay"});
    read(*it, "lr", c.optim.lr);
    if (auto b = it->find("betas"); b != it->end()) {
      if (!b->is_array() || b->size() != 2) throw ConfigError("config: betas must be [b1, b2]");
      c.optim.beta1 = (*b)[0].get<double>();
      c.optim.beta2 = (*b)[1].get<double>();
    }
    read(*it, "eps", c.optim.eps);
    read(*it, "weight_decay", c.optim.weight_decay);
  }
  if (auto it = j.find("loss"); it != j.end()) {
    check_keys(*it, "loss.", {"mu1", "mu2", "temperature"});
    read(*it, "mu1", c.loss.mu1);
    read(*it, "mu2", c.loss.mu2);
    read(*it, "temperature", c.temperature);
  }
  if (auto it = j.find("lora"); it != j.end()) {
    check_keys(*it, "lora.", {"rank", "alpha", "dropout"});
    read(*it, "rank", c.lora.rank);
    read(*it, "alpha", c.lora.alpha);
    read(*it, "dropout", c.lora.dropout);
  }
  if (auto it = j.find("fusion"); it != j.end()) {
    check_keys(*it, "fusion.", {"selected_layers", "k", "blocks", "heads"});
    read(*it, "selected_layers", c.fusion.selected_layers);
    read(*it, "k", c.fusion.k);
    read(*it, "blocks", c.fusion.fusion_blocks);
    read(*it, "heads", c.fusion.fusion_heads);
  }
  if (auto it = j.find("augment"); it != j.end()) {
    check_keys(*it, "augment.", {"enabled", "blur", "color", "contrast", "vertical_flip",
                                 "horizontal_flip_classes", "mask", "mask_patch",
                                 "mask_fraction", "rng_seed"});
    auto& a = c.augment;
    read(*it, "enabled", c.augment_images);
    read(*it, "blur", a.enable_blur);
    read(*it, "color", a.enable_color);
    read(*it, "contrast", a.enable_contrast);
    read(*it, "vertical_flip", a.vertical_flip);
    read(*it, "horizontal_flip_classes", a.horizontal_flip_classes);
    read(*it, "mask", a.enable_mask);
    read(*it, "mask_patch", a.mask_patch);
    read(*it, "mask_fraction", a.mask_fraction);
    read(*it, "rng_seed", a.rng_seed);
  }
  if (auto it = j.find("ablation"); it != j.end()) {
    check_keys(*it, "ablation.", {"lora", "mfa", "sfa"});
    read(*it, "lora", c.ablation.lora);
    read(*it, "mfa", c.ablation.mfa);
    read(*it, "sfa", c.ablation.sfa);
  }
  if (auto it = j.find("vit"); it != j.end()) {
    check_keys(*it, "vit.", {"image_size", "patch_size", "channels", "d_model", "num_blocks",
                             "num_heads", "joint_dim", "mlp_ratio"});
    read(*it, "image_size", c.vit.image_size);
    read(*it, "patch_size", c.vit.patch_size);
    read(*it, "channels", c.vit.channels);
    read(*it, "d_model", c.vit.d_model);
    read(*it, "num_blocks", c.vit.num_blocks);
    read(*it, "num_heads", c.vit.num_heads);
    read(*it, "joint_dim", c.vit.joint_dim);
    read(*it, "mlp_ratio", c.vit.mlp_ratio);
  }
  if (auto it = j.find("text"); it != j.end()) {
    check_keys(*it, "text.", {"width", "blocks", "heads", "joint_dim", "mlp_ratio", "seed"});
    read(*it, "width", c.text.width);
    read(*it, "blocks", c.text.blocks);
    read(*it, "heads", c.text.heads);
    read(*it, "joint_dim", c.text.joint_dim);
    read(*it, "mlp_ratio", c.text.mlp_ratio);
    read(*it, "seed", c.text.seed);
  }
  c.validate();
  return c;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

void save_config(const std::filesystem::path& path, const TrainConfig& config) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config " + path.string());
  out << to_json(config).dump(2) << '\n';
}

}  // namespace endoclip
