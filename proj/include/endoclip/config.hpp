#pragma once

// Run configuration: one JSON document with a nested section per component.
// Missing keys keep their defaults; unknown keys are rejected.

#include "endoclip/augment.hpp"
#include "endoclip/encoders.hpp"
#include "endoclip/fusion.hpp"
#include "endoclip/lora.hpp"
#include "endoclip/objectives.hpp"
#include "endoclip/optim.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>

namespace endoclip {

/// Architecture switches of the ablation arms.
struct AblationToggles {
  bool lora = true;
  bool mfa = true;
  bool sfa = true;
};

struct TrainConfig {
  std::uint64_t seed = 0;
  int epochs = 50;
  int max_steps = 0;  // 0 = no cap
  int batch_size = 16;
  AdamWConfig optim;
  LossWeights loss;
  double temperature = 1.0;
  LoraConfig lora;
  FusionConfig fusion;
  AugmentPolicy augment;
  bool augment_images = true;
  int sfa_count = 0;  // augmented features per batch; 0 = batch_size / 2
  AblationToggles ablation;
  ViTConfig vit;
  TextConfig text;

  void validate() const;
  int resolved_sfa_count(int batch) const { return sfa_count > 0 ? sfa_count : batch / 2; }
};

nlohmann::ordered_json to_json(const TrainConfig& config);
TrainConfig config_from_json(const nlohmann::json& j);

TrainConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const TrainConfig& config);

}  // namespace endoclip
