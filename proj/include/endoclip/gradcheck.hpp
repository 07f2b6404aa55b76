#pragma once

// Finite-difference verification of every differentiable component, used by
// the `gradcheck` subcommand and the test suites.

#include "endoclip/config.hpp"

#include <string>
#include <vector>

namespace endoclip {

inline constexpr double kGradcheckTolerance = 1e-4;

struct GradcheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;

  double max_error() const;
  bool passed(double tol = kGradcheckTolerance) const { return max_error() < tol; }
};

/// Shrinks a run configuration to the gradient-check geometry (d_model 16,
/// 16 x 16 images, 8-pixel patches) keeping its toggles, LoRA, fusion and
/// loss settings.
TrainConfig gradcheck_config(const TrainConfig& base);

/// Central differences of the total loss on a 4-sample, two-class batch with
/// the configured toggles (dropout and slerp draws re-seeded per evaluation),
/// through all trainable parameters.
GradcheckEntry check_total_loss(const TrainConfig& base, double step = 1e-5);

/// Primitive operations, objectives, slerp, LoRA, attention and fusion,
/// followed by the total loss.
GradcheckReport run_gradcheck(const TrainConfig& base, double step = 1e-5);

}  // namespace endoclip
