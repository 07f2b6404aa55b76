#pragma once

// Prompts, the symmetric image-text contrastive loss, classification
// cross-entropy and their weighted sum.

#include "endoclip/classes.hpp"
#include "endoclip/layers.hpp"

#include <optional>
#include <span>
#include <string>
#include <string_view>

namespace endoclip {

struct LossWeights {
  double mu1 = 1.0;  // classification
  double mu2 = 0.5;  // contrastive

  void validate() const;
};

inline constexpr std::string_view kPromptPrefix = "A photo of a ";
inline constexpr std::string_view kGenericSuffix = "Image description";

/// "A photo of a {class}, {description}." or, without a description,
/// "A photo of a {class}, Image description.". Throws LabelError for classes
/// outside the set.
std::string build_prompt(std::string_view class_name,
                         const std::optional<std::string>& description = std::nullopt);

inline constexpr double kUnitRowTolerance = 1e-6;

/// 1/2 (L_{v->u} + L_{u->v}) over the N x N matrix of v_i . u_j / temperature,
/// each term the mean cross-entropy of the matched diagonal. Rows must be
/// unit norm; N must be positive.
Tensor contrastive_loss(Tape& tape, const Tensor& v, const Tensor& u, double temperature = 1.0);
double contrastive_loss(const Matrix& v, const Matrix& u, double temperature = 1.0);

/// Mean cross-entropy of head(features) against labels in [0, 7).
Tensor classification_loss(Tape& tape, const Tensor& features, std::span<const int> labels,
                           const Linear& head);
double classification_loss(const Matrix& features, std::span<const int> labels,
                           const Linear& head);

Tensor total_loss(Tape& tape, const Tensor& cls, const Tensor& con, const LossWeights& w);
inline double total_loss(double cls, double con, const LossWeights& w) {
  return w.mu1 * cls + w.mu2 * con;
}

}  // namespace endoclip
