#pragma once

// Pixel-space augmentations and spherical feature augmentation (Slerp
// between same-class unit embeddings).

#include "endoclip/errors.hpp"
#include "endoclip/image.hpp"
#include "endoclip/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

namespace endoclip {

struct AugmentPolicy {
  bool enable_blur = true;
  bool enable_color = true;
  bool enable_contrast = true;
  bool vertical_flip = true;
  std::set<std::string> horizontal_flip_classes = {"throat", "vc-open", "vc-closed"};
  bool enable_mask = true;
  Index mask_patch = 16;
  double mask_fraction = 0.10;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

/// Each enabled transform fires independently with probability 1/2 (3x3 box
/// blur, per-channel gain, contrast about the mean, vertical flip,
/// horizontal flip for listed classes); patch masking runs last.
Image augment_image(const Image& image, const std::string& class_name,
                    const AugmentPolicy& policy, Rng& rng);

Image box_blur3(const Image& image);
Image flip_vertical(const Image& image);
Image flip_horizontal(const Image& image);

/// Number of grid cells patch_mask zeroes: round(fraction * (S / patch)^2).
Index masked_patch_count(Index size, Index patch, double fraction);

/// Zeroes masked_patch_count distinct grid-aligned patches chosen uniformly
/// without replacement. Throws ConfigError when patch does not divide S.
Image patch_mask(const Image& image, Index patch, double fraction, Rng& rng);

// ---------------------------------------------------------------------------
// Slerp

inline constexpr double kSlerpUnitTolerance = 1e-6;
inline constexpr double kSlerpDegenerateSin = 1e-6;

/// Great-circle interpolation between unit vectors f1 and f2. Falls back to
/// normalized linear interpolation when sin(theta) < 1e-6. The result is
/// renormalized. Throws ContractError on non-unit inputs.
template <typename D1, typename D2>
auto slerp(const Eigen::MatrixBase<D1>& f1, const Eigen::MatrixBase<D2>& f2, double lambda) {
  using Scalar = typename D1::Scalar;
  using Vec = Eigen::Matrix<Scalar, D1::RowsAtCompileTime, D1::ColsAtCompileTime>;
  if (f1.size() != f2.size()) throw DimensionError("slerp: operand sizes differ");
  if (std::abs(f1.norm() - 1) > kSlerpUnitTolerance ||
      std::abs(f2.norm() - 1) > kSlerpUnitTolerance) {
    throw ContractError("slerp: inputs must be unit vectors");
  }
  const Scalar c = std::clamp<Scalar>(f1.dot(f2), -1, 1);
  const Scalar theta = std::acos(c);
  const Scalar s = std::sin(theta);
  Vec out;
  if (s < kSlerpDegenerateSin) {
    out = (1 - lambda) * f1 + lambda * f2;
  } else {
    out = (std::sin((1 - lambda) * theta) / s) * f1 + (std::sin(lambda * theta) / s) * f2;
  }
  const Scalar n = out.norm();
  if (n == 0) throw ContractError("slerp: antipodal inputs have no unique path at this lambda");
  return Vec(out / n);
}

/// Differentiable slerp between two 1 x d rows of a tape.
Tensor slerp(Tape& tape, const Tensor& f1, const Tensor& f2, double lambda);

struct LabeledFeature {
  RowVector embedding;  // unit norm
  int class_id = 0;
};

struct SlerpPair {
  std::size_t first = 0;
  std::size_t second = 0;
  double lambda = 0.0;
};

/// Draws `count` pairs uniformly from all unordered same-class index pairs
/// (classes with fewer than two members contribute none), lambda ~ U[0, 1].
/// Returns an empty list, and logs a warning, when no class is eligible.
std::vector<SlerpPair> sample_slerp_pairs(const std::vector<int>& labels, Rng& rng,
                                          std::size_t count);

std::vector<LabeledFeature> sample_slerp_batch(const std::vector<LabeledFeature>& features,
                                               Rng& rng, std::size_t count);

}  // namespace endoclip
