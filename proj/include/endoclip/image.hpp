#pragma once

#include "endoclip/tensor.hpp"

#include <filesystem>
#include <vector>

namespace endoclip {

/// Channel-planar image with intensities in [0, 1].
struct Image {
  std::vector<Matrix> planes;  // channels x (height x width)

  static Image zeros(Index channels, Index height, Index width);

  Index channels() const { return static_cast<Index>(planes.size()); }
  Index height() const { return planes.empty() ? 0 : planes.front().rows(); }
  Index width() const { return planes.empty() ? 0 : planes.front().cols(); }

  friend bool operator==(const Image& a, const Image& b);
};

/// Binary PGM (P5, 1 channel) or PPM (P6, 3 channels), maxval <= 255.
Image read_pnm(const std::filesystem::path& path);
void write_pnm(const std::filesystem::path& path, const Image& image);

inline constexpr double kBlackBorderThreshold = 10.0 / 255.0;

/// Crops to the bounding box of pixels whose brightest channel exceeds
/// `threshold`. An all-dark image is returned unchanged.
Image crop_black_border(const Image& image, double threshold = kBlackBorderThreshold);

/// Half-pixel-centred bilinear resampling.
Image resize_bilinear(const Image& image, Index height, Index width);

/// Reads, crops the black border and resizes to size x size with `channels`
/// channels (grayscale inputs are replicated).
Image load_image(const std::filesystem::path& path, Index size, Index channels = 3);

}  // namespace endoclip
