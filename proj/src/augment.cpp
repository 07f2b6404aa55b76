#include "endoclip/augment.hpp"

#include <iostream>
#include <numeric>

namespace endoclip {

void AugmentPolicy::validate() const {
  if (!(mask_fraction > 0.0 && mask_fraction < 1.0)) {
    throw ConfigError("augment: mask_fraction must lie in (0, 1)");
  }
  if (mask_patch < 1) throw ConfigError("augment: mask_patch must be positive");
}

Image box_blur3(const Image& image) {
  Image out = image;
  const Index h = image.height(), w = image.width();
  for (Index c = 0; c < image.channels(); ++c) {
    const Matrix& src = image.planes[c];
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        double acc = 0.0;
        for (Index dy = -1; dy <= 1; ++dy)
          for (Index dx = -1; dx <= 1; ++dx)
            acc += src(std::clamp<Index>(y + dy, 0, h - 1), std::clamp<Index>(x + dx, 0, w - 1));
        out.planes[c](y, x) = acc / 9.0;
      }
    }
  }
  return out;
}

Image flip_vertical(const Image& image) {
  Image out = image;
  for (auto& p : out.planes) p = p.colwise().reverse().eval();
  return out;
}

Image flip_horizontal(const Image& image) {
  Image out = image;
  for (auto& p : out.planes) p = p.rowwise().reverse().eval();
  return out;
}

Index masked_patch_count(Index size, Index patch, double fraction) {
  if (patch < 1 || size % patch != 0) {
    throw ConfigError("patch_mask: image size " + std::to_string(size) +
                      " is not divisible by patch " + std::to_string(patch));
  }
  const Index cells = (size / patch) * (size / patch);
  return std::clamp<Index>(std::lround(fraction * static_cast<double>(cells)), 0, cells);
}

Image patch_mask(const Image& image, Index patch, double fraction, Rng& rng) {
  if (image.height() != image.width()) throw DimensionError("patch_mask: image must be square");
  const Index count = masked_patch_count(image.height(), patch, fraction);
  const Index grid = image.height() / patch;
  std::vector<Index> cells(static_cast<std::size_t>(grid * grid));
  std::iota(cells.begin(), cells.end(), Index{0});
  // Partial Fisher-Yates: the first `count` cells are a uniform sample.
  for (Index i = 0; i < count; ++i) {
    const auto j = i + static_cast<Index>(rng.below(static_cast<std::uint64_t>(cells.size() - i)));
    std::swap(cells[i], cells[j]);
  }
  Image out = image;
  for (Index i = 0; i < count; ++i) {
    const Index gy = cells[i] / grid, gx = cells[i] % grid;
    for (auto& p : out.planes) p.block(gy * patch, gx * patch, patch, patch).setZero();
  }
  return out;
}

Image augment_image(const Image& image, const std::string& class_name,
                    const AugmentPolicy& policy, Rng& rng) {
  Image out = image;
  // Every draw happens regardless of toggles so the stream stays aligned.
  const bool do_blur = rng.coin();
  const bool do_color = rng.coin();
  const bool do_contrast = rng.coin();
  const bool do_vflip = rng.coin();
  const bool do_hflip = rng.coin();
  std::vector<double> gains(static_cast<std::size_t>(image.channels()));
  for (auto& g : gains) g = rng.uniform(0.8, 1.2);
  const double contrast = rng.uniform(0.8, 1.2);

  if (policy.enable_blur && do_blur) out = box_blur3(out);
  if (policy.enable_color && do_color) {
    for (Index c = 0; c < out.channels(); ++c) {
      out.planes[c] = (out.planes[c] * gains[c]).cwiseMin(1.0).cwiseMax(0.0);
    }
  }
  if (policy.enable_contrast && do_contrast) {
    double total = 0.0;
    Index n = 0;
    for (const auto& p : out.planes) {
      total += p.sum();
      n += p.size();
    }
    const double mu = total / static_cast<double>(n);
    for (auto& p : out.planes) {
      p = ((p.array() - mu) * contrast + mu).matrix().cwiseMin(1.0).cwiseMax(0.0);
    }
  }
  if (policy.vertical_flip && do_vflip) out = flip_vertical(out);
  if (do_hflip && policy.horizontal_flip_classes.contains(class_name)) out = flip_horizontal(out);
  if (policy.enable_mask) out = patch_mask(out, policy.mask_patch, policy.mask_fraction, rng);
  return out;
}

Tensor slerp(Tape& tape, const Tensor& f1, const Tensor& f2, double lambda) {
  if (f1.rows() != 1 || f2.rows() != 1 || f1.cols() != f2.cols()) {
    throw DimensionError("slerp: need two 1 x d rows, got " + f1.shape_str() + " and " +
                         f2.shape_str());
  }
  const RowVector a = f1.value().row(0);
  const RowVector b = f2.value().row(0);
  if (std::abs(a.norm() - 1.0) > kSlerpUnitTolerance ||
      std::abs(b.norm() - 1.0) > kSlerpUnitTolerance) {
    throw ContractError("slerp: inputs must be unit vectors");
  }
  const double c = std::clamp(a.dot(b), -1.0, 1.0);
  const double theta = std::acos(c);
  const double s = std::sin(theta);
  const bool linear = s < kSlerpDegenerateSin;
  double w1, w2, dw1, dw2;  // weights and their derivatives in theta
  if (linear) {
    w1 = 1.0 - lambda;
    w2 = lambda;
    dw1 = dw2 = 0.0;
  } else {
    const double s1 = std::sin((1.0 - lambda) * theta), s2 = std::sin(lambda * theta);
    w1 = s1 / s;
    w2 = s2 / s;
    dw1 = ((1.0 - lambda) * std::cos((1.0 - lambda) * theta) * s - s1 * c) / (s * s);
    dw2 = (lambda * std::cos(lambda * theta) * s - s2 * c) / (s * s);
  }
  const RowVector g = w1 * a + w2 * b;
  const double gnorm = g.norm();
  if (gnorm == 0.0) throw ContractError("slerp: antipodal inputs have no unique path at this lambda");
  Matrix out = g / gnorm;
  const RowVector y = out.row(0);
  return tape.record(std::move(out), {f1, f2},
                     [f1, f2, a, b, y, gnorm, w1, w2, dw1, dw2, s, linear](const Matrix& grad) mutable {
                       const RowVector go = grad.row(0);
                       const RowVector dg = (go - y * go.dot(y)) / gnorm;
                       RowVector da = w1 * dg;
                       RowVector db = w2 * dg;
                       if (!linear) {
                         // theta = acos(a.b): d theta / d(a.b) = -1 / sin(theta)
                         const double dtheta = (dw1 * dg.dot(a) + dw2 * dg.dot(b)) * (-1.0 / s);
                         da += dtheta * b;
                         db += dtheta * a;
                       }
                       accumulate_grad(f1, da);
                       accumulate_grad(f2, db);
                     });
}

std::vector<SlerpPair> sample_slerp_pairs(const std::vector<int>& labels, Rng& rng,
                                          std::size_t count) {
  std::vector<SlerpPair> candidates;
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t j = i + 1; j < labels.size(); ++j)
      if (labels[i] == labels[j]) candidates.push_back({i, j, 0.0});
  std::vector<SlerpPair> out;
  if (candidates.empty()) {
    if (count > 0) std::clog << "warning: slerp augmentation skipped, no class has two members\n";
    return out;
  }
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    SlerpPair p = candidates[rng.below(candidates.size())];
    p.lambda = rng.uniform();
    out.push_back(p);
  }
  return out;
}

std::vector<LabeledFeature> sample_slerp_batch(const std::vector<LabeledFeature>& features,
                                               Rng& rng, std::size_t count) {
  std::vector<int> labels;
  labels.reserve(features.size());
  for (const auto& f : features) labels.push_back(f.class_id);
  std::vector<LabeledFeature> out;
  for (const auto& p : sample_slerp_pairs(labels, rng, count)) {
    const auto& f1 = features[p.first];
    const auto& f2 = features[p.second];
    out.push_back({slerp(f1.embedding, f2.embedding, p.lambda), f1.class_id});
  }
  return out;
}

}  // namespace endoclip
