#include "endoclip/objectives.hpp"

#include "endoclip/errors.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

namespace endoclip {

int class_index(std::string_view name) {
  auto it = std::find(kClassNames.begin(), kClassNames.end(), name);
  if (it == kClassNames.end()) throw LabelError("unknown class '" + std::string(name) + "'");
  return static_cast<int>(it - kClassNames.begin());
}

std::string_view class_name(int index) {
  if (index < 0 || index >= kNumClasses) {
    throw LabelError("label " + std::to_string(index) + " outside [0, 7)");
  }
  return kClassNames[static_cast<std::size_t>(index)];
}

void LossWeights::validate() const {
  if (!(mu1 >= 0.0) || !(mu2 >= 0.0)) throw ConfigError("loss weights must be non-negative");
}

std::string build_prompt(std::string_view class_name,
                         const std::optional<std::string>& description) {
  class_index(class_name);
  std::string out(kPromptPrefix);
  out += class_name;
  out += ", ";
  std::string_view tail = kGenericSuffix;
  if (description && !description->empty()) tail = *description;
  while (!tail.empty() && tail.back() == '.') tail.remove_suffix(1);
  out += tail;
  out += '.';
  return out;
}

namespace {

void require_unit_rows(const char* op, const Matrix& m) {
  for (Index i = 0; i < m.rows(); ++i) {
    if (std::abs(m.row(i).norm() - 1.0) > kUnitRowTolerance) {
      throw ContractError(std::string(op) + ": row " + std::to_string(i) + " is not unit norm");
    }
  }
}

}  // namespace

Tensor contrastive_loss(Tape& tape, const Tensor& v, const Tensor& u, double temperature) {
  if (v.rows() == 0) throw ContractError("contrastive_loss: empty batch");
  if (v.rows() != u.rows() || v.cols() != u.cols()) {
    throw DimensionError("contrastive_loss: " + v.shape_str() + " vs " + u.shape_str());
  }
  if (!(temperature > 0.0)) throw ContractError("contrastive_loss: temperature must be positive");
  require_unit_rows("contrastive_loss", v.value());
  require_unit_rows("contrastive_loss", u.value());
  std::vector<int> diag(static_cast<std::size_t>(v.rows()));
  std::iota(diag.begin(), diag.end(), 0);
  Tensor vu = row_dots(tape, v, u);
  Tensor uv = row_dots(tape, u, v);
  if (temperature != 1.0) {
    vu = scale(tape, vu, 1.0 / temperature);
    uv = scale(tape, uv, 1.0 / temperature);
  }
  Tensor both = add(tape, cross_entropy(tape, vu, diag), cross_entropy(tape, uv, diag));
  return scale(tape, both, 0.5);
}

double contrastive_loss(const Matrix& v, const Matrix& u, double temperature) {
  Tape tape;
  return contrastive_loss(tape, Tensor(v), Tensor(u), temperature).item();
}

Tensor classification_loss(Tape& tape, const Tensor& features, std::span<const int> labels,
                           const Linear& head) {
  for (int l : labels) class_name(l);
  if (head.out_features() != kNumClasses) {
    throw DimensionError("classification head must emit 7 logits, got " +
                         std::to_string(head.out_features()));
  }
  return cross_entropy(tape, head.forward(tape, features), labels);
}

double classification_loss(const Matrix& features, std::span<const int> labels,
                           const Linear& head) {
  Tape tape;
  return classification_loss(tape, Tensor(features), labels, head).item();
}

Tensor total_loss(Tape& tape, const Tensor& cls, const Tensor& con, const LossWeights& w) {
  return add(tape, scale(tape, cls, w.mu1), scale(tape, con, w.mu2));
}

}  // namespace endoclip
