#include "endoclip/layers.hpp"

#include <cmath>

namespace endoclip {

Tensor normal_tensor(Index rows, Index cols, double stddev, Rng& rng, bool requires_grad) {
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, stddev);
  return Tensor(std::move(m), requires_grad);
}

Linear Linear::init(Index in, Index out, Rng& rng, bool with_bias) {
  Linear l;
  l.weight = normal_tensor(out, in, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  if (with_bias) l.bias = Tensor::zeros(1, out, true);
  return l;
}

Tensor Linear::forward(Tape& tape, const Tensor& x) const {
  Tensor y = matmul_nt(tape, x, weight);
  return bias.defined() ? add_row(tape, y, bias) : y;
}

void Linear::collect(ParameterList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

void Linear::set_trainable(bool on) {
  weight.set_requires_grad(on);
  if (bias.defined()) bias.set_requires_grad(on);
}

LayerNormParams LayerNormParams::init(Index d) {
  return {Tensor(Matrix::Ones(1, d), true), Tensor::zeros(1, d, true)};
}

void LayerNormParams::collect(ParameterList& out, const std::string& prefix) const {
  out.push_back({prefix + ".gain", gain});
  out.push_back({prefix + ".bias", bias});
}

void LayerNormParams::set_trainable(bool on) {
  gain.set_requires_grad(on);
  bias.set_requires_grad(on);
}

}  // namespace endoclip
