#include "endoclip/lora.hpp"

#include "endoclip/errors.hpp"

#include <algorithm>
#include <cmath>

namespace endoclip {

void LoraConfig::validate(Index d1, Index d2) const {
  if (rank < 1) throw ConfigError("lora: rank must be >= 1, got " + std::to_string(rank));
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw ConfigError("lora: dropout must lie in [0, 1), got " + std::to_string(dropout));
  }
  if (!std::isfinite(alpha)) throw ConfigError("lora: alpha must be finite");
  if (d1 > 0 && d2 > 0 && 2 * rank > std::min(d1, d2)) {
    throw ConfigError("lora: rank " + std::to_string(rank) + " exceeds min(d1, d2)/2 for " +
                      shape_string(d1, d2));
  }
}

LoraAdapter lora_init(Index d1, Index d2, const LoraConfig& config, std::uint64_t seed) {
  if (d1 <= 0 || d2 <= 0) throw ConfigError("lora: dimensions must be positive");
  config.validate(d1, d2);
  Rng rng(seed);
  const double bound = std::sqrt(6.0 / static_cast<double>(d2));
  Matrix a(config.rank, d2);
  for (Index i = 0; i < a.size(); ++i) a.data()[i] = rng.uniform(-bound, bound);
  LoraAdapter adapter;
  adapter.a = Tensor(std::move(a), true);
  adapter.b = Tensor::zeros(d1, config.rank, true);
  adapter.gamma = config.gamma();
  adapter.config = config;
  adapter.seed = seed;
  return adapter;
}

Tensor lora_apply(Tape& tape, const LoraAdapter& adapter, const Tensor& x, bool training,
                  Rng* rng) {
  if (!adapter.base.defined()) throw ContractError("lora_apply: adapter has no base weight");
  if (x.cols() != adapter.base.cols()) {
    throw DimensionError("lora_apply: input " + x.shape_str() + " vs base weight " +
                         adapter.base.shape_str());
  }
  Tensor base = matmul_nt(tape, x, adapter.base);
  Tensor in = x;
  const double p = adapter.config.dropout;
  if (training && rng != nullptr && p > 0.0) {
    Matrix mask(x.rows(), x.cols());
    const double keep = 1.0 / (1.0 - p);
    for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng->uniform() < p ? 0.0 : keep;
    in = mul_const(tape, x, mask);
  }
  Tensor delta = matmul_nt(tape, matmul_nt(tape, in, adapter.a), adapter.b);
  return add(tape, base, scale(tape, delta, adapter.gamma));
}

Tensor AdaptedLinear::forward(Tape& tape, const Tensor& x, const ForwardContext& ctx) const {
  if (!lora) return linear.forward(tape, x);
  Tensor y = lora_apply(tape, *lora, x, ctx.training, ctx.rng);
  return linear.bias.defined() ? add_row(tape, y, linear.bias) : y;
}

void AdaptedLinear::attach(const LoraConfig& config, std::uint64_t seed) {
  if (lora) throw ContractError("lora: projection already carries an adapter");
  LoraAdapter adapter =
      lora_init(linear.out_features(), linear.in_features(), config, seed);
  linear.set_trainable(false);
  adapter.base = linear.weight;
  lora = std::move(adapter);
}

void AdaptedLinear::collect(ParameterList& out, const std::string& prefix) const {
  linear.collect(out, prefix);
  if (lora) {
    out.push_back({prefix + ".lora_a", lora->a});
    out.push_back({prefix + ".lora_b", lora->b});
  }
}

}  // namespace endoclip
