#include "endoclip/transformer.hpp"

#include "endoclip/errors.hpp"

#include <cmath>

namespace endoclip {

AttentionWeights AttentionWeights::init(Index d_model, int heads, Rng& rng) {
  if (heads < 1 || d_model % heads != 0) {
    throw ConfigError("attention: d_model " + std::to_string(d_model) +
                      " is not divisible by heads " + std::to_string(heads));
  }
  AttentionWeights w;
  w.query.linear = Linear::init(d_model, d_model, rng);
  w.key.linear = Linear::init(d_model, d_model, rng);
  w.value.linear = Linear::init(d_model, d_model, rng);
  w.output = Linear::init(d_model, d_model, rng);
  w.heads = heads;
  return w;
}

void AttentionWeights::collect(ParameterList& out, const std::string& prefix) const {
  query.collect(out, prefix + ".q");
  key.collect(out, prefix + ".k");
  value.collect(out, prefix + ".v");
  output.collect(out, prefix + ".o");
}

void AttentionWeights::set_trainable(bool on) {
  query.linear.set_trainable(on);
  key.linear.set_trainable(on);
  value.linear.set_trainable(on);
  output.set_trainable(on);
}

Tensor mha_forward(Tape& tape, const Tensor& x, const AttentionWeights& w,
                   const ForwardContext& ctx, const Matrix* mask_bias) {
  const Index d_model = w.query.linear.in_features();
  if (x.cols() != d_model) {
    throw DimensionError("mha: input " + x.shape_str() + " vs model width " +
                         std::to_string(d_model));
  }
  if (mask_bias && (mask_bias->rows() != x.rows() || mask_bias->cols() != x.rows())) {
    throw DimensionError("mha: mask " + shape_string(mask_bias->rows(), mask_bias->cols()) +
                         " for " + std::to_string(x.rows()) + " tokens");
  }
  Tensor q = w.query.forward(tape, x, ctx);
  Tensor k = w.key.forward(tape, x, ctx);
  Tensor v = w.value.forward(tape, x, ctx);
  const Index dh = w.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> heads;
  heads.reserve(w.heads);
  for (int h = 0; h < w.heads; ++h) {
    Tensor qh = slice_cols(tape, q, h * dh, dh);
    Tensor kh = slice_cols(tape, k, h * dh, dh);
    Tensor vh = slice_cols(tape, v, h * dh, dh);
    Tensor scores = scale(tape, matmul_nt(tape, qh, kh), inv_sqrt);
    if (mask_bias) scores = add_const(tape, scores, *mask_bias);
    heads.push_back(matmul(tape, row_softmax(tape, scores), vh));
  }
  Tensor cat = heads.size() == 1 ? heads.front() : hstack(tape, heads);
  return w.output.forward(tape, cat);
}

TransformerBlock TransformerBlock::init(Index d_model, int heads, int mlp_ratio, Rng& rng) {
  TransformerBlock b;
  b.ln1 = LayerNormParams::init(d_model);
  b.attn = AttentionWeights::init(d_model, heads, rng);
  b.ln2 = LayerNormParams::init(d_model);
  b.fc1 = Linear::init(d_model, d_model * mlp_ratio, rng);
  b.fc2 = Linear::init(d_model * mlp_ratio, d_model, rng);
  return b;
}

Tensor TransformerBlock::forward(Tape& tape, const Tensor& x, const ForwardContext& ctx,
                                 const Matrix* mask_bias) const {
  Tensor h = add(tape, x, mha_forward(tape, ln1.forward(tape, x), attn, ctx, mask_bias));
  Tensor m = fc2.forward(tape, gelu(tape, fc1.forward(tape, ln2.forward(tape, h))));
  return add(tape, h, m);
}

void TransformerBlock::collect(ParameterList& out, const std::string& prefix) const {
  ln1.collect(out, prefix + ".ln1");
  attn.collect(out, prefix + ".attn");
  ln2.collect(out, prefix + ".ln2");
  fc1.collect(out, prefix + ".fc1");
  fc2.collect(out, prefix + ".fc2");
}

void TransformerBlock::set_trainable(bool on) {
  ln1.set_trainable(on);
  attn.set_trainable(on);
  ln2.set_trainable(on);
  fc1.set_trainable(on);
  fc2.set_trainable(on);
}

}  // namespace endoclip
