#include "endoclip/encoders.hpp"
#include "endoclip/errors.hpp"
#include "endoclip/lora.hpp"
#include "endoclip/objectives.hpp"
#include "endoclip/optim.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace endoclip;
using endoclip::testing::random_matrix;

namespace {

LoraAdapter adapter_with_base(Index d1, Index d2, const LoraConfig& cfg, std::uint64_t seed,
                              Rng& rng) {
  LoraAdapter a = lora_init(d1, d2, cfg, seed);
  a.base = Tensor(random_matrix(d1, d2, rng));
  return a;
}

}  // namespace

TEST(LoraInit, BIsZeroAndGammaIsAlphaOverRank) {
  const LoraAdapter a = lora_init(16, 12, LoraConfig{}, 3);
  EXPECT_EQ(a.b.value(), Matrix::Zero(16, 4));
  EXPECT_EQ(a.gamma, 2.0);
  EXPECT_EQ(a.a.rows(), 4);
  EXPECT_EQ(a.a.cols(), 12);
}

TEST(LoraInit, KaimingUniformBoundAndDeterminism) {
  const LoraAdapter a = lora_init(16, 24, LoraConfig{}, 5);
  const LoraAdapter b = lora_init(16, 24, LoraConfig{}, 5);
  EXPECT_EQ(a.a.value(), b.a.value());
  EXPECT_LE(a.a.value().cwiseAbs().maxCoeff(), std::sqrt(6.0 / 24.0));
  EXPECT_NE(a.a.value(), lora_init(16, 24, LoraConfig{}, 6).a.value());
}

TEST(LoraConfig, RejectsInvalidSettings) {
  EXPECT_THROW((LoraConfig{0, 8.0, 0.1}).validate(), ConfigError);
  EXPECT_THROW((LoraConfig{4, 8.0, 1.0}).validate(), ConfigError);
  EXPECT_THROW((LoraConfig{4, 8.0, 0.1}).validate(6, 64), ConfigError);
  EXPECT_NO_THROW((LoraConfig{4, 8.0, 0.1}).validate(8, 64));
}

TEST(LoraApply, ZeroBIsBasePathExactly) {
  Rng rng(21);
  const LoraAdapter a = adapter_with_base(10, 8, LoraConfig{}, 1, rng);
  const Matrix x = random_matrix(3, 8, rng);
  Tape tape;
  const Matrix out = lora_apply(tape, a, Tensor(x), false).value();
  EXPECT_EQ(out, Matrix(x * a.base.value().transpose()));
}

TEST(LoraApply, IdentityComposition) {
  LoraAdapter a;
  a.base = Tensor(Matrix::Zero(3, 3));
  a.a = Tensor(Matrix::Identity(3, 3));
  a.b = Tensor(Matrix::Identity(3, 3));
  a.gamma = 1.0;
  a.config = LoraConfig{3, 3.0, 0.0};
  Rng rng(22);
  const Matrix x = random_matrix(4, 3, rng);
  Tape tape;
  EXPECT_EQ(lora_apply(tape, a, Tensor(x), false).value(), x);
}

TEST(LoraApply, MatchesMaterializedWeight) {
  Rng rng(23);
  for (int trial = 0; trial < 5; ++trial) {
    LoraAdapter a = adapter_with_base(7, 9, LoraConfig{2, 5.0, 0.0}, 10 + trial, rng);
    a.b = Tensor(random_matrix(7, 2, rng));
    const Matrix x = random_matrix(4, 9, rng);
    const Matrix merged = a.base.value() + a.gamma * a.b.value() * a.a.value();
    Tape tape;
    const Matrix out = lora_apply(tape, a, Tensor(x), false).value();
    EXPECT_LT((out - x * merged.transpose()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(LoraApply, DoublingAlphaDoublesAdapterContribution) {
  Rng rng(24);
  LoraAdapter a = adapter_with_base(10, 8, LoraConfig{}, 2, rng);
  a.b = Tensor(random_matrix(10, 4, rng));
  LoraAdapter doubled = a;
  doubled.gamma = 2.0 * a.gamma;
  const Matrix x = random_matrix(3, 8, rng);
  const Matrix base = x * a.base.value().transpose();
  Tape tape;
  const Matrix d1 = lora_apply(tape, a, Tensor(x), false).value() - base;
  const Matrix d2 = lora_apply(tape, doubled, Tensor(x), false).value() - base;
  EXPECT_LT((d2 - 2.0 * d1).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(LoraApply, DropoutTouchesOnlyAdapterPath) {
  Rng rng(25);
  const LoraAdapter a = adapter_with_base(10, 8, LoraConfig{4, 8.0, 0.5}, 3, rng);
  const Matrix x = random_matrix(3, 8, rng);
  Rng drop(1);
  Tape tape;
  EXPECT_EQ(lora_apply(tape, a, Tensor(x), true, &drop).value(),
            Matrix(x * a.base.value().transpose()));
}

TEST(LoraApply, GradientMatchesFiniteDifferences) {
  Rng rng(26);
  LoraAdapter a = adapter_with_base(5, 6, LoraConfig{2, 4.0, 0.0}, 4, rng);
  a.b = Tensor(random_matrix(5, 2, rng), true);
  Tensor x(random_matrix(3, 6, rng), true);
  const Matrix w = random_matrix(3, 5, rng);
  std::array<Tensor, 3> params{a.a, a.b, x};
  auto f = [&](Tape& t) { return sum(t, mul_const(t, lora_apply(t, a, x, false), w)); };
  EXPECT_LT(finite_diff_check(f, params), 1e-5);
}

TEST(InjectLora, AdapterCountAndParameterEconomy) {
  ViTConfig c;
  VisionTransformer vit = VisionTransformer::init(c, 1);
  const LoraConfig cfg;
  EXPECT_EQ(inject_lora(vit, cfg, 7), 12u);
  EXPECT_TRUE(vit.has_lora());
  Index adapter_params = 0;
  for (const auto& block : vit.blocks) {
    for (const AdaptedLinear* p : {&block.attn.query, &block.attn.key, &block.attn.value}) {
      ASSERT_TRUE(p->lora.has_value());
      adapter_params += p->lora->parameter_count();
      EXPECT_FALSE(p->linear.weight.requires_grad());
    }
  }
  EXPECT_EQ(adapter_params, 12 * cfg.rank * (c.d_model + c.d_model));
  EXPECT_LT(adapter_params, 12 * c.d_model * c.d_model);
  EXPECT_THROW(inject_lora(vit, cfg, 7), ContractError);
}

TEST(InjectLora, TrainingMovesOutputButNotBaseWeights) {
  ViTConfig c;
  c.d_model = 16;
  c.joint_dim = 8;
  c.image_size = 16;
  c.num_blocks = 2;
  VisionTransformer vit = VisionTransformer::init(c, 2);
  inject_lora(vit, LoraConfig{}, 8);
  std::vector<Matrix> bases;
  for (const auto& b : vit.blocks) bases.push_back(b.attn.query.linear.weight.value());

  Rng rng(27);
  std::vector<Image> images;
  for (int i = 0; i < 3; ++i) {
    Image img = Image::zeros(3, 16, 16);
    for (auto& p : img.planes) p = random_matrix(16, 16, rng).cwiseAbs().cwiseMin(1.0);
    images.push_back(img);
  }
  const Matrix text = endoclip::testing::random_unit_rows(3, 8, rng);

  auto embed = [&](Tape& tape, const ForwardContext& ctx) {
    std::vector<Tensor> rows;
    for (const auto& img : images) rows.push_back(project_final_cls(tape, encode_image(tape, img, vit, ctx), vit));
    return vstack(tape, rows);
  };
  Tape probe;
  const Matrix before = embed(probe, {}).value();

  ParameterList params;
  vit.collect(params);
  AdamWState state;
  AdamWConfig opt;
  opt.lr = 1e-2;
  Rng drop(3);
  for (int step = 0; step < 3; ++step) {
    for (auto& p : params) p.tensor.clear_grad();
    Tape tape;
    const ForwardContext ctx{true, &drop};
    backward(contrastive_loss(tape, embed(tape, ctx), Tensor(text)), tape);
    for (auto& p : params) {
      if (p.tensor.requires_grad() && !p.tensor.has_grad()) p.tensor.zero_grad();
    }
    adamw_step(params, state, opt);
  }
  Tape after_tape;
  const Matrix after = embed(after_tape, {}).value();
  EXPECT_GT((after - before).cwiseAbs().maxCoeff(), 0.0);
  for (std::size_t l = 0; l < vit.blocks.size(); ++l) {
    EXPECT_EQ(vit.blocks[l].attn.query.linear.weight.value(), bases[l]);
  }
}
