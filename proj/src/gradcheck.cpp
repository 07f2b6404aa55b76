#include "endoclip/gradcheck.hpp"

#include "endoclip/dataset.hpp"
#include "endoclip/trainer.hpp"

#include <algorithm>

namespace endoclip {

double GradcheckReport::max_error() const {
  double worst = 0.0;
  for (const auto& e : entries) worst = std::max(worst, e.max_rel_error);
  return worst;
}

TrainConfig gradcheck_config(const TrainConfig& base) {
  TrainConfig c = base;
  c.vit.image_size = 16;
  c.vit.patch_size = 8;
  c.vit.d_model = 16;
  c.vit.joint_dim = 8;
  c.text.width = 16;
  c.text.blocks = 1;
  c.text.joint_dim = 8;
  c.fusion.selected_layers.clear();
  c.fusion.k = std::min(c.fusion.k, c.vit.num_blocks);
  c.lora.rank = std::min(c.lora.rank, 4);
  c.batch_size = 4;
  c.sfa_count = 2;
  return c;
}

namespace {

std::size_t coordinate_count(const std::vector<Tensor>& ts) {
  std::size_t n = 0;
  for (const auto& t : ts) n += static_cast<std::size_t>(t.size());
  return n;
}

GradcheckEntry check(const std::string& name, const std::function<Tensor(Tape&)>& f,
                     std::vector<Tensor> params, double step) {
  const double err = finite_diff_check(f, params, step);
  return {name, err, coordinate_count(params)};
}

Tensor random_tensor(Index r, Index c, Rng& rng) { return normal_tensor(r, c, 1.0, rng, true); }

Tensor unit_rows(Index r, Index c, Rng& rng) {
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  m.rowwise().normalize();
  return Tensor(std::move(m), true);
}

}  // namespace

GradcheckEntry check_total_loss(const TrainConfig& base, double step) {
  const TrainConfig config = gradcheck_config(base);
  Rng img_rng(derive_seed(config.seed, 99));
  Batch batch;
  for (int i = 0; i < 4; ++i) {
    const int label = i < 2 ? 0 : 6;
    batch.images.push_back(
        resize_bilinear(render_synthetic(label, 20, img_rng), config.vit.image_size, config.vit.image_size));
    batch.labels.push_back(label);
  }
  MultimodalModel model = MultimodalModel::create(config, Vocabulary::build({}));
  const Matrix class_text = class_prompt_embeddings(model);
  batch.text.resize(4, config.vit.joint_dim);
  for (int i = 0; i < 4; ++i) batch.text.row(i) = class_text.row(batch.labels[static_cast<std::size_t>(i)]);

  // Move the adapters off their zero initialization so every path is exercised.
  Rng perturb(derive_seed(config.seed, 98));
  for (auto& p : model.trainable_parameters()) {
    if (p.name.ends_with("lora_b")) {
      for (Index i = 0; i < p.tensor.size(); ++i) p.tensor.mutable_value().data()[i] = perturb.normal(0.0, 0.1);
    }
  }

  std::vector<Tensor> params;
  for (auto& p : model.trainable_parameters()) params.push_back(p.tensor);
  auto f = [&](Tape& tape) {
    Rng dropout(derive_seed(config.seed, 97));
    Rng sfa(derive_seed(config.seed, 96));
    ForwardContext ctx{true, &dropout};
    return batch_loss(tape, model, batch, class_text, ctx, &sfa);
  };
  return check("total_loss", f, params, step);
}

GradcheckReport run_gradcheck(const TrainConfig& base, double step) {
  GradcheckReport rep;
  Rng rng(derive_seed(base.seed, 1234));

  {
    Tensor a = random_tensor(3, 4, rng), b = random_tensor(4, 2, rng);
    rep.entries.push_back(check("matmul", [=](Tape& t) { return sum(t, mul(t, matmul(t, a, b), matmul(t, a, b))); }, {a, b}, step));
  }
  {
    Tensor x = random_tensor(3, 4, rng), w = random_tensor(5, 4, rng);
    rep.entries.push_back(check("softmax_log", [=](Tape& t) {
      return sum(t, log(t, row_softmax(t, matmul_nt(t, x, w))));
    }, {x, w}, step));
  }
  {
    Tensor x = random_tensor(3, 5, rng), g = random_tensor(1, 5, rng), b = random_tensor(1, 5, rng);
    Tensor probe(Matrix::Random(3, 5));
    rep.entries.push_back(check("layer_norm", [=](Tape& t) {
      return sum(t, mul(t, layer_norm(t, x, g, b), probe));
    }, {x, g, b}, step));
  }
  {
    Tensor x = random_tensor(2, 6, rng);
    Tensor probe(Matrix::Random(2, 6));
    rep.entries.push_back(check("gelu_normalize", [=](Tape& t) {
      return sum(t, mul(t, l2_normalize_rows(t, gelu(t, x)), probe));
    }, {x}, step));
  }
  {
    Tensor z = random_tensor(4, 7, rng);
    const std::vector<int> labels{0, 3, 6, 3};
    rep.entries.push_back(check("cross_entropy", [=](Tape& t) { return cross_entropy(t, z, labels); }, {z}, step));
  }
  {
    Tensor v = random_tensor(4, 5, rng), u = random_tensor(4, 5, rng);
    rep.entries.push_back(check("contrastive_loss", [=](Tape& t) {
      return contrastive_loss(t, l2_normalize_rows(t, v), l2_normalize_rows(t, u));
    }, {v, u}, step));
  }
  {
    Tensor a = random_tensor(1, 6, rng), b = random_tensor(1, 6, rng);
    Tensor probe(Matrix::Random(1, 6));
    rep.entries.push_back(check("slerp", [=](Tape& t) {
      return sum(t, mul(t, slerp(t, l2_normalize_rows(t, a), l2_normalize_rows(t, b), 0.3), probe));
    }, {a, b}, step));
  }
  {
    LoraAdapter ad = lora_init(6, 8, LoraConfig{2, 4.0, 0.0}, 5);
    ad.base = Tensor(normal_tensor(6, 8, 1.0, rng, false));
    ad.b.mutable_value() = Matrix::Random(6, 2);
    Tensor x = random_tensor(3, 8, rng);
    Tensor probe(Matrix::Random(3, 6));
    rep.entries.push_back(check("lora_apply", [=](Tape& t) {
      return sum(t, mul(t, lora_apply(t, ad, x, false), probe));
    }, {x, ad.a, ad.b}, step));
  }
  {
    Rng wr(derive_seed(base.seed, 77));
    AttentionWeights w = AttentionWeights::init(8, 2, wr);
    Tensor x = random_tensor(4, 8, rng);
    Tensor probe(Matrix::Random(4, 8));
    ParameterList named;
    w.collect(named, "attn");
    std::vector<Tensor> params{x};
    for (auto& p : named) params.push_back(p.tensor);
    rep.entries.push_back(check("mha", [=](Tape& t) {
      return sum(t, mul(t, mha_forward(t, x, w, {}), probe));
    }, params, step));
  }
  {
    FusionConfig fc;
    fc.fusion_heads = 2;
    FusionModule m = FusionModule::init(8, 4, fc, derive_seed(base.seed, 78));
    std::vector<Tensor> cls{random_tensor(1, 8, rng), random_tensor(1, 8, rng), random_tensor(1, 8, rng)};
    Tensor probe(Matrix::Random(1, 4));
    ParameterList named;
    m.collect(named, "fusion");
    std::vector<Tensor> params(cls.begin(), cls.end());
    for (auto& p : named) params.push_back(p.tensor);
    rep.entries.push_back(check("fusion", [=](Tape& t) {
      return sum(t, mul(t, fuse(t, cls, m, {1, 2, 3}), probe));
    }, params, step));
  }
  rep.entries.push_back(check_total_loss(base, step));
  return rep;
}

}  // namespace endoclip
