#include "endoclip/checkpoint.hpp"
#include "endoclip/errors.hpp"
#include "endoclip/gradcheck.hpp"
#include "endoclip/trainer.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

using namespace endoclip;
using endoclip::testing::scratch_dir;

namespace {

TrainConfig tiny_config() {
  TrainConfig c = gradcheck_config(TrainConfig{});
  c.epochs = 2;
  c.max_steps = 3;
  c.batch_size = 6;
  c.augment.mask_patch = 8;
  return c;
}

struct TinyData {
  std::filesystem::path dir;
  DatasetManifest manifest;
};

const TinyData& tiny_data() {
  static const TinyData data = [] {
    TinyData d;
    d.dir = scratch_dir("tiny_data");
    SyntheticSpec spec;
    spec.per_class = 2;
    spec.raw_size = 20;
    spec.seed = 4;
    d.manifest = make_synthetic_dataset(d.dir, spec);
    return d;
  }();
  return data;
}

std::string error_of(const std::string& manifest_text, const std::filesystem::path& base) {
  std::istringstream in(manifest_text);
  try {
    parse_manifest(in, base, true);
  } catch (const DataError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(Manifest, EmptyFileGivesEmptyManifest) {
  std::istringstream in("");
  EXPECT_TRUE(parse_manifest(in, ".", true).empty());
}

TEST(Manifest, ErrorsNameTheLine) {
  const auto& d = tiny_data();
  const std::string good = R"({"path":"nose-left_0.ppm","Classification":"nose-left"})";
  EXPECT_NE(error_of(good + "\n" + R"({"path":"throat_0.ppm","Classification":"Throat"})", d.dir).find("line 2"),
            std::string::npos);
  EXPECT_NE(error_of("{not json", d.dir).find("line 1"), std::string::npos);
  EXPECT_NE(error_of(good + "\n\n" + R"({"path":"missing.ppm","Classification":"throat"})", d.dir).find("line 3"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"Classification":"throat"})", d.dir).find("line 1"), std::string::npos);
  EXPECT_EQ(error_of(good, d.dir), "");
}

TEST(Manifest, SyntheticRoundTripIsIdentity) {
  const auto dir = scratch_dir("manifest_rt");
  SyntheticSpec spec;
  spec.per_class = 3;
  spec.raw_size = 20;
  const DatasetManifest m = make_synthetic_dataset(dir, spec);
  ASSERT_EQ(m.size(), 21u);
  std::vector<ManifestRecord> first(m.records.begin(), m.records.begin() + 20);
  DatasetManifest twenty{dir, first};
  std::istringstream in1(serialize_manifest(twenty));
  const DatasetManifest parsed = parse_manifest(in1, dir, true);
  std::istringstream in2(serialize_manifest(parsed));
  const DatasetManifest again = parse_manifest(in2, dir, true);
  EXPECT_EQ(parsed.records, twenty.records);
  EXPECT_EQ(again.records, parsed.records);
  EXPECT_EQ(serialize_manifest(again), serialize_manifest(twenty));
}

TEST(Manifest, PromptUsesEnglishDescription) {
  ManifestRecord r;
  r.classification = "throat";
  EXPECT_EQ(record_prompt(r), "A photo of a throat, Image description.");
  r.description_en = "red posterior wall";
  EXPECT_EQ(record_prompt(r), "A photo of a throat, red posterior wall.");
}

TEST(Image, PnmRoundTripAndBorderCrop) {
  const auto dir = scratch_dir("pnm");
  Image img = Image::zeros(3, 10, 12);
  for (Index c = 0; c < 3; ++c) img.planes[static_cast<std::size_t>(c)].block(2, 3, 5, 6).setConstant(0.2 * (c + 1));
  write_pnm(dir / "a.ppm", img);
  const Image back = read_pnm(dir / "a.ppm");
  ASSERT_EQ(back.channels(), 3);
  EXPECT_LT((back.planes[2] - img.planes[2]).cwiseAbs().maxCoeff(), 0.5 / 255.0 + 1e-12);
  const Image cropped = crop_black_border(back);
  EXPECT_EQ(cropped.height(), 5);
  EXPECT_EQ(cropped.width(), 6);
  const Image dark = Image::zeros(1, 4, 4);
  EXPECT_EQ(crop_black_border(dark), dark);
  const Image loaded = load_image(dir / "a.ppm", 8);
  EXPECT_EQ(loaded.height(), 8);
  EXPECT_LT((loaded.planes[0].array() - back.planes[0](3, 4)).abs().maxCoeff(), 1e-12);
}

TEST(Image, BilinearResizeOfRampIsLinear) {
  Image img = Image::zeros(1, 1, 4);
  img.planes[0] << 0.0, 1.0, 2.0, 3.0;
  const Image out = resize_bilinear(img, 1, 8);
  EXPECT_DOUBLE_EQ(out.planes[0](0, 0), 0.0);
  EXPECT_DOUBLE_EQ(out.planes[0](0, 3), 1.25);
  EXPECT_DOUBLE_EQ(out.planes[0](0, 7), 3.0);
}

TEST(Image, UnreadableFilesRaiseDataError) {
  const auto dir = scratch_dir("pnm_bad");
  std::ofstream(dir / "x.ppm") << "P3\n1 1\n255\n0 0 0\n";
  EXPECT_THROW(read_pnm(dir / "x.ppm"), DataError);
  EXPECT_THROW(read_pnm(dir / "absent.ppm"), DataError);
}

TEST(AdamW, FirstStepIsSignedLearningRate) {
  ParameterList p{{"p", Tensor(Matrix::Constant(1, 1, 1.0), true)}};
  p[0].tensor.grad_buffer()(0, 0) = 1.0;
  AdamWState state;
  adamw_step(p, state, AdamWConfig{0.1, 0.9, 0.999, 1e-8, 0.0});
  EXPECT_NEAR(p[0].tensor.value()(0, 0), 1.0 - 0.1 / (1.0 + 1e-8), 1e-15);
  EXPECT_NEAR(p[0].tensor.value()(0, 0), 0.9, 1e-8);
  EXPECT_EQ(state.step, 1u);
}

TEST(AdamW, DecayOnlyPath) {
  ParameterList p{{"p", Tensor(Matrix::Constant(1, 1, 1.0), true)}};
  p[0].tensor.zero_grad();
  AdamWState state;
  adamw_step(p, state, AdamWConfig{0.1, 0.9, 0.999, 1e-8, 0.1});
  EXPECT_DOUBLE_EQ(p[0].tensor.value()(0, 0), 0.99);
}

TEST(AdamW, ZeroGradZeroDecayLeavesParameters) {
  ParameterList p{{"p", Tensor(Matrix::Constant(2, 2, 0.3), true)}};
  p[0].tensor.zero_grad();
  AdamWState state;
  adamw_step(p, state, AdamWConfig{0.1, 0.9, 0.999, 1e-8, 0.0});
  EXPECT_EQ(p[0].tensor.value(), Matrix::Constant(2, 2, 0.3));
}

TEST(AdamW, FrozenUntouchedMissingGradRejected) {
  ParameterList p{{"frozen", Tensor(Matrix::Ones(1, 2), false)}, {"live", Tensor(Matrix::Ones(1, 2), true)}};
  AdamWState state;
  EXPECT_THROW(adamw_step(p, state, AdamWConfig{}), ContractError);
  p[1].tensor.grad_buffer().setConstant(1.0);
  adamw_step(p, state, AdamWConfig{});
  EXPECT_EQ(p[0].tensor.value(), Matrix::Ones(1, 2));
  EXPECT_NE(p[1].tensor.value(), Matrix::Ones(1, 2));
}

TEST(AdamW, ConfigValidation) {
  EXPECT_THROW((AdamWConfig{0.0}).validate(), ConfigError);
  EXPECT_THROW((AdamWConfig{1e-3, 1.0}).validate(), ConfigError);
  EXPECT_THROW((AdamWConfig{1e-3, 0.9, -0.1}).validate(), ConfigError);
}

TEST(Config, JsonRoundTripAndStrictKeys) {
  TrainConfig c;
  c.seed = 17;
  c.ablation.mfa = false;
  c.fusion.selected_layers = {2, 4};
  c.augment.horizontal_flip_classes = {"throat"};
  c.temperature = 0.25;
  const TrainConfig back = config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  auto j = nlohmann::json::parse(to_json(c).dump());
  j["optimizer"]["learning_rate"] = 0.1;
  EXPECT_THROW(config_from_json(j), ConfigError);
  auto k = nlohmann::json::parse(to_json(c).dump());
  k["optimizer"]["lr"] = -1.0;
  EXPECT_THROW(config_from_json(k), ConfigError);
  auto partial = nlohmann::json::parse(R"({"seed": 3, "ablation": {"sfa": false}})");
  const TrainConfig p = config_from_json(partial);
  EXPECT_EQ(p.seed, 3u);
  EXPECT_FALSE(p.ablation.sfa);
  EXPECT_TRUE(p.ablation.lora);
  EXPECT_EQ(p.optim.lr, 5e-4);
}

TEST(Model, TrainableSetFollowsToggles) {
  const Vocabulary vocab = Vocabulary::build({});
  TrainConfig c = tiny_config();
  const auto names = [](const ParameterList& ps) {
    std::set<std::string> out;
    for (const auto& p : ps) out.insert(p.name);
    return out;
  };
  const auto all_on = names(MultimodalModel::create(c, vocab).trainable_parameters());
  EXPECT_TRUE(all_on.contains("vit.blocks.0.attn.q.lora_a"));
  EXPECT_FALSE(all_on.contains("vit.blocks.0.attn.q.weight"));
  EXPECT_TRUE(all_on.contains("fusion.cls_fusion_token"));
  EXPECT_FALSE(all_on.contains("vit.proj.weight"));
  c.ablation = {false, false, false};
  const auto baseline = names(MultimodalModel::create(c, vocab).trainable_parameters());
  EXPECT_TRUE(baseline.contains("vit.blocks.0.attn.q.weight"));
  EXPECT_TRUE(baseline.contains("vit.proj.weight"));
  for (const auto& n : baseline) {
    EXPECT_EQ(n.find("lora"), std::string::npos);
    EXPECT_EQ(n.find("fusion"), std::string::npos);
  }
}

TEST(Training, DeterministicAndTextStaysFrozen) {
  const auto& d = tiny_data();
  const TrainConfig c = tiny_config();
  const TrainOutcome a = train_model(c, d.manifest);
  const TrainOutcome b = train_model(c, d.manifest);
  ASSERT_EQ(a.steps, 3);
  EXPECT_EQ(a.final_loss, b.final_loss);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].loss, b.log[i].loss);

  const MultimodalModel fresh = MultimodalModel::create(c, vocabulary_for(d.manifest));
  ParameterList before, after;
  fresh.text().collect(before);
  a.model.text().collect(after);
  ASSERT_EQ(before.size(), after.size());
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(before[i].tensor.value(), after[i].tensor.value());

  bool moved = false;
  const ParameterList p0 = fresh.parameters(), p1 = a.model.parameters();
  for (std::size_t i = 0; i < p0.size(); ++i) moved = moved || p0[i].tensor.value() != p1[i].tensor.value();
  EXPECT_TRUE(moved);
}

TEST(Training, EmptyManifestIsRejected) {
  EXPECT_ANY_THROW(train_model(tiny_config(), DatasetManifest{}));
}

TEST(Checkpoint, RoundTripPreservesForwardBitwise) {
  const auto& d = tiny_data();
  const auto dir = scratch_dir("ckpt");
  const TrainOutcome out = train_model(tiny_config(), d.manifest);
  save_checkpoint(dir / "m.ckpt", out.model, out.optimizer, 2);
  const LoadedCheckpoint back = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(back.epoch, 2);
  EXPECT_EQ(back.optimizer.step, out.optimizer.step);
  const auto images = load_images(d.manifest, out.model.config().vit);
  EXPECT_EQ(back.model.image_embeddings(images), out.model.image_embeddings(images));
  EXPECT_EQ(back.model.text_embedding("A photo of a throat, Image description."),
            out.model.text_embedding("A photo of a throat, Image description."));
  std::ofstream(dir / "bad.ckpt") << "CKPX";
  EXPECT_THROW(load_checkpoint(dir / "bad.ckpt"), DataError);
}

TEST(Evaluate, PureAndWellFormed) {
  const auto& d = tiny_data();
  const TrainConfig c = tiny_config();
  const MultimodalModel model = MultimodalModel::create(c, vocabulary_for(d.manifest));
  const EvalReport a = evaluate(model, d.manifest, EvalTask::Classification);
  const EvalReport b = evaluate(model, d.manifest, EvalTask::Classification);
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
  const auto j = a.to_json();
  for (const char* key : {"accuracy", "precision", "recall", "f1", "confusion"}) EXPECT_TRUE(j.contains(key)) << key;
  const EvalReport i2i = evaluate(model, d.manifest, EvalTask::ImageToImage);
  ASSERT_TRUE(i2i.retrieval.has_value());
  EXPECT_EQ(i2i.retrieval->queries, d.manifest.size());
  EXPECT_GE(i2i.retrieval->mrr, i2i.retrieval->recall_at_1);
  EXPECT_EQ(parse_task("t2i"), EvalTask::TextToImage);
  EXPECT_THROW(parse_task("segmentation"), EvaluationError);
}

TEST(Evaluate, UntrainedModelIsNearChance) {
  const auto dir = scratch_dir("chance");
  SyntheticSpec spec;
  spec.per_class = 10;
  spec.raw_size = 20;
  const DatasetManifest m = make_synthetic_dataset(dir, spec);
  const MultimodalModel model = MultimodalModel::create(tiny_config(), vocabulary_for(m));
  const double acc = evaluate(model, m, EvalTask::Classification).classification->accuracy;
  // 70 samples: 1/7 +- four binomial standard deviations
  EXPECT_LT(acc, 1.0 / 7.0 + 4.0 * std::sqrt((1.0 / 7.0) * (6.0 / 7.0) / 70.0));
}

TEST(BuildIndex, IdsArePathsAndRowsUnit) {
  const auto& d = tiny_data();
  const MultimodalModel model = MultimodalModel::create(tiny_config(), vocabulary_for(d.manifest));
  const EmbeddingIndex index = build_index(model, d.manifest);
  ASSERT_EQ(index.ids.size(), d.manifest.size());
  EXPECT_EQ(index.ids[0], d.manifest.records[0].path);
  EXPECT_NO_THROW(index.validate());
}

TEST(Gradcheck, ReportThresholdIsStrict) {
  GradcheckReport r;
  r.entries.push_back({"a", 5e-5, 10});
  EXPECT_TRUE(r.passed());
  r.entries.push_back({"b", 1e-4, 10});
  EXPECT_FALSE(r.passed());
  EXPECT_EQ(r.max_error(), 1e-4);
}
