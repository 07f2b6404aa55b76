#include "endoclip/trainer.hpp"

#include "endoclip/errors.hpp"

#include <cmath>
#include <numeric>
#include <unordered_map>

namespace endoclip {

namespace streams {
constexpr std::uint64_t kShuffle = 11;
constexpr std::uint64_t kAugment = 12;
constexpr std::uint64_t kDropout = 13;
constexpr std::uint64_t kSlerp = 14;
}  // namespace streams

Matrix class_prompt_embeddings(const MultimodalModel& model) {
  Matrix out(kNumClasses, model.config().vit.joint_dim);
  for (int c = 0; c < kNumClasses; ++c) {
    out.row(c) = model.text_embedding(build_prompt(class_name(c)));
  }
  return out;
}

Tensor batch_loss(Tape& tape, const MultimodalModel& model, const Batch& batch,
                  const Matrix& class_text, const ForwardContext& ctx, Rng* sfa_rng,
                  LossParts* parts) {
  if (batch.images.empty()) throw ContractError("batch_loss: empty batch");
  Tensor v = model.embed_images(tape, batch.images, ctx);
  std::vector<int> labels = batch.labels;
  Matrix text = batch.text;

  std::size_t augmented = 0;
  if (model.config().ablation.sfa && sfa_rng != nullptr) {
    const auto count = static_cast<std::size_t>(
        model.config().resolved_sfa_count(static_cast<int>(batch.images.size())));
    const auto pairs = sample_slerp_pairs(batch.labels, *sfa_rng, count);
    if (!pairs.empty()) {
      std::vector<Tensor> rows{v};
      text.conservativeResize(text.rows() + static_cast<Index>(pairs.size()), Eigen::NoChange);
      for (const auto& p : pairs) {
        Tensor f1 = slice_rows(tape, v, static_cast<Index>(p.first), 1);
        Tensor f2 = slice_rows(tape, v, static_cast<Index>(p.second), 1);
        rows.push_back(slerp(tape, f1, f2, p.lambda));
        const int label = batch.labels[p.first];
        text.row(static_cast<Index>(labels.size())) = class_text.row(label);
        labels.push_back(label);
      }
      v = vstack(tape, rows);
      augmented = pairs.size();
    }
  }

  Tensor logits = model.logits(tape, v);
  Tensor cls = cross_entropy(tape, logits, labels);
  Tensor con = contrastive_loss(tape, v, Tensor(text), model.config().temperature);
  Tensor total = total_loss(tape, cls, con, model.config().loss);
  if (parts) {
    parts->total = total.item();
    parts->classification = cls.item();
    parts->contrastive = con.item();
    parts->augmented = augmented;
    parts->correct = 0;
    for (std::size_t i = 0; i < batch.labels.size(); ++i) {
      Index best;
      logits.value().row(static_cast<Index>(i)).maxCoeff(&best);
      if (best == batch.labels[i]) ++parts->correct;
    }
  }
  return total;
}

std::vector<Image> load_images(const DatasetManifest& manifest, const ViTConfig& vit) {
  std::vector<Image> images;
  images.reserve(manifest.size());
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    try {
      images.push_back(load_image(manifest.resolve(manifest.records[i]), vit.image_size, vit.channels));
    } catch (const DataError& e) {
      throw DataError("manifest record " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return images;
}

Vocabulary vocabulary_for(const DatasetManifest& manifest) {
  std::vector<std::string> texts;
  for (const auto& r : manifest.records) texts.push_back(record_prompt(r));
  return Vocabulary::build(texts);
}

TrainOutcome train_model(const TrainConfig& config, const DatasetManifest& manifest,
                         std::ostream* log) {
  config.validate();
  if (manifest.empty()) throw DataError("train: manifest is empty");
  const std::vector<Image> images = load_images(manifest, config.vit);

  TrainOutcome result{MultimodalModel::create(config, vocabulary_for(manifest)), {}, {}, 0, 0, 0.0,
                      std::numeric_limits<double>::infinity(), {}};
  const MultimodalModel& model = result.model;

  // The text tower is frozen: embed every distinct prompt once.
  const Matrix class_text = class_prompt_embeddings(model);
  std::unordered_map<std::string, RowVector> prompt_cache;
  Matrix record_text(static_cast<Index>(manifest.size()), config.vit.joint_dim);
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const std::string prompt = record_prompt(manifest.records[i]);
    auto it = prompt_cache.find(prompt);
    if (it == prompt_cache.end()) it = prompt_cache.emplace(prompt, model.text_embedding(prompt)).first;
    record_text.row(static_cast<Index>(i)) = it->second;
  }

  ParameterList params = model.trainable_parameters();
  std::vector<std::size_t> order(manifest.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto batch_size = static_cast<std::size_t>(config.batch_size);

  bool done = false;
  for (int epoch = 0; epoch < config.epochs && !done; ++epoch) {
    Rng shuffle_rng(derive_seed(config.seed, streams::kShuffle, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    }
    EpochLog ep;
    ep.epoch = epoch + 1;
    std::size_t seen = 0, correct = 0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      if (config.max_steps > 0 && result.steps >= config.max_steps) {
        done = true;
        break;
      }
      const std::size_t end = std::min(order.size(), start + batch_size);
      Batch batch;
      batch.text.resize(static_cast<Index>(end - start), config.vit.joint_dim);
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t idx = order[b];
        const auto& rec = manifest.records[idx];
        if (config.augment_images) {
          Rng aug_rng(derive_seed(config.augment.rng_seed ^ config.seed, streams::kAugment,
                                  (static_cast<std::uint64_t>(epoch) << 32) | idx));
          batch.images.push_back(augment_image(images[idx], rec.classification, config.augment, aug_rng));
        } else {
          batch.images.push_back(images[idx]);
        }
        batch.labels.push_back(rec.label);
        batch.text.row(static_cast<Index>(b - start)) = record_text.row(static_cast<Index>(idx));
      }

      const auto step_id = static_cast<std::uint64_t>(result.steps);
      Rng dropout_rng(derive_seed(config.seed, streams::kDropout, step_id));
      Rng sfa_rng(derive_seed(config.seed, streams::kSlerp, step_id));
      ForwardContext ctx{true, &dropout_rng};

      for (auto& p : params) p.tensor.zero_grad();
      Tape tape;
      LossParts parts;
      Tensor loss = batch_loss(tape, model, batch, class_text, ctx, &sfa_rng, &parts);
      if (!std::isfinite(parts.total)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", step " +
                           std::to_string(result.steps + 1) + " (classification " +
                           std::to_string(parts.classification) + ", contrastive " +
                           std::to_string(parts.contrastive) + ")");
      }
      backward(loss, tape);
      adamw_step(params, result.optimizer, config.optim);
      ++result.steps;
      ++ep.steps;

      const double w = static_cast<double>(end - start);
      ep.loss += parts.total * w;
      ep.classification += parts.classification * w;
      ep.contrastive += parts.contrastive * w;
      seen += end - start;
      correct += parts.correct;
      result.final_loss = parts.total;
    }
    if (ep.steps == 0) break;
    ep.loss /= static_cast<double>(seen);
    ep.classification /= static_cast<double>(seen);
    ep.contrastive /= static_cast<double>(seen);
    ep.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    result.log.push_back(ep);
    result.epochs_run = ep.epoch;
    if (ep.loss < result.best_loss) {
      result.best_loss = ep.loss;
      result.best_parameters.clear();
      for (const auto& p : model.parameters()) {
        result.best_parameters.push_back({p.name, Tensor(p.tensor.value())});
      }
    }
    if (log) {
      *log << "epoch " << ep.epoch << " steps " << ep.steps << " loss " << ep.loss << " cls "
           << ep.classification << " con " << ep.contrastive << " train_acc "
           << ep.train_accuracy << '\n';
    }
  }
  for (auto& p : params) p.tensor.clear_grad();
  return result;
}

std::vector<EpochLog> train(const TrainConfig& config, const DatasetManifest& manifest,
                            const std::filesystem::path& out, std::ostream* log) {
  TrainOutcome result = train_model(config, manifest, log);
  save_checkpoint(out, result.model, result.optimizer, result.epochs_run);
  if (!result.best_parameters.empty()) {
    // Same architecture, values from the best epoch.
    MultimodalModel best = MultimodalModel::create(config, result.model.text().vocabulary());
    ParameterList dst = best.parameters();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      dst[i].tensor.mutable_value() = result.best_parameters[i].tensor.value();
    }
    std::filesystem::path best_path = out;
    best_path += ".best";
    save_checkpoint(best_path, best, result.optimizer, result.epochs_run);
  }
  return result.log;
}

EvalTask parse_task(const std::string& name) {
  if (name == "classification") return EvalTask::Classification;
  if (name == "i2i") return EvalTask::ImageToImage;
  if (name == "t2i") return EvalTask::TextToImage;
  throw EvaluationError("unknown task '" + name + "' (classification, i2i, t2i)");
}

std::string task_name(EvalTask task) {
  switch (task) {
    case EvalTask::Classification: return "classification";
    case EvalTask::ImageToImage: return "i2i";
    case EvalTask::TextToImage: return "t2i";
  }
  return "?";
}

nlohmann::ordered_json EvalReport::to_json() const {
  nlohmann::ordered_json j;
  if (classification) {
    const auto& c = *classification;
    j["accuracy"] = c.accuracy;
    j["precision"] = c.precision;
    j["recall"] = c.recall;
    j["f1"] = c.f1;
    auto rows = nlohmann::ordered_json::array();
    for (int r = 0; r < kNumClasses; ++r) {
      std::vector<long> row;
      for (int k = 0; k < kNumClasses; ++k) row.push_back(c.confusion(r, k));
      rows.push_back(row);
    }
    j["confusion"] = rows;
  }
  if (retrieval) {
    j["task"] = task_name(task);
    j["recall_at_1"] = retrieval->recall_at_1;
    j["mrr"] = retrieval->mrr;
    j["queries"] = retrieval->queries;
  }
  return j;
}

EvalReport evaluate(const MultimodalModel& model, const DatasetManifest& manifest, EvalTask task) {
  return evaluate(model, load_images(manifest, model.config().vit), manifest, task);
}

EvalReport evaluate(const MultimodalModel& model, const std::vector<Image>& images,
                    const DatasetManifest& manifest, EvalTask task) {
  if (images.size() != manifest.size()) {
    throw EvaluationError("evaluate: " + std::to_string(images.size()) + " images for " +
                          std::to_string(manifest.size()) + " records");
  }
  if (manifest.empty()) throw EvaluationError("evaluate: manifest is empty");
  EvalReport rep;
  rep.task = task;
  const Matrix v = model.image_embeddings(images);
  const std::vector<int> labels = manifest.labels();
  if (task == EvalTask::Classification) {
    rep.classification = classification_report(model.predict(v), labels);
    return rep;
  }
  Matrix scores;
  bool exclude_self = false;
  if (task == EvalTask::ImageToImage) {
    if (manifest.size() < 2) throw EvaluationError("i2i needs at least two records");
    scores = cosine_sim_matrix(v, v);
    exclude_self = true;
  } else {
    Matrix u(static_cast<Index>(manifest.size()), v.cols());
    for (std::size_t i = 0; i < manifest.size(); ++i) {
      u.row(static_cast<Index>(i)) = model.text_embedding(record_prompt(manifest.records[i]));
    }
    scores = text_image_scores(u, v);
  }
  const auto results = rank_queries(scores, exclude_self);
  const Relevance relevant = class_match_relevance(labels, labels, exclude_self);
  rep.retrieval = RetrievalReport{recall_at_k(results, relevant, 1), mrr(results, relevant), results.size()};
  return rep;
}

EmbeddingIndex build_index(const MultimodalModel& model, const DatasetManifest& manifest) {
  EmbeddingIndex index;
  index.embeddings = model.image_embeddings(load_images(manifest, model.config().vit));
  for (const auto& r : manifest.records) {
    index.ids.push_back(r.path);
    index.labels.push_back(r.label);
  }
  return index;
}

}  // namespace endoclip
