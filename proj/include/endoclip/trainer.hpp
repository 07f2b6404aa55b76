#pragma once

// Joint classification + contrastive training and evaluation.

#include "endoclip/checkpoint.hpp"
#include "endoclip/dataset.hpp"
#include "endoclip/retrieval.hpp"

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace endoclip {

/// Model inputs for one optimization step.
struct Batch {
  std::vector<Image> images;
  std::vector<int> labels;
  Matrix text;  // per-sample prompt embeddings, one row per image
};

struct LossParts {
  double total = 0.0;
  double classification = 0.0;
  double contrastive = 0.0;
  std::size_t augmented = 0;   // slerp rows appended
  std::size_t correct = 0;     // real samples classified correctly
};

/// Class-level prompt embeddings ("..., Image description."), 7 x joint_dim.
Matrix class_prompt_embeddings(const MultimodalModel& model);

/// Builds the weighted total loss for a batch on `tape`. With SFA on,
/// `sfa_rng` draws same-class slerp pairs whose outputs join both losses
/// (paired with the class-level prompt for the contrastive term).
Tensor batch_loss(Tape& tape, const MultimodalModel& model, const Batch& batch,
                  const Matrix& class_text, const ForwardContext& ctx, Rng* sfa_rng,
                  LossParts* parts = nullptr);

struct EpochLog {
  int epoch = 0;
  int steps = 0;
  double loss = 0.0;
  double classification = 0.0;
  double contrastive = 0.0;
  double train_accuracy = 0.0;
};

struct TrainOutcome {
  MultimodalModel model;
  AdamWState optimizer;
  std::vector<EpochLog> log;
  int steps = 0;
  int epochs_run = 0;
  double final_loss = 0.0;
  /// Lowest epoch-mean training loss and the parameter values at that point.
  double best_loss = 0.0;
  ParameterList best_parameters;
};

/// Loads every manifest image at the configured size.
std::vector<Image> load_images(const DatasetManifest& manifest, const ViTConfig& vit);

/// Vocabulary covering the prompt template, class names and manifest prompts.
Vocabulary vocabulary_for(const DatasetManifest& manifest);

/// Runs the training loop in memory. Deterministic in (config, manifest).
/// Throws NumericError on a non-finite loss.
TrainOutcome train_model(const TrainConfig& config, const DatasetManifest& manifest,
                         std::ostream* log = nullptr);

/// train_model, then writes `out` (final) and `out`.best (lowest train loss).
std::vector<EpochLog> train(const TrainConfig& config, const DatasetManifest& manifest,
                            const std::filesystem::path& out, std::ostream* log = nullptr);

enum class EvalTask { Classification, ImageToImage, TextToImage };
EvalTask parse_task(const std::string& name);
std::string task_name(EvalTask task);

struct RetrievalReport {
  double recall_at_1 = 0.0;
  double mrr = 0.0;
  std::size_t queries = 0;
};

struct EvalReport {
  EvalTask task = EvalTask::Classification;
  std::optional<ClassificationReport> classification;
  std::optional<RetrievalReport> retrieval;

  nlohmann::ordered_json to_json() const;
};

/// Classification report, or Recall@1 / MRR with class-match relevance
/// (leave-self-out for image-to-image; per-record prompts as text queries).
EvalReport evaluate(const MultimodalModel& model, const DatasetManifest& manifest, EvalTask task);
EvalReport evaluate(const MultimodalModel& model, const std::vector<Image>& images,
                    const DatasetManifest& manifest, EvalTask task);

/// Image embeddings of every manifest record, ids = record paths.
EmbeddingIndex build_index(const MultimodalModel& model, const DatasetManifest& manifest);

}  // namespace endoclip
