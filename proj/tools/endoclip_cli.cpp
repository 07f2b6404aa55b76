// endoclip: train, evaluate, embed, retrieve and gradient-check from the
// command line.
//
// Exit codes: 0 success, 1 usage, 2 data/config/evaluation error,
// 3 numeric failure (non-finite loss or failed gradient check).

#include "endoclip/checkpoint.hpp"
#include "endoclip/errors.hpp"
#include "endoclip/gradcheck.hpp"
#include "endoclip/trainer.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <iomanip>
#include <iostream>
#include <string>

namespace {

using namespace endoclip;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct TrainArgs {
  std::string config, data, out;
};
struct EvalArgs {
  std::string ckpt, data, task;
  bool json = false;
};
struct EmbedArgs {
  std::string ckpt, data, out;
};
struct RetrieveArgs {
  std::string index, ckpt, image, text;
  int k = 5;
};
struct GradcheckArgs {
  std::string config;
};
struct SynthArgs {
  std::string out;
  int per_class = 20;
  std::uint64_t seed = 0;
};

int run_train(const TrainArgs& a) {
  const TrainConfig config = load_config(a.config);
  const DatasetManifest manifest = ingest_manifest(a.data);
  const auto log = train(config, manifest, a.out, &std::cout);
  std::cout << "wrote " << a.out << " and " << a.out << ".best after " << log.size()
            << " epochs\n";
  return kExitOk;
}

void print_report(const EvalReport& report) {
  std::cout << std::fixed << std::setprecision(4);
  if (report.classification) {
    const auto& c = *report.classification;
    std::cout << "accuracy  " << c.accuracy << "\nprecision " << c.precision << "\nrecall    "
              << c.recall << "\nf1        " << c.f1 << "\n\nconfusion (rows = truth)\n";
    for (int i = 0; i < kNumClasses; ++i) {
      std::cout << std::setw(11) << class_name(i);
      for (int j = 0; j < kNumClasses; ++j) std::cout << std::setw(5) << c.confusion(i, j);
      std::cout << '\n';
    }
  } else if (report.retrieval) {
    const auto& r = *report.retrieval;
    std::cout << task_name(report.task) << " over " << r.queries << " queries\nrecall@1 "
              << r.recall_at_1 << "\nmrr      " << r.mrr << '\n';
  }
}

int run_eval(const EvalArgs& a) {
  const EvalTask task = parse_task(a.task);
  const auto ckpt = load_checkpoint(a.ckpt);
  const DatasetManifest manifest = ingest_manifest(a.data);
  const EvalReport report = evaluate(ckpt.model, manifest, task);
  if (a.json) {
    std::cout << report.to_json().dump() << '\n';
  } else {
    print_report(report);
  }
  return kExitOk;
}

int run_embed(const EmbedArgs& a) {
  const auto ckpt = load_checkpoint(a.ckpt);
  const DatasetManifest manifest = ingest_manifest(a.data);
  const EmbeddingIndex index = build_index(ckpt.model, manifest);
  save_index(a.out, index);
  std::cout << "wrote " << index.ids.size() << " embeddings to " << a.out << '\n';
  return kExitOk;
}

int run_retrieve(const RetrieveArgs& a) {
  if (a.k <= 0) throw CLI::ValidationError("--k", "must be positive");
  const EmbeddingIndex index = load_index(a.index);
  const auto ckpt = load_checkpoint(a.ckpt);
  const MultimodalModel& model = ckpt.model;
  Matrix query;
  if (!a.text.empty()) {
    query = model.text_embedding(a.text);
  } else {
    const Image image = load_image(a.image, model.config().vit.image_size,
                                   model.config().vit.channels);
    query = model.image_embeddings(std::span<const Image>(&image, 1));
  }
  if (query.cols() != index.embeddings.cols()) {
    throw DataError("index width " + std::to_string(index.embeddings.cols()) +
                    " does not match the model's joint dimension " +
                    std::to_string(query.cols()));
  }
  const Matrix scores = cosine_sim_matrix(query, index.embeddings);
  const auto ranked = rank_queries(scores, false).front();
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(a.k), ranked.candidates.size());
  std::cout << std::fixed << std::setprecision(6);
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = static_cast<std::size_t>(ranked.candidates[i]);
    std::cout << index.ids[j] << '\t' << ranked.scores[i] << '\t' << class_name(index.labels[j])
              << '\n';
  }
  return kExitOk;
}

int run_gradcheck_cmd(const GradcheckArgs& a) {
  const TrainConfig config = load_config(a.config);
  const GradcheckReport report = run_gradcheck(config);
  std::cout << std::scientific << std::setprecision(3);
  for (const auto& e : report.entries) {
    std::cout << std::left << std::setw(18) << e.name << std::right << e.max_rel_error << "  ("
              << e.coordinates << " coords)" << (e.max_rel_error < kGradcheckTolerance ? "" : "  FAIL")
              << '\n';
  }
  const bool ok = report.passed();
  std::cout << (ok ? "gradcheck passed" : "gradcheck FAILED") << ", max relative error "
            << report.max_error() << '\n';
  return ok ? kExitOk : kExitNumeric;
}

int run_synth(const SynthArgs& a) {
  SyntheticSpec spec;
  spec.per_class = a.per_class;
  spec.seed = a.seed;
  const DatasetManifest manifest = make_synthetic_dataset(a.out, spec);
  std::cout << "wrote " << manifest.size() << " images and "
            << (std::filesystem::path(a.out) / "manifest.jsonl").string() << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Image-text training and retrieval for endoscopic images"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train a model and write a checkpoint");
  train_cmd->add_option("--config", train_args.config, "JSON run configuration")->required();
  train_cmd->add_option("--data", train_args.data, "JSONL manifest")->required();
  train_cmd->add_option("--out", train_args.out, "checkpoint path")->required();

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  eval_cmd->add_option("--ckpt", eval_args.ckpt, "checkpoint")->required();
  eval_cmd->add_option("--data", eval_args.data, "JSONL manifest")->required();
  eval_cmd->add_option("--task", eval_args.task, "classification, i2i or t2i")
      ->required()
      ->check(CLI::IsMember({"classification", "i2i", "t2i"}));
  eval_cmd->add_flag("--json", eval_args.json, "print one JSON object");

  EmbedArgs embed_args;
  auto* embed_cmd = app.add_subcommand("embed", "write image embeddings to an index");
  embed_cmd->add_option("--ckpt", embed_args.ckpt, "checkpoint")->required();
  embed_cmd->add_option("--data", embed_args.data, "JSONL manifest")->required();
  embed_cmd->add_option("--out", embed_args.out, "index path")->required();

  RetrieveArgs retrieve_args;
  auto* retrieve_cmd = app.add_subcommand("retrieve", "rank index entries for a query");
  retrieve_cmd->add_option("--index", retrieve_args.index, "embedding index")->required();
  retrieve_cmd->add_option("--ckpt", retrieve_args.ckpt, "checkpoint used to embed the query")
      ->required();
  auto* image_opt = retrieve_cmd->add_option("--image", retrieve_args.image, "query image");
  auto* text_opt = retrieve_cmd->add_option("--text", retrieve_args.text, "query text");
  image_opt->excludes(text_opt);
  retrieve_cmd->add_option("--k", retrieve_args.k, "number of results")->required();
  retrieve_cmd->callback([&] {
    if (image_opt->count() + text_opt->count() != 1) {
      throw CLI::RequiredError("exactly one of --image or --text");
    }
  });

  GradcheckArgs gradcheck_args;
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gradcheck_cmd->add_option("--config", gradcheck_args.config, "JSON run configuration")
      ->required();

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "write the seeded synthetic dataset");
  synth_cmd->add_option("--out", synth_args.out, "output directory")->required();
  synth_cmd->add_option("--per-class", synth_args.per_class, "images per class")
      ->check(CLI::PositiveNumber);
  synth_cmd->add_option("--seed", synth_args.seed, "generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e, std::cerr, std::cerr);
    return kExitUsage;
  }

  try {
    if (*train_cmd) return run_train(train_args);
    if (*eval_cmd) return run_eval(eval_args);
    if (*embed_cmd) return run_embed(embed_args);
    if (*retrieve_cmd) return run_retrieve(retrieve_args);
    if (*gradcheck_cmd) return run_gradcheck_cmd(gradcheck_args);
    if (*synth_cmd) return run_synth(synth_args);
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
