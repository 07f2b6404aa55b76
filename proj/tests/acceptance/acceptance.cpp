// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit when any
// criterion fails.
//
//   acceptance <run-config.json> [scratch-dir]

#include "endoclip/checkpoint.hpp"
#include "endoclip/gradcheck.hpp"
#include "endoclip/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

using namespace endoclip;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = true;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Matrix random_unit_rows(Index n, Index d, Rng& rng) {
  Matrix m(n, d);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  m.rowwise().normalize();
  return m;
}

Image random_image(const ViTConfig& c, Rng& rng) {
  Image img = Image::zeros(c.channels, c.image_size, c.image_size);
  for (auto& p : img.planes)
    for (Index i = 0; i < p.size(); ++i) p.data()[i] = rng.uniform();
  return img;
}

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---------------------------------------------------------------------------

Outcome gradient_suite(const TrainConfig& base) {
  const auto t0 = Clock::now();
  TrainConfig cfg = base;
  cfg.ablation = {true, true, true};
  const GradcheckEntry e = check_total_loss(cfg, 1e-5);
  const double secs = seconds_since(t0);
  const TrainConfig small = gradcheck_config(cfg);
  Outcome o;
  o.pass = e.max_rel_error < 1e-4 && secs < 60.0 && small.vit.d_model == 16 && small.batch_size == 4;
  o.detail = "max rel error " + fmt("%.3e", e.max_rel_error) + " over " + std::to_string(e.coordinates) +
             " coords, d_model " + std::to_string(small.vit.d_model) + ", " + fmt("%.1f s", secs);
  return o;
}

Outcome lora_transparency(const TrainConfig& cfg) {
  const auto t0 = Clock::now();
  const VisionTransformer plain = VisionTransformer::init(cfg.vit, 101);
  VisionTransformer adapted = VisionTransformer::init(cfg.vit, 101);
  const std::size_t adapters = inject_lora(adapted, cfg.lora, 202);
  Rng rng(303);
  double worst = 0.0;
  for (int i = 0; i < 10; ++i) {
    const Image img = random_image(cfg.vit, rng);
    Tape tape;
    const EncoderOutput a = encode_image(tape, img, plain);
    const EncoderOutput b = encode_image(tape, img, adapted);
    for (std::size_t l = 0; l < a.cls_per_layer.size(); ++l) {
      worst = std::max(worst, (a.cls_per_layer[l].value() - b.cls_per_layer[l].value()).cwiseAbs().maxCoeff());
    }
    worst = std::max(worst, (a.final_tokens.value() - b.final_tokens.value()).cwiseAbs().maxCoeff());
    worst = std::max(worst, (project_final_cls(tape, a, plain).value() - project_final_cls(tape, b, adapted).value())
                                .cwiseAbs()
                                .maxCoeff());
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = worst < 1e-12 && secs < 5.0 && adapters == 3 * static_cast<std::size_t>(cfg.vit.num_blocks);
  o.detail = std::to_string(adapters) + " adapters, max abs diff " + fmt("%.3e", worst) + " on 10 inputs, " +
             fmt("%.2f s", secs);
  return o;
}

Outcome slerp_suite() {
  const auto t0 = Clock::now();
  Rng rng(404);
  std::vector<LabeledFeature> feats;
  const Matrix rows = random_unit_rows(70, 32, rng);
  for (Index i = 0; i < rows.rows(); ++i) feats.push_back({rows.row(i), static_cast<int>(i % 7)});

  const std::vector<int> labels = [&] {
    std::vector<int> l;
    for (const auto& f : feats) l.push_back(f.class_id);
    return l;
  }();
  const auto pairs = sample_slerp_pairs(labels, rng, 1000);
  double norm_err = 0.0, endpoint_err = 0.0;
  bool labels_ok = pairs.size() == 1000;
  for (const auto& p : pairs) {
    const RowVector& f1 = feats[p.first].embedding;
    const RowVector& f2 = feats[p.second].embedding;
    labels_ok = labels_ok && labels[p.first] == labels[p.second];
    norm_err = std::max(norm_err, std::abs(slerp(f1, f2, p.lambda).norm() - 1.0));
    endpoint_err = std::max(endpoint_err, (slerp(f1, f2, 0.0) - f1).cwiseAbs().maxCoeff());
    endpoint_err = std::max(endpoint_err, (slerp(f1, f2, 1.0) - f2).cwiseAbs().maxCoeff());
  }
  RowVector e1 = RowVector::Zero(32), e2 = RowVector::Zero(32);
  e1(3) = 1.0;
  e2(17) = 1.0;
  const double ortho_err = (slerp(e1, e2, 0.5) - (e1 + e2) / std::sqrt(2.0)).cwiseAbs().maxCoeff();
  const RowVector f = feats[0].embedding;
  const bool degenerate_ok = (slerp(f, f, 0.37) - f).cwiseAbs().maxCoeff() < 1e-12;
  const double secs = seconds_since(t0);

  Outcome o;
  o.pass = labels_ok && norm_err < 1e-9 && endpoint_err < 1e-9 && ortho_err < 1e-9 && degenerate_ok && secs < 5.0;
  o.detail = "1000 same-class pairs: norm err " + fmt("%.1e", norm_err) + ", endpoint err " +
             fmt("%.1e", endpoint_err) + ", orthogonal midpoint err " + fmt("%.1e", ortho_err) +
             ", degenerate " + (degenerate_ok ? "ok" : "WRONG") + ", " + fmt("%.2f s", secs);
  return o;
}

Outcome contrastive_oracle() {
  const double expected = std::log1p(std::exp(-1.0));
  const Matrix e = Matrix::Identity(2, 8);
  const double two = contrastive_loss(e, e);
  Rng rng(505);
  const Matrix a = random_unit_rows(1, 8, rng), b = random_unit_rows(1, 8, rng);
  const double one = contrastive_loss(a, b);
  bool symmetric = true;
  for (int t = 0; t < 100; ++t) {
    const Index n = 2 + static_cast<Index>(rng.below(30));
    const Matrix v = random_unit_rows(n, 32, rng), u = random_unit_rows(n, 32, rng);
    symmetric = symmetric && contrastive_loss(v, u) == contrastive_loss(u, v);
    Tape tape;
    symmetric = symmetric && contrastive_loss(tape, Tensor(v), Tensor(u)).item() ==
                                 contrastive_loss(tape, Tensor(u), Tensor(v)).item();
  }
  Outcome o;
  o.pass = std::abs(two - expected) <= 1e-9 && one == 0.0 && symmetric;
  o.detail = "N=2 loss " + fmt("%.12f", two) + " (|diff| " + fmt("%.1e", std::abs(two - expected)) + "), N=1 loss " +
             fmt("%g", one) + ", swap symmetry over 100 batches " + (symmetric ? "bitwise" : "BROKEN");
  return o;
}

Outcome metric_oracles() {
  Rng rng(606);
  bool exact = true;
  for (int t = 0; t < 100; ++t) {
    Matrix s(20, 20);
    for (Index i = 0; i < s.size(); ++i) s.data()[i] = std::round(rng.normal() * 4.0) / 4.0;  // ties included
    std::vector<int> labels(20);
    for (auto& l : labels) l = static_cast<int>(rng.below(5));
    const bool self = t % 2 == 1;
    Relevance rel = class_match_relevance(labels, labels, self);
    std::vector<RankedResult> ranked;
    for (const auto& r : rank_queries(s, self)) {
      if (!rel.at(r.query).empty()) ranked.push_back(r);
    }
    for (auto it = rel.begin(); it != rel.end();) it = it->second.empty() ? rel.erase(it) : std::next(it);
    // Brute force: count candidates ahead of each relevant item.
    double hits1 = 0.0, hits5 = 0.0, rr = 0.0;
    for (const auto& r : ranked) {
      std::size_t best = SIZE_MAX;
      for (Index j : rel.at(r.query)) {
        std::size_t rank = 1;
        for (Index o = 0; o < 20; ++o) {
          if (o == j || (self && o == r.query)) continue;
          if (s(r.query, o) > s(r.query, j) || (s(r.query, o) == s(r.query, j) && o < j)) ++rank;
        }
        best = std::min(best, rank);
      }
      hits1 += best <= 1 ? 1.0 : 0.0;
      hits5 += best <= 5 ? 1.0 : 0.0;
      rr += 1.0 / static_cast<double>(best);
    }
    const double n = static_cast<double>(ranked.size());
    exact = exact && recall_at_k(ranked, rel, 1) == hits1 / n && recall_at_k(ranked, rel, 5) == hits5 / n &&
            mrr(ranked, rel) == rr / n;
  }

  auto result = [](Index q, std::vector<Index> c) {
    RankedResult r;
    r.query = q;
    r.candidates = std::move(c);
    r.scores.assign(r.candidates.size(), 0.0);
    return r;
  };
  const std::vector<RankedResult> hand{result(0, {1, 2, 3, 4}), result(1, {0, 2, 3, 4}), result(2, {0, 1, 3, 4})};
  const Relevance hand_rel{{0, {1}}, {1, {2}}, {2, {4}}};
  const double hand_mrr = mrr(hand, hand_rel);

  const auto rep = classification_report({0, 1, 1, 1, 6, 6, 2}, {0, 0, 1, 1, 6, 2, 2});
  Eigen::Matrix<long, kNumClasses, kNumClasses, Eigen::RowMajor> confusion;
  confusion.setZero();
  confusion(0, 0) = 1;
  confusion(0, 1) = 1;
  confusion(1, 1) = 2;
  confusion(6, 6) = 1;
  confusion(2, 6) = 1;
  confusion(2, 2) = 1;
  // classes 0, 1, 2, 6: P = 1, 2/3, 1, 1/2; R = 1/2, 1, 1/2, 1
  const double p = (1.0 + 2.0 / 3.0 + 1.0 + 0.5) / 4.0;
  const double r = (0.5 + 1.0 + 0.5 + 1.0) / 4.0;
  const double f1 = (2.0 / 3.0 + 0.8 + 2.0 / 3.0 + 2.0 / 3.0) / 4.0;
  const bool report_ok = rep.confusion == confusion && std::abs(rep.accuracy - 5.0 / 7.0) < 1e-12 &&
                         std::abs(rep.precision - p) < 1e-12 && std::abs(rep.recall - r) < 1e-12 &&
                         std::abs(rep.f1 - f1) < 1e-12;

  Outcome o;
  o.pass = exact && std::abs(hand_mrr - 7.0 / 12.0) <= 1e-12 && report_ok;
  o.detail = std::string("100 random 20x20 matrices ") + (exact ? "exact" : "MISMATCH") + ", mrr[1,2,4] " +
             fmt("%.15f", hand_mrr) + ", hand confusion " + (report_ok ? "matches" : "MISMATCH");
  return o;
}

struct ArmMetrics {
  int steps = 0;
  double accuracy = 0.0, i2i_r1 = 0.0, i2i_mrr = 0.0, t2i_r1 = 0.0, t2i_mrr = 0.0, secs = 0.0;
};

ArmMetrics train_and_measure(const TrainConfig& cfg, const DatasetManifest& data,
                             const std::vector<Image>& images) {
  const auto t0 = Clock::now();
  const TrainOutcome out = train_model(cfg, data);
  ArmMetrics m;
  m.steps = out.steps;
  m.accuracy = evaluate(out.model, images, data, EvalTask::Classification).classification->accuracy;
  const auto i2i = *evaluate(out.model, images, data, EvalTask::ImageToImage).retrieval;
  const auto t2i = *evaluate(out.model, images, data, EvalTask::TextToImage).retrieval;
  m.i2i_r1 = i2i.recall_at_1;
  m.i2i_mrr = i2i.mrr;
  m.t2i_r1 = t2i.recall_at_1;
  m.t2i_mrr = t2i.mrr;
  m.secs = seconds_since(t0);
  return m;
}

Outcome memorization(const TrainConfig& base, const DatasetManifest& data, const std::vector<Image>& images) {
  TrainConfig cfg = base;
  cfg.ablation = {true, true, true};
  const ArmMetrics m = train_and_measure(cfg, data, images);
  Outcome o;
  o.pass = m.steps <= 300 && m.accuracy >= 0.99 && m.i2i_r1 >= 0.95 && m.t2i_r1 >= 0.95 && m.i2i_mrr >= 0.97 &&
           m.secs < 600.0;
  o.detail = std::to_string(data.size()) + " images, " + std::to_string(m.steps) + " steps: acc " +
             fmt("%.4f", m.accuracy) + ", i2i R@1 " + fmt("%.4f", m.i2i_r1) + ", t2i R@1 " + fmt("%.4f", m.t2i_r1) +
             ", i2i MRR " + fmt("%.4f", m.i2i_mrr) + ", t2i MRR " + fmt("%.4f", m.t2i_mrr) + ", " +
             fmt("%.1f s", m.secs);
  return o;
}

Outcome ablation_table(const TrainConfig& base, const DatasetManifest& data, const std::vector<Image>& images) {
  struct Arm {
    const char* name;
    AblationToggles toggles;
  };
  const std::vector<Arm> arms{{"baseline", {false, false, false}},
                              {"+LoRA", {true, false, false}},
                              {"+MFA", {true, true, false}},
                              {"+SFA", {true, true, true}}};
  std::ostringstream table;
  table << "    arm        steps  accuracy  i2i R@1  i2i MRR  t2i R@1  t2i MRR\n";
  bool all_ran = true;
  for (const auto& arm : arms) {
    TrainConfig cfg = base;
    cfg.ablation = arm.toggles;
    try {
      const ArmMetrics m = train_and_measure(cfg, data, images);
      char row[160];
      std::snprintf(row, sizeof row, "    %-9s  %5d  %8.4f  %7.4f  %7.4f  %7.4f  %7.4f\n", arm.name, m.steps,
                    m.accuracy, m.i2i_r1, m.i2i_mrr, m.t2i_r1, m.t2i_mrr);
      table << row;
      all_ran = all_ran && m.steps > 0;
    } catch (const std::exception& e) {
      table << "    " << arm.name << "  failed: " << e.what() << '\n';
      all_ran = false;
    }
  }
  Outcome o;
  o.pass = all_ran;
  o.detail = "four arms from one config by toggles\n" + table.str();
  return o;
}

Outcome determinism(const TrainConfig& base, const DatasetManifest& data, const std::filesystem::path& dir) {
  TrainConfig cfg = base;
  cfg.max_steps = 20;
  const auto first = train(cfg, data, dir / "run_a.ckpt");
  const auto second = train(cfg, data, dir / "run_b.ckpt");
  const bool same_log = first.size() == second.size() && first.back().loss == second.back().loss;
  const std::string bytes_a = read_bytes(dir / "run_a.ckpt");
  const bool same_ckpt = !bytes_a.empty() && bytes_a == read_bytes(dir / "run_b.ckpt");

  const LoadedCheckpoint loaded = load_checkpoint(dir / "run_a.ckpt");
  const TrainOutcome reference = train_model(cfg, data);
  const auto images = load_images(data, cfg.vit);
  const Matrix before = reference.model.image_embeddings(images);
  const Matrix after = loaded.model.image_embeddings(images);
  Tape t1, t2;
  const Matrix logits_before = reference.model.logits(t1, Tensor(before)).value();
  const Matrix logits_after = loaded.model.logits(t2, Tensor(after)).value();
  const bool forward_exact = before == after && logits_before == logits_after;

  const EmbeddingIndex index = build_index(loaded.model, data);
  save_index(dir / "index.embx", index);
  const EmbeddingIndex back = load_index(dir / "index.embx");
  const bool index_exact = back.ids == index.ids && back.labels == index.labels && back.embeddings == index.embeddings;

  Outcome o;
  o.pass = same_log && same_ckpt && forward_exact && index_exact;
  o.detail = std::string("identical runs: checkpoint bytes ") + (same_ckpt ? "equal" : "DIFFER") + ", final loss " +
             (same_log ? "equal" : "DIFFER") + "; checkpoint forward " + (forward_exact ? "bit-exact" : "DIFFERS") +
             "; index round-trip " + (index_exact ? "bit-exact" : "DIFFERS");
  return o;
}

Outcome masking_ratio() {
  const Index count = masked_patch_count(224, 16, 0.10);
  Image img = Image::zeros(3, 224, 224);
  for (auto& p : img.planes) p.setConstant(0.5);
  double lo = 1.0, hi = 0.0;
  bool counts_ok = true;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const Image out = patch_mask(img, 16, 0.10, rng);
    const Index zeros = (out.planes[0].array() == 0.0).count();
    counts_ok = counts_ok && zeros == count * 16 * 16;
    const double frac = static_cast<double>(zeros) / (224.0 * 224.0);
    lo = std::min(lo, frac);
    hi = std::max(hi, frac);
  }
  Outcome o;
  o.pass = count == 20 && counts_ok && lo >= 0.08 && hi <= 0.12;
  o.detail = std::to_string(count) + " of 196 patches, masked fraction in [" + fmt("%.4f", lo) + ", " +
             fmt("%.4f", hi) + "] over 100 seeds";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: acceptance <run-config.json> [scratch-dir]\n";
    return 1;
  }
  const TrainConfig config = load_config(argv[1]);
  const std::filesystem::path scratch =
      argc > 2 ? std::filesystem::path(argv[2]) : std::filesystem::temp_directory_path() / "endoclip_acceptance";
  std::filesystem::remove_all(scratch);
  std::filesystem::create_directories(scratch);

  SyntheticSpec spec;
  spec.per_class = 20;
  spec.seed = config.seed;
  const DatasetManifest data = make_synthetic_dataset(scratch / "data", spec);
  const std::vector<Image> images = load_images(data, config.vit);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"AC1 gradient suite", [&] { return gradient_suite(config); }},
      {"AC2 LoRA transparency", [&] { return lora_transparency(config); }},
      {"AC3 slerp suite", [] { return slerp_suite(); }},
      {"AC4 contrastive oracle", [] { return contrastive_oracle(); }},
      {"AC5 metric oracles", [] { return metric_oracles(); }},
      {"AC6 memorization", [&] { return memorization(config, data, images); }},
      {"AC7 ablation structure", [&] { return ablation_table(config, data, images); }},
      {"AC8 determinism and persistence", [&] { return determinism(config, data, scratch); }},
      {"AC9 masking ratio", [] { return masking_ratio(); }},
  };

  int failures = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS  " : "FAIL  ") << name << ": " << o.detail << std::endl;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
