#include "endoclip/retrieval.hpp"

#include "endoclip/binary_io.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <unordered_set>

namespace endoclip {

Matrix text_image_scores(const Matrix& u, const Matrix& v) {
  Matrix s = cosine_sim_matrix(u, v);
  for (Index i = 0; i < s.rows(); ++i) {
    const double m = s.row(i).maxCoeff();
    s.row(i) = (s.row(i).array() - m).exp().matrix();
    s.row(i) /= s.row(i).sum();
  }
  return s;
}

std::vector<RankedResult> rank_queries(const Matrix& scores, bool exclude_self) {
  if (exclude_self && scores.rows() != scores.cols()) {
    throw DimensionError("rank_queries: exclude_self needs a square matrix, got " +
                         shape_string(scores.rows(), scores.cols()));
  }
  std::vector<RankedResult> out;
  out.reserve(static_cast<std::size_t>(scores.rows()));
  for (Index q = 0; q < scores.rows(); ++q) {
    RankedResult r;
    r.query = q;
    for (Index j = 0; j < scores.cols(); ++j) {
      if (!(exclude_self && j == q)) r.candidates.push_back(j);
    }
    std::stable_sort(r.candidates.begin(), r.candidates.end(),
                     [&](Index a, Index b) { return scores(q, a) > scores(q, b); });
    r.scores.reserve(r.candidates.size());
    for (Index j : r.candidates) r.scores.push_back(scores(q, j));
    out.push_back(std::move(r));
  }
  return out;
}

Relevance class_match_relevance(const std::vector<int>& query_labels,
                                const std::vector<int>& db_labels, bool exclude_self) {
  Relevance rel;
  for (std::size_t q = 0; q < query_labels.size(); ++q) {
    auto& set = rel[static_cast<Index>(q)];
    for (std::size_t j = 0; j < db_labels.size(); ++j) {
      if (exclude_self && j == q) continue;
      if (db_labels[j] == query_labels[q]) set.insert(static_cast<Index>(j));
    }
  }
  return rel;
}

namespace {

const std::set<Index>& relevant_for(const Relevance& relevant, Index query) {
  auto it = relevant.find(query);
  if (it == relevant.end() || it->second.empty()) {
    throw EvaluationError("query " + std::to_string(query) + " has no relevant items");
  }
  return it->second;
}

}  // namespace

double recall_at_k(const std::vector<RankedResult>& results, const Relevance& relevant,
                   std::size_t k) {
  if (results.empty()) throw EvaluationError("recall_at_k: no queries");
  std::size_t hits = 0;
  for (const auto& r : results) {
    const auto& rel = relevant_for(relevant, r.query);
    const std::size_t depth = std::min(k, r.candidates.size());
    for (std::size_t i = 0; i < depth; ++i) {
      if (rel.contains(r.candidates[i])) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(results.size());
}

double mrr(const std::vector<RankedResult>& results, const Relevance& relevant) {
  if (results.empty()) throw EvaluationError("mrr: no queries");
  double total = 0.0;
  for (const auto& r : results) {
    const auto& rel = relevant_for(relevant, r.query);
    for (std::size_t i = 0; i < r.candidates.size(); ++i) {
      if (rel.contains(r.candidates[i])) {
        total += 1.0 / static_cast<double>(i + 1);
        break;
      }
    }
  }
  return total / static_cast<double>(results.size());
}

ClassificationReport classification_report(const std::vector<int>& pred,
                                           const std::vector<int>& truth) {
  if (pred.size() != truth.size()) {
    throw EvaluationError("classification_report: " + std::to_string(pred.size()) +
                          " predictions for " + std::to_string(truth.size()) + " labels");
  }
  if (truth.empty()) throw EvaluationError("classification_report: no samples");
  ClassificationReport rep;
  rep.confusion.setZero();
  for (std::size_t i = 0; i < truth.size(); ++i) {
    class_name(truth[i]);
    class_name(pred[i]);
    ++rep.confusion(truth[i], pred[i]);
  }
  const auto support = rep.confusion.rowwise().sum();
  const auto predicted = rep.confusion.colwise().sum();
  rep.accuracy = static_cast<double>(rep.confusion.trace()) / static_cast<double>(truth.size());
  int present = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    const double tp = static_cast<double>(rep.confusion(c, c));
    const double p = predicted(c) > 0 ? tp / static_cast<double>(predicted(c)) : 0.0;
    const double r = support(c) > 0 ? tp / static_cast<double>(support(c)) : 0.0;
    const double f = p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
    rep.class_precision.push_back(p);
    rep.class_recall.push_back(r);
    rep.class_f1.push_back(f);
    if (support(c) > 0 || predicted(c) > 0) {
      ++present;
      rep.precision += p;
      rep.recall += r;
      rep.f1 += f;
    }
  }
  rep.precision /= present;
  rep.recall /= present;
  rep.f1 /= present;
  return rep;
}

void EmbeddingIndex::validate() const {
  const auto n = static_cast<Index>(ids.size());
  if (embeddings.rows() != n || static_cast<Index>(labels.size()) != n) {
    throw DataError("embedding index: " + std::to_string(ids.size()) + " ids, " +
                    std::to_string(embeddings.rows()) + " rows, " +
                    std::to_string(labels.size()) + " labels");
  }
  std::unordered_set<std::string> seen;
  for (const auto& id : ids) {
    if (!seen.insert(id).second) throw DataError("embedding index: duplicate id '" + id + "'");
  }
  for (Index i = 0; i < n; ++i) {
    if (std::abs(embeddings.row(i).norm() - 1.0) > 1e-6) {
      throw DataError("embedding index: row " + std::to_string(i) + " is not unit norm");
    }
  }
}

void save_index(const std::filesystem::path& path, const EmbeddingIndex& index) {
  index.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write index " + path.string());
  binio::put_magic(out, "EMBX");
  binio::put<std::uint32_t>(out, kEmbeddingIndexVersion);
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(index.ids.size()));
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(index.embeddings.cols()));
  for (std::size_t i = 0; i < index.ids.size(); ++i) {
    binio::put_string(out, index.ids[i]);
    binio::put<std::int32_t>(out, index.labels[i]);
    for (Index k = 0; k < index.embeddings.cols(); ++k) {
      binio::put_f64(out, index.embeddings(static_cast<Index>(i), k));
    }
  }
  if (!out) throw DataError("failed writing index " + path.string());
}

EmbeddingIndex load_index(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open index " + path.string());
  binio::expect_magic(in, "EMBX", path.string());
  const auto version = binio::get<std::uint32_t>(in);
  if (version != kEmbeddingIndexVersion) {
    throw DataError(path.string() + ": unsupported index version " + std::to_string(version));
  }
  const auto n = binio::get<std::uint32_t>(in);
  const auto d = binio::get<std::uint32_t>(in);
  EmbeddingIndex index;
  index.embeddings.resize(n, d);
  for (std::uint32_t i = 0; i < n; ++i) {
    index.ids.push_back(binio::get_string(in));
    index.labels.push_back(binio::get<std::int32_t>(in));
    for (std::uint32_t k = 0; k < d; ++k) index.embeddings(i, k) = binio::get_f64(in);
  }
  index.validate();
  return index;
}

}  // namespace endoclip
