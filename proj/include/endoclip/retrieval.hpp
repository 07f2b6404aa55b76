#pragma once

// Similarity scoring, ranking and evaluation metrics for classification,
// image-to-image and text-to-image retrieval.

#include "endoclip/classes.hpp"
#include "endoclip/errors.hpp"
#include "endoclip/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace endoclip {

/// Entry (i, j) = q_i . db_j; equals cosine similarity for unit rows.
template <typename D1, typename D2>
Matrix cosine_sim_matrix(const Eigen::MatrixBase<D1>& q, const Eigen::MatrixBase<D2>& db) {
  if (q.cols() != db.cols()) {
    throw DimensionError("cosine_sim_matrix: width mismatch " + shape_string(q.rows(), q.cols()) +
                         " vs " + shape_string(db.rows(), db.cols()));
  }
  return q * db.transpose();
}

/// Row-softmax of u v^T: each text query's distribution over images.
Matrix text_image_scores(const Matrix& u, const Matrix& v);

struct RankedResult {
  Index query = 0;
  std::vector<Index> candidates;  // by descending score, ties by ascending index
  std::vector<double> scores;
};

/// Sorts each row of `scores`. With exclude_self the matrix must be square
/// and query i never sees candidate i.
std::vector<RankedResult> rank_queries(const Matrix& scores, bool exclude_self);

/// query index -> relevant candidate indices
using Relevance = std::map<Index, std::set<Index>>;

/// Items are relevant iff they share the query's label.
Relevance class_match_relevance(const std::vector<int>& query_labels,
                                const std::vector<int>& db_labels, bool exclude_self);

/// Fraction of queries with a relevant candidate among the first k.
double recall_at_k(const std::vector<RankedResult>& results, const Relevance& relevant,
                   std::size_t k);

/// Mean of 1 / (1-based rank of the first relevant candidate); a query whose
/// relevant items are absent from its ranking contributes 0.
double mrr(const std::vector<RankedResult>& results, const Relevance& relevant);

struct ClassificationReport {
  Eigen::Matrix<long, kNumClasses, kNumClasses, Eigen::RowMajor> confusion;  // truth x pred
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::vector<double> class_precision;
  std::vector<double> class_recall;
  std::vector<double> class_f1;
};

/// Macro averages over every class that occurs in truth or pred. A class
/// never predicted has precision 0; F1 is 0 when P + R = 0.
ClassificationReport classification_report(const std::vector<int>& pred,
                                           const std::vector<int>& truth);

// ---------------------------------------------------------------------------
// Embedding index file: "EMBX", u32 version, u32 n, u32 d, then n records of
// (u32-length-prefixed UTF-8 id, i32 label or -1, d f64). Little-endian.

struct EmbeddingIndex {
  std::vector<std::string> ids;
  Matrix embeddings;        // n x d, unit rows
  std::vector<int> labels;  // -1 when unknown

  void validate() const;
};

inline constexpr std::uint32_t kEmbeddingIndexVersion = 1;

void save_index(const std::filesystem::path& path, const EmbeddingIndex& index);
EmbeddingIndex load_index(const std::filesystem::path& path);

}  // namespace endoclip
