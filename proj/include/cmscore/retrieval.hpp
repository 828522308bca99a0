#pragma once

#include "cmscore/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cmscore {

/// Candidate embeddings (one unit-norm row each) with their origin.
struct EmbeddingIndex {
  MatrixX<float> embeddings;
  std::vector<int> piece_ids;
  std::vector<int> note_indices;

  Index size() const { return embeddings.rows(); }
  Index dim() const { return embeddings.cols(); }
  /// Throws unless metadata lengths agree, rows >= 1 and every row has unit
  /// norm within tol.
  void validate(double tol = 1e-4) const;
};

struct RetrievalResult {
  Index query_id = 0;
  std::vector<Index> rows;       // candidate rows, best first
  std::vector<double> distances; // cosine distances, non-decreasing
};

/// Cosine distance 1 - x.y / (|x| |y|).
double cosine_distance(const Eigen::Ref<const VectorX<float>>& x, const Eigen::Ref<const VectorX<float>>& y);

/// Exhaustive k nearest candidates by cosine distance; ties by row id.
RetrievalResult query_knn(const EmbeddingIndex& index, const Eigen::Ref<const VectorX<float>>& query, Index k,
                          Index query_id = 0);

/// 1-based position of `target_row` in the full distance ordering.
Index true_rank(const EmbeddingIndex& index, const Eigen::Ref<const VectorX<float>>& query, Index target_row);

/// Ranks for every row of `queries`, query j against target row targets[j].
std::vector<Index> true_ranks(const EmbeddingIndex& index, const MatrixX<float>& queries,
                              const std::vector<Index>& targets);

/// Percentage of ranks <= k.
double recall_at_k(const std::vector<Index>& ranks, Index k);
/// Median of 1-based ranks, lower middle for an even count.
Index median_rank(std::vector<Index> ranks);

struct RetrievalMetrics {
  double r1 = 0;
  double r10 = 0;
  double r25 = 0;
  Index median = 0;
  Index candidates = 0;
  Index queries = 0;
};
RetrievalMetrics summarize_ranks(const std::vector<Index>& ranks, Index candidates);

struct PieceVotes {
  int piece_id = 0;
  Index votes = 0;
};

struct Identification {
  std::vector<PieceVotes> ranking;  // descending votes, ties by piece id
  Index total_votes = 0;
  /// 1-based position of `piece` in the ranking, 0 if absent.
  Index rank_of(int piece) const;
};

/// Each query votes once for the piece of each of its top candidates. Every
/// piece present in the index appears in the ranking, possibly with 0 votes.
Identification identify_piece(const EmbeddingIndex& index, const MatrixX<float>& queries,
                              Index votes_per_query = 25);
/// Same tally from precomputed retrieval results.
Identification tally_votes(const EmbeddingIndex& index, const std::vector<RetrievalResult>& results);

/// Rows drawn uniformly from the unit sphere.
MatrixX<float> random_embeddings(Index rows, Index dim, std::uint64_t seed);

/// embeddings.f32 plus index.json (rows, dim, piece_ids, note_indices).
void save_index(const EmbeddingIndex& index, const std::filesystem::path& dir);
EmbeddingIndex load_index(const std::filesystem::path& dir);

/// `query_id,true_rank` rows followed by a `summary` row carrying R@1, R@10,
/// R@25 and MR.
std::string ranks_csv(const std::vector<Index>& ranks);

}  // namespace cmscore
