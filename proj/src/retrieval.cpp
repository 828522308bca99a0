#include "cmscore/retrieval.hpp"

#include "cmscore/io.hpp"
#include "cmscore/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

namespace cmscore {

namespace {

// Query-independent ranking key: x_i . y / |x_i|. The common 1/|y| factor is
// applied only when reporting distances.
std::vector<double> scores(const EmbeddingIndex& index, const Eigen::Ref<const VectorX<float>>& query) {
  require_shape(query.size() == index.dim(), "query has dimension " + std::to_string(query.size()) +
                                                 ", index has " + std::to_string(index.dim()));
  const VectorX<double> q = query.cast<double>();
  std::vector<double> s(static_cast<std::size_t>(index.size()));
  for (Index i = 0; i < index.size(); ++i) {
    const VectorX<double> x = index.embeddings.row(i).transpose().cast<double>();
    s[static_cast<std::size_t>(i)] = x.dot(q) / x.norm();
  }
  return s;
}

}  // namespace

void EmbeddingIndex::validate(double tol) const {
  if (embeddings.rows() < 1) throw std::invalid_argument("embedding index is empty");
  if (piece_ids.size() != static_cast<std::size_t>(size()) || note_indices.size() != static_cast<std::size_t>(size())) {
    throw std::invalid_argument("embedding index metadata does not match its row count");
  }
  for (Index i = 0; i < size(); ++i) {
    const double n = embeddings.row(i).cast<double>().norm();
    if (std::abs(n - 1.0) > tol) {
      throw std::invalid_argument("embedding index row " + std::to_string(i) + " has norm " + std::to_string(n));
    }
  }
}

double cosine_distance(const Eigen::Ref<const VectorX<float>>& x, const Eigen::Ref<const VectorX<float>>& y) {
  const VectorX<double> a = x.cast<double>();
  const VectorX<double> b = y.cast<double>();
  return 1.0 - a.dot(b) / (a.norm() * b.norm());
}

RetrievalResult query_knn(const EmbeddingIndex& index, const Eigen::Ref<const VectorX<float>>& query, Index k,
                          Index query_id) {
  if (index.size() < 1) throw std::invalid_argument("query_knn: empty index");
  if (k < 1 || k > index.size()) {
    throw std::invalid_argument("query_knn: k=" + std::to_string(k) + " outside [1, " + std::to_string(index.size()) +
                                "]");
  }
  const auto s = scores(index, query);
  const double qn = query.cast<double>().norm();
  if (!(qn > 0)) throw std::invalid_argument("query_knn: zero query");
  std::vector<Index> order(s.size());
  std::iota(order.begin(), order.end(), Index{0});
  auto better = [&](Index a, Index b) {
    const double sa = s[static_cast<std::size_t>(a)];
    const double sb = s[static_cast<std::size_t>(b)];
    return sa != sb ? sa > sb : a < b;
  };
  std::partial_sort(order.begin(), order.begin() + k, order.end(), better);
  RetrievalResult r;
  r.query_id = query_id;
  r.rows.assign(order.begin(), order.begin() + k);
  for (Index row : r.rows) r.distances.push_back(1.0 - s[static_cast<std::size_t>(row)] / qn);
  return r;
}

Index true_rank(const EmbeddingIndex& index, const Eigen::Ref<const VectorX<float>>& query, Index target_row) {
  if (target_row < 0 || target_row >= index.size()) throw std::out_of_range("true_rank: target row out of range");
  const auto s = scores(index, query);
  const double t = s[static_cast<std::size_t>(target_row)];
  Index rank = 1;
  for (Index i = 0; i < index.size(); ++i) {
    const double v = s[static_cast<std::size_t>(i)];
    if (v > t || (v == t && i < target_row)) ++rank;
  }
  return rank;
}

std::vector<Index> true_ranks(const EmbeddingIndex& index, const MatrixX<float>& queries,
                              const std::vector<Index>& targets) {
  require_shape(static_cast<std::size_t>(queries.rows()) == targets.size(),
                "true_ranks: " + std::to_string(queries.rows()) + " queries vs " + std::to_string(targets.size()) +
                    " targets");
  std::vector<Index> ranks(targets.size());
  parallel_for(targets.size(), [&](std::size_t j) {
    ranks[j] = true_rank(index, queries.row(static_cast<Index>(j)).transpose(), targets[j]);
  });
  return ranks;
}

double recall_at_k(const std::vector<Index>& ranks, Index k) {
  if (k < 1) throw std::invalid_argument("recall_at_k: k must be >= 1");
  if (ranks.empty()) return 0.0;
  const auto hits = std::count_if(ranks.begin(), ranks.end(), [k](Index r) { return r <= k; });
  return 100.0 * static_cast<double>(hits) / static_cast<double>(ranks.size());
}

Index median_rank(std::vector<Index> ranks) {
  if (ranks.empty()) throw std::invalid_argument("median_rank: no ranks");
  const auto mid = ranks.begin() + static_cast<std::ptrdiff_t>((ranks.size() - 1) / 2);
  std::nth_element(ranks.begin(), mid, ranks.end());
  return *mid;
}

RetrievalMetrics summarize_ranks(const std::vector<Index>& ranks, Index candidates) {
  RetrievalMetrics m;
  m.r1 = recall_at_k(ranks, 1);
  m.r10 = recall_at_k(ranks, 10);
  m.r25 = recall_at_k(ranks, 25);
  m.median = median_rank(ranks);
  m.candidates = candidates;
  m.queries = static_cast<Index>(ranks.size());
  return m;
}

Index Identification::rank_of(int piece) const {
  for (std::size_t i = 0; i < ranking.size(); ++i) {
    if (ranking[i].piece_id == piece) return static_cast<Index>(i) + 1;
  }
  return 0;
}

Identification tally_votes(const EmbeddingIndex& index, const std::vector<RetrievalResult>& results) {
  std::map<int, Index> votes;
  for (int id : index.piece_ids) votes.emplace(id, 0);
  Identification out;
  for (const auto& r : results) {
    for (Index row : r.rows) {
      ++votes[index.piece_ids[static_cast<std::size_t>(row)]];
      ++out.total_votes;
    }
  }
  for (const auto& [id, v] : votes) out.ranking.push_back({id, v});
  std::stable_sort(out.ranking.begin(), out.ranking.end(),
                   [](const PieceVotes& a, const PieceVotes& b) { return a.votes > b.votes; });
  return out;
}

Identification identify_piece(const EmbeddingIndex& index, const MatrixX<float>& queries, Index votes_per_query) {
  if (votes_per_query < 1) throw std::invalid_argument("identify_piece: votes_per_query must be >= 1");
  const Index k = std::min(votes_per_query, index.size());
  std::vector<RetrievalResult> results(static_cast<std::size_t>(queries.rows()));
  parallel_for(results.size(), [&](std::size_t j) {
    results[j] = query_knn(index, queries.row(static_cast<Index>(j)).transpose(), k, static_cast<Index>(j));
  });
  return tally_votes(index, results);
}

MatrixX<float> random_embeddings(Index rows, Index dim, std::uint64_t seed) {
  Rng rng(seed);
  MatrixX<float> out(rows, dim);
  for (Index i = 0; i < rows; ++i) {
    VectorX<double> v(dim);
    for (Index d = 0; d < dim; ++d) {
      // Box-Muller on the reproducible uniform stream
      const double u1 = 1.0 - rng.uniform();
      const double u2 = rng.uniform();
      v(d) = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }
    out.row(i) = (v / v.norm()).cast<float>().transpose();
  }
  return out;
}

void save_index(const EmbeddingIndex& index, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const RowMatrixX<float> rows = index.embeddings;
  write_f32(dir / "embeddings.f32", std::span<const float>(rows.data(), static_cast<std::size_t>(rows.size())));
  nlohmann::json j;
  j["format_version"] = 1;
  j["rows"] = index.size();
  j["dim"] = index.dim();
  j["piece_ids"] = index.piece_ids;
  j["note_indices"] = index.note_indices;
  write_text(dir / "index.json", j.dump(1) + "\n");
}

EmbeddingIndex load_index(const std::filesystem::path& dir) {
  EmbeddingIndex index;
  try {
    const auto j = nlohmann::json::parse(read_text(dir / "index.json"));
    const auto rows = j.at("rows").get<Index>();
    const auto dim = j.at("dim").get<Index>();
    if (rows < 1 || dim < 1) throw FormatError("index dimensions must be positive");
    index.piece_ids = j.at("piece_ids").get<std::vector<int>>();
    index.note_indices = j.at("note_indices").get<std::vector<int>>();
    const auto values = read_f32(dir / "embeddings.f32", static_cast<std::size_t>(rows * dim));
    index.embeddings = Eigen::Map<const RowMatrixX<float>>(values.data(), rows, dim);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError((dir / "index.json").string() + ": " + e.what());
  }
  index.validate();
  return index;
}

std::string ranks_csv(const std::vector<Index>& ranks) {
  std::ostringstream out;
  out << "query_id,true_rank\n";
  for (std::size_t j = 0; j < ranks.size(); ++j) out << j << "," << ranks[j] << "\n";
  if (!ranks.empty()) {
    const auto m = summarize_ranks(ranks, 0);
    char buf[160];
    std::snprintf(buf, sizeof(buf), "summary,R@1=%.2f;R@10=%.2f;R@25=%.2f;MR=%ld\n", m.r1, m.r10, m.r25,
                  static_cast<long>(m.median));
    out << buf;
  }
  return out.str();
}

}  // namespace cmscore
