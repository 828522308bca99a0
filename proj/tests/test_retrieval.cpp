#include "cmscore/retrieval.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <filesystem>
#include <map>
#include <sstream>

using namespace cmscore;
namespace fs = std::filesystem;

namespace {

EmbeddingIndex make_index(const Eigen::MatrixXf& rows, int pieces = 1) {
  EmbeddingIndex idx;
  idx.embeddings = rows;
  for (Index i = 0; i < rows.rows(); ++i) {
    idx.piece_ids.push_back(static_cast<int>(i % pieces));
    idx.note_indices.push_back(static_cast<int>(i / pieces));
  }
  return idx;
}

}  // namespace

TEST_CASE("query_knn: exact match and orthogonal pair") {
  Eigen::MatrixXf rows(2, 2);
  rows << 1, 0, 0, 1;
  const auto idx = make_index(rows);
  const auto r = query_knn(idx, Eigen::Vector2f(1, 0), 2);
  REQUIRE(r.rows.size() == 2);
  CHECK(r.rows[0] == 0);
  CHECK(r.rows[1] == 1);
  CHECK(r.distances[0] == doctest::Approx(0.0));
  CHECK(r.distances[1] == doctest::Approx(1.0));
  const auto stored = make_index(testing::random_unit_rows(30, 8, 2));
  const auto hit = query_knn(stored, stored.embeddings.row(17).transpose(), 1);
  CHECK(hit.rows[0] == 17);
  CHECK(hit.distances[0] == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("query_knn agrees with a brute-force sort of every candidate") {
  const auto idx = make_index(testing::random_unit_rows(200, 32, 5));
  const auto queries = testing::random_unit_rows(50, 32, 6);
  for (Index q = 0; q < queries.rows(); ++q) {
    const Eigen::VectorXf query = queries.row(q).transpose();
    const auto order = testing::sort_all(idx, query);
    for (Index k : {Index{1}, Index{10}, Index{200}}) {
      const auto r = query_knn(idx, query, k, q);
      CHECK(r.query_id == q);
      REQUIRE(r.rows.size() == static_cast<std::size_t>(k));
      for (Index i = 0; i < k; ++i) CHECK(r.rows[static_cast<std::size_t>(i)] == order[static_cast<std::size_t>(i)]);
      for (std::size_t i = 1; i < r.distances.size(); ++i) CHECK(r.distances[i - 1] <= r.distances[i]);
    }
    for (Index target : {Index{0}, Index{99}, Index{199}}) {
      const auto pos = std::find(order.begin(), order.end(), target) - order.begin() + 1;
      CHECK(true_rank(idx, query, target) == pos);
    }
  }
}

TEST_CASE("query_knn: ties break by row id") {
  Eigen::MatrixXf rows(4, 2);
  rows << 0, 1, 1, 0, 0, 1, 1, 0;
  const auto idx = make_index(rows);
  const auto r = query_knn(idx, Eigen::Vector2f(1, 0), 4);
  CHECK(r.rows == std::vector<Index>{1, 3, 0, 2});
  CHECK(true_rank(idx, Eigen::Vector2f(1, 0), 3) == 2);
}

TEST_CASE("query_knn: invalid requests are rejected") {
  const auto idx = make_index(testing::random_unit_rows(5, 4, 1));
  const Eigen::VectorXf q = Eigen::VectorXf::Unit(4, 0);
  CHECK_THROWS(query_knn(idx, q, 0));
  CHECK_THROWS(query_knn(idx, q, 6));
  CHECK_THROWS(query_knn(EmbeddingIndex{}, q, 1));
  CHECK_THROWS(query_knn(idx, Eigen::VectorXf::Zero(4), 1));
  EmbeddingIndex broken = idx;
  broken.piece_ids.pop_back();
  CHECK_THROWS(broken.validate());
  EmbeddingIndex scaled = idx;
  scaled.embeddings *= 2.0F;
  CHECK_THROWS(scaled.validate());
  CHECK_NOTHROW(idx.validate());
}

TEST_CASE("ranking is invariant under positive rescaling of the query") {
  const auto idx = make_index(testing::random_unit_rows(100, 16, 8));
  const auto queries = testing::random_unit_rows(20, 16, 9);
  for (Index q = 0; q < queries.rows(); ++q) {
    const Eigen::VectorXf query = queries.row(q).transpose();
    const auto a = query_knn(idx, query, 100);
    for (float s : {0.01F, 3.0F, 250.0F}) {
      CHECK(query_knn(idx, (s * query).eval(), 100).rows == a.rows);
      CHECK(true_rank(idx, (s * query).eval(), q) == true_rank(idx, query, q));
    }
  }
}

TEST_CASE("recall and median rank examples") {
  const std::vector<Index> ranks{1, 3, 12, 30};
  CHECK(recall_at_k(ranks, 1) == 25.0);
  CHECK(recall_at_k(ranks, 10) == 50.0);
  CHECK(recall_at_k(ranks, 25) == 75.0);
  CHECK(median_rank(ranks) == 3);
  CHECK(median_rank({1, 1, 1}) == 1);
  CHECK(recall_at_k({1, 1, 1}, 1) == 100.0);
  CHECK(recall_at_k({6, 6, 6}, 5) == 0.0);
  const auto m = summarize_ranks(ranks, 40);
  CHECK(m.r1 == 25.0);
  CHECK(m.r10 == 50.0);
  CHECK(m.r25 == 75.0);
  CHECK(m.median == 3);
  CHECK(m.candidates == 40);
  CHECK(m.queries == 4);
}

TEST_CASE("median rank and recall agree with an explicit rank list") {
  const auto idx = make_index(testing::random_unit_rows(80, 8, 21));
  const auto queries = testing::random_unit_rows(41, 8, 22);
  std::vector<Index> targets;
  for (Index q = 0; q < 41; ++q) targets.push_back(q);
  const auto ranks = true_ranks(idx, queries, targets);
  std::vector<Index> oracle;
  for (Index q = 0; q < 41; ++q) {
    const auto order = testing::sort_all(idx, queries.row(q).transpose());
    oracle.push_back(std::find(order.begin(), order.end(), q) - order.begin() + 1);
  }
  CHECK(ranks == oracle);
  auto sorted = oracle;
  std::sort(sorted.begin(), sorted.end());
  CHECK(median_rank(ranks) == sorted[20]);
  Index prev_hits = 0;
  double prev = 0;
  for (Index k = 1; k <= 80; ++k) {
    const double r = recall_at_k(ranks, k);
    CHECK(r >= prev);
    prev = r;
    const Index hits = std::count_if(oracle.begin(), oracle.end(), [&](Index v) { return v <= k; });
    CHECK(hits >= prev_hits);
    prev_hits = hits;
    CHECK(r == doctest::Approx(100.0 * static_cast<double>(hits) / 41.0));
  }
  CHECK(recall_at_k(ranks, 80) == 100.0);
  CHECK(median_rank(ranks) >= 1);
}

TEST_CASE("identify_piece: forced outcomes") {
  SUBCASE("single-piece index") {
    const auto idx = make_index(testing::random_unit_rows(40, 8, 3), 1);
    const auto queries = testing::random_unit_rows(7, 8, 4);
    const auto id = identify_piece(idx, queries, 25);
    REQUIRE(id.ranking.size() == 1);
    CHECK(id.ranking[0].votes == 25 * 7);
    CHECK(id.total_votes == 25 * 7);
    CHECK(id.rank_of(0) == 1);
    CHECK(id.rank_of(5) == 0);
  }
  SUBCASE("all top-25 candidates from piece A") {
    EmbeddingIndex idx;
    idx.embeddings.resize(60, 2);
    for (Index i = 0; i < 60; ++i) {
      const bool a = i < 30;
      idx.embeddings.row(i) = a ? Eigen::RowVector2f(1, 0) : Eigen::RowVector2f(0, 1);
      idx.piece_ids.push_back(a ? 4 : 2);
      idx.note_indices.push_back(static_cast<int>(i));
    }
    Eigen::MatrixXf queries(3, 2);
    queries << 1, 0, 1, 0, 1, 0;
    const auto id = identify_piece(idx, queries, 25);
    REQUIRE(id.ranking.size() == 2);
    CHECK(id.ranking[0].piece_id == 4);
    CHECK(id.ranking[0].votes == 75);
    CHECK(id.ranking[1].piece_id == 2);
    CHECK(id.ranking[1].votes == 0);
    CHECK(id.rank_of(4) == 1);
    CHECK(id.rank_of(2) == 2);
  }
  SUBCASE("equal votes rank by ascending piece id") {
    Eigen::MatrixXf rows(2, 2);
    rows << 1, 0, 1, 0;
    EmbeddingIndex idx;
    idx.embeddings = rows;
    idx.piece_ids = {9, 3};
    idx.note_indices = {0, 0};
    const auto id = identify_piece(idx, Eigen::MatrixXf(Eigen::RowVector2f(1, 0)), 2);
    CHECK(id.ranking[0].piece_id == 3);
    CHECK(id.ranking[1].piece_id == 9);
  }
}

TEST_CASE("vote tallies equal an independent recount and conserve votes") {
  const auto idx = make_index(testing::random_unit_rows(120, 32, 31), 3);
  const auto queries = testing::random_unit_rows(40, 32, 32);
  const auto id = identify_piece(idx, queries, 25);
  std::map<int, Index> recount;
  for (Index q = 0; q < queries.rows(); ++q) {
    const auto order = testing::sort_all(idx, queries.row(q).transpose());
    for (std::size_t i = 0; i < 25; ++i) ++recount[idx.piece_ids[static_cast<std::size_t>(order[i])]];
  }
  Index total = 0;
  for (const auto& pv : id.ranking) {
    CHECK(pv.votes == recount[pv.piece_id]);
    total += pv.votes;
  }
  CHECK(total == 25 * 40);
  CHECK(id.total_votes == total);
  for (std::size_t i = 1; i < id.ranking.size(); ++i) {
    CHECK(id.ranking[i - 1].votes >= id.ranking[i].votes);
  }
  std::vector<RetrievalResult> results;
  for (Index q = 0; q < queries.rows(); ++q) results.push_back(query_knn(idx, queries.row(q).transpose(), 25, q));
  const auto again = tally_votes(idx, results);
  REQUIRE(again.ranking.size() == id.ranking.size());
  for (std::size_t i = 0; i < again.ranking.size(); ++i) {
    CHECK(again.ranking[i].piece_id == id.ranking[i].piece_id);
    CHECK(again.ranking[i].votes == id.ranking[i].votes);
  }
}

TEST_CASE("random embeddings are unit norm and seeded") {
  const auto a = random_embeddings(500, 32, 1);
  CHECK(a.rows() == 500);
  for (Index i = 0; i < a.rows(); ++i) CHECK(std::abs(a.row(i).norm() - 1.0F) < 1e-5F);
  CHECK(a == random_embeddings(500, 32, 1));
  CHECK(a != random_embeddings(500, 32, 2));
  // roughly isotropic: the mean direction is short
  CHECK(a.colwise().mean().norm() < 0.15F);
}

TEST_CASE("index persistence round-trips bitwise") {
  const auto dir = fs::temp_directory_path() / "cmscore_test_index";
  fs::remove_all(dir);
  const auto idx = make_index(testing::random_unit_rows(64, 32, 12), 4);
  save_index(idx, dir);
  const auto back = load_index(dir);
  CHECK(back.embeddings == idx.embeddings);
  CHECK(back.piece_ids == idx.piece_ids);
  CHECK(back.note_indices == idx.note_indices);
  CHECK_THROWS(load_index(dir / "missing"));
  fs::remove_all(dir);
}

TEST_CASE("ranks csv layout") {
  const auto csv = ranks_csv({1, 3, 12, 30});
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "query_id,true_rank");
  std::getline(in, line);
  CHECK(line == "0,1");
  int rows = 1;
  std::string last;
  while (std::getline(in, line)) {
    ++rows;
    last = line;
  }
  CHECK(rows == 5);
  CHECK(last.rfind("summary,", 0) == 0);
  CHECK(last.find("MR=3") != std::string::npos);
}
