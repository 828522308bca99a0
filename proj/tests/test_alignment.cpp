#include "cmscore/alignment.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <random>
#include <sstream>

using namespace cmscore;

namespace {

CostMatrix random_levels(Index r, Index c, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> level(0, 2);
  CostMatrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = 0.5 * level(rng);
  return m;
}

Image blank_staff(Index width) { return Image::Ones(kSnippetHeight, width); }

}  // namespace

TEST_CASE("sequence counting") {
  const Spectrogram spec = Spectrogram::Zero(kSpectrogramBins, 101);
  const auto seq = build_sequences(blank_staff(2000), spec, {100}, {0}, {50, 10});
  CHECK(seq.image_windows.size() == 37);
  CHECK(seq.image_centers.front() == 100);
  CHECK(seq.image_centers.back() == 36 * 50 + 100);
  CHECK(seq.audio_windows.size() == 11);
  CHECK(seq.audio_frames.back() == 100);
  const auto one = build_sequences(blank_staff(200), spec, {100}, {0}, {200, 10});
  CHECK(one.image_windows.size() == 1);
  const auto wide_hop = build_sequences(blank_staff(2000), spec, {100}, {0}, {2000, 10});
  CHECK(wide_hop.image_windows.size() == 1);
  for (const auto& w : seq.image_windows) {
    CHECK(w.rows() == 180);
    CHECK(w.cols() == 200);
  }
  for (const auto& w : seq.audio_windows) {
    CHECK(w.rows() == 92);
    CHECK(w.cols() == 42);
  }
}

TEST_CASE("sequences reject short staves, empty audio and bad hops") {
  const Spectrogram spec = Spectrogram::Zero(kSpectrogramBins, 20);
  CHECK_THROWS(build_sequences(blank_staff(199), spec, {100}, {0}));
  CHECK_THROWS(build_sequences(blank_staff(400), Spectrogram::Zero(kSpectrogramBins, 0), {100}, {0}));
  CHECK_THROWS(build_sequences(blank_staff(400), spec, {100}, {0}, {0, 10}));
  CHECK_THROWS(build_sequences(blank_staff(400), spec, {100}, {0}, {50, 0}));
}

TEST_CASE("ground truth at an onset is the note's x-pixel; linear in between") {
  const auto piece = gen_piece(3, 12, 12);
  const auto staff = render_unrolled_staff(piece);
  const auto render = render_spectrogram(piece, sound_font(0));
  const auto seq = build_sequences(staff.image, render.spec, staff.note_x, render.onset_frames, {50, 1});
  for (std::size_t n = 0; n < staff.note_x.size(); ++n) {
    const auto f = static_cast<std::size_t>(render.onset_frames[n]);
    CHECK(seq.true_x[f] == doctest::Approx(staff.note_x[n]));
  }
  const double mid = 0.5 * (render.onset_frames[2] + render.onset_frames[3]);
  CHECK(interpolate_position(staff.note_x, render.onset_frames, mid) ==
        doctest::Approx(0.5 * (staff.note_x[2] + staff.note_x[3])));
  CHECK(interpolate_position(staff.note_x, render.onset_frames, 1e6) == staff.note_x.back());
  CHECK(interpolate_position(staff.note_x, render.onset_frames, -5) == staff.note_x.front());
}

TEST_CASE("cost matrix examples and recompute") {
  Eigen::MatrixXf a(1, 2);
  a << 0.6F, 0.8F;
  CHECK(cost_matrix(a, a)(0, 0) == doctest::Approx(0.0).epsilon(1e-7));
  Eigen::MatrixXf e = Eigen::MatrixXf::Identity(2, 2);
  const auto c = cost_matrix(e, e);
  CHECK(c(0, 1) == 1.0);
  CHECK(c(1, 0) == 1.0);
  const auto x = testing::random_unit_rows(10, 32, 1);
  const auto y = testing::random_unit_rows(12, 32, 2);
  const auto m = cost_matrix(x, y);
  REQUIRE(m.rows() == 10);
  REQUIRE(m.cols() == 12);
  for (Index r = 0; r < 10; ++r)
    for (Index k = 0; k < 12; ++k) {
      double dot = 0;
      for (Index d = 0; d < 32; ++d) dot += static_cast<double>(x(r, d)) * y(k, d);
      CHECK(std::abs(m(r, k) - (1.0 - dot)) < 1e-6);
      CHECK(m(r, k) >= 0);
      CHECK(m(r, k) <= 2);
    }
}

TEST_CASE("dtw: zero matrix gives the diagonal-then-edge path") {
  const auto r = dtw(CostMatrix::Zero(3, 5));
  CHECK(r.cost == 0);
  CHECK(r.path == AlignmentPath{{0, 0}, {1, 1}, {2, 2}, {2, 3}, {2, 4}});
  const auto tall = dtw(CostMatrix::Zero(4, 2));
  CHECK(tall.path == AlignmentPath{{0, 0}, {1, 1}, {2, 1}, {3, 1}});
  CHECK(dtw(CostMatrix::Zero(1, 1)).path == AlignmentPath{{0, 0}});
  CHECK_THROWS(dtw(CostMatrix(0, 3)));
}

TEST_CASE("dtw: identity-favoring matrix follows the diagonal") {
  CostMatrix c = CostMatrix::Ones(3, 3);
  c.diagonal().setZero();
  const auto r = dtw(c);
  CHECK(r.cost == 0);
  CHECK(r.path == AlignmentPath{{0, 0}, {1, 1}, {2, 2}});
}

TEST_CASE("dtw cost equals exhaustive enumeration on 500 random matrices") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> dim(1, 6);
  for (int t = 0; t < 500; ++t) {
    const auto c = random_levels(dim(rng), dim(rng), rng);
    const auto r = dtw(c);
    CHECK_NOTHROW(validate_path(r.path, c.rows(), c.cols()));
    CHECK(r.cost == doctest::Approx(testing::enumerate_min_path_cost(c)));
    CHECK(path_cost(c, r.path) == doctest::Approx(r.cost));
  }
}

TEST_CASE("dtw optimality, scaling invariance and path validity") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0, 2);
  for (int t = 0; t < 50; ++t) {
    const Index rows = 3 + t % 9;
    const Index cols = 4 + (t * 7) % 13;
    CostMatrix c(rows, cols);
    for (Index i = 0; i < c.size(); ++i) c.data()[i] = u(rng);
    const auto r = dtw(c);
    validate_path(r.path, rows, cols);
    const auto lin = linear_baseline(rows, cols);
    validate_path(lin, rows, cols);
    CHECK(r.cost <= path_cost(c, lin) + 1e-12);
    CHECK(dtw(2.0 * c).path == r.path);
  }
}

TEST_CASE("linear baseline rounding") {
  std::vector<Index> rows_at_col(9, -1);
  for (const auto& [r, c] : linear_baseline(5, 9)) {
    if (rows_at_col[static_cast<std::size_t>(c)] < 0) rows_at_col[static_cast<std::size_t>(c)] = r;
  }
  // the first row reached in each column: round-half-up of c * 4 / 8
  CHECK(rows_at_col == std::vector<Index>{0, 1, 1, 2, 2, 3, 3, 4, 4});
  const auto diag = linear_baseline(6, 6);
  REQUIRE(diag.size() == 6);
  for (Index i = 0; i < 6; ++i) CHECK(diag[static_cast<std::size_t>(i)] == std::pair<Index, Index>{i, i});
  const auto flat = linear_baseline(1, 7);
  for (const auto& [r, c] : flat) CHECK(r == 0);
  CHECK(flat.size() == 7);
  const auto col = linear_baseline(4, 1);
  CHECK(col == AlignmentPath{{0, 0}, {1, 0}, {2, 0}, {3, 0}});
}

TEST_CASE("path validation rejects malformed paths") {
  CHECK_THROWS(validate_path({}, 2, 2));
  CHECK_THROWS(validate_path({{0, 0}, {1, 1}}, 3, 2));
  CHECK_THROWS(validate_path({{0, 1}, {1, 1}}, 2, 2));
  CHECK_THROWS(validate_path({{0, 0}, {0, 2}}, 1, 3));
  CHECK_THROWS(validate_path({{0, 0}, {1, 1}, {0, 1}, {1, 1}}, 2, 2));
  CHECK_NOTHROW(validate_path({{0, 0}, {0, 1}, {1, 1}}, 2, 2));
}

TEST_CASE("alignment error examples") {
  const std::vector<int> centers{100, 150, 200, 250};
  const AlignmentPath diag{{0, 0}, {1, 1}, {2, 2}, {3, 3}};
  const auto perfect = alignment_error(diag, centers, {100, 150, 200, 250});
  for (const auto& e : perfect) CHECK(e.norm_error == 0);
  CHECK(summarize_errors(perfect).median == 0);
  const auto shifted = alignment_error(diag, centers, {100 + 417.5, 150 + 417.5, 200 + 417.5, 250 + 417.5});
  CHECK(summarize_errors(shifted).median == doctest::Approx(0.5));
  // several rows matched to one column: lower median row
  const AlignmentPath multi{{0, 0}, {1, 0}, {2, 0}, {3, 0}, {3, 1}};
  const auto m = alignment_error(multi, centers, {0, 0}, 100.0);
  CHECK(m[0].est_x == 150);
  CHECK(m[0].norm_error == doctest::Approx(1.5));
  CHECK(m[1].est_x == 250);
}

TEST_CASE("quantiles interpolate linearly") {
  CHECK(quantile({1, 2, 3, 4}, 0.5) == doctest::Approx(2.5));
  CHECK(quantile({1, 2, 3, 4, 5}, 0.25) == doctest::Approx(2.0));
  CHECK(quantile({4, 1, 3, 2}, 0.25) == doctest::Approx(1.75));
  CHECK(quantile({7}, 0.75) == 7);
  CHECK_THROWS(quantile({}, 0.5));
  std::vector<WindowError> errs;
  for (double v : {0.1, 0.4, 0.2, 0.3, 0.9}) errs.push_back({0, 0, 0, v});
  const auto s = summarize_errors(errs);
  CHECK(s.median == doctest::Approx(0.3));
  CHECK(s.q1 == doctest::Approx(0.2));
  CHECK(s.q3 == doctest::Approx(0.4));
  CHECK(s.max == doctest::Approx(0.9));
}

TEST_CASE("alignment outputs") {
  const std::vector<WindowError> errs{{0, 100, 150, 0.06}, {1, 120, 150, 0.036}};
  const auto csv = errors_csv(errs);
  CHECK(csv.rfind("audio_window,true_x,est_x,norm_error\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  const auto json = summary_json(summarize_errors(errs));
  for (const char* key : {"\"median\"", "\"q1\"", "\"q3\"", "\"max\""}) CHECK(json.find(key) != std::string::npos);
  CostMatrix c(2, 3);
  c << 0, 0.5, 1, 1.5, 2, 0.25;
  std::istringstream in(matrix_text(c));
  double v = 0;
  std::vector<double> read;
  while (in >> v) read.push_back(v);
  CHECK(read == std::vector<double>{0, 0.5, 1, 1.5, 2, 0.25});
  const auto box = boxplot_data({{"dtw", errs}, {"linear", errs}});
  CHECK(box.find("dtw") != std::string::npos);
}

TEST_CASE("align_piece runs end to end on an untrained model") {
  DatasetConfig dc;
  dc.train_pieces = 0;
  dc.val_pieces = 0;
  dc.test_pieces = 1;
  dc.notes_per_piece = 16;
  const auto data = build_dataset(dc);
  const auto model = make_model<float>(0.25, 1);
  const auto& rec = data.test.pieces.front();
  const auto result = align_piece(model, rec, data.test.renderings.front());
  CHECK(result.cost.rows() == static_cast<Index>((rec.staff.cols() - 200) / 50 + 1));
  validate_path(result.dtw.path, result.cost.rows(), result.cost.cols());
  validate_path(result.linear, result.cost.rows(), result.cost.cols());
  CHECK(result.dtw_errors.size() == static_cast<std::size_t>(result.cost.cols()));
  CHECK(result.dtw.cost <= path_cost(result.cost, result.linear) + 1e-9);
  CHECK(result.cost.minCoeff() >= 0);
  CHECK(result.cost.maxCoeff() <= 2);
}
