#include "cmscore/training.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <numeric>

using namespace cmscore;

namespace {

// Direct double loop over every (anchor, contrastive) pair.
double hinge_sum(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double margin, Index* terms = nullptr) {
  double total = 0;
  Index count = 0;
  for (Index j = 0; j < x.rows(); ++j) {
    for (Index k = 0; k < y.rows(); ++k) {
      if (k == j) continue;
      total += std::max(0.0, margin - x.row(j).dot(y.row(j)) + x.row(j).dot(y.row(k)));
      ++count;
    }
  }
  if (terms) *terms = count;
  return total;
}

Eigen::MatrixXd unit_rows(Index n, Index d, std::uint64_t seed) {
  return testing::random_unit_rows(n, d, seed).cast<double>();
}

Dataset tiny_dataset(int notes, int val_pieces = 0) {
  DatasetConfig dc;
  dc.train_pieces = 1;
  dc.val_pieces = val_pieces;
  dc.test_pieces = 0;
  dc.notes_per_piece = notes;
  dc.multi_font = false;
  dc.tempo_var = false;
  return build_dataset(dc);
}

}  // namespace

TEST_CASE("cosine score examples") {
  Eigen::Vector2d a(0.6, 0.8), b(-0.8, 0.6);
  CHECK(cosine_score(a, a) == doctest::Approx(1.0));
  CHECK(cosine_score(a, b) == doctest::Approx(0.0));
  CHECK(cosine_score(a, Eigen::Vector2d(-a)) == doctest::Approx(-1.0));
}

TEST_CASE("ranking loss matches a direct hinge loop") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto x = unit_rows(7, 5, seed);
    const auto y = unit_rows(7, 5, seed + 100);
    Index terms = 0;
    const double expected = hinge_sum(x, y, 0.2, &terms);
    const auto r = ranking_loss<double>(x, y, 0.2);
    CHECK(r.loss == doctest::Approx(expected).epsilon(1e-12));
    CHECK(r.terms == terms);
    CHECK(r.terms == 7 * 6);
  }
}

TEST_CASE("ranking loss: satisfied margins give zero") {
  Eigen::MatrixXd x(2, 2), y(2, 2);
  x << 1, 0, 0, 1;
  y = x;
  CHECK(ranking_loss<double>(x, y, 0.5).loss == 0.0);
  const auto r = ranking_loss<double>(x, y, 0.5);
  CHECK(r.grad_x.isZero(0));
  CHECK(r.grad_y.isZero(0));
  // margin 0 with every matching score on top
  const auto u = unit_rows(6, 8, 4);
  CHECK(ranking_loss<double>(u, u, 0.0).loss == 0.0);
}

TEST_CASE("ranking loss is non-negative and zero exactly when every margin is met") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto x = unit_rows(5, 4, seed);
    const auto y = unit_rows(5, 4, seed + 50);
    const double margin = 0.05 * static_cast<double>(seed % 5);
    const auto r = ranking_loss<double>(x, y, margin);
    CHECK(r.loss >= 0);
    bool all_met = true;
    for (Index j = 0; j < 5; ++j)
      for (Index k = 0; k < 5; ++k)
        if (k != j && x.row(j).dot(y.row(j)) - x.row(j).dot(y.row(k)) < margin) all_met = false;
    CHECK((r.loss == 0) == all_met);
  }
}

TEST_CASE("ranking loss is invariant under a common permutation of the pairs") {
  const auto x = unit_rows(9, 6, 7);
  const auto y = unit_rows(9, 6, 8);
  std::vector<int> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(3);
  std::shuffle(perm.begin(), perm.end(), rng);
  Eigen::MatrixXd px(9, 6), py(9, 6);
  for (Index i = 0; i < 9; ++i) {
    px.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
    py.row(i) = y.row(perm[static_cast<std::size_t>(i)]);
  }
  CHECK(ranking_loss<double>(px, py, 0.2).loss == doctest::Approx(ranking_loss<double>(x, y, 0.2).loss));
}

TEST_CASE("duplicating a batch gives 2n(2n-2) terms; duplicate matches contribute exactly the margin") {
  const Index n = 6;
  const double margin = 0.2;
  const auto x = unit_rows(n, 5, 11);
  const auto y = unit_rows(n, 5, 12);
  Eigen::MatrixXd xx(2 * n, 5), yy(2 * n, 5);
  xx << x, x;
  yy << y, y;
  const auto single = ranking_loss<double>(x, y, margin);
  const auto doubled = ranking_loss<double>(xx, yy, margin);
  // 2n - 2 contrastive rows per anchor plus the anchor's own duplicate
  CHECK(doubled.terms == 2 * n * (2 * n - 2) + 2 * n);
  for (Index j = 0; j < 2 * n; ++j) {
    const Index dup = (j + n) % (2 * n);
    CHECK(margin - (xx.row(j).dot(yy.row(j)) - xx.row(j).dot(yy.row(dup))) == margin);
  }
  // every original term appears twice per anchor copy, plus one duplicate term worth margin
  CHECK(doubled.loss == doctest::Approx(4 * single.loss + 2.0 * static_cast<double>(n) * margin));
}

TEST_CASE("ranking loss gradient through normalization matches finite differences") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    for (bool symmetric : {false, true}) {
      const auto r = testing::loss_gradient(seed, symmetric);
      INFO("seed " << seed << " symmetric " << symmetric << " rel error " << r.rel_error);
      CHECK(r.rel_error < 1e-4);
    }
  }
}

TEST_CASE("ranking loss rejects single-pair and mismatched batches") {
  Eigen::MatrixXd one(1, 3);
  one << 1, 0, 0;
  CHECK_THROWS_AS(ranking_loss<double>(one, one, 0.2), ShapeError);
  CHECK_THROWS_AS(ranking_loss<double>(unit_rows(3, 3, 1), unit_rows(4, 3, 2), 0.2), ShapeError);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  Eigen::VectorXf p = Eigen::VectorXf::LinSpaced(5, -1, 1);
  const Eigen::VectorXf keep = p;
  Eigen::VectorXf g = Eigen::VectorXf::Zero(5);
  std::vector<ParamMap<float>> ps{ParamMap<float>(p.data(), 5)};
  std::vector<ParamMap<float>> gs{ParamMap<float>(g.data(), 5)};
  AdamState<float> state;
  for (int i = 0; i < 10; ++i) adam_step<float>(ps, gs, state, 0.002);
  CHECK(p == keep);
}

TEST_CASE("adam: first step from zero state is -lr for a unit gradient") {
  double p = 0.0, g = 1.0;
  std::vector<ParamMap<double>> ps{ParamMap<double>(&p, 1)};
  std::vector<ParamMap<double>> gs{ParamMap<double>(&g, 1)};
  AdamState<double> state;
  adam_step<double>(ps, gs, state, 0.002);
  CHECK(p == doctest::Approx(-0.002).epsilon(1e-6));
}

TEST_CASE("adam: constant gradient steps tend to lr") {
  double p = 0.0, g = 0.37;
  std::vector<ParamMap<double>> ps{ParamMap<double>(&p, 1)};
  std::vector<ParamMap<double>> gs{ParamMap<double>(&g, 1)};
  AdamState<double> state;
  double last = 0;
  for (int i = 0; i < 2000; ++i) {
    const double before = p;
    adam_step<double>(ps, gs, state, 0.002);
    last = before - p;
  }
  CHECK(last == doctest::Approx(0.002).epsilon(1e-4));
}

TEST_CASE("adam: mismatched state is rejected") {
  double p[2] = {0, 0}, g[2] = {1, 1};
  std::vector<ParamMap<double>> ps{ParamMap<double>(p, 2)};
  std::vector<ParamMap<double>> gs{ParamMap<double>(g, 1)};
  AdamState<double> state;
  CHECK_THROWS_AS(adam_step<double>(ps, gs, state, 0.002), ShapeError);
}

TEST_CASE("plateau schedule") {
  SUBCASE("improving history keeps the initial rate") {
    std::vector<double> h;
    for (int i = 0; i < 100; ++i) h.push_back(10.0 - 0.01 * i);
    CHECK(lr_schedule(h) == 0.002);
  }
  SUBCASE("thirty flat epochs halve the rate") {
    std::vector<double> h(31, 1.0);  // the first sets the best, thirty more are flat
    CHECK(lr_schedule(std::span<const double>(h.data(), 30)) == 0.002);
    CHECK(lr_schedule(h) == 0.001);
  }
  SUBCASE("improvements below tolerance do not count") {
    std::vector<double> h{1.0};
    for (int i = 1; i <= 30; ++i) h.push_back(1.0 - 5e-6);
    CHECK(lr_schedule(h) == 0.001);
  }
  SUBCASE("ten halvings exhaust the schedule") {
    PlateauSchedule s(ScheduleConfig{});
    s.observe(1.0);
    int epochs = 1;
    while (!s.exhausted()) {
      s.observe(1.0);
      ++epochs;
    }
    CHECK(s.halvings() == 10);
    CHECK(epochs == 1 + 300);
    CHECK(s.lr() == doctest::Approx(0.002 / 1024));
  }
  SUBCASE("patience resets on improvement") {
    PlateauSchedule s(ScheduleConfig{});
    s.observe(1.0);
    for (int i = 0; i < 29; ++i) s.observe(1.0);
    CHECK(s.observe(0.5));
    for (int i = 0; i < 29; ++i) s.observe(1.0);
    CHECK(s.lr() == 0.002);
    s.observe(1.0);
    CHECK(s.lr() == 0.001);
  }
}

TEST_CASE("batches per epoch fold a trailing singleton") {
  CHECK(batches_per_epoch(2400, 100) == 24);
  CHECK(batches_per_epoch(201, 100) == 2);
  CHECK(batches_per_epoch(202, 100) == 3);
  CHECK(batches_per_epoch(2, 100) == 1);
}

TEST_CASE("trainer rejects an empty dataset and bad settings") {
  Dataset empty;
  TrainConfig cfg;
  CHECK_THROWS_AS(Trainer(empty, cfg), std::invalid_argument);
  const auto data = tiny_dataset(3);
  cfg.batch_size = 1;
  CHECK_THROWS_AS(Trainer(data, cfg), std::invalid_argument);
  cfg.batch_size = 100;
  cfg.margin = -0.1;
  CHECK_THROWS_AS(Trainer(data, cfg), std::invalid_argument);
}

TEST_CASE("trainer overfits two distinct pairs") {
  const auto data = tiny_dataset(2);
  REQUIRE(data.train.pairs.size() == 2);
  TrainConfig cfg;
  cfg.kappa = 0.25;
  cfg.max_epochs = 200;
  const auto result = train(data, cfg);
  REQUIRE(result.log.size() == 200);
  INFO("first " << result.log.front().train_loss << " last " << result.log.back().train_loss);
  CHECK(result.log.back().train_loss < result.log.front().train_loss);
}

TEST_CASE("trainer is deterministic for a fixed seed") {
  const auto data = tiny_dataset(12);
  TrainConfig cfg;
  cfg.kappa = 0.25;
  cfg.batch_size = 4;
  cfg.max_epochs = 3;
  const auto a = train(data, cfg);
  const auto b = train(data, cfg);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].train_loss == b.log[i].train_loss);
    CHECK(a.log[i].val_loss == b.log[i].val_loss);
  }
  CHECK(bitwise_equal(a.last.model, b.last.model));
  cfg.seed = 2;
  const auto c = train(data, cfg);
  CHECK(c.log[0].train_loss != a.log[0].train_loss);
}

TEST_CASE("validation runs in eval mode") {
  const auto data = tiny_dataset(8, 1);
  TrainConfig cfg;
  cfg.kappa = 0.25;
  cfg.batch_size = 4;
  cfg.max_epochs = 2;
  Trainer trainer(data, cfg);
  trainer.run();
  // recompute by hand with running statistics
  const auto& val = data.val;
  std::vector<Image> snippets;
  for (const auto& p : val.pairs) snippets.push_back(val.snippets[static_cast<std::size_t>(p.snippet)]);
  const auto images = stack_images(snippets);
  const auto spectra = stack_spectrograms(val.excerpts);
  const auto xe = embed_image(trainer.model(), images, Mode::kEval);
  const auto xt = embed_image(trainer.model(), images, Mode::kTrain);
  CHECK((xe - xt).norm() > 1e-4F);
  // one validation batch holds every val pair when the split is small
  TrainConfig big = cfg;
  big.batch_size = 100;
  Trainer whole(data, big);
  whole.run();
  const auto x = embed_image(whole.model(), images, Mode::kEval);
  const auto y = embed_audio(whole.model(), spectra, Mode::kEval);
  CHECK(whole.validation_loss() == doctest::Approx(mean_ranking_loss(x, y, big)).epsilon(1e-5));
  CHECK(whole.log().back().val_loss == doctest::Approx(whole.validation_loss()).epsilon(1e-9));
}

TEST_CASE("metrics csv header and rows") {
  std::vector<EpochRecord> log{{1, 2.5, 3.0, 0.002, true}, {2, 2.0, 2.9, 0.001, true}};
  const auto csv = metrics_csv(log);
  CHECK(csv.rfind("epoch,train_loss,val_loss,lr\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}
