#include "cmscore/loss.hpp"
#include "cmscore/model.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <set>

using namespace cmscore;

namespace {

Tensor4<float> noise(Index n, Index h, Index w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor4<float> t(n, 1, h, w);
  std::uniform_real_distribution<float> u(0.0F, 1.0F);
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = u(rng);
  return t;
}

struct Expected {
  Index channels;
  Index height;
  Index width;
};

}  // namespace

TEST_CASE("shape walk at full width follows the architecture table") {
  const auto [f, g] = build_pathways(1.0);
  const std::vector<Index> convs = {12, 12, 24, 24, 48, 48, 48, 48, 32};
  for (const auto* spec : {&f, &g}) {
    const auto layers = spec->layers();
    REQUIRE(layers.size() == 9);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      CHECK(layers[i].out_channels == convs[i]);
      CHECK(layers[i].kernel == (i == 8 ? 1 : 3));
      CHECK(layers[i].elu == (i != 8));
      CHECK(layers[i].pool_after == (i < 8 && i % 2 == 1));
    }
  }
  // image 180x200 -> 90x100 -> 45x50 -> 22x25 -> 11x12
  const std::vector<Expected> image_chain = {{12, 90, 100}, {24, 45, 50}, {48, 22, 25}, {48, 11, 12}};
  // audio 92x42 -> 46x21 -> 23x10 -> 11x5 -> 5x2
  const std::vector<Expected> audio_chain = {{12, 46, 21}, {24, 23, 10}, {48, 11, 5}, {48, 5, 2}};
  for (const auto& [spec, chain] : {std::pair{f, image_chain}, std::pair{g, audio_chain}}) {
    const auto model = [&] {
      PathwayParams<float> p(spec);
      Rng rng(1);
      initialize(p, rng);
      return p;
    }();
    PathwayCache<float> cache;
    const auto out = pathway_forward(model, noise(2, spec.height, spec.width, 3), Mode::kTrain, &cache);
    for (std::size_t b = 0; b < 4; ++b) {
      const auto& pool = cache.layers[2 * b + 1].pool;
      const Shape4 after{2, chain[b].channels, pool.input_shape.height / 2, pool.input_shape.width / 2};
      CHECK(after == Shape4{2, chain[b].channels, chain[b].height, chain[b].width});
    }
    CHECK(cache.pre_pool_shape == spec.pre_pool_shape(2));
    CHECK(out.rows() == 2);
    CHECK(out.cols() == 32);
  }
  CHECK(f.pre_pool_shape(1) == Shape4{1, 32, 11, 12});
  CHECK(g.pre_pool_shape(1) == Shape4{1, 32, 5, 2});
}

TEST_CASE("channel scale shrinks blocks but keeps 32-d embeddings") {
  const auto [f, g] = build_pathways(0.25);
  CHECK(f.block_channels == std::array<Index, 4>{3, 6, 12, 12});
  CHECK(g.block_channels == f.block_channels);
  CHECK(f.embed_dim == 32);
  CHECK_THROWS(build_pathways(0.0));
  CHECK_THROWS(build_pathways(0.01));
  CHECK_THROWS(build_pathways(1.5));
}

TEST_CASE("embeddings are unit norm, deterministic and input sensitive") {
  const auto model = make_model<float>(0.25, 42);
  const auto images = noise(3, kSnippetHeight, kSnippetWidth, 1);
  const auto spectra = noise(3, kSpectrogramBins, kExcerptFrames, 2);
  for (Mode mode : {Mode::kEval, Mode::kTrain}) {
    const auto x = embed_image(model, images, mode);
    const auto y = embed_audio(model, spectra, mode);
    for (Index i = 0; i < 3; ++i) {
      CHECK(std::abs(x.row(i).norm() - 1.0F) < 1e-6F);
      CHECK(std::abs(y.row(i).norm() - 1.0F) < 1e-6F);
    }
    CHECK(x == embed_image(model, images, mode));
    CHECK(y == embed_audio(model, spectra, mode));
  }
  const auto x = embed_image(model, images);
  const auto y = embed_audio(model, spectra);
  CHECK((x.row(0) - x.row(1)).norm() > 1e-4F);
  CHECK((y.row(0) - y.row(1)).norm() > 1e-4F);
}

TEST_CASE("eval embeddings do not depend on batch composition") {
  const auto model = make_model<float>(0.25, 5);
  const auto batch = noise(5, kSnippetHeight, kSnippetWidth, 9);
  const auto all = embed_image(model, batch, Mode::kEval, 2);
  for (Index i = 0; i < 5; ++i) {
    auto one = Tensor4<float>::uninitialized({1, 1, kSnippetHeight, kSnippetWidth});
    one.plane(0, 0) = batch.plane(i, 0);
    CHECK((embed_image(model, one) - all.row(i)).cwiseAbs().maxCoeff() < 1e-6F);
  }
}

TEST_CASE("wrong input geometry is rejected") {
  const auto model = make_model<float>(0.25, 1);
  CHECK_THROWS_AS(embed_image(model, noise(1, 92, 42, 1)), ShapeError);
  CHECK_THROWS_AS(embed_audio(model, noise(1, 180, 200, 1)), ShapeError);
}

TEST_CASE("the two pathways share no parameter storage") {
  auto model = make_model<float>(0.25, 1);
  std::set<const float*> seen;
  bool shared = false;
  auto visit = [&](float* p, Index) { shared |= !seen.insert(p).second; };
  model.image.for_each_array(visit);
  model.audio.for_each_array(visit);
  CHECK_FALSE(shared);
  // and they are initialized from different streams
  CHECK(model.image.layers[0].conv.weight != model.audio.layers[0].conv.weight);
}

TEST_CASE("end-to-end gradient through both pathways, normalization and loss") {
  for (std::uint64_t seed : {1u, 2u}) {
    const auto r = testing::end_to_end_gradient(seed);
    INFO("rel error " << r.rel_error);
    CHECK(r.rel_error < 1e-4);
  }
}

TEST_CASE("end-to-end gradient in single precision stays within 1e-3") {
  const PathwaySpec fs{20, 24, {2, 2, 2, 2}, 4};
  const PathwaySpec gs{18, 16, {2, 2, 2, 2}, 4};
  Model<double> md;
  md.image = PathwayParams<double>(fs);
  md.audio = PathwayParams<double>(gs);
  Rng init(3);
  initialize(md.image, init);
  initialize(md.audio, init);
  std::mt19937_64 rng(3);
  const auto images = testing::random_tensor(4, 1, 20, 24, rng);
  const auto spectra = testing::random_tensor(4, 1, 18, 16, rng);

  Model<float> mf = md.cast<float>();
  PathwayCache<float> ci, ca;
  const auto x = pathway_forward(mf.image, images.cast<float>(), Mode::kTrain, &ci);
  const auto y = pathway_forward(mf.audio, spectra.cast<float>(), Mode::kTrain, &ca);
  const auto r = ranking_loss<float>(x, y, 0.5F);
  auto gx = pathway_backward(mf.image, ci, r.grad_x);
  auto gy = pathway_backward(mf.audio, ca, r.grad_y);
  std::vector<float> analytic;
  auto collect = [&](float* p, Index n) { analytic.insert(analytic.end(), p, p + n); };
  gx.for_each_trainable(collect);
  gy.for_each_trainable(collect);

  auto loss = [&] {
    const auto xd = pathway_forward(md.image, images, Mode::kTrain);
    const auto yd = pathway_forward(md.audio, spectra, Mode::kTrain);
    return ranking_loss<double>(xd, yd, 0.5).loss;
  };
  std::vector<double> numeric;
  auto differentiate = [&](double* p, Index n) {
    const Eigen::VectorXd g = testing::numeric_gradient(p, n, std::function<double()>(loss));
    numeric.insert(numeric.end(), g.data(), g.data() + n);
  };
  md.image.for_each_trainable(differentiate);
  md.audio.for_each_trainable(differentiate);

  REQUIRE(analytic.size() == numeric.size());
  const Eigen::VectorXd a =
      Eigen::Map<const Eigen::VectorXf>(analytic.data(), static_cast<Index>(analytic.size())).cast<double>();
  const Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(numeric.data(), static_cast<Index>(numeric.size()));
  const double err = testing::relative_error(a, b);
  INFO("rel error " << err);
  CHECK(err < 1e-3);
}
