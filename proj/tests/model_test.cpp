#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "gradcheck.hpp"
#include "nvc/losses.hpp"
#include "nvc/model.hpp"

using nvc::MlpVae;
using nvc::ModelConfig;
using nvc::Shape;
using nvc::Tensor;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.input_dim = 12;
  cfg.hidden_dims = {10, 6};
  cfg.latent_dim = 4;
  cfg.seed = 5;
  return cfg;
}

Tensor<float> random_batch(int64_t n, int64_t dim, uint64_t seed) {
  nvc::Rng rng(seed);
  std::vector<float> v(static_cast<size_t>(n * dim));
  for (auto& x : v) x = static_cast<float>(rng.next_double());
  return Tensor<float>(Shape{n, dim}, std::move(v));
}

}  // namespace

TEST_CASE("encode and decode shapes") {
  auto model = MlpVae<float>::init(small_config(), true);
  auto x = random_batch(4, 12, 1);
  auto lat = model.encode(x, nullptr);
  CHECK(lat.mu.shape() == Shape{4, 4});
  CHECK(lat.logvar.shape() == Shape{4, 4});
  CHECK(lat.z.shape() == Shape{4, 4});
  auto y = model.decode(lat.z);
  CHECK(y.shape() == Shape{4, 12});
}

TEST_CASE("eval mode is deterministic and returns the mean") {
  auto model = MlpVae<float>::init(small_config(), true);
  auto x = random_batch(3, 12, 2);
  auto a = model.encode(x, nullptr);
  auto b = model.encode(x, nullptr);
  CHECK(std::vector<float>(a.z.data().begin(), a.z.data().end()) ==
        std::vector<float>(b.z.data().begin(), b.z.data().end()));
  CHECK(std::vector<float>(a.z.data().begin(), a.z.data().end()) ==
        std::vector<float>(a.mu.data().begin(), a.mu.data().end()));
}

TEST_CASE("reparameterization noise follows exp(logvar)") {
  auto model = MlpVae<float>::init(small_config(), true);
  auto x = random_batch(1, 12, 3);
  const auto ref = model.encode(x, nullptr);
  const int64_t d = 4;
  const int resamples = 10000;
  std::vector<double> acc(static_cast<size_t>(d), 0.0);
  nvc::Rng noise(77);
  for (int r = 0; r < resamples; ++r) {
    const auto lat = model.encode(x, &noise);
    for (int64_t k = 0; k < d; ++k) {
      const double diff = lat.z.item(k) - lat.mu.item(k);
      acc[static_cast<size_t>(k)] += diff * diff;
    }
  }
  for (int64_t k = 0; k < d; ++k) {
    const double var = acc[static_cast<size_t>(k)] / resamples;
    const double expected = std::exp(ref.logvar.item(k));
    CHECK(var == Catch::Approx(expected).epsilon(0.10));
  }
}

TEST_CASE("decoder output stays strictly inside (0,1) with sigmoid head") {
  auto model = MlpVae<float>::init(small_config(), true);
  auto z = random_batch(5, 4, 9);
  auto y = model.decode(z);
  for (float v : y.data()) {
    CHECK(v > 0.0f);
    CHECK(v < 1.0f);
  }
}

TEST_CASE("gaussian head is linear (no squashing)") {
  ModelConfig cfg = small_config();
  auto model = MlpVae<float>::init(cfg, false);
  // push a large latent through; a linear head can leave [0,1]
  Tensor<float> z(Shape{1, 4}, {25.f, -25.f, 25.f, -25.f});
  auto y = model.decode(z);
  bool outside = false;
  for (float v : y.data()) outside |= (v < 0.0f || v > 1.0f);
  CHECK(outside);
}

TEST_CASE("non-finite input is rejected") {
  auto model = MlpVae<float>::init(small_config(), true);
  std::vector<float> v(12, 0.5f);
  v[3] = std::numeric_limits<float>::quiet_NaN();
  Tensor<float> x(Shape{1, 12}, std::move(v));
  CHECK_THROWS_AS(model.encode(x, nullptr), std::domain_error);
  std::vector<float> zv(4, 0.0f);
  zv[0] = std::numeric_limits<float>::infinity();
  Tensor<float> z(Shape{1, 4}, std::move(zv));
  CHECK_THROWS_AS(model.decode(z), std::domain_error);
}

TEST_CASE("same seed reproduces identical weights, biases start at zero") {
  auto m1 = MlpVae<float>::init(small_config(), true);
  auto m2 = MlpVae<float>::init(small_config(), true);
  auto p1 = m1.parameters();
  auto p2 = m2.parameters();
  REQUIRE(p1.size() == p2.size());
  const auto names = m1.parameter_names();
  for (size_t k = 0; k < p1.size(); ++k) {
    CHECK(std::vector<float>(p1[k].data().begin(), p1[k].data().end()) ==
          std::vector<float>(p2[k].data().begin(), p2[k].data().end()));
    if (names[k].ends_with(".b"))
      for (float v : p1[k].data()) CHECK(v == 0.0f);
  }
}

TEST_CASE("glorot initialization variance") {
  ModelConfig cfg;
  cfg.input_dim = 200;
  cfg.hidden_dims = {100};
  cfg.latent_dim = 8;
  cfg.seed = 13;
  auto model = MlpVae<float>::init(cfg, true);
  auto params = model.parameters();
  // first weight matrix: 200x100 = 20000 entries
  const auto w = params[0].data();
  double mean = 0;
  for (float v : w) mean += v;
  mean /= static_cast<double>(w.size());
  double var = 0;
  for (float v : w) var += (v - mean) * (v - mean);
  var /= static_cast<double>(w.size());
  const double expected = 2.0 / (200 + 100);
  CHECK(var == Catch::Approx(expected).epsilon(0.20));
}

TEST_CASE("logvar is clamped") {
  auto model = MlpVae<float>::init(small_config(), true);
  std::vector<float> v(12, 1e6f);
  Tensor<float> x(Shape{1, 12}, std::move(v));
  auto lat = model.encode(x, nullptr);
  for (float lv : lat.logvar.data()) {
    CHECK(lv <= 10.0f);
    CHECK(lv >= -10.0f);
  }
}

TEST_CASE("decode(encode(x)) is differentiable end to end") {
  ModelConfig cfg;
  cfg.input_dim = 6;
  cfg.hidden_dims = {5};
  cfg.latent_dim = 3;
  cfg.seed = 21;
  auto model = MlpVae<double>::init(cfg, true);
  nvc::Rng rng(22);
  std::vector<double> xv(12);
  for (auto& v : xv) v = rng.next_double();
  Tensor<double> x(Shape{2, 6}, std::move(xv), false);
  auto params = model.parameters();

  // eval-mode graph (z = mu) keeps the check deterministic
  auto build = [&] {
    auto lat = model.encode(x, nullptr);
    return nvc::recon_bce(model.decode(lat.z), x);
  };
  auto r = gradcheck::check(params, build);
  CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("full forward/backward leaves finite gradients everywhere") {
  auto model = MlpVae<float>::init(small_config(), true);
  auto anchors = nvc::init_anchors<float>(3, 4, 55);
  auto x = random_batch(6, 12, 14);
  nvc::Rng noise(15);

  nvc::Tape<float> tape;
  auto scope = tape.activate();
  auto lat = model.encode(x, &noise);
  auto pred = model.decode(lat.z);
  auto assignment = nvc::assign_anchors(lat.z, anchors);
  auto loss = nvc::total_loss(
      nvc::recon_bce(pred, x), nvc::kl_diag_gaussian(lat.mu, lat.logvar),
      nvc::nebula_loss(lat.z, anchors, assignment, nvc::NebulaMode::kMass),
      nvc::metric_loss(lat.z, assignment.labels).total(),
      nvc::LossWeights<float>{});
  tape.backward(loss);

  auto params = model.parameters();
  params.push_back(anchors.anchors);
  for (auto& p : params) {
    REQUIRE(p.has_grad());
    for (float g : p.grad()) REQUIRE(std::isfinite(g));
  }
}
