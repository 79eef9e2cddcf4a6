#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "ivps/errors.hpp"
#include "ivps/nn.hpp"

using namespace ivps;
using namespace ivps::nn;

namespace {

MlpSpec make_spec(int in, std::vector<int> hidden, int out, Activation act = Activation::kTanh) {
  MlpSpec s;
  s.input_dim = in;
  s.output_dim = out;
  s.hidden = std::move(hidden);
  s.activations.assign(s.hidden.size(), act);
  return s;
}

Mat random_mat(std::mt19937_64& rng, int r, int c) {
  std::normal_distribution<double> n(0.0, 1.0);
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = n(rng);
  return m;
}

double loss_at(const MlpSpec& spec, MlpParams p, const Vec& theta, const Mat& Z, const Mat& Y, const Vec& mu,
               const Vec& sigma) {
  p.set_flat(theta);
  return loss_and_grad(spec, p, Z, Y, mu, sigma).loss;
}

Dataset line_data() {
  Dataset d;
  d.delta = 0.1;
  for (int k = 0; k <= 40; ++k) {
    const double x = -2.0 + 0.1 * k;
    d.append({{0.0, Vec::Constant(1, x), Vec::Constant(1, 2.0 * x + 1.0)}}, k, k);
  }
  return d;
}

}  // namespace

TEST_CASE("forward of special parameters") {
  const auto spec = make_spec(3, {5, 4}, 2);
  auto p = MlpParams::zeros(spec);
  p.layers.back().b = Vec{{0.3, -0.7}};
  CHECK((forward(spec, p, Vec{{1.0, 2.0, 3.0}}) - Vec{{0.3, -0.7}}).norm() == 0.0);

  const auto lin = make_spec(3, {}, 2);
  std::mt19937_64 rng(1);
  auto q = MlpParams::zeros(lin);
  q.layers[0].W = random_mat(rng, 2, 3);
  q.layers[0].b = random_mat(rng, 2, 1);
  const Vec z{{0.5, -1.0, 2.0}};
  CHECK((forward(lin, q, z) - (q.layers[0].W * z + q.layers[0].b)).norm() < 1e-15);
}

TEST_CASE("hidden unit permutation symmetry") {
  const auto spec = make_spec(3, {6, 5}, 2);
  const auto p = MlpParams::init(spec, 9);
  auto q = p;
  // swap units 1 and 4 of the first hidden layer
  q.layers[0].W.row(1).swap(q.layers[0].W.row(4));
  std::swap(q.layers[0].b[1], q.layers[0].b[4]);
  q.layers[1].W.col(1).swap(q.layers[1].W.col(4));
  const Vec z{{0.2, -0.4, 1.3}};
  CHECK((forward(spec, p, z) - forward(spec, q, z)).norm() < 1e-12);
}

TEST_CASE("loss and gradient at an exact fit") {
  const auto spec = make_spec(2, {8}, 3);
  const auto p = MlpParams::init(spec, 2);
  std::mt19937_64 rng(2);
  const Mat Z = random_mat(rng, 2, 10);
  const Mat Y = forward_batch(spec, p, Z);
  const auto lg = loss_and_grad(spec, p, Z, Y, Vec::Zero(3), Vec::Ones(3));
  CHECK(lg.loss == doctest::Approx(0.0).epsilon(1e-28));
  CHECK(lg.grad.norm() < 1e-14);
}

TEST_CASE("gradient matches central differences") {
  const std::vector<MlpSpec> specs{
      make_spec(3, {}, 2),
      make_spec(3, {7}, 2),
      make_spec(4, {6, 5}, 3),
      make_spec(13, {16, 16}, 4),
      make_spec(2, {9, 7, 5}, 1, Activation::kRelu),
  };
  std::mt19937_64 rng(31);
  for (const auto& spec : specs) {
    const auto p = MlpParams::init(spec, 17);
    const Mat Z = random_mat(rng, spec.input_dim, 12);
    const Mat Y = random_mat(rng, spec.output_dim, 12);
    const Vec mu = random_mat(rng, spec.output_dim, 1);
    const Vec sigma = random_mat(rng, spec.output_dim, 1).cwiseAbs().array() + 0.5;
    const auto lg = loss_and_grad(spec, p, Z, Y, mu, sigma);
    const Vec theta = p.flat();
    std::uniform_int_distribution<long> pick(0, theta.size() - 1);
    double worst = 0.0;
    for (int k = 0; k < 200; ++k) {
      const long i = pick(rng);
      const double h = 1e-6 * (1.0 + std::abs(theta[i]));
      Vec tp = theta, tm = theta;
      tp[i] += h;
      tm[i] -= h;
      const double fd = (loss_at(spec, p, tp, Z, Y, mu, sigma) - loss_at(spec, p, tm, Z, Y, mu, sigma)) / (2 * h);
      const double denom = std::max({std::abs(fd), std::abs(lg.grad[i]), 1e-6});
      worst = std::max(worst, std::abs(fd - lg.grad[i]) / denom);
    }
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("duplicated batch leaves loss and gradient unchanged") {
  const auto spec = make_spec(2, {6}, 2);
  const auto p = MlpParams::init(spec, 3);
  std::mt19937_64 rng(3);
  const Mat Z = random_mat(rng, 2, 7), Y = random_mat(rng, 2, 7);
  Mat Z2(2, 14), Y2(2, 14);
  Z2 << Z, Z;
  Y2 << Y, Y;
  const auto a = loss_and_grad(spec, p, Z, Y, Vec::Zero(2), Vec::Ones(2));
  const auto b = loss_and_grad(spec, p, Z2, Y2, Vec::Zero(2), Vec::Ones(2));
  CHECK(a.loss == doctest::Approx(b.loss).epsilon(1e-14));
  CHECK((a.grad - b.grad).norm() < 1e-14 * (1.0 + a.grad.norm()));
}

TEST_CASE("Adam step algebra") {
  TrainConfig cfg;
  Vec theta{{1.0, -2.0}};
  auto st = AdamState::zeros(2);
  adam_step(theta, st, Vec::Zero(2), cfg);
  CHECK((theta - Vec{{1.0, -2.0}}).norm() == 0.0);

  auto st2 = AdamState::zeros(1);
  Vec t1 = Vec::Constant(1, 0.5);
  const double g = 0.3;
  adam_step(t1, st2, Vec::Constant(1, g), cfg);
  // m_hat = g, v_hat = g^2 after bias correction
  CHECK(t1[0] == doctest::Approx(0.5 - cfg.learning_rate * g / (std::abs(g) + cfg.adam_eps)).epsilon(1e-14));
}

TEST_CASE("training") {
  const auto spec = make_spec(2, {32, 32}, 1);
  TrainConfig cfg;
  cfg.epochs = 2000;
  cfg.batch_size = 64;
  cfg.seed = 4;
  const auto data = line_data();
  const auto res = train(data, spec, cfg);
  double mse = 0.0;
  for (const auto& pt : data.points) mse += std::pow(res.controller->evaluate(pt.t, pt.x)[0] - pt.u[0], 2);
  CHECK(mse / data.size() < 1e-4);
  for (double l : res.loss_curve) CHECK(std::isfinite(l));

  cfg.epochs = 0;
  const auto init = train(data, spec, cfg);
  CHECK((init.controller->params().flat() - MlpParams::init(spec, cfg.seed).flat()).norm() == 0.0);

  cfg.epochs = 20;
  const auto a = train(data, spec, cfg), b = train(data, spec, cfg);
  CHECK((a.controller->params().flat() - b.controller->params().flat()).norm() == 0.0);
}

TEST_CASE("holdout split") {
  const auto spec = make_spec(2, {8}, 1);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.holdout = 0.25;
  const auto data = line_data();
  const auto res = train(data, spec, cfg);
  CHECK(res.validation_curve.size() == 5u);
  for (double l : res.validation_curve) CHECK(std::isfinite(l));
  cfg.holdout = 0.0;
  CHECK(train(data, spec, cfg).validation_curve.empty());
  cfg.holdout = 1.0;
  CHECK_THROWS_AS(cfg.validate(), DomainError);
}

TEST_CASE("serialization round trip is exact") {
  const auto spec = make_spec(3, {5, 4}, 2);
  Dataset d;
  d.delta = 1.0;
  std::mt19937_64 rng(6);
  for (int k = 0; k < 10; ++k) d.append({{double(k), random_mat(rng, 2, 1), random_mat(rng, 2, 1)}}, k, k);
  const MlpController c(spec, MlpParams::init(spec, 5), Normalization::fit(d));
  std::stringstream ss;
  c.save(ss);
  const auto back = MlpController::load(ss);
  for (int k = 0; k < 10; ++k) {
    const Vec x = random_mat(rng, 2, 1);
    CHECK((c.evaluate(0.3 * k, x) - back.evaluate(0.3 * k, x)).norm() == 0.0);
  }
}

TEST_CASE("spec validation") {
  auto s = make_spec(3, {4}, 2);
  s.activations.push_back(Activation::kRelu);
  CHECK_THROWS_AS(s.validate(), DomainError);
  CHECK_THROWS_AS(parse_activation("sigmoid"), DomainError);
  TrainConfig cfg;
  cfg.learning_rate = -1.0;
  CHECK_THROWS_AS(cfg.validate(), DomainError);
}
