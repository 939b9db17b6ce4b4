#include <doctest.h>

#include <cmath>

#include "euat/baselines.hpp"
#include "euat/robustness.hpp"
#include "support.hpp"

using namespace euat;

namespace {

std::vector<std::size_t> labels_for(std::size_t rows, std::size_t classes) {
  std::vector<std::size_t> y(rows);
  for (std::size_t r = 0; r < rows; ++r) y[r] = (r * 5 + 1) % classes;
  return y;
}

// Every coordinate moved by epsilon, or sits on a clip bound, or had a zero gradient.
void check_sign_step_structure(const Tensor& x, const Tensor& adv, const AttackConfig& cfg) {
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double d = std::abs(adv[k] - x[k]);
    REQUIRE(d <= cfg.epsilon);
    const bool full = std::abs(d - cfg.epsilon) < 1e-15;
    const bool clipped = adv[k] == cfg.clip_min || adv[k] == cfg.clip_max;
    CHECK((full || clipped || d == 0.0));
  }
}

}  // namespace

TEST_CASE("FGSM with epsilon 0 is the identity") {
  const auto m = testing::random_model({4, 8, 3}, 0.3, 1);
  const Tensor x = testing::random_matrix(10, 4, 2);
  AttackConfig cfg;
  cfg.epsilon = 0.0;
  CHECK(fgsm(m, x, labels_for(10, 3), cfg) == x);
  CHECK_FALSE(static_cast<bool>(fgsm_perturber(cfg)));
}

TEST_CASE("FGSM on a linear softmax follows the closed-form gradient sign") {
  // z = W x + b, so dCE/dx = W^T (p - e_y).
  DenseLayer layer{Tensor({3, 4}, {0.5, -1.0, 0.2, 0.0, -0.3, 0.8, 0.1, 0.7, 1.2, -0.4, -0.9, 0.3}),
                   Tensor({3}, {0.1, -0.2, 0.05}), Activation::identity};
  const MlpModel m({layer}, 0.0);
  const Tensor x = testing::random_matrix(8, 4, 3, 0.2, 0.8);
  const auto y = labels_for(8, 3);
  AttackConfig cfg;
  cfg.epsilon = 0.05;
  const Tensor adv = fgsm(m, x, y, cfg);
  const Tensor p = softmax(predict_logits(m, x));
  for (std::size_t r = 0; r < 8; ++r) {
    for (std::size_t i = 0; i < 4; ++i) {
      double g = 0.0;
      for (std::size_t c = 0; c < 3; ++c) g += layer.weights(c, i) * (p(r, c) - (c == y[r] ? 1.0 : 0.0));
      const double moved = adv(r, i) - x(r, i);
      CHECK(moved == doctest::Approx(g > 0 ? 0.05 : -0.05).epsilon(1e-12));
    }
  }
}

TEST_CASE("FGSM respects the L-infinity budget and the clip range exactly") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto m = testing::random_model({5, 12, 4}, 0.3, seed);
    const Tensor x = testing::random_matrix(40, 5, seed + 9);
    for (double eps : {1.0 / 255.0, 4.0 / 255.0, 0.1, 0.3}) {
      AttackConfig cfg;
      cfg.epsilon = eps;
      for (auto loss : {AttackLoss::ce, AttackLoss::euat}) {
        cfg.loss = loss;
        const Tensor adv = fgsm(m, x, labels_for(40, 4), cfg);
        check_sign_step_structure(x, adv, cfg);
        for (double v : adv.data()) {
          CHECK(v >= 0.0);
          CHECK(v <= 1.0);
        }
        CHECK(fgsm(m, x, labels_for(40, 4), cfg) == adv);
      }
    }
  }
}

TEST_CASE("sign step never overshoots epsilon in floating point") {
  // Values where x + eps rounds away from x by more than eps.
  AttackConfig cfg;
  cfg.epsilon = 0.1;
  cfg.clip_min = -10.0;
  cfg.clip_max = 10.0;
  CounterRng rng(4);
  Tensor x = Tensor::matrix(1000, 1);
  Tensor g = Tensor::matrix(1000, 1);
  for (std::size_t k = 0; k < 1000; ++k) {
    x[k] = rng.next_uniform() * 8.0 - 4.0;
    g[k] = rng.next_uniform() - 0.5;
  }
  const Tensor adv = sign_step(x, g, cfg);
  for (std::size_t k = 0; k < 1000; ++k) CHECK(std::abs(adv[k] - x[k]) <= cfg.epsilon);
}

TEST_CASE("attack configuration validation") {
  AttackConfig cfg;
  cfg.epsilon = -0.1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.epsilon = 0.1;
  cfg.clip_min = 1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("adversarial training with epsilon 0 is plain training") {
  GeneratorSpec spec;
  spec.n = 600;
  spec.noise = 0.62;
  spec.seed = 3;
  const auto data = split_dataset(generate_dataset(spec), 0.1, 0.2, 4);
  TrainingSchedule schedule;
  schedule.pretrain_epochs = 2;
  schedule.euat_epochs = 2;
  schedule.eval_mc_samples = 4;
  const auto init = MlpModel::initialize(std::vector<std::size_t>{2, 16, 3}, 0.3, 5);
  AttackConfig cfg;
  cfg.epsilon = 0.0;
  const auto plain = train_ce(init, data.train, data.validation, schedule, 6);
  const auto adv = train_ce(init, data.train, data.validation, schedule, 6, fgsm_perturber(cfg));
  CHECK(plain.model.same_parameters(adv.model));

  // A positive budget changes the trajectory.
  cfg.epsilon = 0.05;
  const auto attacked = train_ce(init, data.train, data.validation, schedule, 6, fgsm_perturber(cfg));
  CHECK_FALSE(plain.model.same_parameters(attacked.model));
}

TEST_CASE("Gaussian corruption") {
  Dataset d;
  d.inputs = Tensor::matrix(1000, 100, 0.5);
  d.labels.assign(1000, 0);
  d.class_count = 2;

  SUBCASE("sigma 0 is the identity") {
    CorruptionConfig cfg;
    cfg.sigma = 0.0;
    CHECK(gaussian_corrupt(d, cfg).inputs == d.inputs);
  }
  SUBCASE("noise has the requested spread") {
    const Tensor n = gaussian_noise(1000, 100, 0.1, 42);
    double s = 0.0, s2 = 0.0;
    for (double v : n.data()) {
      s += v;
      s2 += v * v;
    }
    const double mean = s / 1e5;
    const double sd = std::sqrt(s2 / 1e5 - mean * mean);
    CHECK(std::abs(sd - 0.1) < 0.002);
  }
  SUBCASE("seeded, clipped and label-preserving") {
    CorruptionConfig cfg;
    cfg.sigma = 0.8;
    cfg.seed = 9;
    const Dataset a = gaussian_corrupt(d, cfg);
    CHECK(a.inputs == gaussian_corrupt(d, cfg).inputs);
    CHECK(a.labels == d.labels);
    for (double v : a.inputs.data()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    cfg.seed = 10;
    CHECK(a.inputs != gaussian_corrupt(d, cfg).inputs);
  }
}
