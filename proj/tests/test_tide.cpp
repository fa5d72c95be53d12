#include <doctest.h>

#include <cmath>
#include <random>

#include "dedmpc/errors.hpp"
#include "dedmpc/tide.hpp"
#include "support.hpp"
#include "tide_oracles.hpp"

using namespace dedmpc;

namespace {

SeriesSegment random_segment(const TideConfig& c, std::mt19937_64& rng) {
  std::normal_distribution<double> N(0.0, 1.0);
  SeriesSegment s;
  s.past_targets.resize(c.w, 2);
  s.future_targets.resize(c.p, 2);
  s.past_covariates.resize(c.w, 4);
  s.future_covariates.resize(c.p, 4);
  auto fill = [&](Eigen::MatrixXd& t, Eigen::MatrixXd& cv) {
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
      t(r, 0) = 900.0 + 100.0 * N(rng);
      t(r, 1) = 0.1 + 0.05 * N(rng);
      cv(r, 0) = 2.0 + N(rng);
      cv(r, 1) = 2.0 + N(rng);
      cv(r, 2) = 1.0;
      cv(r, 3) = 627.0 + 50.0 * N(rng);
    }
  };
  fill(s.past_targets, s.past_covariates);
  fill(s.future_targets, s.future_covariates);
  return s;
}

ChannelStats stats(std::vector<double> mean, std::vector<double> sd) { return {std::move(mean), std::move(sd)}; }

TideModel normalized_tiny(std::uint64_t seed) {
  TideModel m(testing::tiny_tide_config(), seed);
  m.set_normalization(stats({900.0, 0.1}, {100.0, 0.05}), stats({2.0, 2.0, 1.0, 627.0}, {1.0, 1.0, 0.5, 50.0}));
  return m;
}

}  // namespace

TEST_SUITE("tide_surrogate") {

TEST_CASE("pinball loss") {
  const std::vector<double> q5{0.5};
  Eigen::MatrixXd y(1, 1);
  Eigen::MatrixXd yh(1, 1);
  y << 1.0;
  yh << 0.0;
  CHECK(quantile_loss(y, yh, q5) == doctest::Approx(0.5).epsilon(1e-15));
  y << 0.0;
  yh << 1.0;
  CHECK(quantile_loss(y, yh, {0.9}) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(quantile_loss(y, y, q5) == 0.0);

  // Three quantiles of one target column, averaged.
  Eigen::MatrixXd t(1, 1);
  t << 2.0;
  Eigen::MatrixXd p(1, 3);
  p << 1.0, 2.0, 4.0;
  CHECK(quantile_loss(t, p, {0.1, 0.5, 0.9}) == doctest::Approx((0.1 * 1.0 + 0.0 + 0.1 * 2.0) / 3.0));
}

TEST_CASE("finite-difference gradients on a tiny model") {
  TideModel m(testing::tiny_tide_config(), 17);
  const testing::GradientCheck r = testing::check_tide_gradients(m, 3, 5);
  CHECK(r.weights_checked == m.num_weights());
  CHECK(r.worst_weight < 1e-4);
  CHECK(r.worst_past_target < 1e-4);
  CHECK(r.worst_covariate < 1e-4);
}

TEST_CASE("session input gradients match finite differences") {
  TideModel m = normalized_tiny(3);
  std::mt19937_64 rng(2);
  const SeriesSegment s = random_segment(m.config(), rng);
  Eigen::MatrixXd seed = Eigen::MatrixXd::Zero(m.config().p, 2);
  seed(0, 0) = 1.0;
  seed(2, 0) = -0.5;
  seed(1, 1) = 30.0;
  TideSession sess(m, s.past_targets, s.past_covariates, s.future_covariates);
  const auto g = sess.backward_median(seed);
  auto f = [&](const Eigen::MatrixXd& pt, const Eigen::MatrixXd& fc) {
    return (m.predict_median(pt, s.past_covariates, fc).array() * seed.array()).sum();
  };
  double worst = 0.0;
  for (int i = 0; i < m.config().p; ++i) {
    const double h = 1e-4;
    Eigen::MatrixXd a = s.future_covariates;
    Eigen::MatrixXd b = s.future_covariates;
    a(i, 3) += h;
    b(i, 3) -= h;
    worst = std::max(worst, testing::relative_error(g.future_covariates(i, 3),
                                                    (f(s.past_targets, a) - f(s.past_targets, b)) / (2 * h)));
  }
  for (int t = 0; t < m.config().w; ++t) {
    const double h = 1e-3;
    Eigen::MatrixXd a = s.past_targets;
    Eigen::MatrixXd b = s.past_targets;
    a(t, 0) += h;
    b(t, 0) -= h;
    worst = std::max(worst, testing::relative_error(g.past_targets(t, 0),
                                                    (f(a, s.future_covariates) - f(b, s.future_covariates)) / (2 * h)));
  }
  CHECK(worst < 1e-4);
  CHECK((sess.median() - m.predict_median(s.past_targets, s.past_covariates, s.future_covariates)).norm() == 0.0);
}

TEST_CASE("zero weights give de-normalized zeros") {
  TideModel m(testing::tiny_tide_config(), 1);
  for (auto& p : m.parameters()) p.setZero();
  std::mt19937_64 rng(4);
  const SeriesSegment s = random_segment(m.config(), rng);
  const Forecast f = m.forward(s.past_targets, s.past_covariates, s.future_covariates);
  CHECK(f.values.cwiseAbs().maxCoeff() == 0.0);

  m.set_normalization(stats({800.0, 0.2}, {10.0, 1.0}), stats({0, 0, 0, 0}, {1, 1, 1, 1}));
  const Forecast g = m.forward(s.past_targets, s.past_covariates, s.future_covariates);
  for (int i = 0; i < m.config().p; ++i) {
    for (int q = 0; q < 3; ++q) {
      CHECK(g.at(i, 0, q) == 800.0);
      CHECK(g.at(i, 1, q) == 0.2);
    }
  }
  TideSession sess(m, s.past_targets, s.past_covariates, s.future_covariates);
  const auto grads = sess.backward_median(Eigen::MatrixXd::Ones(m.config().p, 2));
  CHECK(grads.past_targets.cwiseAbs().maxCoeff() == 0.0);
  CHECK(grads.future_covariates.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("forward is deterministic and one-shot") {
  TideModel m = normalized_tiny(8);
  std::mt19937_64 rng(6);
  const SeriesSegment s = random_segment(m.config(), rng);
  const std::size_t before = m.forward_calls();
  const Forecast a = m.forward(s.past_targets, s.past_covariates, s.future_covariates);
  CHECK(m.forward_calls() == before + 1);
  const Forecast b = m.forward(s.past_targets, s.past_covariates, s.future_covariates);
  CHECK(a.values == b.values);
  CHECK(a.values.rows() == m.config().p);
  CHECK(a.values.cols() == 2 * 3);
  const Eigen::MatrixXd med = m.predict_median(s.past_targets, s.past_covariates, s.future_covariates);
  CHECK(m.forward_calls() == before + 3);
  for (int i = 0; i < m.config().p; ++i) {
    CHECK(med(i, 0) == a.at(i, 0, 1));
    CHECK(med(i, 1) == a.at(i, 1, 1));
  }
}

TEST_CASE("future input at step j moves the forecast at step j") {
  TideModel m = normalized_tiny(21);
  std::mt19937_64 rng(7);
  const SeriesSegment s = random_segment(m.config(), rng);
  const Eigen::MatrixXd base = m.predict_median(s.past_targets, s.past_covariates, s.future_covariates);
  for (int j = 0; j < m.config().p; ++j) {
    Eigen::MatrixXd fc = s.future_covariates;
    fc(j, 3) += 25.0;
    const Eigen::MatrixXd moved = m.predict_median(s.past_targets, s.past_covariates, fc);
    CHECK(moved.row(j) != base.row(j));
  }
}

TEST_CASE("bad inputs are rejected") {
  TideModel m = normalized_tiny(1);
  std::mt19937_64 rng(1);
  SeriesSegment s = random_segment(m.config(), rng);
  CHECK_THROWS_AS(m.forward(s.past_targets.topRows(3), s.past_covariates, s.future_covariates), ContractError);
  s.future_covariates(1, 3) = std::nan("");
  CHECK_THROWS_AS(m.forward(s.past_targets, s.past_covariates, s.future_covariates), ContractError);
}

TEST_CASE("normalization round trip") {
  TideModel m = normalized_tiny(1);
  std::mt19937_64 rng(12);
  const SeriesSegment s = random_segment(m.config(), rng);
  const TideBatch b = m.make_batch({&s});
  const int p = m.config().p;
  Eigen::MatrixXd row(1, p * 2 * 3);
  for (int i = 0; i < p; ++i) {
    for (int c = 0; c < 2; ++c) {
      for (int q = 0; q < 3; ++q) row(0, (i * 2 + c) * 3 + q) = b.future_targets(0, i * 2 + c);
    }
  }
  const Forecast f = m.denormalize(row);
  double worst = 0.0;
  for (int i = 0; i < p; ++i) {
    for (int c = 0; c < 2; ++c) {
      for (int q = 0; q < 3; ++q) worst = std::max(worst, std::abs(f.at(i, c, q) - s.future_targets(i, c)));
    }
  }
  CHECK(worst <= 1e-12 * 1000.0);
}

TEST_CASE("learning-rate schedule") {
  TrainSchedule s;
  CHECK(s.rate_at(0) == 1e-3);
  CHECK(s.rate_at(1) == 1e-3);
  CHECK(s.rate_at(2) == doctest::Approx(9.5e-4).epsilon(1e-14));
  CHECK(s.rate_at(4) == doctest::Approx(9.025e-4).epsilon(1e-14));
}

TEST_CASE("training") {
  const TideConfig cfg = testing::tiny_tide_config();
  std::mt19937_64 rng(30);
  Dataset d;
  d.w = cfg.w;
  d.p = cfg.p;
  for (int i = 0; i < 40; ++i) d.train.push_back(random_segment(cfg, rng));
  for (int i = 0; i < 8; ++i) d.validation.push_back(random_segment(cfg, rng));
  d.target_stats = target_statistics(d.train);
  d.covariate_stats = covariate_statistics(d.train);

  SUBCASE("zero learning rate leaves the weights unchanged") {
    TideModel m(cfg, 4);
    const auto before = m.parameters();
    TrainSchedule s;
    s.epochs = 3;
    s.learning_rate = 0.0;
    train(m, d, s);
    for (std::size_t k = 0; k < before.size(); ++k) CHECK(m.parameters()[k] == before[k]);
  }

  SUBCASE("a single sample can be overfit") {
    Dataset one = d;
    one.train.resize(1);
    one.validation.clear();
    TideModel m(cfg, 4);
    TrainSchedule s;
    s.epochs = 1500;
    s.learning_rate = 3e-3;
    s.decay = 0.9;
    s.decay_every = 50;
    s.l2 = 0.0;
    const TrainResult r = train(m, one, s);
    REQUIRE(r.history.size() == 1500);
    const double initial = r.history.front().train_loss;
    CHECK(evaluate_loss(m, one.train) < 1e-3 * initial);
  }

  SUBCASE("best checkpoint, history and determinism") {
    TrainSchedule s;
    s.epochs = 6;
    s.batch_size = 16;
    s.seed = 9;
    TideModel a(cfg, 4);
    TideModel b(cfg, 4);
    const TrainResult ra = train(a, d, s);
    const TrainResult rb = train(b, d, s);
    CHECK(ra.history.size() == 6);
    CHECK(ra.best_validation_loss <= ra.history.front().validation_loss);
    CHECK(ra.best_validation_loss == doctest::Approx(evaluate_loss(a, d.validation)).epsilon(1e-12));
    CHECK(ra.history[4].learning_rate == doctest::Approx(9.025e-4).epsilon(1e-14));
    for (std::size_t k = 0; k < a.parameters().size(); ++k) CHECK(a.parameters()[k] == b.parameters()[k]);
  }
}

TEST_CASE("save and load reproduce the forecast") {
  TideModel m = normalized_tiny(77);
  std::mt19937_64 rng(13);
  const SeriesSegment s = random_segment(m.config(), rng);
  const auto dir = testing::scratch_dir("tide_io");
  std::filesystem::create_directories(dir);
  m.save(dir / "m.bin", dir / "m.json", R"({"note": 1})");
  const TideModel back = TideModel::load(dir / "m.bin", dir / "m.json");
  CHECK(back.forward(s.past_targets, s.past_covariates, s.future_covariates).values ==
        m.forward(s.past_targets, s.past_covariates, s.future_covariates).values);
  CHECK(back.config().w == m.config().w);
  CHECK(back.seed() == 77);
  std::filesystem::remove_all(dir);
}

TEST_CASE("temperature-only model") {
  TideConfig cfg = testing::tiny_tide_config();
  cfg.target_channels = 1;
  TideModel m(cfg, 3);
  m.set_normalization(stats({900.0}, {100.0}), stats({2.0, 2.0, 1.0, 627.0}, {1.0, 1.0, 0.5, 50.0}));
  std::mt19937_64 rng(5);
  const SeriesSegment s = random_segment(cfg, rng);
  const Eigen::MatrixXd med = m.predict_median(s.past_targets, s.past_covariates, s.future_covariates);
  CHECK(med.cols() == 1);
  const testing::GradientCheck r = testing::check_tide_gradients(m, 2, 8);
  CHECK(r.worst_weight < 1e-4);
  const ForecastAccuracy acc = evaluate_accuracy(m, {s});
  CHECK(std::isnan(acc.depth_mape));
}

}
