#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "lupindp/ops.hpp"
#include "lupindp/training.hpp"
#include "support.hpp"

using namespace lupindp;
using namespace lupindp::testing;

namespace {

ModelParams fresh(std::uint64_t seed, Index obs_dim) {
  ModelConfig c;
  c.observation_dim = obs_dim;
  Rng rng(seed);
  return init_model(c, rng);
}

bool same_params(const ModelParams& a, const ModelParams& b) {
  const auto x = a.blocks(), y = b.blocks();
  for (std::size_t i = 0; i < x.size(); ++i)
    if (*x[i] != *y[i]) return false;
  return true;
}

TrainConfig small_config(int epochs, std::uint64_t seed) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 8;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("sample_split") {
  SUBCASE("full split") {
    Rng rng(1);
    const auto s = sample_split(20, rng, SplitConfig{20, 20, 20, 20});
    CHECK(s.target.size() == 20);
    CHECK(s.context == s.target);
    for (Index i = 0; i < 20; ++i) CHECK(s.target[static_cast<std::size_t>(i)] == i);
  }
  SUBCASE("context inside target, sizes in range, indices unique") {
    Rng rng(2);
    for (int i = 0; i < 2000; ++i) {
      const auto s = sample_split(100, rng, SplitConfig{});
      CHECK(s.target.size() >= 10);
      CHECK(s.target.size() <= 50);
      CHECK(!s.context.empty());
      CHECK(s.context.size() <= 10);
      CHECK(std::adjacent_find(s.target.begin(), s.target.end(), std::greater_equal<>()) == s.target.end());
      CHECK(std::includes(s.target.begin(), s.target.end(), s.context.begin(), s.context.end()));
    }
  }
  SUBCASE("target indices are uniform") {
    Rng rng(3);
    const int draws = 10000;
    std::vector<int> hits(100, 0);
    for (int i = 0; i < draws; ++i)
      for (Index k : sample_split(100, rng, SplitConfig{}).target) ++hits[static_cast<std::size_t>(k)];
    const double p = 30.0 / 100.0;  // E|T| / n
    const double se = std::sqrt(p * (1 - p) / draws);
    for (int h : hits) CHECK(std::abs(h / static_cast<double>(draws) - p) < 3 * se);
  }
  SUBCASE("too few points") {
    Rng rng(4);
    CHECK_THROWS_AS(sample_split(49, rng, SplitConfig{}), ConfigError);
    CHECK_THROWS_AS(sample_split(100, rng, SplitConfig{0, 10, 10, 50}), ConfigError);
  }
}

TEST_CASE("elbo_loss") {
  const Dataset data = generate_dataset(TaskSpec::defaults(TaskKind::OscillatorStiffness), 4, 5);
  SUBCASE("context equal to target in nopi mode gives zero KL") {
    const ModelParams p = fresh(1, 2);
    Rng split_rng(1);
    std::vector<BatchElement> batch;
    for (const auto& s : data.series) {
      auto split = sample_split(100, split_rng, SplitConfig{});
      split.context = split.target;
      batch.push_back({&s, split});
    }
    Tape tape;
    BoundModel m(tape, p, true);
    Rng rng(2);
    const LossTerms t = elbo_loss(m, batch, TrainingMode::Nopi, rng);
    CHECK(t.kl.item() == 0.0);
    CHECK(t.loss.item() == doctest::Approx(t.nll.item() / 4.0).epsilon(1e-15));
  }
  SUBCASE("exact decoder mean with unit noise gives half log 2 pi per scalar") {
    // Constant series, and a decoder whose last layer emits the constant
    // with raw noise chosen so that σ_y = 1.
    std::vector<TrajectoryRecord> flat(2);
    for (auto& r : flat) {
      r.times = data.series[0].times;
      r.values = Matrix::Constant(100, 2, 0.8);
      r.pi = 1.0;
    }
    ModelParams p = fresh(2, 2);
    auto& last = p.networks.decoder.layers[2];
    last.weight.setZero();
    last.bias << 0.8, 0.8, std::log(std::expm1(0.99)), std::log(std::expm1(0.99));
    std::vector<BatchElement> batch{{&flat[0], {{0, 5}, {0, 5, 9, 40}}}, {&flat[1], {{3}, {3, 7}}}};
    Tape tape;
    BoundModel m(tape, p, true);
    Rng rng(3);
    const LossTerms t = elbo_loss(m, batch, TrainingMode::Lupi, rng);
    const double per_scalar = 0.5 * std::log(2 * std::numbers::pi);
    CHECK(t.nll.item() == doctest::Approx(per_scalar * 2 * (4 + 2)).epsilon(1e-12));
  }
  SUBCASE("KL is finite and non-negative") {
    const ModelParams p = fresh(3, 2);
    Rng rng(4);
    for (int i = 0; i < 20; ++i) {
      std::vector<BatchElement> batch;
      for (const auto& s : data.series) batch.push_back({&s, sample_split(100, rng, SplitConfig{})});
      for (TrainingMode mode : {TrainingMode::Lupi, TrainingMode::Nopi}) {
        Tape tape;
        BoundModel m(tape, p, false);
        const double kl = elbo_loss(m, batch, mode, rng).kl.item();
        CHECK(std::isfinite(kl));
        CHECK(kl >= 0.0);
      }
    }
  }
  SUBCASE("contract errors") {
    const ModelParams p = fresh(4, 2);
    Tape tape;
    BoundModel m(tape, p, true);
    Rng rng(5);
    CHECK_THROWS_AS(elbo_loss(m, std::vector<BatchElement>{}, TrainingMode::Lupi, rng), ContractError);
    const std::vector<BatchElement> no_context{{&data.series[0], {{}, {1, 2, 3}}}};
    CHECK_THROWS_AS(elbo_loss(m, no_context, TrainingMode::Lupi, rng), ContractError);
  }
}

TEST_CASE("privileged blocks get no gradient in nopi mode") {
  const Dataset data = generate_dataset(TaskSpec::defaults(TaskKind::LotkaVolterra), 6, 6);
  const ModelParams p = fresh(5, 2);
  const auto& names = parameter_block_names();
  Rng rng(7);
  for (int step = 0; step < 5; ++step) {
    std::vector<BatchElement> batch;
    for (const auto& s : data.series) batch.push_back({&s, sample_split(100, rng, SplitConfig{})});
    const auto nopi = loss_and_gradients(p, batch, TrainingMode::Nopi, rng);
    const auto lupi = loss_and_gradients(p, batch, TrainingMode::Lupi, rng);
    bool lupi_touches = false;
    for (std::size_t b = 0; b < names.size(); ++b) {
      if (!is_privileged_block(names[b])) continue;
      CHECK(nopi.gradients[b].cwiseAbs().maxCoeff() == 0.0);
      lupi_touches = lupi_touches || lupi.gradients[b].cwiseAbs().maxCoeff() > 0.0;
    }
    CHECK(lupi_touches);
  }
}

TEST_CASE("train") {
  const Dataset data = generate_dataset(TaskSpec::defaults(TaskKind::OscillatorDamping), 20, 8);
  const ModelParams init = fresh(6, 2);
  SUBCASE("zero epochs return the initialization") {
    const auto r = train(init, data.series, small_config(0, 1), TrainingMode::Lupi);
    CHECK(same_params(r.params, init));
    CHECK(r.trace.empty());
  }
  SUBCASE("zero learning rate leaves parameters unchanged") {
    TrainConfig c = small_config(2, 1);
    c.adam.learning_rate = 0.0;
    const auto r = train(init, data.series, c, TrainingMode::Lupi);
    CHECK(same_params(r.params, init));
    CHECK(r.trace.size() == 2);
  }
  SUBCASE("nopi keeps the privileged path at its initialization") {
    const auto nopi = train(init, data.series, small_config(2, 2), TrainingMode::Nopi);
    const auto lupi = train(init, data.series, small_config(2, 2), TrainingMode::Lupi);
    const auto& names = parameter_block_names();
    const auto a = init.blocks(), b = nopi.params.blocks(), c = lupi.params.blocks();
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (is_privileged_block(names[i])) {
        CHECK(*a[i] == *b[i]);
        CHECK(*a[i] != *c[i]);
      } else {
        CHECK(*a[i] != *b[i]);
      }
    }
  }
  SUBCASE("bitwise reproducible with finite traces") {
    std::vector<int> seen;
    const auto r1 = train(init, data.series, small_config(3, 4), TrainingMode::Lupi,
                          [&](const EpochStats& s) { seen.push_back(s.epoch); });
    const auto r2 = train(init, data.series, small_config(3, 4), TrainingMode::Lupi);
    CHECK(same_params(r1.params, r2.params));
    CHECK(seen == std::vector<int>{1, 2, 3});
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(r1.trace[i].train_loss == r2.trace[i].train_loss);
      CHECK(r1.trace[i].val_loss == r2.trace[i].val_loss);
      CHECK(std::isfinite(r1.trace[i].train_loss));
      CHECK(std::isfinite(r1.trace[i].val_loss));
    }
    const auto r3 = train(init, data.series, small_config(3, 5), TrainingMode::Lupi);
    CHECK(!same_params(r1.params, r3.params));
  }
  SUBCASE("config errors") {
    TrainConfig c = small_config(1, 1);
    c.batch_size = 100;
    CHECK_THROWS_AS(train(init, data.series, c, TrainingMode::Lupi), ConfigError);
    c = small_config(-1, 1);
    CHECK_THROWS_AS(train(init, data.series, c, TrainingMode::Lupi), ConfigError);
    c = small_config(1, 1);
    c.validation_fraction = 1.0;
    CHECK_THROWS_AS(train(init, data.series, c, TrainingMode::Lupi), ConfigError);
  }
  SUBCASE("non-finite loss aborts naming epoch and batch") {
    Dataset bad = data;
    bad.series[3].values(10, 0) = 1e200;
    bad.series[7].values(20, 1) = -1e200;
    TrainConfig c = small_config(1, 1);
    c.split = SplitConfig{10, 10, 100, 100};  // every point is a target
    try {
      train(init, bad.series, c, TrainingMode::Lupi);
      FAIL("expected a training error");
    } catch (const TrainingError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("epoch 1") != std::string::npos);
      CHECK(msg.find("batch 0") != std::string::npos);
    }
  }
}

TEST_CASE("loss trace csv") {
  std::ostringstream os;
  const std::vector<EpochStats> trace{{1, 2.5, 3.25}, {2, 2.0, 3.0}};
  write_trace_csv(os, trace);
  CHECK(os.str() == "epoch,train_loss,val_loss\n1,2.5,3.25\n2,2,3\n");
}

TEST_CASE("mode names") {
  CHECK(parse_mode("lupi") == TrainingMode::Lupi);
  CHECK(parse_mode(mode_name(TrainingMode::Nopi)) == TrainingMode::Nopi);
  CHECK_THROWS_AS(parse_mode("teacher"), ConfigError);
}

}  // TEST_SUITE

TEST_SUITE("slow") {

TEST_CASE("sine toy task: training lowers the loss for at least 95% of seeds") {
  // The loss is measured on the whole training set with one fixed set of
  // splits and one fixed noise stream, before and after training.
  TaskSpec task = TaskSpec::defaults(TaskKind::Sine);
  int improved = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Dataset data = generate_dataset(task, 50, 1000 + seed);
    TrainConfig c;
    c.epochs = 30;
    c.seed = seed;
    const ModelParams init = fresh(seed, 1);
    Rng split_rng(seed + 77);
    std::vector<BatchElement> fixed;
    for (const auto& s : data.series) fixed.push_back({&s, sample_split(100, split_rng, c.split)});
    auto measured = [&](const ModelParams& p) {
      Rng rng(seed + 78);
      return mean_loss(p, fixed, c.batch_size, TrainingMode::Lupi, rng);
    };
    const double before = measured(init);
    const auto r = train(init, data.series, c, TrainingMode::Lupi);
    const double after = measured(r.params);
    MESSAGE("seed " << seed << ": " << before << " -> " << after << " (epoch trace " << r.trace.front().train_loss
                    << " -> " << r.trace.back().train_loss << ")");
    improved += after < before ? 1 : 0;
  }
  CHECK(improved >= 19);
}

}  // TEST_SUITE
