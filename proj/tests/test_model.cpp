#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lupindp/model.hpp"
#include "lupindp/ops.hpp"
#include "lupindp/training.hpp"
#include "support.hpp"

using namespace lupindp;
using namespace lupindp::testing;

namespace {

void zero(Mlp<Matrix>& net) {
  for (auto& l : net.layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
}

ModelParams random_model(std::uint64_t seed, ModelConfig c = {}) {
  Rng rng(seed);
  return init_model(c, rng);
}

ObservationSet random_observations(Index n, Index dim, std::mt19937_64& rng) {
  ObservationSet obs;
  std::uniform_real_distribution<double> t(0.0, 10.0);
  for (Index i = 0; i < n; ++i) obs.times.push_back(t(rng));
  obs.values = random_matrix(n, dim, rng);
  return obs;
}

ObservationSet permuted(const ObservationSet& obs, std::uint64_t seed) {
  std::vector<Index> order(obs.times.size());
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), std::mt19937_64(seed));
  ObservationSet out;
  out.values.resize(obs.values.rows(), obs.values.cols());
  for (std::size_t i = 0; i < order.size(); ++i) {
    out.times.push_back(obs.times[static_cast<std::size_t>(order[i])]);
    out.values.row(static_cast<Index>(i)) = obs.values.row(order[i]);
  }
  return out;
}

// Tiny two-series batch on a 12-point grid.
std::vector<TrajectoryRecord> toy_series() {
  std::vector<TrajectoryRecord> out(2);
  for (int s = 0; s < 2; ++s) {
    auto& r = out[static_cast<std::size_t>(s)];
    r.id = s;
    r.pi = 0.6 + 0.5 * s;
    r.values.resize(12, 2);
    for (int k = 0; k < 12; ++k) {
      const double t = 0.25 * k;
      r.times.push_back(t);
      r.values(k, 0) = r.pi * std::sin(t + s);
      r.values(k, 1) = std::cos(1.3 * t) - 0.2 * s;
    }
  }
  return out;
}

}  // namespace

TEST_SUITE("ndp-model") {

TEST_CASE("config validation") {
  ModelConfig c;
  CHECK_NOTHROW(c.validate());
  c.hidden = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.latent_dim = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(ModelConfig{}.aggregate_dim() == 2 * ModelConfig{}.representation_dim);
}

TEST_CASE("encode_observations") {
  std::mt19937_64 data(1);
  const ObservationSet obs = random_observations(5, 2, data);
  SUBCASE("zero encoder") {
    ModelParams p = random_model(1);
    zero(p.networks.observation_encoder);
    Tape tape;
    CHECK(BoundModel(tape, p, false).encode_observations(obs).value() == Matrix::Zero(5, 8));
  }
  SUBCASE("duplicated observation gives duplicated rows") {
    ObservationSet dup = obs;
    dup.times.push_back(obs.times[2]);
    dup.values.conservativeResize(6, 2);
    dup.values.row(5) = obs.values.row(2);
    Tape tape;
    const Matrix r = BoundModel(tape, random_model(2), false).encode_observations(dup).value();
    CHECK(r.row(5) == r.row(2));
  }
  SUBCASE("matches direct evaluation of the encoder") {
    const ModelParams p = random_model(3);
    Tape tape;
    const Matrix r = BoundModel(tape, p, false).encode_observations(obs).value();
    const auto& net = p.networks.observation_encoder;
    for (Index i = 0; i < 5; ++i) {
      Eigen::RowVectorXd x(3);
      x << obs.times[static_cast<std::size_t>(i)], obs.values(i, 0), obs.values(i, 1);
      Eigen::RowVectorXd h = (x * net.layers[0].weight + net.layers[0].bias).cwiseMax(0.0);
      h = (h * net.layers[1].weight + net.layers[1].bias).cwiseMax(0.0);
      const Eigen::RowVectorXd y = h * net.layers[2].weight + net.layers[2].bias;
      CHECK((r.row(i) - y).cwiseAbs().maxCoeff() < 1e-14);
    }
  }
  SUBCASE("contract errors") {
    Tape tape;
    BoundModel m(tape, random_model(4), false);
    CHECK_THROWS_AS(m.encode_observations(ObservationSet{}), ContractError);
    ObservationSet wrong = obs;
    wrong.values = Matrix::Ones(5, 3);
    CHECK_THROWS_AS(m.encode_observations(wrong), DimensionError);
    CHECK_THROWS_AS(m.encode_and_aggregate(std::vector<ObservationSet>{obs, ObservationSet{}}), ContractError);
  }
}

TEST_CASE("aggregate_observations") {
  Tape tape;
  std::mt19937_64 rng(5);
  SUBCASE("singleton") {
    const Matrix r = random_matrix(1, 4, rng);
    const Matrix out = aggregate_observations(tape.constant(r)).value();
    CHECK(out.leftCols(4) == r);
    CHECK((out.rightCols(4) - r).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("two identical rows") {
    const Matrix v = random_matrix(1, 4, rng);
    Matrix two(2, 4);
    two << v, v;
    const Matrix out = aggregate_observations(tape.constant(two)).value();
    CHECK(out.leftCols(4) == v);
    CHECK((out.rightCols(4) - (v.array() + std::log(2.0)).matrix()).cwiseAbs().maxCoeff() < 1e-14);
  }
  SUBCASE("permutation of ten rows") {
    const Matrix r = random_matrix(10, 8, rng, -3, 3);
    std::vector<int> order(10);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    Matrix p(10, 8);
    for (int i = 0; i < 10; ++i) p.row(i) = r.row(order[static_cast<std::size_t>(i)]);
    const Matrix a = aggregate_observations(tape.constant(r)).value();
    const Matrix b = aggregate_observations(tape.constant(p)).value();
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("empty input") { CHECK_THROWS_AS(aggregate_observations(tape.constant(Matrix(0, 4))), ContractError); }
  SUBCASE("segments match per-set aggregation") {
    const Matrix r = random_matrix(7, 3, rng);
    const std::vector<Index> off{0, 2, 7};
    const Matrix seg = aggregate_segments(tape.constant(r), off).value();
    CHECK((seg.row(0) - aggregate_observations(tape.constant(Matrix(r.topRows(2)))).value()).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((seg.row(1) - aggregate_observations(tape.constant(Matrix(r.bottomRows(5)))).value()).cwiseAbs().maxCoeff() < 1e-15);
  }
}

TEST_CASE("adding a duplicate observation shifts logsumexp by at most ln 2") {
  std::mt19937_64 data(6);
  const ObservationSet obs = random_observations(6, 2, data);
  ObservationSet grown = obs;
  grown.times.push_back(obs.times[0]);
  grown.values.conservativeResize(7, 2);
  grown.values.row(6) = obs.values.row(0);
  Tape tape;
  BoundModel m(tape, random_model(6), false);
  const Matrix a = m.encode_and_aggregate(std::vector<ObservationSet>{obs}).value();
  const Matrix b = m.encode_and_aggregate(std::vector<ObservationSet>{grown}).value();
  const Matrix shift = b.rightCols(8) - a.rightCols(8);
  CHECK(shift.minCoeff() >= 0.0);
  CHECK(shift.maxCoeff() <= std::log(2.0) + 1e-12);
}

TEST_CASE("encode_privileged") {
  SUBCASE("zero encoder") {
    ModelParams p = random_model(7);
    zero(p.networks.privileged_encoder);
    Tape tape;
    const std::vector<double> pi{0.3, 1.7};
    CHECK(BoundModel(tape, p, false).encode_privileged(pi).value() == Matrix::Zero(2, 8));
  }
  SUBCASE("distinct inputs give distinct representations") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Tape tape;
      const std::vector<double> pi{0.4, 0.9};
      const Matrix r = BoundModel(tape, random_model(100 + seed), false).encode_privileged(pi).value();
      CHECK(r.row(0) != r.row(1));
    }
  }
  SUBCASE("non-finite pi") {
    Tape tape;
    const std::vector<double> pi{NAN};
    CHECK_THROWS_AS(BoundModel(tape, random_model(8), false).encode_privileged(pi), DomainError);
  }
  SUBCASE("gradient of the squared norm with respect to pi") {
    const ModelParams p = random_model(9);
    const auto r = check_gradients(
        [&](Tape& tape, const std::vector<Tensor>& x) {
          const Tensor rep = mlp_forward(bind(tape, p.networks.privileged_encoder, false), x[0]);
          return sum(mul(rep, rep));
        },
        {Matrix::Constant(1, 1, 0.73)});
    CHECK(r.max_rel_error < 1e-4);
    CHECK(r.analytic[0](0, 0) != 0.0);
  }
}

TEST_CASE("fuse") {
  std::mt19937_64 data(10);
  const Matrix r_o = random_matrix(3, 16, data);
  const Matrix r_pi = random_matrix(3, 8, data);
  SUBCASE("zero residual is the identity") {
    ModelParams p = random_model(11);
    zero(p.networks.fusion_residual);
    Tape tape;
    BoundModel m(tape, p, false);
    const Tensor pi = tape.constant(r_pi);
    CHECK(m.fuse(tape.constant(r_o), FusionMode::WithPrivileged, &pi).value() == r_o);
  }
  SUBCASE("no-pi path returns r_o itself") {
    Tape tape;
    BoundModel m(tape, random_model(12), false);
    const Tensor ro = tape.constant(r_o);
    const Tensor out = m.fuse(ro, FusionMode::NoPrivileged, nullptr);
    CHECK(out.id() == ro.id());
    CHECK(out.value() == r_o);
  }
  SUBCASE("difference equals the residual network") {
    const ModelParams p = random_model(13);
    Tape tape;
    BoundModel m(tape, p, false);
    const Tensor pi = tape.constant(r_pi);
    const Matrix fused = m.fuse(tape.constant(r_o), FusionMode::WithPrivileged, &pi).value();
    Matrix input(3, 24);
    input << r_o, r_pi;
    const Matrix g = mlp_forward(bind(tape, p.networks.fusion_residual, false), tape.constant(input)).value();
    CHECK((fused - r_o - g).cwiseAbs().maxCoeff() < 1e-14);
  }
  SUBCASE("shape errors") {
    Tape tape;
    BoundModel m(tape, random_model(14), false);
    const Tensor bad = tape.constant(Matrix::Ones(3, 5));
    CHECK_THROWS_AS(m.fuse(tape.constant(r_o), FusionMode::WithPrivileged, &bad), ContractError);
    CHECK_THROWS_AS(m.fuse(tape.constant(r_o), FusionMode::WithPrivileged, nullptr), ContractError);
    CHECK_THROWS_AS(m.fuse(tape.constant(Matrix::Ones(3, 4)), FusionMode::NoPrivileged, nullptr), ContractError);
  }
}

TEST_CASE("latent_params") {
  SUBCASE("scales stay positive") {
    std::mt19937_64 data(15);
    Tape tape;
    BoundModel m(tape, random_model(15), false);
    const auto d = m.latent_params(tape.constant(random_matrix(10000, 16, data, -50, 50)));
    CHECK(d.scale.value().minCoeff() >= 0.01);
  }
  SUBCASE("trunk gradients from both heads") {
    const ModelParams p = random_model(16);
    std::mt19937_64 data(16);
    const Matrix r = random_matrix(4, 16, data);
    const auto& h = p.networks.latent;
    const auto check = check_gradients(
        [&](Tape& tape, const std::vector<Tensor>& x) {
          LatentHeads<Tensor> heads{{Linear<Tensor>{x[0], x[1]}, Linear<Tensor>{x[2], x[3]}},
                                    bind(tape, h.mean, false),
                                    bind(tape, h.scale, false)};
          Tensor t = relu(linear_forward(heads.trunk[0], tape.constant(r)));
          t = relu(linear_forward(heads.trunk[1], t));
          const Tensor mu = linear_forward(heads.mean, t);
          const Tensor sigma = shift(softplus(linear_forward(heads.scale, t)), 0.01);
          return add(sum(mul(mu, mu)), sum(log(sigma)));
        },
        {h.trunk[0].weight, h.trunk[0].bias, h.trunk[1].weight, h.trunk[1].bias});
    CHECK(check.max_rel_error < 1e-4);
  }
  SUBCASE("matches the bound model") {
    const ModelParams p = random_model(17);
    Tape tape;
    BoundModel m(tape, p, false);
    std::mt19937_64 data(17);
    const Matrix r = random_matrix(2, 16, data);
    const auto d = m.latent_params(tape.constant(r));
    const auto& h = p.networks.latent;
    Matrix t = ((r * h.trunk[0].weight).rowwise() + h.trunk[0].bias.row(0)).cwiseMax(0.0);
    t = ((t * h.trunk[1].weight).rowwise() + h.trunk[1].bias.row(0)).cwiseMax(0.0);
    const Matrix mu = (t * h.mean.weight).rowwise() + h.mean.bias.row(0);
    CHECK((d.mean.value() - mu).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("decode") {
  std::mt19937_64 data(18);
  const Matrix z = random_matrix(2, 8, data);
  std::vector<double> times;
  for (int i = 0; i < 20; ++i) times.push_back(0.5 * i);
  SUBCASE("frozen latent gives constant predictions") {
    ModelParams p = random_model(18);
    zero(p.networks.ode_field);
    Tape tape;
    const Predictive pred = BoundModel(tape, p, false).decode(tape.constant(z), times);
    REQUIRE(pred.mean.size() == 20);
    for (const auto& m : pred.mean) CHECK(m.value() == pred.mean.front().value());
  }
  SUBCASE("single time at the origin applies the decoder to the initial state") {
    const ModelParams p = random_model(19);
    Tape tape;
    BoundModel m(tape, p, false);
    const Tensor zt = tape.constant(z);
    const std::vector<double> origin{0.0};
    const Predictive pred = m.decode(zt, origin);
    const Tensor l0 = mlp_forward(m.networks().initial_state, zt);
    const Matrix raw = mlp_forward(m.networks().decoder, concat_cols({l0, zt})).value();
    CHECK(pred.mean[0].value() == raw.leftCols(2));
  }
  SUBCASE("composition of initial state, solver and decoder") {
    const ModelParams p = random_model(20);
    Tape tape;
    BoundModel m(tape, p, false);
    const Tensor zt = tape.constant(z);
    const std::vector<double> later{0.7, 1.9, 4.0};
    const Predictive pred = m.decode(zt, later);
    const auto& nets = m.networks();
    SolveGrid grid{{0.0, 0.7, 1.9, 4.0}, p.config.ode_substeps};
    auto field = [&](const Tensor& l, double t) {
      return mlp_forward(nets.ode_field, concat_cols({l, zt, tape.constant(Matrix::Constant(2, 1, t))}));
    };
    const auto states = rk4_solve(field, mlp_forward(nets.initial_state, zt), grid);
    for (std::size_t i = 0; i < later.size(); ++i) {
      const Matrix raw = mlp_forward(nets.decoder, concat_cols({states[i + 1], zt})).value();
      CHECK((pred.mean[i].value() - raw.leftCols(2)).cwiseAbs().maxCoeff() < 1e-14);
      const Matrix sigma = (raw.rightCols(2).array().exp().log1p() + 0.01).matrix();
      CHECK((pred.scale[i].value() - sigma).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
  SUBCASE("time contract") {
    Tape tape;
    BoundModel m(tape, random_model(21), false);
    const Tensor zt = tape.constant(z);
    CHECK_THROWS_AS(m.decode(zt, std::vector<double>{1.0, 1.0}), ContractError);
    CHECK_THROWS_AS(m.decode(zt, std::vector<double>{-1.0, 1.0}), ContractError);
    CHECK_THROWS_AS(m.decode(zt, std::vector<double>{}), ContractError);
  }
}

TEST_CASE("forward") {
  std::mt19937_64 data(22);
  const std::vector<ObservationSet> ctx{random_observations(6, 2, data), random_observations(3, 2, data)};
  std::vector<double> times;
  for (int i = 0; i < 10; ++i) times.push_back(i);
  const std::vector<double> pi{0.5, 1.5};

  auto run = [&](const ModelParams& p, std::span<const ObservationSet> c, bool with_pi, std::uint64_t seed) {
    Tape tape;
    BoundModel m(tape, p, false);
    Rng rng(seed);
    std::optional<std::span<const double>> pi_arg;
    if (with_pi) pi_arg = std::span<const double>(pi);
    const ForwardResult f = m.forward(c, pi_arg, times, rng);
    std::vector<Matrix> out{f.latent.mean.value(), f.latent.scale.value(), f.z.value()};
    for (std::size_t i = 0; i < f.predictive.mean.size(); ++i) {
      out.push_back(f.predictive.mean[i].value());
      out.push_back(f.predictive.scale[i].value());
    }
    return out;
  };

  SUBCASE("zero residual makes pi irrelevant") {
    ModelParams p = random_model(23);
    zero(p.networks.fusion_residual);
    CHECK(run(p, ctx, true, 5) == run(p, ctx, false, 5));
  }
  SUBCASE("context order does not matter") {
    const ModelParams p = random_model(24);
    const std::vector<ObservationSet> shuffled{permuted(ctx[0], 1), permuted(ctx[1], 2)};
    const auto a = run(p, ctx, true, 9);
    const auto b = run(p, shuffled, true, 9);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK((a[i] - b[i]).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("deterministic for a fixed seed") {
    const ModelParams p = random_model(25);
    CHECK(run(p, ctx, true, 3) == run(p, ctx, true, 3));
    CHECK(run(p, ctx, false, 3) == run(p, ctx, false, 3));
  }
  SUBCASE("pi count must match the batch") {
    Tape tape;
    BoundModel m(tape, random_model(26), false);
    Rng rng(1);
    const std::vector<double> one{1.0};
    CHECK_THROWS_AS(m.forward(ctx, std::span<const double>(one), times, rng), ContractError);
  }
}

TEST_CASE("full loss gradient on a two-series batch matches finite differences") {
  ModelConfig c;
  c.hidden = 6;
  c.representation_dim = 3;
  c.privileged_representation_dim = 3;
  c.latent_dim = 3;
  c.ode_state_dim = 3;
  c.ode_substeps = 2;
  const auto series = toy_series();
  std::vector<BatchElement> batch{{&series[0], {{1, 4, 9}, {0, 1, 3, 4, 6, 9, 11}}},
                                  {&series[1], {{2}, {2, 5, 7, 8}}}};
  for (TrainingMode mode : {TrainingMode::Lupi, TrainingMode::Nopi}) {
    CAPTURE(mode_name(mode));
    ModelParams p = random_model(27, c);
    Rng rng(4);
    const LossAndGradients lg = loss_and_gradients(p, batch, mode, rng);
    auto loss_at = [&](const ModelParams& q) {
      Tape tape;
      BoundModel m(tape, q, false);
      Rng r(4);
      return elbo_loss(m, batch, mode, r).loss.item();
    };
    CHECK(loss_at(p) == lg.loss);
    const auto names = parameter_block_names();
    auto blocks = p.blocks();
    double worst = 0.0;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      Matrix numeric(blocks[b]->rows(), blocks[b]->cols());
      for (Index i = 0; i < blocks[b]->size(); ++i) {
        double& v = blocks[b]->data()[i];
        const double saved = v;
        v = saved + 1e-5;
        const double up = loss_at(p);
        v = saved - 1e-5;
        const double down = loss_at(p);
        v = saved;
        numeric.data()[i] = (up - down) / 2e-5;
      }
      const double err = relative_error(lg.gradients[b], numeric);
      CAPTURE(names[b]);
      CHECK(err < 1e-4);
      worst = std::max(worst, err);
      if (mode == TrainingMode::Nopi && is_privileged_block(names[b])) CHECK(lg.gradients[b] == Matrix::Zero(blocks[b]->rows(), blocks[b]->cols()));
    }
    MESSAGE("worst block relative error: " << worst);
  }
}

}  // TEST_SUITE
