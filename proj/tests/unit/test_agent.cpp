#include <doctest.h>

#include <cmath>
#include <numbers>

#include "grad_cases.hpp"
#include "srl4h/agent/actor_critic.hpp"
#include "srl4h/agent/ppo.hpp"
#include "srl4h/agent/returns.hpp"
#include "srl4h/errors.hpp"
#include "support.hpp"

using namespace srl4h;
using namespace srl4h::agent;

namespace {

Eigen::RowVectorXd row(std::initializer_list<double> v) {
  Eigen::RowVectorXd r(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) r(i++) = x;
  return r;
}

NetworkConfig small_net() {
  NetworkConfig c;
  c.encoder_hidden = {8};
  c.latent_dim = 4;
  c.head_hidden = {4};
  return c;
}

}  // namespace

TEST_SUITE("agent") {
  TEST_CASE("gae: single terminal step") {
    Eigen::MatrixXd r = Eigen::MatrixXd::Ones(1, 1), v = Eigen::MatrixXd::Zero(1, 1), d = Eigen::MatrixXd::Ones(1, 1);
    const auto g = gae(r, v, d, Eigen::VectorXd::Zero(1), 0.99, 0.95);
    CHECK(g.advantages(0, 0) == 1.0);
    CHECK(g.returns(0, 0) == 1.0);
  }

  TEST_CASE("gae: two-step hand recursion") {
    Eigen::MatrixXd r(2, 1), v = Eigen::MatrixXd::Zero(2, 1), d = Eigen::MatrixXd::Zero(2, 1);
    r << 0, 1;
    const auto g = gae(r, v, d, Eigen::VectorXd::Zero(1), 0.99, 0.95);
    CHECK(g.advantages(1, 0) == 1.0);
    CHECK(g.advantages(0, 0) == doctest::Approx(0.9405).epsilon(1e-14));
  }

  TEST_CASE("gae: brute-force oracle on random sequences") {
    Rng rng(101);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const Index steps = 1 + static_cast<Index>(rng() % 8);
      const Index envs = 3;
      Eigen::MatrixXd r(steps, envs), v(steps, envs), d(steps, envs);
      for (Index i = 0; i < r.size(); ++i) {
        r.data()[i] = gaussian(rng);
        v.data()[i] = gaussian(rng);
        d.data()[i] = uniform(rng, 0, 1) < 0.2 ? 1.0 : 0.0;
      }
      Eigen::VectorXd boot(envs);
      for (Index e = 0; e < envs; ++e) boot(e) = gaussian(rng);
      const double gamma = uniform(rng, 0.8, 1.0), lam = uniform(rng, 0.5, 1.0);
      const auto g = gae(r, v, d, boot, gamma, lam);
      const auto oracle = testing::gae_oracle(r, v, d, boot, gamma, lam);
      worst = std::max(worst, (g.advantages - oracle).cwiseAbs().maxCoeff());
      CHECK((g.returns - g.advantages - v).cwiseAbs().maxCoeff() <= 1e-12);
    }
    CHECK(worst <= 1e-10);
  }

  TEST_CASE("gae: misaligned inputs") {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(3, 2);
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(2, 2);
    CHECK_THROWS_AS(gae(a, b, a, Eigen::VectorXd::Zero(2), 0.99, 0.95), ConfigError);
    CHECK_THROWS_AS(gae(a, a, a, Eigen::VectorXd::Zero(3), 0.99, 0.95), ConfigError);
  }

  TEST_CASE("policy loss examples") {
    const auto adv = row({0.5, -1.0, 2.0, 0.25});
    const auto lp = row({-1.0, -2.0, 0.3, -0.7});
    CHECK(ppo_policy_loss(lp, lp, adv, 0.2) == doctest::Approx(-adv.mean()).epsilon(1e-15));
    // rho = 1.5, A = 1 -> min(1.5, 1.2)
    CHECK(ppo_policy_loss(row({std::log(1.5)}), row({0.0}), row({1.0}), 0.2) == doctest::Approx(-1.2).epsilon(1e-14));
    // rho = 0.5, A = -1 -> min(-0.5, -0.8)
    CHECK(ppo_policy_loss(row({std::log(0.5)}), row({0.0}), row({-1.0}), 0.2) == doctest::Approx(0.8).epsilon(1e-14));
    CHECK_THROWS_AS(ppo_policy_loss(row({0.0}), row({0.0, 1.0}), row({1.0}), 0.2), ConfigError);
  }

  TEST_CASE("policy loss at ratio one equals minus mean advantage exactly") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      Eigen::RowVectorXd lp(16), adv(16);
      for (Index i = 0; i < 16; ++i) {
        lp(i) = gaussian(rng);
        adv(i) = gaussian(rng);
      }
      CHECK(ppo_policy_loss(lp, lp, adv, 0.2) == -adv.mean());
    }
  }

  TEST_CASE("value loss examples") {
    CHECK(value_loss(row({0.3, -1.0}), row({0.3, -1.0}), row({0.3, -1.0}), 0.2) == 0.0);
    CHECK(value_loss(row({1.0}), row({0.0}), row({0.0}), 0.2) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(value_loss(row({0.1}), row({0.0}), row({1.0}), 0.2) == doctest::Approx(0.81).epsilon(1e-14));
    // non-negative, and plain MSE with an unbounded clip
    Rng rng(4);
    Eigen::RowVectorXd vn(10), vo(10), r(10);
    for (Index i = 0; i < 10; ++i) {
      vn(i) = gaussian(rng);
      vo(i) = gaussian(rng);
      r(i) = gaussian(rng);
    }
    CHECK(value_loss(vn, vo, r, 0.2) >= 0.0);
    CHECK(value_loss(vn, vo, r, std::numeric_limits<double>::infinity()) ==
          doctest::Approx((vn - r).array().square().mean()).epsilon(1e-14));
  }

  TEST_CASE("entropy closed form") {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
      diff::Matrix<double> ls = testing::random_matrix(3, 1, rng);
      Tape<double> t;
      const double h = t.scalar(gaussian_entropy(t, t.constant(ls)));
      const double closed = ls.sum() + 1.5 * std::log(2 * std::numbers::pi * std::numbers::e);
      CHECK(std::abs(h - closed) <= 1e-6);
    }
  }

  TEST_CASE("gaussian log prob matches the density") {
    diff::Matrix<double> mean(2, 1), ls(2, 1), a(2, 1);
    mean << 0.3, -0.5;
    ls << -0.2, 0.4;
    a << 0.1, 0.9;
    Tape<double> t;
    const double lp = t.scalar(gaussian_log_prob(t, t.constant(mean), t.constant(ls), t.constant(a)));
    double expect = 0.0;
    for (int i = 0; i < 2; ++i) {
      const double s = std::exp(ls(i));
      expect += -0.5 * std::pow((a(i) - mean(i)) / s, 2) - std::log(s) - 0.5 * std::log(2 * std::numbers::pi);
    }
    CHECK(lp == doctest::Approx(expect).epsilon(1e-14));
  }

  TEST_CASE("kl and adaptive learning rate") {
    diff::Matrix<double> m = diff::Matrix<double>::Random(3, 5), s = diff::Matrix<double>::Constant(3, 1, 0.7);
    auto r = kl_and_adaptive_lr(m, s, m, s, 1e-3, 0.01);
    CHECK(r.kl == 0.0);
    CHECK(r.lr == doctest::Approx(1.5e-3));
    CHECK(adaptive_lr(0.03, 1e-3, 0.01) == doctest::Approx(6.6667e-4).epsilon(1e-4));
    CHECK(adaptive_lr(0.01, 1e-3, 0.01) == 1e-3);
    CHECK(adaptive_lr(0.0, 9e-3, 0.01) == 1e-2);
    CHECK(adaptive_lr(1.0, 1.2e-5, 0.01) == 1e-5);

    // one-dimensional closed form: log(s1/s0) + (s0^2 + dm^2) / (2 s1^2) - 1/2
    diff::Matrix<double> m0(1, 1), m1(1, 1), s0(1, 1), s1(1, 1);
    m0 << 0.0;
    m1 << 0.5;
    s0 << 1.0;
    s1 << 2.0;
    CHECK(gaussian_kl(m0, s0, m1, s1) == doctest::Approx(std::log(2.0) + 1.25 / 8.0 - 0.5).epsilon(1e-14));
    CHECK_THROWS_AS(gaussian_kl(m0, s0, m, s), ConfigError);
  }

  TEST_CASE("advantage standardization") {
    Rng rng(6);
    Eigen::VectorXd x(2048);
    for (Index i = 0; i < x.size(); ++i) x(i) = 3.0 + 5.0 * gaussian(rng);
    const auto z = standardize(x);
    CHECK(std::abs(z.mean()) <= 1e-6);
    const double sd = std::sqrt((z.array() - z.mean()).square().mean());
    CHECK(std::abs(sd - 1.0) <= 1e-4);
  }

  TEST_CASE("reward normalizer") {
    RewardNormalizer zero(4, 0.99);
    const std::vector<std::uint8_t> none(4, 0);
    for (int t = 0; t < 10; ++t) CHECK(zero.normalize(Eigen::VectorXd::Zero(4), none).isZero(0.0));

    // scale invariance of the normalized stream
    RewardNormalizer a(4, 0.99), b(4, 0.99);
    Rng rng(7);
    double worst = 0.0;
    for (int t = 0; t < 2500; ++t) {
      Eigen::VectorXd r(4);
      for (Index i = 0; i < 4; ++i) r(i) = 1.0 + gaussian(rng);
      std::vector<std::uint8_t> d(4);
      for (auto& x : d) x = uniform(rng, 0, 1) < 0.01;
      const auto na = a.normalize(r, d);
      const auto nb = b.normalize(10.0 * r, d);
      if (t >= 2400) worst = std::max(worst, (na - nb).cwiseAbs().maxCoeff() / na.cwiseAbs().maxCoeff());
    }
    CHECK(worst <= 1e-6);
    CHECK(a.count() == 1e4);

    // state round trip
    diff::ArrayArchive ar;
    a.save(ar, "n/");
    RewardNormalizer c(4, 0.99);
    c.load(diff::ArrayArchive::deserialize(ar.serialize()), "n/");
    Eigen::VectorXd r = Eigen::VectorXd::Constant(4, 0.5);
    CHECK(c.normalize(r, none) == a.normalize(r, none));
    RewardNormalizer wrong(3, 0.99);
    CHECK_THROWS_AS(wrong.load(ar, "n/"), ConfigError);
    CHECK_THROWS_AS(a.normalize(Eigen::VectorXd::Zero(3), none), ConfigError);
  }

  TEST_CASE("policy forward") {
    Rng rng(8);
    auto ac = ActorCritic<double>::create(6, 2, small_net(), rng);
    CHECK(ac.input_dim() == 6);
    CHECK(ac.action_dim() == 2);
    CHECK(ac.log_std.isZero(0.0));  // init std 1
    diff::Matrix<double> x = testing::random_matrix(6, 3, rng);
    const auto a = policy_forward(ac, x);
    const auto b = policy_forward(ac, x);
    CHECK(a.mean == b.mean);
    CHECK(a.std.isOnes(0.0));

    for (auto* p : ac.tensors()) p->setZero();
    const auto z = policy_forward(ac, x);
    CHECK(z.mean.isZero(0.0));
    CHECK(z.std.isOnes(0.0));
    diff::Matrix<double> x2 = 2 * x;
    CHECK(policy_forward(ac, x2).mean == z.mean);
    CHECK(value_forward(ac, x).cols() == 3);

    ac.policy_head.layers.back().bias(0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(policy_forward(ac, x), RuntimeFailure);
  }

  TEST_CASE("log std clamp") {
    Rng rng(9);
    auto ac = ActorCritic<double>::create(4, 3, small_net(), rng);
    ac.log_std << -9, 0.5, 7;
    ac.clamp_log_std();
    CHECK(ac.log_std(0) == -4.0);
    CHECK(ac.log_std(1) == 0.5);
    CHECK(ac.log_std(2) == 2.0);
  }

  TEST_CASE("named tensors line up with tape bindings") {
    Rng rng(10);
    auto ac = ActorCritic<double>::create(5, 2, small_net(), rng);
    Tape<double> t;
    const auto v = bind_actor_critic(t, ac);
    const auto named = ac.named_tensors();
    const auto vars = v.all();
    REQUIRE(named.size() == vars.size());
    for (std::size_t i = 0; i < vars.size(); ++i) CHECK(t.value(vars[i]) == *named[i].second);
    CHECK(named[0].first == "policy/encoder/0/weight");
  }

  TEST_CASE("config validation") {
    PpoConfig p;
    p.validate();
    p.clip = 0.0;
    CHECK_THROWS_AS(p.validate(), ConfigError);
    NetworkConfig n;
    n.latent_dim = 0;
    CHECK_THROWS_AS(n.validate(), ConfigError);
  }

  TEST_CASE("gradient checks for the PPO losses") {
    for (auto kind : {testing::LossKind::kPolicy, testing::LossKind::kValue, testing::LossKind::kEntropy}) {
      for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        auto c = testing::make_grad_case(kind, seed);
        const auto r = diff::finite_diff_check(c.loss, c.point, 1e-6);
        INFO(testing::loss_name(kind) << " seed " << seed << " worst index " << r.worst_index);
        CHECK(r.finite);
        CHECK(r.max_relative_error <= 1e-4);
      }
    }
  }

  TEST_CASE("stop-gradient on old log-probs, advantages and returns") {
    Rng rng(1);
    Tape<double> t;
    Var lp = t.leaf(testing::random_matrix(1, 4, rng));
    Var old = t.leaf(diff::Matrix<double>::Constant(1, 4, -0.3));
    Var adv = t.leaf(diff::Matrix<double>::Constant(1, 4, 0.7));
    Var pl = ppo_policy_loss(t, lp, old, adv, 0.2);
    Var vo = t.leaf(diff::Matrix<double>::Constant(1, 4, 0.1));
    Var ret = t.leaf(diff::Matrix<double>::Constant(1, 4, 1.1));
    Var vl = value_loss(t, t.leaf(diff::Matrix<double>::Constant(1, 4, 0.2)), vo, ret, 0.2);
    t.backward(t.add(pl, vl));
    CHECK(t.grad(old).isZero(0.0));
    CHECK(t.grad(adv).isZero(0.0));
    CHECK(t.grad(vo).isZero(0.0));
    CHECK(t.grad(ret).isZero(0.0));
    CHECK_FALSE(t.grad(lp).isZero(0.0));
  }
}
