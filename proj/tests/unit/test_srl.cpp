#include <doctest.h>

#include <cmath>

#include "grad_cases.hpp"
#include "srl4h/diff/optim.hpp"
#include "srl4h/envs/config.hpp"
#include "srl4h/errors.hpp"
#include "srl4h/srl/srl.hpp"
#include "srl_checks.hpp"
#include "support.hpp"

using namespace srl4h;
using namespace srl4h::srl;
using testing::MatD;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd r(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) r(i++) = x;
  return r;
}

}  // namespace

TEST_SUITE("srl") {
  TEST_CASE("zero_masking") {
    MatD s(4, 1);
    s << 1, 2, 3, 4;
    const std::vector<Index> mask{0, 2};
    MatD expect(4, 1);
    expect << 0, 2, 0, 4;
    CHECK(zero_masking(s, std::span<const Index>(mask)) == expect);
    CHECK(zero_masking(s, std::span<const Index>()) == s);
    const std::vector<Index> bad{4};
    CHECK_THROWS_AS(zero_masking(s, std::span<const Index>(bad)), ConfigError);
  }

  TEST_CASE("zero_masking reproduces the policy input of both environments") {
    for (const char* name : {"planar_velocity", "chain_mimic"}) {
      envs::EnvConfig c;
      c.name = name;
      c.num_envs = 3;
      auto env = envs::make_env(c);
      env->reset(1);
      const auto mask = env->spec().privileged_mask();
      Matrix<float> a = Matrix<float>::Constant(env->spec().action_dim, 3, 0.4f);
      for (int t = 0; t < 25; ++t) {
        const auto b = env->step(a);
        CHECK(zero_masking(b.privileged, std::span<const Index>(mask)) == b.policy_obs);
      }
    }
  }

  TEST_CASE("d_ncs examples") {
    CHECK(d_ncs(vec({1, 0}), vec({1, 0})) == -1.0);
    CHECK(d_ncs(vec({1, 0}), vec({0, 1})) == 0.0);
    CHECK(d_ncs(vec({1, 0}), vec({-2, 0})) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(std::abs(d_ncs(vec({0, 0}), vec({1, 2}))) < 1e-7);

    Rng rng(2);
    double worst = 0.0;
    for (int i = 0; i < 200; ++i) {
      Eigen::VectorXd p(8), z(8);
      for (Index k = 0; k < 8; ++k) {
        p(k) = gaussian(rng);
        z(k) = gaussian(rng);
      }
      const double a = std::exp(uniform(rng, -5, 5)), b = std::exp(uniform(rng, -5, 5));
      const double base = d_ncs(p, z);
      CHECK(base >= -1.0);
      CHECK(base <= 1.0);
      worst = std::max(worst, std::abs(d_ncs(a * p, b * z) - base));
    }
    CHECK(worst <= 1e-7);
  }

  TEST_CASE("tape d_ncs agrees with the plain version") {
    Rng rng(3);
    const MatD p = testing::random_matrix(5, 4, rng), z = testing::random_matrix(5, 4, rng);
    Tape<double> t;
    const MatD v = t.value(d_ncs(t, t.constant(p), t.constant(z)));
    for (Index j = 0; j < 4; ++j) CHECK(v(0, j) == doctest::Approx(d_ncs(p.col(j), z.col(j))).epsilon(1e-14));
  }

  TEST_CASE("augmentations") {
    Rng rng(4);
    const MatD x = testing::random_matrix(10, 20, rng);
    CHECK(augment(x, AugmentOp::kIdentityMapping, rng) == x);
    AugmentParams all;
    all.mask_prob = 1.0;
    CHECK(augment(x, AugmentOp::kRandomMasking, rng, all).isZero(0.0));

    const MatD zeros = MatD::Zero(100, 100);
    const MatD noisy = augment(zeros, AugmentOp::kGaussianNoise, rng);
    const double sd = std::sqrt(noisy.array().square().mean() - std::pow(noisy.mean(), 2));
    CHECK(std::abs(sd - 0.05) <= 0.05 * 0.05);

    const MatD scaled = augment(x, AugmentOp::kRandomAmplitudeScaling, rng);
    for (Index j = 0; j < x.cols(); ++j) {
      const double f = scaled(0, j) / x(0, j);
      CHECK(f >= 0.8);
      CHECK(f <= 1.2);
      CHECK((scaled.col(j) - f * x.col(j)).norm() < 1e-12);
    }

    const MatD ones = MatD::Ones(100, 100);
    const MatD masked = augment(ones, AugmentOp::kRandomMasking, rng);
    const double frac = 1.0 - masked.mean();
    CHECK(frac > 0.08);
    CHECK(frac < 0.12);
  }

  TEST_CASE("method names, defaults and validation") {
    CHECK(parse_method("pvp") == Method::kPvp);
    CHECK(to_string(Method::kSimSiam) == "simsiam");
    CHECK(parse_augment("random_amplitude_scaling") == AugmentOp::kRandomAmplitudeScaling);
    CHECK_THROWS_AS(parse_method("byol"), ConfigError);
    CHECK_THROWS_AS(parse_augment("rotate"), ConfigError);
    CHECK(default_lambda(Method::kPvp) == 0.5);
    CHECK(default_lambda(Method::kSimSiam) == 0.5);
    CHECK(default_lambda(Method::kSpr) == 0.5);
    CHECK(default_lambda(Method::kVae) == 0.1);
    SrlConfig c;
    c.method = Method::kSimSiam;
    CHECK(c.resolved_augment() ==
          std::vector<AugmentOp>{AugmentOp::kRandomMasking, AugmentOp::kIdentityMapping});
    c.lambda = -0.1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.method = Method::kSpr;
    c.target = Target::kValueEncoder;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.target = Target::kPolicyEncoder;
    c.spr_steps = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }

  TEST_CASE("pvp: identity predictor and empty mask give -2") {
    Rng rng(5);
    const MlpParams<double> enc = testing::random_mlp({6, 8, 4}, rng);
    const MlpParams<double> pred = testing::identity_mlp(4);
    Tape<double> t;
    auto e = diff::bind_params(t, enc);
    auto h = diff::bind_params(t, pred);
    const MatD s = testing::random_matrix(6, 10, rng);
    CHECK(t.scalar(pvp_loss(t, e, h, s, std::span<const Index>())) == doctest::Approx(-2.0).epsilon(1e-12));
  }

  TEST_CASE("pvp: bounds on random batches") {
    Rng rng(6);
    const std::vector<Index> mask{4, 5};
    double lo = 1e9, hi = -1e9;
    for (int i = 0; i < 500; ++i) {
      const auto enc = testing::random_mlp({6, 8, 4}, rng, 2.0);
      const auto pred = testing::random_mlp({4, 5, 4}, rng, 2.0);
      Tape<double> t;
      const double v = t.scalar(pvp_loss(t, diff::bind_params(t, enc), diff::bind_params(t, pred),
                                         testing::random_matrix(6, 3, rng, 3.0), std::span<const Index>(mask)));
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    CHECK(lo >= -2.0);
    CHECK(hi <= 2.0);
  }

  TEST_CASE("pvp on already-masked states reduces to twice the self term") {
    Rng rng(7);
    const auto enc = testing::random_mlp({6, 8, 4}, rng);
    const auto pred = testing::random_mlp({4, 5, 4}, rng);
    const std::vector<Index> mask{4, 5};
    MatD s = testing::random_matrix(6, 5, rng);
    s.row(4).setZero();
    s.row(5).setZero();
    Tape<double> t;
    const double v = t.scalar(pvp_loss(t, diff::bind_params(t, enc), diff::bind_params(t, pred), s,
                                       std::span<const Index>(mask)));
    const MatD z = diff::mlp_forward(enc, s);
    const MatD p = diff::mlp_forward(pred, z);
    double expect = 0.0;
    for (Index j = 0; j < 5; ++j) expect += 2.0 * d_ncs(p.col(j), z.col(j));
    CHECK(v == doctest::Approx(expect / 5).epsilon(1e-12));
  }

  TEST_CASE("simsiam: identical views with identity predictor give -1; bounds") {
    Rng rng(8);
    const auto enc = testing::random_mlp({6, 8, 4}, rng);
    const MatD x = testing::random_matrix(6, 7, rng);
    Tape<double> t;
    const double v = t.scalar(simsiam_loss(t, diff::bind_params(t, enc), diff::bind_params(t, testing::identity_mlp(4)), x, x));
    CHECK(v == doctest::Approx(-1.0).epsilon(1e-12));
    for (int i = 0; i < 200; ++i) {
      Tape<double> tt;
      const double w = tt.scalar(simsiam_loss(tt, diff::bind_params(tt, testing::random_mlp({6, 8, 4}, rng, 2.0)),
                                              diff::bind_params(tt, testing::random_mlp({4, 5, 4}, rng, 2.0)),
                                              testing::random_matrix(6, 3, rng), testing::random_matrix(6, 3, rng)));
      CHECK(w >= -1.0);
      CHECK(w <= 1.0);
    }
  }

  TEST_CASE("spr: zero networks, fixed point, and the unroll oracle") {
    std::vector<MatD> obs{MatD::Ones(3, 2), MatD::Ones(3, 2)};
    std::vector<MatD> acts{MatD::Ones(1, 2)};
    {
      const auto z3 = MlpParams<double>::zeros(std::vector<Index>{3, 3});
      const auto zd = MlpParams<double>::zeros(std::vector<Index>{4, 3});
      Tape<double> t;
      CHECK(t.scalar(spr_loss(t, diff::bind_params(t, z3), diff::bind_params(t, z3), diff::bind_params(t, zd), obs,
                              acts)) == 0.0);
    }
    {
      // identity encoder, dynamics that copies the latent and ignores the action
      const auto id = testing::identity_mlp(3);
      auto dyn = MlpParams<double>::zeros(std::vector<Index>{4, 3});
      dyn.layers[0].weight.leftCols(3).setIdentity();
      Tape<double> t;
      CHECK(t.scalar(spr_loss(t, diff::bind_params(t, id), diff::bind_params(t, id), diff::bind_params(t, dyn), obs,
                              acts)) == 0.0);
    }
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
      const auto inst = testing::random_spr_instance(seed);
      const double oracle = testing::spr_oracle(inst.encoder, inst.target, inst.dynamics, inst.obs, inst.acts);
      worst = std::max(worst, std::abs(testing::spr_tape_value(inst) - oracle) / std::max(1.0, std::abs(oracle)));
    }
    CHECK(worst <= 1e-6);
    Tape<double> t;
    const auto id = testing::identity_mlp(3);
    CHECK_THROWS_AS(spr_loss(t, diff::bind_params(t, id), diff::bind_params(t, id), diff::bind_params(t, id), obs,
                             std::vector<MatD>{}),
                    ConfigError);
  }

  TEST_CASE("vae: closed-form KL and perfect reconstruction") {
    // encoder = identity on a 1-d input; mu head returns the input, log-std head returns 0
    const auto id1 = testing::identity_mlp(1);
    const auto zero_head = MlpParams<double>::zeros(std::vector<Index>{1, 1});
    const MatD noise = MatD::Zero(1, 1);
    {
      Tape<double> t;
      MatD x = MatD::Zero(1, 1);
      auto terms = vae_loss(t, diff::bind_params(t, id1), diff::bind_params(t, id1), diff::bind_params(t, zero_head),
                            diff::bind_params(t, id1), x, noise);
      CHECK(t.scalar(terms.kl) == 0.0);
      CHECK(t.scalar(terms.reconstruction) == 0.0);
    }
    {
      Tape<double> t;
      MatD x = MatD::Ones(1, 1);
      auto terms = vae_loss(t, diff::bind_params(t, id1), diff::bind_params(t, id1), diff::bind_params(t, zero_head),
                            diff::bind_params(t, id1), x, noise);
      CHECK(t.scalar(terms.kl) == doctest::Approx(0.5).epsilon(1e-15));
      CHECK(t.scalar(terms.reconstruction) == 0.0);  // decoder is exact on the eps = 0 sample
      CHECK(t.scalar(terms.total) == doctest::Approx(0.5).epsilon(1e-15));
    }
    // KL stays non-negative on random instances
    Rng rng(9);
    for (int i = 0; i < 50; ++i) {
      Tape<double> t;
      auto terms = vae_loss(t, diff::bind_params(t, testing::random_mlp({5, 4}, rng)),
                            diff::bind_params(t, testing::random_mlp({4, 3}, rng)),
                            diff::bind_params(t, testing::random_mlp({4, 3}, rng)),
                            diff::bind_params(t, testing::random_mlp({3, 5}, rng)), testing::random_matrix(5, 4, rng),
                            testing::random_matrix(3, 4, rng));
      CHECK(t.scalar(terms.kl) >= 0.0);
    }
  }

  TEST_CASE("gradient checks for the SRL losses") {
    for (auto kind : {testing::LossKind::kPvp, testing::LossKind::kSimSiam, testing::LossKind::kSpr,
                      testing::LossKind::kVae}) {
      for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        auto c = testing::make_grad_case(kind, seed);
        const auto r = diff::finite_diff_check(c.loss, c.point, 1e-6);
        INFO(testing::loss_name(kind) << " seed " << seed << " worst index " << r.worst_index);
        CHECK(r.finite);
        CHECK(r.max_relative_error <= 1e-4);
      }
    }
  }

  TEST_CASE("stop-gradient contracts") {
    for (auto kind : {testing::LossKind::kPvp, testing::LossKind::kSimSiam, testing::LossKind::kSpr}) {
      const auto r = testing::sg_contract(kind, 11);
      INFO(testing::loss_name(kind));
      CHECK(r.blocked_grad_max == 0.0);
      CHECK(r.surrogate_rel_error <= 1e-5);
      // differentiating through the blocked branch would give a different gradient
      CHECK(r.unblocked_rel_error > 1e-3);
    }
  }

  TEST_CASE("EMA target after frozen updates matches the closed form") {
    Rng rng(12);
    const auto online = testing::random_mlp({5, 6, 3}, rng);
    const auto start = testing::random_mlp({5, 6, 3}, rng);
    const auto on = online.tensors();
    auto shadow = diff::EmaShadow<double>::copy_of(start.tensors(), 0.99);
    for (int n = 0; n < 1000; ++n) diff::ema_update<double>(shadow, on);
    const double decay = std::pow(0.99, 1000);
    double worst = 0.0;
    const auto st = start.tensors();
    for (std::size_t i = 0; i < on.size(); ++i) {
      const MatD expect = *on[i] + decay * (*st[i] - *on[i]);
      worst = std::max(worst, (shadow.shadow[i] - expect).cwiseAbs().maxCoeff());
    }
    CHECK(worst <= 1e-10);
  }

  TEST_CASE("srl_loss dispatch") {
    Rng rng(13);
    SrlConfig cfg;
    const Index in = 6, latent = 4, act = 2;
    const std::vector<Index> mask{4, 5};
    const auto enc = testing::random_mlp({in, 8, latent}, rng);
    SrlBatch<double> batch;
    batch.states = testing::random_matrix(in, 5, rng);
    batch.policy_inputs = zero_masking(batch.states, std::span<const Index>(mask));
    for (int k = 0; k <= 5; ++k) batch.obs_seq.push_back(testing::random_matrix(in, 3, rng));
    for (int k = 0; k < 5; ++k) batch.act_seq.push_back(testing::random_matrix(act, 3, rng));

    for (Method m : {Method::kPvp, Method::kSimSiam, Method::kSpr, Method::kVae}) {
      cfg.method = m;
      auto params = SrlParams<double>::create(cfg, latent, in, act, rng);
      Tape<double> t;
      auto e = diff::bind_params(t, enc);
      auto tgt = diff::bind_params(t, enc, false);
      auto v = bind_srl(t, params);
      Var l = srl_loss(t, cfg, e, v, batch, std::span<const Index>(mask), rng, &tgt);
      CHECK(std::isfinite(t.scalar(l)));
      // lambda scaling is linear
      CHECK(t.scalar(t.scale(l, 0.5)) == doctest::Approx(0.5 * t.scalar(l)).epsilon(1e-15));
    }
    {
      cfg.method = Method::kPvp;
      auto params = SrlParams<double>::create(cfg, latent, in, act, rng);
      Tape<double> t;
      const double direct =
          t.scalar(pvp_loss(t, diff::bind_params(t, enc), diff::bind_params(t, params.predictor), batch.states,
                            std::span<const Index>(mask)));
      const double via = t.scalar(srl_loss(t, cfg, diff::bind_params(t, enc), bind_srl(t, params), batch,
                                           std::span<const Index>(mask), rng));
      CHECK(direct == via);
    }

    cfg.method = Method::kNone;
    {
      Tape<double> t;
      SrlParams<double> none;
      CHECK_THROWS_AS(srl_loss(t, cfg, diff::bind_params(t, enc), bind_srl(t, none), batch,
                               std::span<const Index>(mask), rng),
                      UsageError);
    }
    cfg.method = Method::kSpr;
    cfg.target = Target::kValueEncoder;
    {
      Tape<double> t;
      auto params = SrlParams<double>::create(cfg, latent, in, act, rng);
      auto e = diff::bind_params(t, enc);
      try {
        srl_loss(t, cfg, e, bind_srl(t, params), batch, std::span<const Index>(mask), rng, &e);
        FAIL("expected a configuration error");
      } catch (const ConfigError& err) {
        CHECK(std::string(err.what()).find("SPR requires state-action pairs") != std::string::npos);
      }
    }
  }

  TEST_CASE("srl parameter shapes and names") {
    SrlConfig cfg;
    Rng rng(14);
    cfg.method = Method::kPvp;
    auto p = SrlParams<float>::create(cfg, 128, 59, 3, rng);
    CHECK(p.predictor.input_dim() == 128);
    CHECK(p.predictor.layers[0].weight.rows() == 64);
    CHECK(p.predictor.output_dim() == 128);
    CHECK(p.named_tensors()[0].first == "srl/predictor/0/weight");
    cfg.method = Method::kSpr;
    p = SrlParams<float>::create(cfg, 128, 59, 3, rng);
    CHECK(p.dynamics.input_dim() == 131);
    CHECK(p.dynamics.output_dim() == 128);
    cfg.method = Method::kVae;
    p = SrlParams<float>::create(cfg, 128, 59, 3, rng);
    CHECK(p.vae_mu.output_dim() == 16);
    CHECK(p.vae_decoder.input_dim() == 16);
    CHECK(p.vae_decoder.output_dim() == 59);
  }

  TEST_CASE("non-collapse probe after 200 steps") {
    for (Method m : {Method::kPvp, Method::kSimSiam}) {
      const auto r = testing::collapse_probe(m, 200, 15);
      INFO(to_string(m) << " mean std " << r.mean_std << " min std " << r.min_std);
      CHECK(r.last_loss < r.first_loss);
      CHECK(r.mean_std > 1e-3);
      CHECK(r.min_std > 1e-3);
    }
  }
}
