#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "gaterace/track_io.hpp"
#include "gaterace/trainer.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace gaterace;

namespace {

struct Streams {
  std::vector<double> rewards, values, bootstrap, last_values;
  std::vector<std::uint8_t> dones;
};

Streams random_streams(int envs, int steps, std::mt19937_64& rng,
                       double done_prob = 0.1) {
  std::normal_distribution<double> n;
  std::bernoulli_distribution done(done_prob), timeout(0.5);
  Streams s;
  const int N = envs * steps;
  s.rewards.resize(N);
  s.values.resize(N);
  s.bootstrap.assign(N, 0.0);
  s.dones.assign(N, 0);
  for (int i = 0; i < N; ++i) {
    s.rewards[i] = n(rng);
    s.values[i] = n(rng);
    if (done(rng)) {
      s.dones[i] = 1;
      if (timeout(rng)) s.bootstrap[i] = n(rng);
    }
  }
  for (int e = 0; e < envs; ++e) s.last_values.push_back(n(rng));
  return s;
}

TrainerSetup tiny_setup(std::uint64_t seed) {
  TrainerSetup s;
  s.track = load_track_by_name("mini");
  s.policy = oracle::small_policy(true, false);
  s.policy.thrust_max = s.track.quad.max_thrust_accel();
  s.policy.hover_thrust = -s.track.quad.g.z();
  s.ppo.n_envs = 4;
  s.ppo.rollout_length = 64;
  s.ppo.n_scenes = 2;
  s.ppo.seq_len = 16;
  s.ppo.epochs = 2;
  s.ppo.minibatch = 128;
  s.ppo.total_steps = 4 * 64 * 3;
  s.env.use_depth = false;
  s.seed = seed;
  return s;
}

Minibatch single_column(const Policy& p, double ratio, double adv, double ret) {
  Minibatch mb;
  mb.steps = 1;
  mb.batch = 1;
  mb.state = nn::Matrix::Zero(kStateDim, 1);
  mb.depth = nn::Matrix(0, 1);
  mb.h0 = nn::Matrix::Zero(p.hidden_dim(), 1);
  mb.keep = nn::Vector::Ones(1);
  mb.u = nn::Matrix::Constant(kActionDim, 1, 0.3);
  const double logp = gaussian_log_prob(mb.u.col(0), Eigen::Vector4d::Zero(), p.log_std());
  mb.old_log_prob = nn::Vector::Constant(1, logp - std::log(ratio));
  mb.advantages = nn::Vector::Constant(1, adv);
  mb.returns = nn::Vector::Constant(1, ret);
  return mb;
}

Policy zero_policy() {
  Policy p(oracle::small_policy(true, false));
  std::fill(p.params().begin(), p.params().end(), 0.0);
  for (int i = 0; i < 4; ++i) p.params()[p.log_std_offset() + i] = -0.5;
  return p;
}

}  // namespace

TEST(Gae, LambdaZeroIsOneStepTd) {
  std::mt19937_64 rng(1);
  const Streams s = random_streams(3, 20, rng);
  const GaeResult g = compute_gae(s.rewards, s.values, s.dones, s.bootstrap,
                                  s.last_values, 3, 20, 0.99, 0.0);
  for (int t = 0; t < 20; ++t) {
    for (int e = 0; e < 3; ++e) {
      const int i = t * 3 + e;
      const double next = s.dones[i] ? s.bootstrap[i]
                          : t + 1 < 20 ? s.values[i + 3]
                                       : s.last_values[e];
      EXPECT_NEAR(g.advantages[i], s.rewards[i] + 0.99 * next - s.values[i], 1e-12);
      EXPECT_NEAR(g.returns[i], g.advantages[i] + s.values[i], 1e-12);
    }
  }
}

TEST(Gae, LambdaOneWithoutDonesIsMonteCarlo) {
  std::mt19937_64 rng(2);
  const Streams s = random_streams(2, 30, rng, 0.0);
  const double gamma = 0.97;
  const GaeResult g = compute_gae(s.rewards, s.values, s.dones, s.bootstrap,
                                  s.last_values, 2, 30, gamma, 1.0);
  for (int e = 0; e < 2; ++e) {
    for (int t = 0; t < 30; ++t) {
      double ret = 0.0, w = 1.0;
      for (int k = t; k < 30; ++k) {
        ret += w * s.rewards[k * 2 + e];
        w *= gamma;
      }
      ret += w * s.last_values[e];
      EXPECT_NEAR(g.returns[t * 2 + e], ret, 1e-9);
    }
  }
}

TEST(Gae, MatchesLambdaReturnOracle) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Streams s = random_streams(4, 40, rng);
    const GaeResult g = compute_gae(s.rewards, s.values, s.dones, s.bootstrap,
                                    s.last_values, 4, 40, 0.99, 0.95);
    const auto want = oracle::lambda_return_advantages(
        s.rewards, s.values, s.dones, s.bootstrap, s.last_values, 4, 40, 0.99, 0.95);
    for (std::size_t i = 0; i < want.size(); ++i) {
      EXPECT_NEAR(g.advantages[i], want[i], 1e-9);
    }
  }
}

TEST(Gae, NormalizationGivesZeroMeanUnitStd) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(3.0, 5.0);
  std::vector<double> adv(1000);
  for (double& a : adv) a = n(rng);
  normalize_advantages(adv);
  const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / adv.size();
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  EXPECT_NEAR(mean, 0.0, 1e-12);
  EXPECT_NEAR(std::sqrt(var / adv.size()), 1.0, 1e-3);
}

TEST(Loss, RatioOneGivesMinusMeanAdvantage) {
  Policy p(oracle::small_policy(true, true));
  p.initialize(5);
  std::mt19937_64 rng(6);
  Minibatch mb = oracle::random_minibatch(p, 4, 3, rng);
  const PolicyOutput out = p.forward(mb.state, mb.depth, mb.h0, mb.keep, 4);
  for (int j = 0; j < 12; ++j) {
    mb.old_log_prob[j] = gaussian_log_prob(mb.u.col(j), out.mean.col(j), p.log_std());
  }
  const LossTerms l = ppo_loss(p, mb, PPOConfig{}, nullptr);
  EXPECT_NEAR(l.policy, -mb.advantages.mean(), 1e-12);
  EXPECT_NEAR(l.approx_kl, 0.0, 1e-12);
  EXPECT_EQ(l.clip_fraction, 0.0);
}

TEST(Loss, SingleTransitionByHand) {
  const Policy p = zero_policy();
  const PPOConfig cfg;
  const double entropy = 4.0 * (-0.5 + 0.5 * (1.0 + std::log(2.0 * M_PI)));

  const LossTerms inside = ppo_loss(p, single_column(p, 1.1, 2.0, 0.5), cfg, nullptr);
  EXPECT_NEAR(inside.policy, -2.2, 1e-12);
  EXPECT_NEAR(inside.value, 0.25, 1e-12);
  EXPECT_NEAR(inside.entropy, entropy, 1e-12);
  EXPECT_NEAR(inside.total, -2.2 + 0.5 * 0.25 - 0.01 * entropy, 1e-12);
  EXPECT_NEAR(inside.approx_kl, 0.1 - std::log(1.1), 1e-12);

  const LossTerms high = ppo_loss(p, single_column(p, 1.5, 2.0, 0.0), cfg, nullptr);
  EXPECT_NEAR(high.policy, -2.4, 1e-12);
  EXPECT_EQ(high.clip_fraction, 1.0);

  const LossTerms low = ppo_loss(p, single_column(p, 0.5, -1.0, 0.0), cfg, nullptr);
  EXPECT_NEAR(low.policy, 0.8, 1e-12);
}

TEST(Loss, ClippedObjectiveIsBounded) {
  Policy p(oracle::small_policy(false, false));
  p.initialize(7);
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    Minibatch mb = oracle::random_minibatch(p, 2, 8, rng);
    for (int j = 0; j < 16; ++j) mb.old_log_prob[j] += n(rng);
    const LossTerms l = ppo_loss(p, mb, PPOConfig{}, nullptr);
    double bound = 0.0;
    for (int j = 0; j < 16; ++j) {
      const double a = mb.advantages[j];
      bound += (a > 0.0 ? 1.2 : 0.8) * a / 16.0;
    }
    EXPECT_LE(-l.policy, bound + 1e-12);
  }
}

TEST(Loss, ClippedBranchHasNoPolicyGradient) {
  const Policy p = zero_policy();
  PPOConfig cfg;
  cfg.entropy_coef = 0.0;
  nn::ParamVector g;
  ppo_loss(p, single_column(p, 1.5, 2.0, 0.0), cfg, &g);
  for (double v : g) EXPECT_EQ(v, 0.0);
}

TEST(Schedule, LinearLearningRate) {
  EXPECT_DOUBLE_EQ(lr_schedule(0.0), 1e-4);
  EXPECT_DOUBLE_EQ(lr_schedule(1.0), 1e-5);
  EXPECT_NEAR(lr_schedule(0.5), 5.5e-5, 1e-18);
  EXPECT_THROW(lr_schedule(1.5), std::invalid_argument);
}

TEST(Optim, ClipGradNormAndAdamStep) {
  nn::ParamVector g{3.0, 4.0};
  EXPECT_DOUBLE_EQ(clip_grad_norm(g, 0.5), 5.0);
  EXPECT_NEAR(std::hypot(g[0], g[1]), 0.5, 1e-6);
  nn::ParamVector small{0.1, 0.0};
  clip_grad_norm(small, 0.5);
  EXPECT_EQ(small[0], 0.1);

  Adam adam;
  nn::ParamVector params{1.0, -1.0};
  adam.step(params, {0.5, -2.0}, 1e-3, PPOConfig{});
  EXPECT_NEAR(params[0], 1.0 - 1e-3, 1e-9);
  EXPECT_NEAR(params[1], -1.0 + 1e-3, 1e-9);
  EXPECT_EQ(adam.t, 1);
}

TEST(Config, BufferSizeAndValidation) {
  const PPOConfig c;
  EXPECT_EQ(c.batch(), 51200);
  EXPECT_EQ(c.minibatch, 5120);
  EXPECT_NO_THROW(c.validate());
  PPOConfig bad = c;
  bad.seq_len = 100;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  const PPOConfig back = ppo_config_from_json(ppo_config_to_json(c));
  EXPECT_EQ(back.batch(), c.batch());
  EXPECT_EQ(back.lr_start, c.lr_start);
}

TEST(Buffer, GatherChunksKeepsSequenceLayout) {
  RolloutBuffer b;
  b.allocate(3, 8, 4, 2, 0);
  for (int t = 0; t < 8; ++t) {
    for (int e = 0; e < 3; ++e) {
      const std::size_t i = b.index(t, e);
      b.states(0, i) = 100 * e + t;
      b.keep[i] = 1.0;
      b.u(0, i) = b.states(0, i);
    }
  }
  b.advantages.assign(b.size(), 0.0);
  b.returns.assign(b.size(), 0.0);
  for (int c = 0; c < b.chunk_h0.cols(); ++c) b.chunk_h0(0, c) = c;
  // chunk id = e * chunks_per_env + k
  const Minibatch mb = gather_chunks(b, {1, 4});
  EXPECT_EQ(mb.steps, 4);
  EXPECT_EQ(mb.batch, 2);
  for (int t = 0; t < 4; ++t) {
    EXPECT_EQ(mb.state(0, t * 2 + 0), 0 * 100 + 4 + t);
    EXPECT_EQ(mb.state(0, t * 2 + 1), 2 * 100 + 0 + t);
  }
  EXPECT_EQ(mb.h0(0, 0), 1 * 3 + 0);
  EXPECT_EQ(mb.h0(0, 1), 0 * 3 + 2);
}

TEST(Trainer, CollectIsDeterministicAndConsistent) {
  Trainer a(tiny_setup(21)), b(tiny_setup(21)), c(tiny_setup(22));
  RolloutBuffer ba, bb, bc;
  const RolloutStats sa = a.collect(ba);
  b.collect(bb);
  c.collect(bc);
  EXPECT_EQ(ba.states, bb.states);
  EXPECT_EQ(ba.u, bb.u);
  EXPECT_EQ(ba.rewards, bb.rewards);
  EXPECT_EQ(ba.dones, bb.dones);
  EXPECT_NE(ba.u, bc.u);
  EXPECT_EQ(ba.size(), 256u);
  EXPECT_EQ(sa.distinct_scenes, 2u);
  EXPECT_EQ(sa.group_sizes, (std::vector<int>{2, 2}));
  for (std::size_t i = 0; i < ba.size(); ++i) {
    if (ba.index(0, 0) <= i && i < ba.index(1, 0)) EXPECT_EQ(ba.keep[i], 0.0);
    if (i >= 4 && ba.dones[i - 4]) EXPECT_EQ(ba.keep[i], 0.0);
    if (!ba.dones[i]) EXPECT_EQ(ba.bootstrap[i], 0.0);
  }
}

TEST(Trainer, IterationsReplayExactly) {
  Trainer a(tiny_setup(31)), b(tiny_setup(31));
  for (int k = 0; k < 2; ++k) {
    const nlohmann::json ma = a.iterate(), mb = b.iterate();
    EXPECT_EQ(ma.dump(), mb.dump());
    EXPECT_EQ(ma.at("lr").get<double>(), lr_schedule(k / 3.0));
  }
  EXPECT_EQ(a.policy().params(), b.policy().params());
  EXPECT_EQ(a.steps(), 512);
}

TEST(Trainer, SnapshotRestoreContinuesIdentically) {
  Trainer a(tiny_setup(41));
  a.iterate();
  const TrainerSnapshot snap = a.snapshot();
  const nlohmann::json next = a.iterate();
  Trainer b(tiny_setup(41));
  b.restore(snap);
  EXPECT_EQ(b.iterate().dump(), next.dump());
  EXPECT_EQ(a.policy().params(), b.policy().params());
}
