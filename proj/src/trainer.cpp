#include "gaterace/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <thread>

#include "gaterace/rng.hpp"

namespace gaterace {

using nn::Matrix;
using nn::Vector;

void PPOConfig::validate() const {
  if (n_envs <= 0 || rollout_length <= 0 || epochs <= 0 || seq_len <= 0) {
    throw std::invalid_argument("PPOConfig: sizes must be positive");
  }
  if (rollout_length % seq_len != 0) {
    throw std::invalid_argument("PPOConfig: seq_len must divide rollout_length");
  }
  if (minibatch <= 0 || batch() % minibatch != 0 || minibatch % seq_len != 0) {
    throw std::invalid_argument(
        "PPOConfig: minibatch must divide the batch and be a multiple of "
        "seq_len");
  }
  if (n_scenes < 1 || n_scenes > n_envs) {
    throw std::invalid_argument("PPOConfig: need 1 <= n_scenes <= n_envs");
  }
  if (!(gamma > 0.0 && gamma <= 1.0) || !(gae_lambda >= 0.0 && gae_lambda <= 1.0) ||
      !(clip > 0.0) || !(max_grad_norm > 0.0)) {
    throw std::invalid_argument("PPOConfig: coefficient out of range");
  }
}

nlohmann::json ppo_config_to_json(const PPOConfig& c) {
  return {{"gamma", c.gamma},
          {"gae_lambda", c.gae_lambda},
          {"clip", c.clip},
          {"lr_start", c.lr_start},
          {"lr_end", c.lr_end},
          {"n_envs", c.n_envs},
          {"rollout_length", c.rollout_length},
          {"n_scenes", c.n_scenes},
          {"epochs", c.epochs},
          {"minibatch", c.minibatch},
          {"seq_len", c.seq_len},
          {"value_coef", c.value_coef},
          {"entropy_coef", c.entropy_coef},
          {"max_grad_norm", c.max_grad_norm},
          {"total_steps", c.total_steps},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps},
          {"threads", c.threads}};
}

PPOConfig ppo_config_from_json(const nlohmann::json& j) {
  PPOConfig c;
  c.gamma = j.value("gamma", c.gamma);
  c.gae_lambda = j.value("gae_lambda", c.gae_lambda);
  c.clip = j.value("clip", c.clip);
  c.lr_start = j.value("lr_start", c.lr_start);
  c.lr_end = j.value("lr_end", c.lr_end);
  c.n_envs = j.value("n_envs", c.n_envs);
  c.rollout_length = j.value("rollout_length", c.rollout_length);
  c.n_scenes = j.value("n_scenes", c.n_scenes);
  c.epochs = j.value("epochs", c.epochs);
  c.minibatch = j.value("minibatch", c.minibatch);
  c.seq_len = j.value("seq_len", c.seq_len);
  c.value_coef = j.value("value_coef", c.value_coef);
  c.entropy_coef = j.value("entropy_coef", c.entropy_coef);
  c.max_grad_norm = j.value("max_grad_norm", c.max_grad_norm);
  c.total_steps = j.value("total_steps", c.total_steps);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.threads = j.value("threads", c.threads);
  return c;
}

double lr_schedule(double progress, double lr_start, double lr_end) {
  if (!(progress >= 0.0 && progress <= 1.0)) {
    throw std::invalid_argument("lr_schedule: progress must lie in [0, 1]");
  }
  return lr_start + (lr_end - lr_start) * progress;
}

void RolloutBuffer::allocate(int envs, int length, int seq, int hidden,
                             int depth_size) {
  n_envs = envs;
  steps = length;
  seq_len = seq;
  hidden_dim = hidden;
  depth_dim = depth_size;
  const Eigen::Index n = static_cast<Eigen::Index>(envs) * length;
  states.resize(kStateDim, n);
  depth.resize(depth_size, n);
  u.resize(kActionDim, n);
  log_prob.assign(n, 0.0);
  values.assign(n, 0.0);
  rewards.assign(n, 0.0);
  dones.assign(n, 0);
  bootstrap.assign(n, 0.0);
  keep.assign(n, 1.0);
  last_values.assign(envs, 0.0);
  chunk_h0.setZero(hidden, static_cast<Eigen::Index>(length / seq) * envs);
  advantages.assign(n, 0.0);
  returns.assign(n, 0.0);
}

GaeResult compute_gae(const std::vector<double>& rewards,
                      const std::vector<double>& values,
                      const std::vector<std::uint8_t>& dones,
                      const std::vector<double>& bootstrap,
                      const std::vector<double>& last_values, int n_envs,
                      int steps, double gamma, double lambda) {
  const std::size_t n = static_cast<std::size_t>(n_envs) * steps;
  if (rewards.size() != n || values.size() != n || dones.size() != n ||
      bootstrap.size() != n || last_values.size() != static_cast<std::size_t>(n_envs)) {
    throw std::invalid_argument("compute_gae: buffer sizes disagree");
  }
  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  for (int e = 0; e < n_envs; ++e) {
    double next_adv = 0.0;
    for (int t = steps - 1; t >= 0; --t) {
      const std::size_t i = static_cast<std::size_t>(t) * n_envs + e;
      double next_value;
      double carry;
      if (dones[i]) {
        next_value = bootstrap[i];
        carry = 0.0;
      } else {
        next_value = t + 1 < steps ? values[i + n_envs] : last_values[e];
        carry = 1.0;
      }
      const double delta = rewards[i] + gamma * next_value - values[i];
      next_adv = delta + gamma * lambda * carry * next_adv;
      out.advantages[i] = next_adv;
      out.returns[i] = next_adv + values[i];
    }
  }
  return out;
}

void normalize_advantages(std::vector<double>& adv) {
  if (adv.empty()) return;
  const double n = static_cast<double>(adv.size());
  const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / n;
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var / n);
  const double denom = sd > 1e-12 ? sd : 1.0;
  for (double& a : adv) a = (a - mean) / denom;
}

void compute_gae(RolloutBuffer& b, double gamma, double lambda) {
  GaeResult r = compute_gae(b.rewards, b.values, b.dones, b.bootstrap,
                            b.last_values, b.n_envs, b.steps, gamma, lambda);
  normalize_advantages(r.advantages);
  b.advantages = std::move(r.advantages);
  b.returns = std::move(r.returns);
}

Minibatch gather_chunks(const RolloutBuffer& b, const std::vector<int>& ids) {
  Minibatch mb;
  mb.steps = b.seq_len;
  mb.batch = static_cast<int>(ids.size());
  const Eigen::Index n = static_cast<Eigen::Index>(mb.steps) * mb.batch;
  mb.state.resize(kStateDim, n);
  mb.depth.resize(b.depth_dim, n);
  mb.h0.resize(b.hidden_dim, mb.batch);
  mb.keep.resize(n);
  mb.u.resize(kActionDim, n);
  mb.old_log_prob.resize(n);
  mb.advantages.resize(n);
  mb.returns.resize(n);
  const int per_env = b.chunks_per_env();
  for (int c = 0; c < mb.batch; ++c) {
    const int id = ids[c];
    const int e = id / per_env;
    const int k = id % per_env;
    mb.h0.col(c) = b.chunk_h0.col(static_cast<Eigen::Index>(k) * b.n_envs + e);
    for (int t = 0; t < mb.steps; ++t) {
      const std::size_t src = b.index(k * b.seq_len + t, e);
      const Eigen::Index dst = static_cast<Eigen::Index>(t) * mb.batch + c;
      mb.state.col(dst) = b.states.col(src);
      if (b.depth_dim > 0) mb.depth.col(dst) = b.depth.col(src).cast<double>();
      mb.keep[dst] = b.keep[src];
      mb.u.col(dst) = b.u.col(src);
      mb.old_log_prob[dst] = b.log_prob[src];
      mb.advantages[dst] = b.advantages[src];
      mb.returns[dst] = b.returns[src];
    }
  }
  return mb;
}

LossTerms ppo_loss(const Policy& policy, const Minibatch& mb,
                   const PPOConfig& cfg, nn::ParamVector* grads) {
  Policy::Cache cache;
  const PolicyOutput out = policy.forward(mb.state, mb.depth, mb.h0, mb.keep,
                                          mb.steps, grads ? &cache : nullptr);
  const Eigen::Index n = mb.state.cols();
  const Eigen::Vector4d log_std = policy.log_std();
  const Eigen::Array4d inv_var = (-2.0 * log_std.array()).exp();

  LossTerms loss;
  Matrix dmean(kActionDim, n);
  Vector dvalue(n);
  Eigen::Array4d dlog_std = Eigen::Array4d::Zero();
  const double inv_n = 1.0 / static_cast<double>(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const Eigen::Vector4d mean = out.mean.col(j);
    const Eigen::Vector4d u = mb.u.col(j);
    const double logp = gaussian_log_prob(u, mean, log_std);
    const double log_ratio = logp - mb.old_log_prob[j];
    const double ratio = std::exp(log_ratio);
    const double adv = mb.advantages[j];
    const double surr1 = ratio * adv;
    const double surr2 = std::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * adv;
    loss.policy -= std::min(surr1, surr2) * inv_n;
    loss.approx_kl += ((ratio - 1.0) - log_ratio) * inv_n;
    if (std::abs(ratio - 1.0) > cfg.clip) loss.clip_fraction += inv_n;

    const double verr = out.value[j] - mb.returns[j];
    loss.value += verr * verr * inv_n;

    // d(-min(surr1, surr2)) / d logp; zero where the clipped branch is active.
    const double dlogp = surr1 <= surr2 ? -surr1 * inv_n : 0.0;
    const Eigen::Array4d diff = (u - mean).array();
    dmean.col(j) = (dlogp * diff * inv_var).matrix();
    dlog_std += dlogp * (diff.square() * inv_var - 1.0);
    dvalue[j] = cfg.value_coef * 2.0 * verr * inv_n;
  }
  loss.entropy = gaussian_entropy(log_std);
  loss.total = loss.policy + cfg.value_coef * loss.value -
               cfg.entropy_coef * loss.entropy;
  if (!std::isfinite(loss.total)) {
    std::ostringstream msg;
    msg << "PPO loss is non-finite: policy=" << loss.policy
        << " value=" << loss.value << " entropy=" << loss.entropy
        << " log_std=[" << log_std.transpose() << "]";
    throw NonFiniteLoss(msg.str());
  }
  if (grads) {
    grads->assign(policy.num_params(), 0.0);
    policy.backward(cache, dmean, dvalue, grads->data());
    for (int i = 0; i < kActionDim; ++i) {
      (*grads)[policy.log_std_offset() + i] += dlog_std[i] - cfg.entropy_coef;
    }
  }
  return loss;
}

void Adam::reset(std::size_t n) {
  m.assign(n, 0.0);
  v.assign(n, 0.0);
  t = 0;
}

void Adam::step(nn::ParamVector& params, const nn::ParamVector& grads,
                double lr, const PPOConfig& c) {
  if (m.size() != params.size()) reset(params.size());
  ++t;
  const double bc1 = 1.0 - std::pow(c.adam_beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(c.adam_beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = c.adam_beta1 * m[i] + (1.0 - c.adam_beta1) * grads[i];
    v[i] = c.adam_beta2 * v[i] + (1.0 - c.adam_beta2) * grads[i] * grads[i];
    const double mh = m[i] / bc1;
    const double vh = v[i] / bc2;
    params[i] -= lr * mh / (std::sqrt(vh) + c.adam_eps);
  }
}

double clip_grad_norm(nn::ParamVector& grads, double max_norm) {
  double sq = 0.0;
  for (double g : grads) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / (norm + 1e-6);
    for (double& g : grads) g *= s;
  }
  return norm;
}

UpdateMetrics update(Policy& policy, Adam& adam, const RolloutBuffer& buffer,
                     const PPOConfig& cfg, double lr, std::mt19937_64& rng) {
  const int n_chunks = buffer.n_envs * buffer.chunks_per_env();
  const int per_mb = cfg.minibatch / buffer.seq_len;
  if (per_mb <= 0 || n_chunks % per_mb != 0) {
    throw std::invalid_argument("update: minibatch does not tile the buffer");
  }
  std::vector<int> order(n_chunks);
  nn::ParamVector grads;
  UpdateMetrics m;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (int start = 0; start < n_chunks; start += per_mb) {
      const std::vector<int> ids(order.begin() + start,
                                 order.begin() + start + per_mb);
      const Minibatch mb = gather_chunks(buffer, ids);
      const LossTerms l = ppo_loss(policy, mb, cfg, &grads);
      m.grad_norm += clip_grad_norm(grads, cfg.max_grad_norm);
      adam.step(policy.params(), grads, lr, cfg);
      m.loss.total += l.total;
      m.loss.policy += l.policy;
      m.loss.value += l.value;
      m.loss.entropy += l.entropy;
      m.loss.approx_kl += l.approx_kl;
      m.loss.clip_fraction += l.clip_fraction;
      ++m.minibatches;
    }
  }
  const double k = 1.0 / std::max(1, m.minibatches);
  m.loss.total *= k;
  m.loss.policy *= k;
  m.loss.value *= k;
  m.loss.entropy *= k;
  m.loss.approx_kl *= k;
  m.loss.clip_fraction *= k;
  m.grad_norm *= k;
  return m;
}

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  const int workers = std::min(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (int i = w; i < n; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

Trainer::Trainer(TrainerSetup setup)
    : setup_(std::move(setup)),
      policy_(setup_.policy),
      curriculum_(setup_.curriculum),
      rng_(derive_seed(setup_.seed, 0)) {
  setup_.ppo.validate();
  setup_.track.validate();
  policy_.initialize(derive_seed(setup_.seed, 1));
  adam_.reset(policy_.num_params());
  EnvConfig env_cfg = setup_.env;
  env_cfg.use_depth = setup_.policy.use_depth;
  for (int e = 0; e < setup_.ppo.n_envs; ++e) {
    envs_.emplace_back(env_cfg, 0);
    action_rngs_.emplace_back(0);
  }
}

double Trainer::current_lr() const {
  const double progress =
      std::clamp(static_cast<double>(steps_) /
                     static_cast<double>(std::max<std::int64_t>(1, setup_.ppo.total_steps)),
                 0.0, 1.0);
  return lr_schedule(progress, setup_.ppo.lr_start, setup_.ppo.lr_end);
}

RolloutStats Trainer::collect(RolloutBuffer& buf) {
  const PPOConfig& cfg = setup_.ppo;
  const int E = cfg.n_envs;
  const int T = cfg.rollout_length;
  const int H = policy_.hidden_dim();
  const int D = policy_.depth_dim();
  buf.allocate(E, T, cfg.seq_len, H, D);

  const CurriculumStage stage = curriculum_.stage();
  const SceneAssignment scenes =
      assign_scenes(E, cfg.n_scenes, stage, setup_.track, rng_);
  const std::uint64_t base = rng_();

  RolloutStats stats;
  stats.distinct_scenes = scenes.distinct_hashes();
  stats.group_sizes = scenes.group_sizes();
  for (const ScenePtr& s : scenes.scenes) stats.scene_hashes.push_back(s->hash());

  std::vector<Observation> obs(E);
  for (int e = 0; e < E; ++e) {
    envs_[e].set_scene(scenes.scene_for(e));
    envs_[e].set_stage(stage);
    envs_[e].reseed(derive_seed(base, 2 * static_cast<std::uint64_t>(e)));
    action_rngs_[e].seed(derive_seed(base, 2 * static_cast<std::uint64_t>(e) + 1));
    obs[e] = envs_[e].reset();
  }
  Matrix hidden = Matrix::Zero(H, E);
  Vector keep = Vector::Zero(E);
  const SquashBounds bounds = squash_bounds(policy_.config());
  std::vector<const Observation*> ptrs(E);
  std::vector<ActionSample> samples(E);
  std::vector<StepResult> results(E);
  RewardBreakdown sum;

  for (int t = 0; t < T; ++t) {
    if (t % cfg.seq_len == 0) {
      buf.chunk_h0.middleCols(static_cast<Eigen::Index>(t / cfg.seq_len) * E, E) =
          hidden;
    }
    for (int e = 0; e < E; ++e) ptrs[e] = &obs[e];
    const Matrix states = pack_states(ptrs);
    const Matrix depth = pack_depth(ptrs, D);
    const PolicyOutput out = policy_.forward(states, depth, hidden, keep, 1);
    ActionDistribution dist;
    dist.log_std = policy_.log_std();
    for (int e = 0; e < E; ++e) {
      const std::size_t i = buf.index(t, e);
      dist.mean = out.mean.col(e);
      samples[e] = act(dist, action_rngs_[e], bounds);
      buf.states.col(i) = states.col(e);
      if (D > 0) buf.depth.col(i) = depth.col(e).cast<float>();
      buf.u.col(i) = samples[e].u;
      buf.log_prob[i] = gaussian_log_prob(samples[e].u, dist.mean, dist.log_std);
      buf.values[i] = out.value[e];
      buf.keep[i] = keep[e];
    }
    parallel_for(E, cfg.threads,
                 [&](int e) { results[e] = envs_[e].step(samples[e].action); });

    hidden = out.hidden;
    std::vector<int> timed_out;
    for (int e = 0; e < E; ++e) {
      const std::size_t i = buf.index(t, e);
      const StepResult& r = results[e];
      buf.rewards[i] = r.reward.total;
      sum.prog += r.reward.prog;
      sum.theta += r.reward.theta;
      sum.cmd += r.reward.cmd;
      sum.vd += r.reward.vd;
      sum.avoid += r.reward.avoid;
      sum.pass += r.reward.pass;
      sum.crash += r.reward.crash;
      sum.total += r.reward.total;
      obs[e] = r.obs;
      keep[e] = 1.0;
      if (r.done == DoneReason::kRunning) continue;
      buf.dones[i] = 1;
      keep[e] = 0.0;
      ++stats.episodes;
      const bool success = r.done == DoneReason::kLapComplete;
      if (success) ++stats.successes;
      if (r.done == DoneReason::kCrash || r.done == DoneReason::kDivergence) {
        ++stats.crashes;
      }
      if (r.done == DoneReason::kTimeout) {
        ++stats.timeouts;
        timed_out.push_back(e);
      }
      curriculum_.record_episode(success);
    }
    if (!timed_out.empty()) {
      std::vector<const Observation*> tp;
      Matrix th(H, static_cast<Eigen::Index>(timed_out.size()));
      for (std::size_t k = 0; k < timed_out.size(); ++k) {
        tp.push_back(&obs[timed_out[k]]);
        th.col(k) = hidden.col(timed_out[k]);
      }
      const PolicyOutput v = policy_.forward(
          pack_states(tp), pack_depth(tp, D), th,
          Vector::Ones(static_cast<Eigen::Index>(tp.size())), 1);
      for (std::size_t k = 0; k < timed_out.size(); ++k) {
        buf.bootstrap[buf.index(t, timed_out[k])] = v.value[k];
      }
    }
    for (int e = 0; e < E; ++e) {
      if (buf.dones[buf.index(t, e)]) obs[e] = envs_[e].reset();
    }
  }
  for (int e = 0; e < E; ++e) ptrs[e] = &obs[e];
  const PolicyOutput last =
      policy_.forward(pack_states(ptrs), pack_depth(ptrs, D), hidden, keep, 1);
  for (int e = 0; e < E; ++e) buf.last_values[e] = last.value[e];

  const double k = 1.0 / static_cast<double>(buf.size());
  RewardBreakdown& m = stats.reward_mean;
  m.prog = sum.prog * k;
  m.theta = sum.theta * k;
  m.cmd = sum.cmd * k;
  m.vd = sum.vd * k;
  m.avoid = sum.avoid * k;
  m.pass = sum.pass * k;
  m.crash = sum.crash * k;
  m.total = sum.total * k;
  return stats;
}

nlohmann::json Trainer::iterate() {
  const CurriculumStage stage = curriculum_.stage();
  const double lr = current_lr();
  const RolloutStats stats = collect(buffer_);
  compute_gae(buffer_, setup_.ppo.gamma, setup_.ppo.gae_lambda);
  const UpdateMetrics um = update(policy_, adam_, buffer_, setup_.ppo, lr, rng_);
  steps_ += buffer_.size();
  ++rollouts_;
  const bool advanced = curriculum_.maybe_advance(steps_);

  const RewardBreakdown& r = stats.reward_mean;
  return {
      {"rollout", rollouts_},
      {"step", steps_},
      {"level", stage.level},
      {"v_d", stage.v_d},
      {"density", stage.density},
      {"lr", lr},
      {"episodes", stats.episodes},
      {"successes", stats.successes},
      {"crashes", stats.crashes},
      {"timeouts", stats.timeouts},
      {"success_rate", stats.episodes > 0 ? static_cast<double>(stats.successes) /
                                                stats.episodes
                                          : 0.0},
      {"window_success_rate", curriculum_.window_success_rate()},
      {"reward",
       {{"prog", r.prog},
        {"theta", r.theta},
        {"cmd", r.cmd},
        {"vd", r.vd},
        {"avoid", r.avoid},
        {"pass", r.pass},
        {"crash", r.crash},
        {"total", r.total}}},
      {"loss",
       {{"total", um.loss.total},
        {"policy", um.loss.policy},
        {"value", um.loss.value},
        {"entropy", um.loss.entropy}}},
      {"approx_kl", um.loss.approx_kl},
      {"clip_fraction", um.loss.clip_fraction},
      {"grad_norm", um.grad_norm},
      {"distinct_scenes", stats.distinct_scenes},
      {"group_sizes", stats.group_sizes},
      {"advanced", advanced},
      {"next_level", curriculum_.stage().level},
  };
}

TrainerSnapshot Trainer::snapshot() const {
  TrainerSnapshot s;
  s.params = policy_.params();
  s.adam = adam_;
  s.steps = steps_;
  s.rollouts = rollouts_;
  s.curriculum = curriculum_.to_json();
  std::ostringstream os;
  os << rng_;
  s.rng_state = os.str();
  return s;
}

void Trainer::restore(const TrainerSnapshot& s) {
  if (s.params.size() != policy_.num_params()) {
    throw std::invalid_argument("Trainer::restore: parameter count mismatch");
  }
  policy_.params() = s.params;
  adam_ = s.adam;
  if (adam_.m.size() != s.params.size()) adam_.reset(s.params.size());
  steps_ = s.steps;
  rollouts_ = s.rollouts;
  curriculum_.load_json(s.curriculum);
  std::istringstream is(s.rng_state);
  is >> rng_;
}

}  // namespace gaterace
