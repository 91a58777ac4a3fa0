#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gaterace/curriculum.hpp"
#include "gaterace/env.hpp"
#include "gaterace/policy.hpp"

namespace gaterace {

struct PPOConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip = 0.2;
  double lr_start = 1e-4;
  double lr_end = 1e-5;
  int n_envs = 100;
  int rollout_length = 512;
  int n_scenes = 10;
  int epochs = 10;
  int minibatch = 5120;
  int seq_len = 64;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  double max_grad_norm = 0.5;
  std::int64_t total_steps = 100'000'000;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int threads = 1;

  int batch() const { return n_envs * rollout_length; }
  void validate() const;
};

nlohmann::json ppo_config_to_json(const PPOConfig& c);
PPOConfig ppo_config_from_json(const nlohmann::json& j);

double lr_schedule(double progress, double lr_start = 1e-4,
                   double lr_end = 1e-5);

// Transitions stored step-major: index t * n_envs + e.
struct RolloutBuffer {
  int n_envs = 0;
  int steps = 0;
  int seq_len = 0;
  int hidden_dim = 0;
  int depth_dim = 0;
  nn::Matrix states;          // kStateDim x N
  Eigen::MatrixXf depth;      // depth_dim x N
  nn::Matrix u;               // kActionDim x N, pre-squash samples
  std::vector<double> log_prob;  // Gaussian log-density of u
  std::vector<double> values;
  std::vector<double> rewards;
  std::vector<std::uint8_t> dones;
  // Value of the state after a time-limit termination, 0 otherwise.
  std::vector<double> bootstrap;
  std::vector<double> keep;  // 0 where the hidden was reset before the step
  std::vector<double> last_values;  // per env, after the final step
  nn::Matrix chunk_h0;  // hidden_dim x (n_chunks * n_envs), k * n_envs + e
  std::vector<double> advantages;
  std::vector<double> returns;

  void allocate(int envs, int length, int seq, int hidden, int depth_size);
  std::size_t size() const { return static_cast<std::size_t>(n_envs) * steps; }
  std::size_t index(int t, int e) const {
    return static_cast<std::size_t>(t) * n_envs + e;
  }
  int chunks_per_env() const { return steps / seq_len; }
};

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

// Raw GAE over step-major streams. A done step cuts the recursion; its next
// value is bootstrap[i] (time-limit) or 0 (terminal).
GaeResult compute_gae(const std::vector<double>& rewards,
                      const std::vector<double>& values,
                      const std::vector<std::uint8_t>& dones,
                      const std::vector<double>& bootstrap,
                      const std::vector<double>& last_values, int n_envs,
                      int steps, double gamma, double lambda);

void normalize_advantages(std::vector<double>& adv);

// Fills buffer.advantages (normalized) and buffer.returns.
void compute_gae(RolloutBuffer& buffer, double gamma, double lambda);

struct Minibatch {
  int steps = 0;
  int batch = 0;
  nn::Matrix state;
  nn::Matrix depth;
  nn::Matrix h0;
  nn::Vector keep;
  nn::Matrix u;
  nn::Vector old_log_prob;
  nn::Vector advantages;
  nn::Vector returns;
};

Minibatch gather_chunks(const RolloutBuffer& buffer,
                        const std::vector<int>& chunk_ids);

struct LossTerms {
  double total = 0.0;
  double policy = 0.0;
  double value = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
};

// PPO objective on one minibatch. When grads is non-null it receives the
// exact gradient (overwritten, sized to the parameter vector).
LossTerms ppo_loss(const Policy& policy, const Minibatch& mb,
                   const PPOConfig& config, nn::ParamVector* grads);

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Adam {
  nn::ParamVector m;
  nn::ParamVector v;
  std::int64_t t = 0;

  void reset(std::size_t n);
  void step(nn::ParamVector& params, const nn::ParamVector& grads,
            double lr, const PPOConfig& c);
};

// Scales grads to the given global L2 norm if larger; returns the norm
// before clipping.
double clip_grad_norm(nn::ParamVector& grads, double max_norm);

struct UpdateMetrics {
  LossTerms loss;
  double grad_norm = 0.0;
  int minibatches = 0;
};

UpdateMetrics update(Policy& policy, Adam& adam, const RolloutBuffer& buffer,
                     const PPOConfig& config, double lr, std::mt19937_64& rng);

void parallel_for(int n, int threads, const std::function<void(int)>& fn);

struct TrainerSetup {
  Track track;
  PPOConfig ppo;
  PolicyConfig policy;
  EnvConfig env;
  CurriculumSchedule curriculum;
  GeneratorConfig generator;
  std::uint64_t seed = 0;
};

struct RolloutStats {
  int episodes = 0;
  int successes = 0;
  int crashes = 0;
  int timeouts = 0;
  RewardBreakdown reward_mean;  // per step
  std::size_t distinct_scenes = 0;
  std::vector<int> group_sizes;
  std::vector<std::uint64_t> scene_hashes;
};

struct TrainerSnapshot {
  nn::ParamVector params;
  Adam adam;
  std::int64_t steps = 0;
  std::int64_t rollouts = 0;
  nlohmann::json curriculum;
  std::string rng_state;
};

class Trainer {
 public:
  explicit Trainer(TrainerSetup setup);

  // One rollout, GAE and update. Returns the metrics record for the log.
  nlohmann::json iterate();

  RolloutStats collect(RolloutBuffer& buffer);

  std::int64_t steps() const { return steps_; }
  std::int64_t rollouts() const { return rollouts_; }
  bool finished() const { return steps_ >= setup_.ppo.total_steps; }
  const Policy& policy() const { return policy_; }
  Policy& policy() { return policy_; }
  const CurriculumController& curriculum() const { return curriculum_; }
  const TrainerSetup& setup() const { return setup_; }
  double current_lr() const;

  TrainerSnapshot snapshot() const;
  void restore(const TrainerSnapshot& snap);

 private:
  TrainerSetup setup_;
  Policy policy_;
  Adam adam_;
  CurriculumController curriculum_;
  std::mt19937_64 rng_;
  std::vector<RacingEnv> envs_;
  std::vector<std::mt19937_64> action_rngs_;
  RolloutBuffer buffer_;
  std::int64_t steps_ = 0;
  std::int64_t rollouts_ = 0;
};

}  // namespace gaterace
