#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gaterace/dynamics.hpp"
#include "gaterace/env.hpp"
#include "gaterace/nn.hpp"

namespace gaterace {

struct PolicyConfig {
  std::vector<int> state_layers{96, 96};
  bool use_depth = true;
  int image_size = 64;
  std::vector<int> conv_channels{8, 16, 32};
  int depth_feature = 128;
  int latent = 256;
  // false swaps the recurrent core for a feed-forward layer of equal width.
  bool recurrent = true;
  std::vector<int> head_layers{192, 96};
  double log_std_init = -0.5;
  double thrust_max = 14.0 / 0.58;  // f_max / m
  double omega_max = 6.0;
  double hover_thrust = 9.81;
  // Multiplies each state entry before the first layer.
  std::array<double, kStateDim> input_scale{0.2, 0.2, 0.2, 0.2, 0.2, 0.2,
                                            0.2, 0.2, 0.2, 0.1, 1.0, 1.0,
                                            1.0, 1.0, 0.2, 0.2, 0.2};

  void validate() const;
};

nlohmann::json policy_config_to_json(const PolicyConfig& c);
PolicyConfig policy_config_from_json(const nlohmann::json& j);

class NonFiniteActivation : public std::runtime_error {
 public:
  explicit NonFiniteActivation(const std::string& layer)
      : std::runtime_error("non-finite activation in layer " + layer),
        layer_(layer) {}
  const std::string& layer() const { return layer_; }

 private:
  std::string layer_;
};

struct PolicyOutput {
  nn::Matrix mean;    // 4 x N
  nn::Vector value;   // N
  nn::Matrix hidden;  // hidden_dim x N, state after each column
};

class Policy {
 public:
  explicit Policy(PolicyConfig config);

  const PolicyConfig& config() const { return config_; }
  const nn::ParamLayout& layout() const { return layout_; }
  nn::ParamVector& params() { return params_; }
  const nn::ParamVector& params() const { return params_; }
  std::size_t num_params() const { return layout_.total(); }
  int hidden_dim() const { return config_.recurrent ? config_.latent : 0; }
  int depth_dim() const {
    return config_.use_depth ? config_.image_size * config_.image_size : 0;
  }

  void initialize(std::uint64_t seed);

  struct Cache {
    int steps = 0;
    nn::Matrix x_state;
    std::vector<nn::Matrix> state_acts;
    nn::Matrix x_depth;
    std::vector<nn::Matrix> conv_acts;
    nn::Matrix depth_feat;
    nn::Matrix features;
    nn::GruCell::Cache gru;
    nn::Vector keep;
    nn::Matrix core;
    std::vector<nn::Matrix> actor_acts;
    std::vector<nn::Matrix> critic_acts;
  };

  // Columns are ordered t * batch + b; batch = h0.cols(). keep[c] = 0 resets
  // the hidden fed into column c.
  PolicyOutput forward(const nn::Matrix& state, const nn::Matrix& depth,
                       const nn::Matrix& h0, const nn::Vector& keep, int steps,
                       Cache* cache = nullptr) const;
  // Accumulates gradients of a loss given dL/dmean and dL/dvalue. The log-std
  // gradient is left to the caller (see log_std_offset).
  void backward(const Cache& cache, const nn::Matrix& dmean,
                const nn::Vector& dvalue, double* grads) const;

  Eigen::Vector4d log_std() const;
  std::size_t log_std_offset() const { return log_std_off_; }

 private:
  void check(const nn::Matrix& m, const std::string& layer) const;

  PolicyConfig config_;
  nn::ParamLayout layout_;
  std::vector<nn::Linear> state_layers_;
  std::vector<nn::Conv2d> convs_;
  nn::Linear depth_proj_;
  nn::GruCell gru_;
  nn::Linear core_ff_;
  std::vector<nn::Linear> actor_;
  std::vector<nn::Linear> critic_;
  std::size_t log_std_off_ = 0;
  nn::ParamVector params_;
};

// Packs observations column-wise for Policy::forward.
nn::Matrix pack_states(const std::vector<const Observation*>& obs);
nn::Matrix pack_depth(const std::vector<const Observation*>& obs, int dim);

struct SquashBounds {
  double thrust_max = 14.0 / 0.58;
  double omega_max = 6.0;
};

inline SquashBounds squash_bounds(const PolicyConfig& c) {
  return {c.thrust_max, c.omega_max};
}

ActionCTBR squash(const Eigen::Vector4d& u, const SquashBounds& b);
// log |det d squash / du|.
double squash_log_det(const Eigen::Vector4d& u, const SquashBounds& b);
double gaussian_log_prob(const Eigen::Vector4d& u, const Eigen::Vector4d& mean,
                         const Eigen::Vector4d& log_std);
double gaussian_entropy(const Eigen::Vector4d& log_std);

struct ActionDistribution {
  Eigen::Vector4d mean = Eigen::Vector4d::Zero();
  Eigen::Vector4d log_std = Eigen::Vector4d::Constant(-0.5);
  Eigen::Vector4d std() const { return log_std.array().exp(); }
};

struct ActionSample {
  ActionCTBR action;
  Eigen::Vector4d u;  // pre-squash sample
  // Density of the squashed action, including the tanh correction.
  double log_prob = 0.0;
};

ActionSample act(const ActionDistribution& dist, std::mt19937_64& rng,
                 const SquashBounds& bounds, bool deterministic = false);

}  // namespace gaterace
