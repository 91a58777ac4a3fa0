#include "gaterace/policy.hpp"

#include <cmath>
#include <functional>

namespace gaterace {

using nn::Activation;
using nn::Matrix;
using nn::Vector;

namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;

template <typename T>
std::vector<T> json_vec(const nlohmann::json& j, const char* key,
                        std::vector<T> fallback) {
  return j.contains(key) ? j.at(key).get<std::vector<T>>() : fallback;
}

// Runs a Linear stack, caching every output. The last layer uses `last`.
Matrix run_stack(const std::vector<nn::Linear>& layers, const double* p,
                 const Matrix& x, Activation hidden, Activation last,
                 std::vector<Matrix>* acts,
                 const std::function<void(const Matrix&, const std::string&)>& check) {
  Matrix cur = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    Matrix y = layers[i].forward(p, cur);
    nn::activate(i + 1 == layers.size() ? last : hidden, y);
    check(y, layers[i].name());
    if (acts) acts->push_back(y);
    cur = std::move(y);
  }
  return cur;
}

// Reverse of run_stack. Returns dL/dx when need_dx.
Matrix back_stack(const std::vector<nn::Linear>& layers, const double* p,
                  double* g, const Matrix& x, const std::vector<Matrix>& acts,
                  Matrix dy, Activation hidden, Activation last, bool need_dx) {
  for (std::size_t k = layers.size(); k-- > 0;) {
    nn::activate_backward(k + 1 == layers.size() ? last : hidden, acts[k], dy);
    const Matrix& in = k == 0 ? x : acts[k - 1];
    dy = layers[k].backward(p, g, in, dy, need_dx || k > 0);
  }
  return dy;
}

}  // namespace

void PolicyConfig::validate() const {
  if (state_layers.empty() || head_layers.empty()) {
    throw std::invalid_argument("PolicyConfig: encoder and head need layers");
  }
  if (latent <= 0 || depth_feature <= 0) {
    throw std::invalid_argument("PolicyConfig: non-positive width");
  }
  if (use_depth && (image_size < 2 || conv_channels.empty())) {
    throw std::invalid_argument("PolicyConfig: invalid depth encoder");
  }
  if (!(thrust_max > 0.0) || !(omega_max > 0.0) || !(hover_thrust > 0.0) ||
      hover_thrust >= thrust_max) {
    throw std::invalid_argument("PolicyConfig: invalid action bounds");
  }
}

nlohmann::json policy_config_to_json(const PolicyConfig& c) {
  return {{"state_layers", c.state_layers},
          {"use_depth", c.use_depth},
          {"image_size", c.image_size},
          {"conv_channels", c.conv_channels},
          {"depth_feature", c.depth_feature},
          {"latent", c.latent},
          {"recurrent", c.recurrent},
          {"head_layers", c.head_layers},
          {"log_std_init", c.log_std_init},
          {"thrust_max", c.thrust_max},
          {"omega_max", c.omega_max},
          {"hover_thrust", c.hover_thrust},
          {"input_scale", c.input_scale}};
}

PolicyConfig policy_config_from_json(const nlohmann::json& j) {
  PolicyConfig c;
  c.state_layers = json_vec(j, "state_layers", c.state_layers);
  c.use_depth = j.value("use_depth", c.use_depth);
  c.image_size = j.value("image_size", c.image_size);
  c.conv_channels = json_vec(j, "conv_channels", c.conv_channels);
  c.depth_feature = j.value("depth_feature", c.depth_feature);
  c.latent = j.value("latent", c.latent);
  c.recurrent = j.value("recurrent", c.recurrent);
  c.head_layers = json_vec(j, "head_layers", c.head_layers);
  c.log_std_init = j.value("log_std_init", c.log_std_init);
  c.thrust_max = j.value("thrust_max", c.thrust_max);
  c.omega_max = j.value("omega_max", c.omega_max);
  c.hover_thrust = j.value("hover_thrust", c.hover_thrust);
  if (j.contains("input_scale")) {
    c.input_scale = j.at("input_scale").get<std::array<double, kStateDim>>();
  }
  return c;
}

Policy::Policy(PolicyConfig config) : config_(std::move(config)) {
  config_.validate();
  int width = kStateDim;
  for (std::size_t i = 0; i < config_.state_layers.size(); ++i) {
    state_layers_.emplace_back(layout_, "state_enc." + std::to_string(i), width,
                               config_.state_layers[i]);
    width = config_.state_layers[i];
  }
  int features = width;
  if (config_.use_depth) {
    int channels = 1;
    int size = config_.image_size;
    for (std::size_t i = 0; i < config_.conv_channels.size(); ++i) {
      convs_.emplace_back(layout_, "depth_enc.conv" + std::to_string(i),
                          channels, config_.conv_channels[i], size, 3, 2, 1);
      channels = config_.conv_channels[i];
      size = convs_.back().out_size();
    }
    depth_proj_ = nn::Linear(layout_, "depth_enc.proj",
                             convs_.back().output_dim(), config_.depth_feature);
    features += config_.depth_feature;
  }
  if (config_.recurrent) {
    gru_ = nn::GruCell(layout_, "core.gru", features, config_.latent);
  } else {
    core_ff_ = nn::Linear(layout_, "core.ff", features, config_.latent);
  }
  auto build_head = [&](std::vector<nn::Linear>& head, const std::string& name,
                        int out) {
    int w = config_.latent;
    for (std::size_t i = 0; i < config_.head_layers.size(); ++i) {
      head.emplace_back(layout_, name + "." + std::to_string(i), w,
                        config_.head_layers[i]);
      w = config_.head_layers[i];
    }
    head.emplace_back(layout_, name + ".out", w, out);
  };
  build_head(actor_, "actor", kActionDim);
  build_head(critic_, "critic", 1);
  log_std_off_ = layout_.add("actor.log_std", kActionDim, 1);
  params_.assign(layout_.total(), 0.0);
}

void Policy::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::fill(params_.begin(), params_.end(), 0.0);
  const double hidden_gain = std::sqrt(2.0);
  double* p = params_.data();
  auto init_linear = [&](const nn::Linear& l, double gain) {
    nn::orthogonal_init(p + l.weight_offset(), l.out(), l.in(), gain, rng);
  };
  for (const auto& l : state_layers_) init_linear(l, hidden_gain);
  for (const auto& c : convs_) {
    nn::orthogonal_init(p + c.weight_offset(), c.out_channels(), c.fan_in(),
                        hidden_gain, rng);
  }
  if (config_.use_depth) init_linear(depth_proj_, hidden_gain);
  if (config_.recurrent) {
    nn::orthogonal_init(p + gru_.w_ih_offset(), 3 * gru_.hidden(), gru_.in(),
                        1.0, rng);
    nn::orthogonal_init(p + gru_.w_hh_offset(), 3 * gru_.hidden(),
                        gru_.hidden(), 1.0, rng);
  } else {
    init_linear(core_ff_, hidden_gain);
  }
  for (std::size_t i = 0; i + 1 < actor_.size(); ++i) {
    init_linear(actor_[i], hidden_gain);
  }
  init_linear(actor_.back(), 0.01);
  for (std::size_t i = 0; i + 1 < critic_.size(); ++i) {
    init_linear(critic_[i], hidden_gain);
  }
  init_linear(critic_.back(), 1.0);

  // Centre the thrust output on hover.
  const double hover = 2.0 * config_.hover_thrust / config_.thrust_max - 1.0;
  params_[actor_.back().bias_offset()] = std::atanh(hover);
  for (int i = 0; i < kActionDim; ++i) {
    params_[log_std_off_ + i] = config_.log_std_init;
  }
}

Eigen::Vector4d Policy::log_std() const {
  return Eigen::Map<const Eigen::Vector4d>(params_.data() + log_std_off_);
}

void Policy::check(const Matrix& m, const std::string& layer) const {
  if (!m.allFinite()) throw NonFiniteActivation(layer);
}

PolicyOutput Policy::forward(const Matrix& state, const Matrix& depth,
                             const Matrix& h0, const Vector& keep, int steps,
                             Cache* cache) const {
  const Eigen::Index n = state.cols();
  if (state.rows() != kStateDim || h0.cols() * steps != n ||
      keep.size() != n || h0.rows() != hidden_dim()) {
    throw std::invalid_argument("Policy::forward: inconsistent batch shapes");
  }
  if (config_.use_depth && (depth.rows() != depth_dim() || depth.cols() != n)) {
    throw std::invalid_argument("Policy::forward: depth batch has wrong shape");
  }
  const double* p = params_.data();
  const auto checker = [this](const Matrix& m, const std::string& l) {
    check(m, l);
  };
  Cache local;
  Cache& c = cache ? *cache : local;
  c = Cache{};
  c.steps = steps;
  c.keep = keep;

  Eigen::Map<const Vector> scale(config_.input_scale.data(), kStateDim);
  c.x_state = scale.asDiagonal() * state;
  check(c.x_state, "state_input");
  const Matrix fs = run_stack(state_layers_, p, c.x_state, Activation::kTanh,
                              Activation::kTanh, &c.state_acts, checker);

  if (config_.use_depth) {
    c.x_depth = depth;
    check(c.x_depth, "depth_input");
    Matrix cur = depth;
    for (const auto& conv : convs_) {
      Matrix y = conv.forward(p, cur);
      nn::activate(Activation::kElu, y);
      check(y, conv.name());
      c.conv_acts.push_back(y);
      cur = std::move(y);
    }
    c.depth_feat = depth_proj_.forward(p, cur);
    nn::activate(Activation::kElu, c.depth_feat);
    check(c.depth_feat, depth_proj_.name());
    c.features.resize(fs.rows() + c.depth_feat.rows(), n);
    c.features << fs, c.depth_feat;
  } else {
    c.features = fs;
  }

  PolicyOutput out;
  if (config_.recurrent) {
    c.core = gru_.forward(p, c.features, h0, keep, steps, &c.gru);
    check(c.core, gru_.name());
    out.hidden = c.core;
  } else {
    c.core = core_ff_.forward(p, c.features);
    nn::activate(Activation::kTanh, c.core);
    check(c.core, core_ff_.name());
    out.hidden.resize(0, n);
  }
  out.mean = run_stack(actor_, p, c.core, Activation::kTanh, Activation::kNone,
                       &c.actor_acts, checker);
  out.value = run_stack(critic_, p, c.core, Activation::kTanh,
                        Activation::kNone, &c.critic_acts, checker)
                  .row(0)
                  .transpose();
  return out;
}

void Policy::backward(const Cache& c, const Matrix& dmean, const Vector& dvalue,
                      double* g) const {
  const double* p = params_.data();
  const Eigen::Index n = c.core.cols();
  if (dmean.rows() != kActionDim || dmean.cols() != n || dvalue.size() != n) {
    throw std::invalid_argument("Policy::backward: gradient shape mismatch");
  }
  Matrix dcore = back_stack(actor_, p, g, c.core, c.actor_acts, dmean,
                            Activation::kTanh, Activation::kNone, true);
  dcore += back_stack(critic_, p, g, c.core, c.critic_acts,
                      dvalue.transpose(), Activation::kTanh, Activation::kNone,
                      true);

  Matrix dfeat;
  if (config_.recurrent) {
    dfeat = gru_.backward(p, g, c.features, c.gru, c.keep, dcore);
  } else {
    nn::activate_backward(Activation::kTanh, c.core, dcore);
    dfeat = core_ff_.backward(p, g, c.features, dcore, true);
  }

  const Eigen::Index fs_rows = state_layers_.back().out();
  back_stack(state_layers_, p, g, c.x_state, c.state_acts,
             dfeat.topRows(fs_rows), Activation::kTanh, Activation::kTanh,
             false);
  if (config_.use_depth) {
    Matrix d = dfeat.bottomRows(dfeat.rows() - fs_rows);
    nn::activate_backward(Activation::kElu, c.depth_feat, d);
    d = depth_proj_.backward(p, g, c.conv_acts.back(), d, true);
    for (std::size_t k = convs_.size(); k-- > 0;) {
      nn::activate_backward(Activation::kElu, c.conv_acts[k], d);
      const Matrix& in = k == 0 ? c.x_depth : c.conv_acts[k - 1];
      d = convs_[k].backward(p, g, in, d, k > 0);
    }
  }
}

Matrix pack_states(const std::vector<const Observation*>& obs) {
  Matrix m(kStateDim, static_cast<Eigen::Index>(obs.size()));
  for (std::size_t i = 0; i < obs.size(); ++i) {
    for (int k = 0; k < kStateDim; ++k) m(k, i) = obs[i]->state[k];
  }
  return m;
}

Matrix pack_depth(const std::vector<const Observation*>& obs, int dim) {
  Matrix m(dim, static_cast<Eigen::Index>(obs.size()));
  for (std::size_t i = 0; i < obs.size(); ++i) {
    if (dim == 0) continue;
    const auto& px = obs[i]->depth.values;
    if (static_cast<int>(px.size()) != dim) {
      throw std::invalid_argument("pack_depth: image size mismatch");
    }
    for (int k = 0; k < dim; ++k) m(k, i) = px[k];
  }
  return m;
}

ActionCTBR squash(const Eigen::Vector4d& u, const SquashBounds& b) {
  ActionCTBR a;
  a.thrust = 0.5 * (std::tanh(u[0]) + 1.0) * b.thrust_max;
  for (int i = 0; i < 3; ++i) a.omega_des[i] = std::tanh(u[i + 1]) * b.omega_max;
  return a;
}

double squash_log_det(const Eigen::Vector4d& u, const SquashBounds& b) {
  // log(1 - tanh(x)^2) = 2 (log 2 - x - softplus(-2x))
  auto log_dtanh = [](double x) {
    const double y = -2.0 * x;
    const double softplus = y > 0.0 ? y + std::log1p(std::exp(-y))
                                    : std::log1p(std::exp(y));
    return 2.0 * (std::log(2.0) - x - softplus);
  };
  double s = std::log(0.5 * b.thrust_max) + log_dtanh(u[0]);
  for (int i = 1; i < 4; ++i) s += std::log(b.omega_max) + log_dtanh(u[i]);
  return s;
}

double gaussian_log_prob(const Eigen::Vector4d& u, const Eigen::Vector4d& mean,
                         const Eigen::Vector4d& log_std) {
  double lp = 0.0;
  for (int i = 0; i < 4; ++i) {
    const double z = (u[i] - mean[i]) * std::exp(-log_std[i]);
    lp += -0.5 * z * z - log_std[i] - kLogSqrt2Pi;
  }
  return lp;
}

double gaussian_entropy(const Eigen::Vector4d& log_std) {
  return log_std.sum() + 4.0 * (0.5 + kLogSqrt2Pi);
}

ActionSample act(const ActionDistribution& dist, std::mt19937_64& rng,
                 const SquashBounds& bounds, bool deterministic) {
  ActionSample s;
  s.u = dist.mean;
  if (!deterministic) {
    std::normal_distribution<double> normal(0.0, 1.0);
    const Eigen::Vector4d sd = dist.std();
    for (int i = 0; i < 4; ++i) s.u[i] += sd[i] * normal(rng);
  }
  s.action = squash(s.u, bounds);
  s.log_prob = gaussian_log_prob(s.u, dist.mean, dist.log_std) -
               squash_log_det(s.u, bounds);
  return s;
}

}  // namespace gaterace
