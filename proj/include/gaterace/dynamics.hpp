#pragma once

#include <stdexcept>
#include <string>

#include "gaterace/math.hpp"

namespace gaterace {

struct QuadState {
  Vec3 p_W = Vec3::Zero();
  Vec3 v_W = Vec3::Zero();
  Quat q = Quat::Identity();  // body -> world
  Vec3 omega = Vec3::Zero();  // body frame

  bool finite() const;
};

struct QuadParams {
  double m = 0.58;
  Vec3 J = Vec3(1.01e-3, 1.53e-3, 2.03e-3);
  double arm = 0.075;
  double f_max = 14.0;
  Vec3 drag_lin = Vec3::Constant(0.3);
  Vec3 drag_quad = Vec3::Zero();
  Vec3 tau_drag = Vec3::Constant(1e-4);
  double k_rate = 20.0;
  // Reaction-torque lever for yaw: max yaw torque = yaw_torque_coeff * f_max.
  double yaw_torque_coeff = 0.01;
  double omega_max = 6.0;
  Vec3 g = Vec3(0.0, 0.0, -9.81);

  void validate() const;
  double max_thrust_accel() const { return f_max / m; }
};

// Collective thrust and body rates.
struct ActionCTBR {
  double thrust = 0.0;  // mass-normalized, m/s^2
  Vec3 omega_des = Vec3::Zero();

  Eigen::Vector4d as_vector() const {
    return {thrust, omega_des.x(), omega_des.y(), omega_des.z()};
  }
};

struct QuadDerivative {
  Vec3 p_dot;
  Vec3 v_dot;
  Eigen::Vector4d q_dot;  // (w, x, y, z)
  Vec3 omega_dot;
};

struct Wrench {
  Vec3 force;
  Vec3 torque;
};

struct RotorCommand {
  double thrust_N;
  Vec3 torque;
};

// Raised when integration produces a non-finite state.
class SimulationDivergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Wrench drag_wrench(const QuadState& state, const QuadParams& params);

QuadDerivative derivative(const QuadState& state, double thrust_N,
                          const Vec3& torque, const QuadParams& params);

// Proportional body-rate loop standing in for the flight controller firmware.
RotorCommand rate_controller(const QuadState& state, const ActionCTBR& action,
                             const QuadParams& params);

// One RK4 step with the action held constant and the rate loop evaluated at
// every stage. The quaternion is renormalized afterwards.
QuadState step(const QuadState& state, const ActionCTBR& action, double dt,
               const QuadParams& params);

}  // namespace gaterace
