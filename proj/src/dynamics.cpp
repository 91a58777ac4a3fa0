#include "gaterace/dynamics.hpp"

#include <algorithm>
#include <sstream>

namespace gaterace {

bool QuadState::finite() const {
  return p_W.allFinite() && v_W.allFinite() && q.coeffs().allFinite() &&
         omega.allFinite();
}

void QuadParams::validate() const {
  if (!(m > 0.0) || !(J.array() > 0.0).all() || !(f_max > 0.0) ||
      !(k_rate > 0.0)) {
    throw std::invalid_argument(
        "QuadParams: mass, inertia, f_max and k_rate must be positive");
  }
}

Wrench drag_wrench(const QuadState& state, const QuadParams& params) {
  const Vec3 v_B = state.q.conjugate() * state.v_W;
  const Vec3 f = -params.drag_lin.cwiseProduct(v_B) -
                 params.drag_quad.cwiseProduct(v_B.norm() * v_B);
  const Vec3 tau = -params.tau_drag.cwiseProduct(state.omega);
  return {f, tau};
}

QuadDerivative derivative(const QuadState& state, double thrust_N,
                          const Vec3& torque, const QuadParams& params) {
  if (!state.finite() || !std::isfinite(thrust_N) || !torque.allFinite()) {
    std::ostringstream msg;
    msg << "derivative: non-finite input (p=" << state.p_W.transpose()
        << " v=" << state.v_W.transpose() << " omega="
        << state.omega.transpose() << " thrust=" << thrust_N << ")";
    throw std::domain_error(msg.str());
  }
  const Wrench drag = drag_wrench(state, params);
  const Mat3 R = state.q.toRotationMatrix();

  QuadDerivative d;
  d.p_dot = state.v_W;
  d.v_dot = R * (Vec3(0.0, 0.0, thrust_N) + drag.force) / params.m + params.g;

  // q_dot = 0.5 * q (x) (0, omega)
  const Quat omega_q(0.0, state.omega.x(), state.omega.y(), state.omega.z());
  const Quat qd = state.q * omega_q;
  d.q_dot = 0.5 * Eigen::Vector4d(qd.w(), qd.x(), qd.y(), qd.z());

  const Vec3 Jw = params.J.cwiseProduct(state.omega);
  d.omega_dot = (-state.omega.cross(Jw) + torque + drag.torque)
                    .cwiseQuotient(params.J);
  return d;
}

RotorCommand rate_controller(const QuadState& state, const ActionCTBR& action,
                             const QuadParams& params) {
  RotorCommand cmd;
  cmd.thrust_N = std::clamp(params.m * action.thrust, 0.0, params.f_max);
  const Vec3 raw = params.J.cwiseProduct(params.k_rate *
                                         (action.omega_des - state.omega));
  const double tau_xy = 0.5 * params.arm * params.f_max;
  const double tau_z = params.yaw_torque_coeff * params.f_max;
  cmd.torque = Vec3(std::clamp(raw.x(), -tau_xy, tau_xy),
                    std::clamp(raw.y(), -tau_xy, tau_xy),
                    std::clamp(raw.z(), -tau_z, tau_z));
  return cmd;
}

namespace {

QuadDerivative closed_loop(const QuadState& s, const ActionCTBR& action,
                           const QuadParams& params) {
  const RotorCommand cmd = rate_controller(s, action, params);
  return derivative(s, cmd.thrust_N, cmd.torque, params);
}

// Raw coefficient update; the quaternion is not renormalized at RK stages.
QuadState advance(const QuadState& s, const QuadDerivative& d, double h) {
  QuadState out;
  out.p_W = s.p_W + h * d.p_dot;
  out.v_W = s.v_W + h * d.v_dot;
  out.q = Quat(s.q.w() + h * d.q_dot[0], s.q.x() + h * d.q_dot[1],
               s.q.y() + h * d.q_dot[2], s.q.z() + h * d.q_dot[3]);
  out.omega = s.omega + h * d.omega_dot;
  return out;
}

}  // namespace

QuadState step(const QuadState& state, const ActionCTBR& action, double dt,
               const QuadParams& params) {
  if (!(dt > 0.0) || dt > 0.02) {
    throw std::invalid_argument("step: dt must be in (0, 0.02]");
  }
  auto stage = [&](const QuadState& s) {
    if (!s.finite()) {
      throw SimulationDivergence("step: non-finite intermediate RK4 stage");
    }
    return closed_loop(s, action, params);
  };
  const QuadDerivative k1 = closed_loop(state, action, params);
  const QuadDerivative k2 = stage(advance(state, k1, 0.5 * dt));
  const QuadDerivative k3 = stage(advance(state, k2, 0.5 * dt));
  const QuadDerivative k4 = stage(advance(state, k3, dt));

  QuadDerivative sum;
  sum.p_dot = k1.p_dot + 2.0 * k2.p_dot + 2.0 * k3.p_dot + k4.p_dot;
  sum.v_dot = k1.v_dot + 2.0 * k2.v_dot + 2.0 * k3.v_dot + k4.v_dot;
  sum.q_dot = k1.q_dot + 2.0 * k2.q_dot + 2.0 * k3.q_dot + k4.q_dot;
  sum.omega_dot =
      k1.omega_dot + 2.0 * k2.omega_dot + 2.0 * k3.omega_dot + k4.omega_dot;

  QuadState next = advance(state, sum, dt / 6.0);
  next.q.normalize();
  if (!next.finite()) {
    throw SimulationDivergence("step: integration produced a non-finite state");
  }
  return next;
}

}  // namespace gaterace
