#include <gtest/gtest.h>

#include <random>

#include "gaterace/dynamics.hpp"
#include "oracles.hpp"

using namespace gaterace;

namespace {

QuadParams no_drag() {
  QuadParams p;
  p.drag_lin.setZero();
  p.drag_quad.setZero();
  p.tau_drag.setZero();
  return p;
}

ActionCTBR hover_action(const QuadParams& p) {
  ActionCTBR a;
  a.thrust = -p.g.z();
  return a;
}

}  // namespace

TEST(Dynamics, DefaultParameterSet) {
  const QuadParams p;
  EXPECT_DOUBLE_EQ(p.m, 0.58);
  EXPECT_DOUBLE_EQ(p.J.x(), 1.01e-3);
  EXPECT_DOUBLE_EQ(p.J.y(), 1.53e-3);
  EXPECT_DOUBLE_EQ(p.J.z(), 2.03e-3);
  EXPECT_DOUBLE_EQ(p.f_max, 14.0);
  EXPECT_DOUBLE_EQ(p.omega_max, 6.0);
  EXPECT_NO_THROW(p.validate());
  QuadParams bad = p;
  bad.m = 0.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Dynamics, HoverIsAnEquilibrium) {
  const QuadParams p;
  QuadState s;
  const QuadDerivative d = derivative(s, p.m * 9.81, Vec3::Zero(), p);
  EXPECT_NEAR(d.p_dot.norm(), 0.0, 1e-15);
  EXPECT_NEAR(d.v_dot.norm(), 0.0, 1e-12);
  EXPECT_NEAR(d.q_dot.norm(), 0.0, 1e-15);
  EXPECT_NEAR(d.omega_dot.norm(), 0.0, 1e-15);
}

TEST(Dynamics, FreeFallAcceleration) {
  const QuadParams p = no_drag();
  QuadState s;
  s.v_W = Vec3(1.0, 2.0, -3.0);
  const QuadDerivative d = derivative(s, 0.0, Vec3::Zero(), p);
  EXPECT_NEAR((d.v_dot - Vec3(0.0, 0.0, -9.81)).norm(), 0.0, 1e-15);
}

TEST(Dynamics, NonFiniteInputIsRejected) {
  const QuadParams p;
  QuadState s;
  s.v_W.x() = std::nan("");
  EXPECT_THROW(derivative(s, 1.0, Vec3::Zero(), p), std::domain_error);
  QuadState ok;
  EXPECT_THROW(derivative(ok, std::numeric_limits<double>::infinity(),
                          Vec3::Zero(), p),
               std::domain_error);
}

TEST(Dynamics, DragZeroAndLinearCases) {
  QuadState s;
  s.v_W = Vec3(1.0, 0.0, 0.0);
  s.omega = Vec3(0.3, 0.2, 0.1);
  const Wrench none = drag_wrench(s, no_drag());
  EXPECT_EQ(none.force, Vec3::Zero());
  EXPECT_EQ(none.torque, Vec3::Zero());

  QuadParams lin = no_drag();
  lin.drag_lin = Vec3::Constant(0.3);
  const Wrench w = drag_wrench(s, lin);
  EXPECT_NEAR((w.force - Vec3(-0.3, 0.0, 0.0)).norm(), 0.0, 1e-15);
}

TEST(Dynamics, DragMatchesDirectFormula) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  QuadParams p;
  p.drag_lin = Vec3(0.3, 0.25, 0.4);
  p.drag_quad = Vec3(0.05, 0.02, 0.1);
  p.tau_drag = Vec3(1e-4, 2e-4, 3e-4);
  for (int i = 0; i < 200; ++i) {
    QuadState s;
    s.v_W = Vec3(u(rng), u(rng), u(rng));
    s.omega = Vec3(u(rng), u(rng), u(rng));
    s.q = Quat(u(rng), u(rng), u(rng), u(rng)).normalized();
    const Mat3 R = s.q.toRotationMatrix();
    const Vec3 vb = R.transpose() * s.v_W;
    const double speed = vb.norm();
    Vec3 f, tau;
    for (int k = 0; k < 3; ++k) {
      f[k] = -p.drag_lin[k] * vb[k] - p.drag_quad[k] * speed * vb[k];
      tau[k] = -p.tau_drag[k] * s.omega[k];
    }
    const Wrench w = drag_wrench(s, p);
    EXPECT_NEAR((w.force - f).norm(), 0.0, 1e-12);
    EXPECT_NEAR((w.torque - tau).norm(), 0.0, 1e-15);
  }
}

TEST(Dynamics, RateControllerZeroErrorAndThrustClamp) {
  const QuadParams p;
  QuadState s;
  s.omega = Vec3(0.4, -0.2, 1.0);
  ActionCTBR a;
  a.thrust = 5.0;
  a.omega_des = s.omega;
  EXPECT_EQ(rate_controller(s, a, p).torque, Vec3::Zero());

  a.thrust = p.f_max / p.m + 10.0;
  EXPECT_DOUBLE_EQ(rate_controller(s, a, p).thrust_N, 14.0);
  a.thrust = -3.0;
  EXPECT_DOUBLE_EQ(rate_controller(s, a, p).thrust_N, 0.0);
}

TEST(Dynamics, RateStepResponseIsMonotone) {
  const QuadParams p = no_drag();
  QuadState s;
  s.p_W = Vec3(0.0, 0.0, 5.0);
  ActionCTBR a = hover_action(p);
  a.omega_des = Vec3(2.0, 0.0, 0.0);
  const double dt = 1.0 / 120.0;
  ASSERT_LT(p.k_rate * dt, 1.0);
  Vec3 prev_err = (a.omega_des - s.omega).cwiseAbs();
  for (int i = 0; i < 120; ++i) {
    s = step(s, a, dt, p);
    const Vec3 err = (a.omega_des - s.omega).cwiseAbs();
    for (int k = 0; k < 3; ++k) EXPECT_LE(err[k], prev_err[k] + 1e-9);
    prev_err = err;
  }
  EXPECT_LT(prev_err.maxCoeff(), 0.05);
}

TEST(Dynamics, HoverDriftBelowMicrometre) {
  const QuadParams p;
  QuadState s;
  s.p_W = Vec3(1.0, 2.0, 3.0);
  const QuadState end = oracle::integrate(s, hover_action(p), 1.0 / 120.0, 120, p);
  EXPECT_LT((end.p_W - s.p_W).norm(), 1e-6);
}

TEST(Dynamics, FreeFallClosedForm) {
  const QuadParams p = no_drag();
  QuadState s;
  s.p_W = Vec3(0.0, 0.0, 10.0);
  const QuadState end = oracle::integrate(s, ActionCTBR{}, 1.0 / 120.0, 120, p);
  EXPECT_NEAR(end.p_W.z() - s.p_W.z(), -4.905, 1e-6);
}

TEST(Dynamics, FourthOrderConvergence) {
  const double slope = oracle::rk4_order_slope();
  EXPECT_GE(slope, 3.8);
  EXPECT_LE(slope, 4.2);
}

TEST(Dynamics, QuaternionStaysUnitAndStepIsDeterministic) {
  const QuadParams p;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-6.0, 6.0);
  QuadState a, b;
  a.p_W = b.p_W = Vec3(0.0, 0.0, 50.0);
  for (int i = 0; i < 2000; ++i) {
    ActionCTBR act;
    act.thrust = 9.81 + u(rng);
    act.omega_des = Vec3(u(rng), u(rng), u(rng));
    a = step(a, act, 1.0 / 120.0, p);
    b = step(b, act, 1.0 / 120.0, p);
    ASSERT_LT(std::abs(a.q.norm() - 1.0), 1e-9);
  }
  EXPECT_EQ(a.p_W, b.p_W);
  EXPECT_EQ(a.q.coeffs(), b.q.coeffs());
  EXPECT_EQ(a.omega, b.omega);
}

TEST(Dynamics, BallisticFlightKeepsHorizontalVelocity) {
  const QuadParams p = no_drag();
  QuadState s;
  s.v_W = Vec3(2.5, -1.25, 4.0);
  for (int i = 0; i < 240; ++i) {
    const QuadState n = step(s, ActionCTBR{}, 1.0 / 120.0, p);
    EXPECT_LT((n.v_W.head<2>() - s.v_W.head<2>()).norm(), 1e-9);
    s = n;
  }
}

TEST(Dynamics, InvalidTimestepIsRejected) {
  const QuadParams p;
  EXPECT_THROW(step(QuadState{}, ActionCTBR{}, 0.0, p), std::invalid_argument);
  EXPECT_THROW(step(QuadState{}, ActionCTBR{}, 0.03, p), std::invalid_argument);
  EXPECT_NO_THROW(step(QuadState{}, ActionCTBR{}, 0.02, p));
}

TEST(Dynamics, DivergenceIsFlagged) {
  QuadParams p;
  p.k_rate = 1e308;
  QuadState s;
  ActionCTBR a;
  a.omega_des = Vec3(1e308, 0.0, 0.0);
  p.J = Vec3::Constant(1e-300);
  EXPECT_THROW(
      {
        for (int i = 0; i < 10; ++i) s = step(s, a, 0.01, p);
      },
      SimulationDivergence);
}
