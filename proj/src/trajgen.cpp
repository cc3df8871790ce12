#include "hilmares/trajgen.hpp"

#include <cmath>
#include <stdexcept>

namespace hilmares {

std::array<double, 2> phase_encode(const GaitClock& clock) {
  const double phi = clock.phase();
  return {std::sin(phi), std::cos(phi)};
}

Vec3 bezier_eval(const BezierResidual& res, double s) {
  if (s < 0.0 || s > 1.0) {
    throw std::domain_error("bezier_eval: s outside [0,1]");
  }
  const double a = (1.0 - s) * (1.0 - s);
  const double b = 2.0 * s * (1.0 - s);
  const double c = s * s;
  return Vec3(a * res.p0.x() + b * res.p1.x() + c * res.p2.x(),
              a * res.p0.y() + b * res.p1.y() + c * res.p2.y(),
              b * res.p1.z());
}

namespace {

// 6s^5 - 15s^4 + 10s^3: C2 interpolation with zero end velocities.
double smoothstep5(double s) { return s * s * s * (s * (6.0 * s - 15.0) + 10.0); }

// 3w^2 - 2w^3.
double smoothstep3(double w) { return w * w * (3.0 - 2.0 * w); }

// Stance velocity of the toe relative to the base: -(v_xy + wz x r_leg).
Vec2 stance_velocity(const CpgCommand& cmd, const Vec2& neutral) {
  return Vec2(cmd.vx - cmd.wz * neutral.y(), cmd.vy + cmd.wz * neutral.x());
}

}  // namespace

Vec3 cpg_nominal(const CpgCommand& cmd, const GaitClock& clock, int leg,
                 const TrajgenConfig& cfg) {
  const Vec2& neutral = cfg.neutral_stance[static_cast<size_t>(leg)];
  const Vec2 stride = stance_velocity(cmd, neutral) * clock.period * clock.duty;
  const double u = clock.leg_fraction(leg);
  if (u < clock.duty) {
    // touchdown at neutral + stride/2, liftoff at neutral - stride/2
    const Vec2 xy = neutral + stride * (0.5 - u / clock.duty);
    return Vec3(xy.x(), xy.y(), 0.0);
  }
  const double s = (u - clock.duty) / (1.0 - clock.duty);
  const Vec2 xy = neutral + stride * (smoothstep5(s) - 0.5);
  return Vec3(xy.x(), xy.y(), cmd.step_height * std::sin(M_PI * s));
}

std::array<Vec3, kNumLegs> compose_reference(
    const CpgCommand& cmd, const std::array<BezierResidual, kNumLegs>& res,
    const GaitClock& clock, const TrajgenConfig& cfg) {
  std::array<Vec3, kNumLegs> out;
  for (int leg = 0; leg < kNumLegs; ++leg) {
    const Vec3 nominal = cpg_nominal(cmd, clock, leg, cfg);
    const auto& r = res[static_cast<size_t>(leg)];
    if (clock.in_swing(leg)) {
      out[static_cast<size_t>(leg)] = nominal + bezier_eval(r, clock.swing_s(leg));
    } else {
      const double w = smoothstep3(clock.leg_fraction(leg) / clock.duty);
      const Vec2 xy = (1.0 - w) * r.p2 + w * r.p0;
      out[static_cast<size_t>(leg)] = nominal + Vec3(xy.x(), xy.y(), 0.0);
    }
  }
  return out;
}

std::array<double, kGoalDim> goal_pack(const GoalCommand& g) {
  std::array<double, kGoalDim> v;
  int i = 0;
  for (const BezierResidual* r : {&g.res_front, &g.res_rear}) {
    v[i++] = r->p0.x();
    v[i++] = r->p0.y();
    v[i++] = r->p1.x();
    v[i++] = r->p1.y();
    v[i++] = r->p1.z();
    v[i++] = r->p2.x();
    v[i++] = r->p2.y();
  }
  v[i++] = g.cmd.vx;
  v[i++] = g.cmd.vy;
  v[i++] = g.cmd.wz;
  return v;
}

GoalCommand goal_unpack(const std::array<double, kGoalDim>& v,
                        double step_height) {
  GoalCommand g;
  int i = 0;
  for (BezierResidual* r : {&g.res_front, &g.res_rear}) {
    r->p0.x() = v[i++];
    r->p0.y() = v[i++];
    r->p1.x() = v[i++];
    r->p1.y() = v[i++];
    r->p1.z() = v[i++];
    r->p2.x() = v[i++];
    r->p2.y() = v[i++];
  }
  g.cmd.vx = v[i++];
  g.cmd.vy = v[i++];
  g.cmd.wz = v[i++];
  g.cmd.step_height = step_height;
  return g;
}

namespace {
double clampd(double x, double lo, double hi) {
  return x < lo ? lo : (x > hi ? hi : x);
}
BezierResidual clamp_residual(const BezierResidual& r, const GoalBounds& b) {
  BezierResidual c;
  c.p0 = Vec2(clampd(r.p0.x(), b.p0x_min, b.p0x_max),
              clampd(r.p0.y(), b.y_min, b.y_max));
  c.p1 = Vec3(clampd(r.p1.x(), b.p1x_min, b.p1x_max),
              clampd(r.p1.y(), b.y_min, b.y_max),
              clampd(r.p1.z(), b.p1z_min, b.p1z_max));
  c.p2 = Vec2(clampd(r.p2.x(), b.p2x_min, b.p2x_max),
              clampd(r.p2.y(), b.y_min, b.y_max));
  return c;
}
}  // namespace

GoalCommand clamp_goal(const GoalCommand& g, const GoalBounds& b) {
  GoalCommand c;
  c.res_front = clamp_residual(g.res_front, b);
  c.res_rear = clamp_residual(g.res_rear, b);
  c.cmd.vx = clampd(g.cmd.vx, b.vx_min, b.vx_max);
  c.cmd.vy = clampd(g.cmd.vy, b.vy_min, b.vy_max);
  c.cmd.wz = clampd(g.cmd.wz, b.wz_min, b.wz_max);
  c.cmd.step_height = g.cmd.step_height;
  return c;
}

GoalCommand GoalSampler::sample() {
  const GoalBounds& b = cfg_.bounds;
  GoalCommand g;
  for (BezierResidual* r : {&g.res_front, &g.res_rear}) {
    r->p0 = Vec2(rng_.uniform(b.p0x_min, b.p0x_max),
                 rng_.uniform(b.y_min, b.y_max));
    r->p1 = Vec3(rng_.uniform(b.p1x_min, b.p1x_max),
                 rng_.uniform(b.y_min, b.y_max),
                 rng_.uniform(b.p1z_min, b.p1z_max));
    r->p2 = Vec2(rng_.uniform(b.p2x_min, b.p2x_max),
                 rng_.uniform(b.y_min, b.y_max));
  }
  g.cmd.vx = rng_.uniform(b.vx_min, b.vx_max);
  g.cmd.vy = rng_.uniform(b.vy_min, b.vy_max);
  g.cmd.wz = rng_.uniform(b.wz_min, b.wz_max);
  g.cmd.step_height = cfg_.step_height;
  return g;
}

GoalCommand GoalSampler::sample_zero_residual() {
  GoalCommand g = sample();
  g.res_front = BezierResidual{};
  g.res_rear = BezierResidual{};
  return g;
}

}  // namespace hilmares
