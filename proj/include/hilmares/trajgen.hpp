#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>

#include "hilmares/rng.hpp"

namespace hilmares {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;

enum LegId : int { FL = 0, FR = 1, RL = 2, RR = 3 };
constexpr int kNumLegs = 4;
inline const char* leg_name(int leg) {
  static const char* names[kNumLegs] = {"FL", "FR", "RL", "RR"};
  return names[leg];
}
inline bool leg_is_left(int leg) { return leg == FL || leg == RL; }
inline bool leg_is_front(int leg) { return leg == FL || leg == FR; }

// Trot pairing: {FL, RR} share phase offset 0, {FR, RL} offset half a cycle.
inline double leg_cycle_offset(int leg) {
  return (leg == FL || leg == RR) ? 0.0 : 0.5;
}

struct GaitClock {
  double t = 0.0;       // seconds since gait-cycle start
  double period = 0.5;  // T_g, seconds
  double duty = 0.5;    // stance fraction of the cycle

  bool valid() const { return period > 0.0 && duty > 0.0 && duty < 1.0; }
  double swing_period() const { return period * (1.0 - duty); }

  // Cycle fraction in [0, 1).
  double fraction() const {
    double u = t / period;
    u -= std::floor(u);
    return u;
  }
  double phase() const { return 2.0 * M_PI * fraction(); }

  // Per-leg cycle fraction; stance occupies [0, duty), swing [duty, 1).
  double leg_fraction(int leg) const {
    double u = fraction() + leg_cycle_offset(leg);
    return u >= 1.0 ? u - 1.0 : u;
  }
  bool in_swing(int leg) const { return leg_fraction(leg) >= duty; }
  // Normalized swing time s in [0, 1); 0 for stance legs.
  double swing_s(int leg) const {
    const double u = leg_fraction(leg);
    return u < duty ? 0.0 : (u - duty) / (1.0 - duty);
  }
};

// (sin phi, cos phi) of the global gait phase.
std::array<double, 2> phase_encode(const GaitClock& clock);

struct CpgCommand {
  double vx = 0.0;           // desired sagittal velocity, m/s
  double vy = 0.0;           // desired lateral velocity, m/s
  double wz = 0.0;           // desired turning yaw rate, rad/s
  double step_height = 0.10; // swing apex, m
};

// Quadratic Bezier residual; first and last control points sit on the ground.
struct BezierResidual {
  Vec2 p0 = Vec2::Zero();
  Vec3 p1 = Vec3::Zero();
  Vec2 p2 = Vec2::Zero();
};

// Evaluate the residual at normalized swing time s in [0, 1].
// Throws std::domain_error outside that range.
Vec3 bezier_eval(const BezierResidual& res, double s);

// Table-1 randomization boxes.
struct GoalBounds {
  double p0x_min = -0.07, p0x_max = 0.03;
  double p1x_min = -0.035, p1x_max = 0.035;
  double p2x_min = -0.03, p2x_max = 0.07;
  double y_min = -0.1, y_max = 0.1;
  double p1z_min = -0.05, p1z_max = 0.05;
  double vx_min = -1.0, vx_max = 1.0;
  double vy_min = -0.3, vy_max = 0.3;
  double wz_min = -1.0, wz_max = 1.0;
};

// Planner -> controller interface: one residual per swing leg of the active
// diagonal pair (front leg slot, rear leg slot) plus the CPG base command.
struct GoalCommand {
  BezierResidual res_front;
  BezierResidual res_rear;
  CpgCommand cmd;

  const BezierResidual& residual_for_leg(int leg) const {
    return leg_is_front(leg) ? res_front : res_rear;
  }
};

// 17-dim packing used by the planner action space and goal observations:
// [front P0x P0y P1x P1y P1z P2x P2y | rear ... | vx vy wz].
constexpr int kGoalDim = 17;
std::array<double, kGoalDim> goal_pack(const GoalCommand& g);
GoalCommand goal_unpack(const std::array<double, kGoalDim>& v,
                        double step_height);
GoalCommand clamp_goal(const GoalCommand& g, const GoalBounds& b);

struct TrajgenConfig {
  GaitClock clock_shape{0.0, 0.5, 0.5};  // period/duty template
  std::array<Vec2, kNumLegs> neutral_stance = {
      Vec2(0.19, 0.12), Vec2(0.19, -0.12), Vec2(-0.19, 0.12),
      Vec2(-0.19, -0.12)};
  double step_height = 0.10;
  GoalBounds bounds;
  double resample_interval = 10.0;  // seconds between goal changes
};

// Nominal CPG toe position for one leg in the base-footprint frame.
// Stance: constant-velocity retraction at -(vx, vy) - wz x r_leg, a stride
// centered on the neutral stance point. Swing: quintic-smoothstep return with
// a sinusoidal vertical bump peaking at step_height.
Vec3 cpg_nominal(const CpgCommand& cmd, const GaitClock& clock, int leg,
                 const TrajgenConfig& cfg);

// Composed reference for all four legs. Swing legs: nominal + residual.
// Stance legs: nominal + an offset that carries the previous touchdown
// displacement (P2) and eases into the next liftoff displacement (P0), which
// keeps the composed path continuous across phase transitions.
std::array<Vec3, kNumLegs> compose_reference(
    const CpgCommand& cmd, const std::array<BezierResidual, kNumLegs>& res,
    const GaitClock& clock, const TrajgenConfig& cfg);

// Uniform goal sampling within the Table-1 boxes.
class GoalSampler {
 public:
  GoalSampler(uint64_t seed, const TrajgenConfig& cfg)
      : rng_(seed), cfg_(cfg) {}
  GoalCommand sample();
  GoalCommand sample_zero_residual();

 private:
  RngStream rng_;
  TrajgenConfig cfg_;
};

}  // namespace hilmares
