#pragma once

#include <Eigen/Core>
#include <array>
#include <optional>
#include <span>

#include "hilmares/trajgen.hpp"

namespace hilmares {

// 3-DoF leg: hip abduction about x, hip pitch and knee pitch about y.
// At zero angles the leg hangs straight down from the abduction link.
struct LegGeometry {
  std::array<Vec3, kNumLegs> hip_offset = {
      Vec3(0.19, 0.04, 0.0), Vec3(0.19, -0.04, 0.0), Vec3(-0.19, 0.04, 0.0),
      Vec3(-0.19, -0.04, 0.0)};
  double l_abd = 0.08;
  double l_thigh = 0.21;
  double l_calf = 0.21;
};

using JointAngles = std::array<double, 3>;  // abd, hip, knee

struct JointVector {
  std::array<double, 12> q{};       // FL,FR,RL,RR x abd,hip,knee
  std::array<double, 12> qd{};      // rad/s
};

inline double wrap_angle(double a) {
  a = std::fmod(a + M_PI, 2.0 * M_PI);
  if (a < 0.0) a += 2.0 * M_PI;
  return a - M_PI;
}

struct BasePose {
  Vec3 position = Vec3::Zero();   // world, m
  double roll = 0.0, pitch = 0.0, yaw = 0.0;
  Vec3 linear_velocity = Vec3::Zero();
  Vec3 angular_velocity = Vec3::Zero();

  Eigen::Matrix3d rotation() const;
};

// Toe position in the base frame.
Vec3 leg_fk(const LegGeometry& geom, int leg, const JointAngles& q);

// Knee joint position in the base frame (for calf collision checks).
Vec3 leg_knee_fk(const LegGeometry& geom, int leg, const JointAngles& q);

// Closed-form IK, fixed knee-backward branch. Returns nullopt when the target
// is outside the reachable annulus.
std::optional<JointAngles> leg_ik(const LegGeometry& geom, int leg,
                                  const Vec3& target);

// Nearest reachable point to `target` (used to clamp unreachable references).
Vec3 clamp_to_workspace(const LegGeometry& geom, int leg, const Vec3& target);

// Planar rigid transform mapping curr -> prev in the least-squares sense.
struct PlanarTransform {
  double dx = 0.0, dy = 0.0, dpsi = 0.0;
  Vec2 apply(const Vec2& p) const {
    const double c = std::cos(dpsi), s = std::sin(dpsi);
    return Vec2(c * p.x() - s * p.y() + dx, s * p.x() + c * p.y() + dy);
  }
};
PlanarTransform rigid_fit_2d(std::span<const Vec2> prev,
                             std::span<const Vec2> curr);

// Base-footprint frame: base x, y, yaw projected to the ground plane.
struct FootprintFrame {
  double x = 0.0, y = 0.0, yaw = 0.0;

  Vec3 to_world(const Vec3& p) const {
    const double c = std::cos(yaw), s = std::sin(yaw);
    return Vec3(c * p.x() - s * p.y() + x, s * p.x() + c * p.y() + y, p.z());
  }
  Vec3 from_world(const Vec3& p) const {
    const double c = std::cos(yaw), s = std::sin(yaw);
    const double px = p.x() - x, py = p.y() - y;
    return Vec3(c * px + s * py, -s * px + c * py, p.z());
  }
};
FootprintFrame base_footprint_transform(const BasePose& pose);

// World <-> base frame point transforms (full orientation).
Vec3 base_to_world(const BasePose& pose, const Vec3& p_base);
Vec3 world_to_base(const BasePose& pose, const Vec3& p_world);

}  // namespace hilmares
