#include "hilmares/kinematics.hpp"

#include <Eigen/Geometry>
#include <cmath>

namespace hilmares {

Eigen::Matrix3d BasePose::rotation() const {
  return (Eigen::AngleAxisd(yaw, Vec3::UnitZ()) *
          Eigen::AngleAxisd(pitch, Vec3::UnitY()) *
          Eigen::AngleAxisd(roll, Vec3::UnitX()))
      .toRotationMatrix();
}

namespace {
double leg_side(int leg) { return leg_is_left(leg) ? 1.0 : -1.0; }
}  // namespace

Vec3 leg_fk(const LegGeometry& geom, int leg, const JointAngles& q) {
  const double side = leg_side(leg);
  const double ca = std::cos(q[0]), sa = std::sin(q[0]);
  // sagittal-plane position relative to the hip-pitch joint
  const double x = -geom.l_thigh * std::sin(q[1]) -
                   geom.l_calf * std::sin(q[1] + q[2]);
  const double z = -geom.l_thigh * std::cos(q[1]) -
                   geom.l_calf * std::cos(q[1] + q[2]);
  const double y = side * geom.l_abd;
  // rotate (x, y, z) about the x axis by the abduction angle
  return geom.hip_offset[static_cast<size_t>(leg)] +
         Vec3(x, ca * y - sa * z, sa * y + ca * z);
}

Vec3 leg_knee_fk(const LegGeometry& geom, int leg, const JointAngles& q) {
  const double side = leg_side(leg);
  const double ca = std::cos(q[0]), sa = std::sin(q[0]);
  const double x = -geom.l_thigh * std::sin(q[1]);
  const double z = -geom.l_thigh * std::cos(q[1]);
  const double y = side * geom.l_abd;
  return geom.hip_offset[static_cast<size_t>(leg)] +
         Vec3(x, ca * y - sa * z, sa * y + ca * z);
}

std::optional<JointAngles> leg_ik(const LegGeometry& geom, int leg,
                                  const Vec3& target) {
  const double side = leg_side(leg);
  const Vec3 d = target - geom.hip_offset[static_cast<size_t>(leg)];

  const double rho2 = d.y() * d.y() + d.z() * d.z();
  if (rho2 < geom.l_abd * geom.l_abd) return std::nullopt;
  const double rho = std::sqrt(rho2);
  const double alpha = std::atan2(d.z(), d.y());
  const double q_abd = alpha + std::acos(side * geom.l_abd / rho);

  // planar leg coordinates after removing the abduction rotation
  const double zp = -d.y() * std::sin(q_abd) + d.z() * std::cos(q_abd);
  const double r2 = d.x() * d.x() + zp * zp;
  const double lt = geom.l_thigh, lc = geom.l_calf;
  const double rmax = lt + lc, rmin = std::fabs(lt - lc);
  if (r2 > rmax * rmax + 1e-12 || r2 < rmin * rmin - 1e-12)
    return std::nullopt;

  double cos_knee = (r2 - lt * lt - lc * lc) / (2.0 * lt * lc);
  cos_knee = std::clamp(cos_knee, -1.0, 1.0);
  const double q_knee = std::acos(cos_knee);  // knee-backward branch
  const double q_hip = std::atan2(-d.x(), -zp) -
                       std::atan2(lc * std::sin(q_knee), lt + lc * cos_knee);
  return JointAngles{wrap_angle(q_abd), wrap_angle(q_hip), q_knee};
}

Vec3 clamp_to_workspace(const LegGeometry& geom, int leg, const Vec3& target) {
  const Vec3 hip = geom.hip_offset[static_cast<size_t>(leg)];
  Vec3 d = target - hip;

  // keep the lateral offset solvable
  double rho = std::hypot(d.y(), d.z());
  if (rho < geom.l_abd + 1e-6) {
    // push away from the abduction axis, toward the ground side
    const double need = geom.l_abd + 1e-6;
    if (rho < 1e-12) {
      d.y() = 0.0;
      d.z() = -need;
    } else {
      d.y() *= need / rho;
      d.z() *= need / rho;
    }
    rho = need;
  }
  // radial distance within the planar annulus (measured past the abd link)
  const double planar2 = rho * rho - geom.l_abd * geom.l_abd;
  const double r = std::sqrt(std::max(planar2, 0.0) + d.x() * d.x());
  const double rmax = geom.l_thigh + geom.l_calf - 1e-6;
  const double rmin = std::fabs(geom.l_thigh - geom.l_calf) + 1e-6;
  double scale = 1.0;
  if (r > rmax)
    scale = rmax / r;
  else if (r < rmin && r > 1e-12)
    scale = rmin / r;
  else if (r <= 1e-12)
    return hip + Vec3(0.0, d.y() / rho * geom.l_abd, -rmin);
  if (scale != 1.0) {
    // scale the component past the abduction link, keep the lateral offset
    const double planar = std::sqrt(std::max(planar2, 0.0));
    const double planar_new = planar * scale;
    const double dx_new = d.x() * scale;
    const double rho_new = std::sqrt(planar_new * planar_new + geom.l_abd * geom.l_abd);
    d.y() *= rho_new / rho;
    d.z() *= rho_new / rho;
    d.x() = dx_new;
  }
  return hip + d;
}

PlanarTransform rigid_fit_2d(std::span<const Vec2> prev,
                             std::span<const Vec2> curr) {
  const size_t n = std::min(prev.size(), curr.size());
  PlanarTransform out;
  if (n == 0) return out;

  Vec2 cp = Vec2::Zero(), cc = Vec2::Zero();
  for (size_t i = 0; i < n; ++i) {
    cp += prev[i];
    cc += curr[i];
  }
  cp /= static_cast<double>(n);
  cc /= static_cast<double>(n);

  double sxx = 0.0, sxy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const Vec2 a = curr[i] - cc;
    const Vec2 b = prev[i] - cp;
    sxx += a.x() * b.x() + a.y() * b.y();
    sxy += a.x() * b.y() - a.y() * b.x();
  }
  // coincident points: translation-only fit
  const double dpsi =
      (sxx * sxx + sxy * sxy > 1e-24) ? std::atan2(sxy, sxx) : 0.0;
  const double c = std::cos(dpsi), s = std::sin(dpsi);
  out.dpsi = dpsi;
  out.dx = cp.x() - (c * cc.x() - s * cc.y());
  out.dy = cp.y() - (s * cc.x() + c * cc.y());
  return out;
}

FootprintFrame base_footprint_transform(const BasePose& pose) {
  return FootprintFrame{pose.position.x(), pose.position.y(), pose.yaw};
}

Vec3 base_to_world(const BasePose& pose, const Vec3& p_base) {
  return pose.rotation() * p_base + pose.position;
}

Vec3 world_to_base(const BasePose& pose, const Vec3& p_world) {
  return pose.rotation().transpose() * (p_world - pose.position);
}

}  // namespace hilmares
