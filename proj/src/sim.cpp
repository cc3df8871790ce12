#include "hilmares/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace hilmares {

using nlohmann::json;

WorldObjects load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scene file: " + path);
  json j = json::parse(in);
  WorldObjects w;
  if (j.contains("ball")) {
    const auto& b = j["ball"];
    BallState ball;
    ball.position = Vec2(b.at("pos")[0], b.at("pos")[1]);
    if (b.contains("vel")) ball.velocity = Vec2(b["vel"][0], b["vel"][1]);
    if (b.contains("radius")) ball.radius = b["radius"];
    if (b.contains("drag")) ball.drag = b["drag"];
    w.ball = ball;
  }
  for (const auto& s : j.value("stones", json::array())) {
    Stone st;
    st.center = Vec2(s.at("center")[0], s.at("center")[1]);
    st.width = s.at("width");
    st.height = s.at("height");
    w.stones.push_back(st);
  }
  if (j.contains("load")) {
    const auto& l = j["load"];
    LoadState load;
    load.position = Vec2(l.at("pos")[0], l.at("pos")[1]);
    load.yaw = l.value("yaw", 0.0);
    if (l.contains("half_extents"))
      load.half_extents = Vec2(l["half_extents"][0], l["half_extents"][1]);
    load.height = l.value("height", 0.3);
    load.mu_loss = l.value("mu_loss", 0.3);
    w.load = load;
  }
  return w;
}

void save_scene(const WorldObjects& world, const std::string& path) {
  json j;
  if (world.ball) {
    j["ball"] = {{"pos", {world.ball->position.x(), world.ball->position.y()}},
                 {"vel", {world.ball->velocity.x(), world.ball->velocity.y()}},
                 {"radius", world.ball->radius},
                 {"drag", world.ball->drag}};
  }
  if (!world.stones.empty()) {
    j["stones"] = json::array();
    for (const auto& s : world.stones) {
      j["stones"].push_back({{"center", {s.center.x(), s.center.y()}},
                             {"width", s.width},
                             {"height", s.height}});
    }
  }
  if (world.load) {
    j["load"] = {
        {"pos", {world.load->position.x(), world.load->position.y()}},
        {"yaw", world.load->yaw},
        {"half_extents",
         {world.load->half_extents.x(), world.load->half_extents.y()}},
        {"height", world.load->height},
        {"mu_loss", world.load->mu_loss}};
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write scene file: " + path);
  out << j.dump(2) << "\n";
}

DynamicsRandomization randomize_dynamics(RngStream& rng,
                                         const RandomizationRanges& r) {
  DynamicsRandomization d;
  if (!r.enabled) return d;  // identity scales, no perturbations
  d.pd_gain_scale = rng.uniform(r.pd_gain_min, r.pd_gain_max);
  d.friction = rng.uniform(r.friction_min, r.friction_max);
  d.base_mass_scale = rng.uniform(r.mass_min, r.mass_max);
  d.perturb_rate = r.perturb_rate;
  d.perturb_impulse = r.perturb_impulse;
  return d;
}

std::vector<uint8_t> encode_pgm16(const DepthImage& img, double z_min,
                                  double z_max) {
  std::string header = "P5\n" + std::to_string(img.width) + " " +
                       std::to_string(img.height) + "\n65535\n";
  std::vector<uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + img.data.size() * 2);
  const double span = z_max - z_min;
  for (float v : img.data) {
    double t = (static_cast<double>(v) - z_min) / span;
    t = std::clamp(t, 0.0, 1.0);
    const uint16_t u = static_cast<uint16_t>(std::lround(t * 65535.0));
    out.push_back(static_cast<uint8_t>(u >> 8));  // big-endian per PGM
    out.push_back(static_cast<uint8_t>(u & 0xff));
  }
  return out;
}

void write_pgm16(const DepthImage& img, double z_min, double z_max,
                 const std::string& path) {
  const auto bytes = encode_pgm16(img, z_min, z_max);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write PGM: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

double terrain_height(const std::vector<Stone>& stones, const Vec2& xy) {
  double h = 0.0;
  for (const auto& s : stones) {
    if (std::fabs(xy.x() - s.center.x()) <= 0.5 * s.width &&
        std::fabs(xy.y() - s.center.y()) <= 0.5 * s.width) {
      h = std::max(h, s.height);
    }
  }
  return h;
}

namespace {

double point_box_distance(const Vec3& p, const Stone& s) {
  const double hw = 0.5 * s.width;
  const double dx = std::max(std::fabs(p.x() - s.center.x()) - hw, 0.0);
  const double dy = std::max(std::fabs(p.y() - s.center.y()) - hw, 0.0);
  const double dz = std::max({p.z() - s.height, -p.z(), 0.0});
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

// Segment vs axis-aligned box inflated by `radius` (slab test).
bool segment_hits_box(const Vec3& a, const Vec3& b, const Stone& s,
                      double radius) {
  const double hw = 0.5 * s.width + radius;
  const Vec3 lo(s.center.x() - hw, s.center.y() - hw, -radius);
  const Vec3 hi(s.center.x() + hw, s.center.y() + hw, s.height + radius);
  double tmin = 0.0, tmax = 1.0;
  const Vec3 d = b - a;
  for (int i = 0; i < 3; ++i) {
    if (std::fabs(d[i]) < 1e-12) {
      if (a[i] < lo[i] || a[i] > hi[i]) return false;
      continue;
    }
    double t0 = (lo[i] - a[i]) / d[i];
    double t1 = (hi[i] - a[i]) / d[i];
    if (t0 > t1) std::swap(t0, t1);
    tmin = std::max(tmin, t0);
    tmax = std::min(tmax, t1);
    if (tmin > tmax) return false;
  }
  return true;
}

}  // namespace

StoneEventResult stone_events(const std::vector<Stone>& stones,
                              const std::array<Vec3, kNumLegs>& toe_world,
                              const std::array<Vec3, kNumLegs>& knee_world,
                              const std::array<bool, kNumLegs>& in_swing,
                              const std::array<bool, kNumLegs>& touchdown,
                              double toe_radius, double calf_radius) {
  StoneEventResult res;
  for (int leg = 0; leg < kNumLegs; ++leg) {
    for (size_t i = 0; i < stones.size(); ++i) {
      const Stone& s = stones[i];
      bool hit = false;
      if (touchdown[leg]) {
        const double hw = 0.5 * s.width;
        if (std::fabs(toe_world[leg].x() - s.center.x()) <= hw &&
            std::fabs(toe_world[leg].y() - s.center.y()) <= hw) {
          res.stepped_on[leg] = true;
          hit = true;
        }
      }
      if (in_swing[leg]) {
        if (point_box_distance(toe_world[leg], s) < toe_radius ||
            segment_hits_box(knee_world[leg], toe_world[leg], s,
                             calf_radius)) {
          res.contacted[leg] = true;
          hit = true;
        }
      }
      if (hit &&
          std::find(res.stone_ids.begin(), res.stone_ids.end(),
                    static_cast<int>(i)) == res.stone_ids.end()) {
        res.stone_ids.push_back(static_cast<int>(i));
      }
    }
  }
  return res;
}

Simulator::Simulator(const SimConfig& cfg) : cfg_(cfg), rng_(0) {
  reset(0);
}

std::array<double, 12> Simulator::neutral_pose() const {
  std::array<double, 12> q{};
  for (int leg = 0; leg < kNumLegs; ++leg) {
    const Vec2 n = Vec2(leg_is_front(leg) ? 0.19 : -0.19,
                        leg_is_left(leg) ? 0.12 : -0.12);
    const Vec3 target(n.x(), n.y(), -cfg_.base_height);
    auto ik = leg_ik(cfg_.geometry, leg, target);
    if (!ik) throw SimIntegrityError("neutral stance is unreachable");
    for (int j = 0; j < 3; ++j) q[size_t(leg * 3 + j)] = (*ik)[size_t(j)];
  }
  return q;
}

void Simulator::reset(uint64_t seed) { reset(seed, WorldObjects{}); }

void Simulator::reset(uint64_t seed, const WorldObjects& world) {
  rng_.seed(seed);
  world_ = world;
  dyn_ = randomize_dynamics(rng_, cfg_.randomization);

  state_ = RobotState{};
  state_.clock = cfg_.clock_shape;
  state_.clock.t = 0.0;
  state_.pose.position = Vec3(0.0, 0.0, cfg_.base_height);
  const auto q0 = neutral_pose();
  state_.joints.q = q0;
  state_.last_targets = q0;

  for (int leg = 0; leg < kNumLegs; ++leg) {
    const Vec3 w = fk_world(leg);
    prev_toe_world_[size_t(leg)] = w;
    if (!state_.clock.in_swing(leg)) {
      state_.contact[size_t(leg)] = true;
      state_.anchor[size_t(leg)] =
          Vec3(w.x(), w.y(), terrain_height(world_.stones, Vec2(w.x(), w.y())));
    }
  }
}

Vec3 Simulator::fk_world(int leg) const {
  const JointAngles q = leg_angles(leg);
  return base_to_world(state_.pose, leg_fk(cfg_.geometry, leg, q));
}

JointAngles Simulator::leg_angles(int leg) const {
  return {state_.joints.q[size_t(leg * 3)], state_.joints.q[size_t(leg * 3 + 1)],
          state_.joints.q[size_t(leg * 3 + 2)]};
}

Vec3 Simulator::toe_world(int leg) const {
  if (state_.contact[size_t(leg)]) return state_.anchor[size_t(leg)];
  return fk_world(leg);
}

Vec3 Simulator::toe_footprint(int leg) const {
  return base_footprint_transform(state_.pose).from_world(toe_world(leg));
}

StepEvents Simulator::step(const std::array<double, 12>& joint_targets) {
  StepEvents ev;
  state_.last_targets = joint_targets;
  for (int i = 0; i < cfg_.substeps; ++i) substep(joint_targets, ev);
  return ev;
}

void Simulator::substep(const std::array<double, 12>& targets,
                        StepEvents& ev) {
  const double dt = cfg_.control_dt / cfg_.substeps;
  state_.clock.t += dt;

  // joint servo: first-order lag with rate limit
  const double tau = cfg_.servo_tau / std::max(dyn_.pd_gain_scale, 1e-6);
  const double alpha = 1.0 - std::exp(-dt / tau);
  const double max_dq = cfg_.joint_rate_limit * dt;
  for (int j = 0; j < 12; ++j) {
    const double q = state_.joints.q[size_t(j)];
    double dq = alpha * (targets[size_t(j)] - q);
    dq = std::clamp(dq, -max_dq, max_dq);
    state_.joints.q[size_t(j)] = q + dq;
    state_.joints.qd[size_t(j)] = dq / dt;
  }

  const Vec3 prev_pos = state_.pose.position;
  const double prev_yaw = state_.pose.yaw;
  const double prev_roll = state_.pose.roll, prev_pitch = state_.pose.pitch;

  std::array<Vec3, kNumLegs> feet_base;
  for (int leg = 0; leg < kNumLegs; ++leg)
    feet_base[size_t(leg)] = leg_fk(cfg_.geometry, leg, leg_angles(leg));

  // scheduled transitions: liftoff at the stance->swing boundary, forced
  // touchdown for swing legs whose stance window has started
  for (int leg = 0; leg < kNumLegs; ++leg) {
    const bool swing_scheduled = state_.clock.in_swing(leg);
    if (state_.contact[size_t(leg)] && swing_scheduled) {
      state_.contact[size_t(leg)] = false;
      ev.liftoff[size_t(leg)] = true;
    } else if (!state_.contact[size_t(leg)] && !swing_scheduled) {
      const Vec3 w = base_to_world(state_.pose, feet_base[size_t(leg)]);
      const double h = terrain_height(world_.stones, Vec2(w.x(), w.y()));
      state_.contact[size_t(leg)] = true;
      state_.anchor[size_t(leg)] = Vec3(w.x(), w.y(), h);
      ev.touchdown[size_t(leg)] = true;
    }
  }

  // base planar pose from the pinned stance feet
  std::vector<Vec2> prev_pts, curr_pts;
  for (int leg = 0; leg < kNumLegs; ++leg) {
    if (!state_.contact[size_t(leg)]) continue;
    const Vec3 w = base_to_world(state_.pose, feet_base[size_t(leg)]);
    curr_pts.emplace_back(w.x(), w.y());
    prev_pts.emplace_back(state_.anchor[size_t(leg)].x(),
                          state_.anchor[size_t(leg)].y());
  }
  if (curr_pts.size() >= 2) {
    const PlanarTransform fit = rigid_fit_2d(prev_pts, curr_pts);
    const Vec2 p = fit.apply(Vec2(state_.pose.position.x(),
                                  state_.pose.position.y()));
    state_.pose.position.x() = p.x();
    state_.pose.position.y() = p.y();
    state_.pose.yaw = wrap_angle(state_.pose.yaw + fit.dpsi);
  }

  // perturbations: horizontal velocity impulses at a Poisson rate, realized
  // as decaying base/anchor drift plus an attitude-rate kick
  if (dyn_.perturb_rate > 0.0 && rng_.bernoulli(dyn_.perturb_rate * dt)) {
    const double mag = rng_.uniform(0.0, dyn_.perturb_impulse);
    const double ang = rng_.uniform(0.0, 2.0 * M_PI);
    const Vec2 imp(mag * std::cos(ang), mag * std::sin(ang));
    state_.perturb_velocity += imp;
    const double cy = std::cos(state_.pose.yaw), sy = std::sin(state_.pose.yaw);
    const Vec2 imp_base(cy * imp.x() + sy * imp.y(),
                        -sy * imp.x() + cy * imp.y());
    state_.vpitch_f += imp_base.x() / cfg_.base_height;
    state_.vroll_f -= imp_base.y() / cfg_.base_height;
    ev.perturbed = true;
  }
  if (state_.perturb_velocity.squaredNorm() > 1e-12) {
    const Vec2 slip = state_.perturb_velocity * dt;
    state_.pose.position.x() += slip.x();
    state_.pose.position.y() += slip.y();
    for (int leg = 0; leg < kNumLegs; ++leg) {
      state_.anchor[size_t(leg)].x() += slip.x();
      state_.anchor[size_t(leg)].y() += slip.y();
    }
    state_.perturb_velocity *= std::exp(-dt / cfg_.perturb_decay_tau);
  } else {
    state_.perturb_velocity.setZero();
  }

  // height / attitude: critically damped relaxation toward stance-consistent
  // values (mass scale slows the response)
  {
    const Eigen::Matrix3d R = state_.pose.rotation();
    double z_target = cfg_.base_height;
    int n = 0;
    double acc = 0.0;
    for (int leg = 0; leg < kNumLegs; ++leg) {
      if (!state_.contact[size_t(leg)]) continue;
      const Vec3 r = R * feet_base[size_t(leg)];
      acc += state_.anchor[size_t(leg)].z() - r.z();
      ++n;
    }
    if (n > 0) z_target = acc / n;
    const double omega = cfg_.filter_omega / std::sqrt(dyn_.base_mass_scale);
    auto relax = [&](double& x, double& v, double target) {
      const double a = omega * omega * (target - x) - 2.0 * omega * v;
      v += a * dt;
      x += v * dt;
    };
    relax(state_.pose.position.z(), state_.vz_f, z_target);
    relax(state_.pose.roll, state_.vroll_f, 0.0);
    relax(state_.pose.pitch, state_.vpitch_f, 0.0);
  }

  // natural touchdown: swing legs that reach the terrain during the second
  // three quarters of the swing become stance
  for (int leg = 0; leg < kNumLegs; ++leg) {
    if (state_.contact[size_t(leg)] || !state_.clock.in_swing(leg)) continue;
    if (state_.clock.swing_s(leg) < 0.25) continue;
    const Vec3 w = base_to_world(state_.pose, feet_base[size_t(leg)]);
    const double h = terrain_height(world_.stones, Vec2(w.x(), w.y()));
    if (w.z() <= h) {
      state_.contact[size_t(leg)] = true;
      state_.anchor[size_t(leg)] = Vec3(w.x(), w.y(), h);
      ev.touchdown[size_t(leg)] = true;
    }
  }

  // integrity: stance FK must stay near the anchors
  for (int leg = 0; leg < kNumLegs; ++leg) {
    if (!state_.contact[size_t(leg)]) continue;
    const Vec3 w = base_to_world(state_.pose, feet_base[size_t(leg)]);
    if ((w - state_.anchor[size_t(leg)]).norm() > cfg_.integrity_tol) {
      throw SimIntegrityError("stance foot diverged from its anchor (leg " +
                              std::string(leg_name(leg)) + ")");
    }
  }

  // base velocities
  state_.pose.linear_velocity = (state_.pose.position - prev_pos) / dt;
  state_.pose.angular_velocity =
      Vec3((state_.pose.roll - prev_roll) / dt,
           (state_.pose.pitch - prev_pitch) / dt,
           wrap_angle(state_.pose.yaw - prev_yaw) / dt);

  // toe world positions & velocities for object interactions
  std::array<Vec3, kNumLegs> toe_w, knee_w;
  std::array<bool, kNumLegs> swing_now{};
  for (int leg = 0; leg < kNumLegs; ++leg) {
    toe_w[size_t(leg)] = toe_world(leg);
    knee_w[size_t(leg)] = base_to_world(
        state_.pose, leg_knee_fk(cfg_.geometry, leg, leg_angles(leg)));
    swing_now[size_t(leg)] = !state_.contact[size_t(leg)];
  }

  if (world_.ball) {
    BallState& ball = *world_.ball;
    for (int leg = 0; leg < kNumLegs; ++leg) {
      const Vec3& p = toe_w[size_t(leg)];
      if (p.z() > 2.0 * ball.radius) continue;
      const Vec2 toe_xy(p.x(), p.y());
      const Vec2 toe_v = (Vec2(p.x(), p.y()) -
                          Vec2(prev_toe_world_[size_t(leg)].x(),
                               prev_toe_world_[size_t(leg)].y())) /
                         dt;
      Vec2 n = ball.position - toe_xy;
      const double dist = n.norm();
      const double reach = ball.radius + cfg_.toe_radius;
      if (dist >= reach || dist < 1e-9) continue;
      n /= dist;
      const double approach = (toe_v - ball.velocity).dot(n);
      if (approach <= 0.0) continue;  // receding toe: no impulse
      ball.velocity += cfg_.ball_restitution * approach * n;
      ball.position = toe_xy + n * reach;
      ev.ball_kicked = true;
    }
    ball.velocity *= std::exp(-ball.drag * dt);
    ball.position += ball.velocity * dt;
  }

  if (!world_.stones.empty()) {
    std::array<bool, kNumLegs> td{};
    for (int leg = 0; leg < kNumLegs; ++leg)
      td[size_t(leg)] = ev.touchdown[size_t(leg)];
    const StoneEventResult r =
        stone_events(world_.stones, toe_w, knee_w, swing_now, td,
                     cfg_.toe_radius, cfg_.calf_radius);
    for (int leg = 0; leg < kNumLegs; ++leg) {
      ev.stepped_on[size_t(leg)] =
          ev.stepped_on[size_t(leg)] || r.stepped_on[size_t(leg)];
      ev.stone_contact[size_t(leg)] =
          ev.stone_contact[size_t(leg)] || r.contacted[size_t(leg)];
      ev.standing_on_stone[size_t(leg)] =
          state_.contact[size_t(leg)] && state_.anchor[size_t(leg)].z() > 1e-6;
    }
    for (int id : r.stone_ids) {
      if (std::find(ev.hit_stone_ids.begin(), ev.hit_stone_ids.end(), id) ==
          ev.hit_stone_ids.end())
        ev.hit_stone_ids.push_back(id);
    }
  }

  if (world_.load) {
    LoadState& load = *world_.load;
    // ground friction scales the push loss (0.7 is the unrandomized value)
    const double mu = std::clamp(load.mu_loss * dyn_.friction / 0.7, 0.0, 0.95);
    const double cl = std::cos(load.yaw), sl = std::sin(load.yaw);
    auto to_load = [&](const Vec2& p) {
      const Vec2 d = p - load.position;
      return Vec2(cl * d.x() + sl * d.y(), -sl * d.x() + cl * d.y());
    };
    auto from_load_dir = [&](const Vec2& d) {
      return Vec2(cl * d.x() - sl * d.y(), sl * d.x() + cl * d.y());
    };
    auto push = [&](const Vec2& local, const Vec2& vel_world, double radius,
                    bool allow_yaw, bool need_approach) {
      const double px = load.half_extents.x() + radius - std::fabs(local.x());
      const double py = load.half_extents.y() + radius - std::fabs(local.y());
      if (px <= 0.0 || py <= 0.0) return;
      Vec2 n_local;  // inward normal of the contacted face
      double pen;
      if (px < py) {
        n_local = Vec2(local.x() > 0.0 ? -1.0 : 1.0, 0.0);
        pen = px;
      } else {
        n_local = Vec2(0.0, local.y() > 0.0 ? -1.0 : 1.0);
        pen = py;
      }
      const Vec2 n_world = from_load_dir(n_local);
      if (need_approach && vel_world.dot(n_world) <= 0.0) return;
      const double disp = pen * (1.0 - mu);
      load.position += disp * n_world;
      if (allow_yaw) {
        // contact point on the face, clamped to the box extents
        Vec2 cp = local;
        if (std::fabs(n_local.x()) > 0.5)
          cp.x() = std::copysign(load.half_extents.x(), local.x());
        else
          cp.y() = std::copysign(load.half_extents.y(), local.y());
        const Vec2 arm = from_load_dir(cp);
        const double torque = arm.x() * n_world.y() - arm.y() * n_world.x();
        load.yaw = wrap_angle(load.yaw + cfg_.load_yaw_gain * torque * disp);
      }
      ev.load_contact = true;
    };
    for (int leg = 0; leg < kNumLegs; ++leg) {
      if (!leg_is_front(leg) || state_.contact[size_t(leg)]) continue;
      const Vec3& p = toe_w[size_t(leg)];
      if (p.z() > load.height) continue;
      const Vec2 toe_v = (Vec2(p.x(), p.y()) -
                          Vec2(prev_toe_world_[size_t(leg)].x(),
                               prev_toe_world_[size_t(leg)].y())) /
                         dt;
      push(to_load(Vec2(p.x(), p.y())), toe_v, cfg_.toe_radius, true, true);
    }
    // keep the load clear of the base footprint
    const Vec2 base_xy(state_.pose.position.x(), state_.pose.position.y());
    const Vec2 base_v(state_.pose.linear_velocity.x(),
                      state_.pose.linear_velocity.y());
    push(to_load(base_xy), base_v, cfg_.base_disc_radius, false, false);
  }

  for (int leg = 0; leg < kNumLegs; ++leg)
    prev_toe_world_[size_t(leg)] = toe_w[size_t(leg)];
}

DepthImage Simulator::render_depth() const {
  const CameraConfig& cam = cfg_.camera;
  DepthImage img;
  img.width = cam.width;
  img.height = cam.height;
  img.data.assign(size_t(cam.width) * cam.height,
                  static_cast<float>(cam.z_max));

  const Eigen::Matrix3d Rb = state_.pose.rotation();
  const Vec3 origin = Rb * cam.offset + state_.pose.position;
  const double cb = std::cos(cam.pitch_down), sb = std::sin(cam.pitch_down);
  Eigen::Matrix3d Rc;  // camera axes in the base frame: x right, y down, z fwd
  Rc.col(0) = Vec3(0.0, -1.0, 0.0);
  Rc.col(1) = Vec3(-sb, 0.0, -cb);
  Rc.col(2) = Vec3(cb, 0.0, -sb);
  const Eigen::Matrix3d Rwc = Rb * Rc;

  const double fx = 0.5 * cam.width / std::tan(0.5 * cam.hfov);
  const double fy = fx;
  const double cx = 0.5 * (cam.width - 1);
  const double cy = 0.5 * (cam.height - 1);

  for (int row = 0; row < cam.height; ++row) {
    for (int col = 0; col < cam.width; ++col) {
      const Vec3 dir_cam((col - cx) / fx, (row - cy) / fy, 1.0);
      const Vec3 dir = (Rwc * dir_cam).normalized();
      double best = cam.z_max;
      if (dir.z() < -1e-9) {
        const double t = -origin.z() / dir.z();
        if (t > 0.0) best = std::min(best, t);
      }
      for (const auto& s : world_.stones) {
        const double hw = 0.5 * s.width;
        double tmin = 0.0, tmax = best;
        const double lo[3] = {s.center.x() - hw, s.center.y() - hw, 0.0};
        const double hi[3] = {s.center.x() + hw, s.center.y() + hw, s.height};
        bool ok = true;
        for (int i = 0; i < 3 && ok; ++i) {
          if (std::fabs(dir[i]) < 1e-12) {
            if (origin[i] < lo[i] || origin[i] > hi[i]) ok = false;
            continue;
          }
          double t0 = (lo[i] - origin[i]) / dir[i];
          double t1 = (hi[i] - origin[i]) / dir[i];
          if (t0 > t1) std::swap(t0, t1);
          tmin = std::max(tmin, t0);
          tmax = std::min(tmax, t1);
          if (tmin > tmax) ok = false;
        }
        if (ok && tmin < best) best = tmin;
      }
      best = std::clamp(best, cam.z_min, cam.z_max);
      img.data[size_t(row) * cam.width + col] = static_cast<float>(best);
    }
  }
  return img;
}

std::vector<Stone> generate_stone_field(RngStream& rng, int count_min,
                                        int count_max, double x0, double x1,
                                        double half_width,
                                        double min_spacing) {
  const int count =
      count_min + static_cast<int>(rng.randint(
                      static_cast<uint64_t>(count_max - count_min + 1)));
  std::vector<Stone> stones;
  int guard = 0;
  while (static_cast<int>(stones.size()) < count && guard < 20000) {
    ++guard;
    Stone s;
    s.center = Vec2(rng.uniform(x0, x1), rng.uniform(-half_width, half_width));
    s.width = rng.uniform(0.03, 0.05);
    s.height = rng.uniform(0.05, 0.10);
    bool ok = true;
    for (const auto& other : stones) {
      if ((other.center - s.center).norm() < min_spacing) {
        ok = false;
        break;
      }
    }
    if (ok) stones.push_back(s);
  }
  return stones;
}

}  // namespace hilmares
