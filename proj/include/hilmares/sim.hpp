#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hilmares/kinematics.hpp"
#include "hilmares/rng.hpp"
#include "hilmares/trajgen.hpp"

namespace hilmares {

struct BallState {
  Vec2 position = Vec2::Zero();
  Vec2 velocity = Vec2::Zero();
  double radius = 0.11;
  double drag = 0.5;  // 1/s
};

struct Stone {
  Vec2 center = Vec2::Zero();
  double width = 0.04;   // square footprint side
  double height = 0.08;  // top above ground
};

struct LoadState {
  Vec2 position = Vec2::Zero();
  double yaw = 0.0;
  Vec2 half_extents = Vec2(0.15, 0.15);
  double height = 0.3;
  double mu_loss = 0.3;  // fraction of a push lost to friction
};

// One active object set per task; unused members stay disengaged.
struct WorldObjects {
  std::optional<BallState> ball;
  std::vector<Stone> stones;
  std::optional<LoadState> load;
};

WorldObjects load_scene(const std::string& path);
void save_scene(const WorldObjects& world, const std::string& path);

struct DynamicsRandomization {
  double pd_gain_scale = 1.0;
  double friction = 0.7;
  double base_mass_scale = 1.0;
  double perturb_rate = 0.0;     // Poisson rate, 1/s
  double perturb_impulse = 0.3;  // max horizontal velocity impulse, m/s
};

struct RandomizationRanges {
  bool enabled = false;
  double pd_gain_min = 0.9, pd_gain_max = 1.1;
  double friction_min = 0.4, friction_max = 1.0;
  double mass_min = 0.8, mass_max = 1.2;
  double perturb_rate = 0.2;
  double perturb_impulse = 0.3;
};

DynamicsRandomization randomize_dynamics(RngStream& rng,
                                         const RandomizationRanges& ranges);

struct DepthImage {
  int width = 43;
  int height = 29;
  std::vector<float> data;  // row-major range values, m

  float at(int row, int col) const { return data[size_t(row) * width + col]; }
};

// 16-bit binary PGM, range linearly mapped from [z_min, z_max].
void write_pgm16(const DepthImage& img, double z_min, double z_max,
                 const std::string& path);
std::vector<uint8_t> encode_pgm16(const DepthImage& img, double z_min,
                                  double z_max);

struct CameraConfig {
  Vec3 offset = Vec3(0.25, 0.0, 0.05);  // mount point in the base frame
  double pitch_down = M_PI / 4.0;
  double hfov = 87.0 * M_PI / 180.0;
  int width = 43;
  int height = 29;
  double z_min = 0.1;
  double z_max = 3.0;
};

struct SimConfig {
  double control_dt = 0.02;  // 50 Hz policy rate
  int substeps = 4;          // 200 Hz physics
  double servo_tau = 0.02;   // first-order joint lag, s
  double joint_rate_limit = 15.0;  // rad/s
  double filter_omega = 30.0;      // base height/attitude relaxation, rad/s
  double base_height = 0.32;
  double toe_radius = 0.02;
  double calf_radius = 0.02;
  double base_disc_radius = 0.28;
  double integrity_tol = 0.30;  // max stance FK/anchor mismatch, m
  double perturb_decay_tau = 0.1;
  double ball_restitution = 0.6;
  double load_yaw_gain = 5.0;  // rad per (m arm x m push)
  CameraConfig camera;
  GaitClock clock_shape{0.0, 0.5, 0.5};
  LegGeometry geometry;
  RandomizationRanges randomization;
};

struct RobotState {
  BasePose pose;
  JointVector joints;
  std::array<bool, kNumLegs> contact{};
  std::array<Vec3, kNumLegs> anchor{};  // world toe position while in stance
  GaitClock clock;
  std::array<double, 12> last_targets{};
  // critically-damped filter velocities for z / roll / pitch
  double vz_f = 0.0, vroll_f = 0.0, vpitch_f = 0.0;
  Vec2 perturb_velocity = Vec2::Zero();
};

struct StepEvents {
  std::array<bool, kNumLegs> touchdown{};
  std::array<bool, kNumLegs> liftoff{};
  std::array<bool, kNumLegs> stepped_on{};
  std::array<bool, kNumLegs> stone_contact{};
  std::array<bool, kNumLegs> standing_on_stone{};
  std::vector<int> hit_stone_ids;
  bool ball_kicked = false;
  bool load_contact = false;
  bool perturbed = false;
};

struct StoneEventResult {
  std::array<bool, kNumLegs> stepped_on{};
  std::array<bool, kNumLegs> contacted{};
  std::vector<int> stone_ids;
};

// Stand-alone stone queries (also used inside Simulator::step).
// `touchdown` marks legs whose touchdown point should be tested against the
// stone tops; contact tests run for swing legs (toe sphere + calf segment
// against boxes inflated by the limb radius).
StoneEventResult stone_events(const std::vector<Stone>& stones,
                              const std::array<Vec3, kNumLegs>& toe_world,
                              const std::array<Vec3, kNumLegs>& knee_world,
                              const std::array<bool, kNumLegs>& in_swing,
                              const std::array<bool, kNumLegs>& touchdown,
                              double toe_radius, double calf_radius);

// Ground or stone-top height under a planar point.
double terrain_height(const std::vector<Stone>& stones, const Vec2& xy);

class SimIntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Deterministic quasi-static quadruped world. Joint servos follow commanded
// positions with a first-order lag; the base planar pose is recovered from
// the stance feet (pinned in the world); base height/roll/pitch relax toward
// stance-consistent values through a critically damped filter.
class Simulator {
 public:
  explicit Simulator(const SimConfig& cfg = SimConfig());

  void reset(uint64_t seed);
  void reset(uint64_t seed, const WorldObjects& world);

  StepEvents step(const std::array<double, 12>& joint_targets);

  DepthImage render_depth() const;

  const RobotState& state() const { return state_; }
  RobotState& mutable_state() { return state_; }
  const WorldObjects& world() const { return world_; }
  WorldObjects& mutable_world() { return world_; }
  const SimConfig& config() const { return cfg_; }
  const DynamicsRandomization& dynamics() const { return dyn_; }
  void set_dynamics(const DynamicsRandomization& d) { dyn_ = d; }

  // World toe position: the anchor for stance legs, FK otherwise.
  Vec3 toe_world(int leg) const;
  Vec3 toe_footprint(int leg) const;
  JointAngles leg_angles(int leg) const;

  // Neutral crouch joint angles (IK of the neutral stance at base height).
  std::array<double, 12> neutral_pose() const;

 private:
  void substep(const std::array<double, 12>& targets, StepEvents& ev);
  Vec3 fk_world(int leg) const;

  SimConfig cfg_;
  RobotState state_;
  WorldObjects world_;
  DynamicsRandomization dyn_;
  RngStream rng_;
  std::array<Vec3, kNumLegs> prev_toe_world_{};
};

// Generate the StepOStone corridor: `count` stones scattered over
// x in [x0, x1], y in [-half_width, half_width] with a minimum spacing.
std::vector<Stone> generate_stone_field(RngStream& rng, int count_min = 20,
                                        int count_max = 25, double x0 = 0.3,
                                        double x1 = 4.0,
                                        double half_width = 0.75,
                                        double min_spacing = 0.25);

}  // namespace hilmares
