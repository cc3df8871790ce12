#pragma once

#include <array>
#include <deque>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "hilmares/rl.hpp"
#include "hilmares/sim.hpp"
#include "hilmares/trajgen.hpp"

namespace hilmares {

// ------------------------------------------------------------------ rewards

struct RewardConfig {
  double sigma_e = 5.0;         // end-effector tracking sharpness, 1/m
  double sigma_yaw = 2.0;       // yaw-position tracking sharpness, 1/rad
  double sigma_ball = 2.0;      // proximity sharpness, 1/m
  double sigma_ball_vel = 2.0;  // ball velocity tracking sharpness
  double sigma_load = 2.0;
  double w_tracking = 1.0;  // dominant term
  double w_yaw = 0.3;
  double w_roll_pitch_rate = 0.05;
  double w_vertical_vel = 0.1;
  double stepostone_w_contact = 0.7;
  double stepostone_w_stepping = 0.3;
  double dribble_w_vel = 1.0;
  double dribble_w_close = 0.5;
  double navload_w_move = 50.0;  // scales the raw distance delta
  double navload_w_close = 0.5;
};

struct ControllerRewardBreakdown {
  double tracking = 0.0;  // mean over feet of exp(-sigma_e * err)
  double yaw = 0.0;
  double rp_penalty = 0.0;
  double vz_penalty = 0.0;
  double total = 0.0;
};

ControllerRewardBreakdown controller_reward(
    const std::array<double, kNumLegs>& foot_err, double roll_rate,
    double pitch_rate, double vz, double yaw_err, const RewardConfig& cfg);

struct DribbleRewardBreakdown {
  double velocity = 0.0;   // exp(-sigma_ball_vel * ||v - v_des||)
  double proximity = 0.0;  // exp(-sigma_ball * d)
  double total = 0.0;
};
DribbleRewardBreakdown dribble_reward(const Vec2& ball_vel,
                                      const Vec2& desired_vel, double d_ball,
                                      const RewardConfig& cfg);

// 0.7 * (no contact) + 0.3 * (no stepping)
double stepostone_reward(bool any_contact, bool any_stepping,
                         const RewardConfig& cfg);

struct NavloadRewardBreakdown {
  double move = 0.0;       // d_{k-1} - d_k
  double proximity = 0.0;  // exp(-sigma_load * robot-load distance)
  double total = 0.0;
};
NavloadRewardBreakdown navload_reward(double prev_dist, double curr_dist,
                                      double robot_load_dist,
                                      const RewardConfig& cfg);

// ------------------------------------------------------------------ core

struct ControllerLayout {
  static constexpr int kProprio = 30;  // rpy(3) drpy(3) q(12) qd(12)
  static constexpr int kHistorySlots = 4;
  static constexpr int kHistorySlot = kProprio + 12;  // (obs, action) pair
  static constexpr int kPhase = 2;
  static constexpr int kGoal = kGoalDim;  // 17
  static constexpr int kObsDim =
      kProprio + kHistorySlots * kHistorySlot + kPhase + kGoal;  // 217
  static constexpr int kActDim = 12;
};

// Goal latching, observation assembly, reward evaluation and the joint-target
// action mapping for the locomotion controller. Owned by the controller env
// and reused verbatim inside every planner env.
class ControllerCore {
 public:
  ControllerCore() = default;
  ControllerCore(const TrajgenConfig& tg, const RewardConfig& rew,
                 const std::array<double, 3>& action_scale);

  void reset(const Simulator& sim);
  void set_goal(const GoalCommand& g) { goal_ = g; }
  const GoalCommand& goal() const { return goal_; }

  // Call after every sim step: latches residuals at swing onsets and
  // integrates the commanded yaw reference.
  void after_step(const Simulator& sim, double dt);

  // Composed per-leg references at the given clock, base-footprint frame.
  std::array<Vec3, kNumLegs> references(const GaitClock& clock) const;

  ControllerRewardBreakdown reward(const Simulator& sim) const;

  void build_obs(const Simulator& sim, float* out) const;
  std::array<double, 12> action_to_targets(const float* a) const;
  void push_history(const float* proprio, const float* action);

  double yaw_ref() const { return yaw_ref_; }
  void set_neutral(const std::array<double, 12>& q) { neutral_ = q; }
  const TrajgenConfig& trajgen() const { return tg_; }

  static void proprio_obs(const Simulator& sim, float* out30);

 private:
  TrajgenConfig tg_;
  RewardConfig rew_;
  std::array<double, 3> action_scale_{0.4, 0.9, 0.9};
  std::array<double, 12> neutral_{};
  GoalCommand goal_;
  std::array<BezierResidual, kNumLegs> latched_{};
  std::array<bool, kNumLegs> was_swing_{};
  double yaw_ref_ = 0.0;
  std::deque<std::array<float, ControllerLayout::kHistorySlot>> history_;
};

// Joint targets from IK of the composed reference, led by the servo lag.
// Stands in for the RL controller during planner bring-up and tests.
std::array<double, 12> scripted_tracking_controller(const Simulator& sim,
                                                    const ControllerCore& core,
                                                    double lead_time);

// Inner controller used by planner envs: scripted oracle or a loaded policy.
class ControllerRunner {
 public:
  // oracle
  explicit ControllerRunner(double lead_time) : lead_(lead_time) {}
  // RL policy checkpoint (MlpActorCritic container)
  explicit ControllerRunner(const std::string& checkpoint_path);

  std::array<double, 12> compute(const Simulator& sim, ControllerCore& core);
  bool is_oracle() const { return !policy_; }
  // normalized action written to `out12` (oracle reports targets mapped back)
  const std::array<float, 12>& last_action() const { return last_action_; }

 private:
  double lead_ = 0.02;
  std::shared_ptr<rl::MlpActorCritic> policy_;
  std::array<float, 12> last_action_{};
  std::vector<float> obs_buf_;
};

// ------------------------------------------------------------------ envs

class Env {
 public:
  virtual ~Env() = default;
  virtual int obs_dim() const = 0;
  virtual int act_dim() const = 0;
  virtual void reset(uint64_t seed, float* obs) = 0;
  struct StepOut {
    double reward = 0.0;
    bool done = false;
    bool success = false;
    bool fall = false;
  };
  virtual StepOut step(const float* action, float* obs) = 0;
};

struct ControllerEnvConfig {
  SimConfig sim;
  TrajgenConfig trajgen;
  RewardConfig reward;
  std::array<double, 3> action_scale{0.4, 0.9, 0.9};
  int episode_steps = 4000;
  double fall_angle = 0.6;  // rad, roll/pitch termination threshold
  bool zero_residual_goals = false;
};

class ControllerEnv : public Env {
 public:
  explicit ControllerEnv(const ControllerEnvConfig& cfg);
  int obs_dim() const override { return ControllerLayout::kObsDim; }
  int act_dim() const override { return ControllerLayout::kActDim; }
  void reset(uint64_t seed, float* obs) override;
  StepOut step(const float* action, float* obs) override;

  const ControllerRewardBreakdown& last_breakdown() const { return last_rew_; }
  const Simulator& sim() const { return sim_; }
  ControllerCore& core() { return core_; }
  int steps() const { return step_count_; }

 private:
  void build_obs(float* obs);

  ControllerEnvConfig cfg_;
  Simulator sim_;
  ControllerCore core_;
  std::unique_ptr<GoalSampler> sampler_;
  ControllerRewardBreakdown last_rew_;
  std::array<float, ControllerLayout::kProprio> last_proprio_{};
  int step_count_ = 0;
  int resample_steps_ = 500;
};

// Planner action layout (17): [front residual 7 | rear residual 7 | vx vy wz],
// each component mapped linearly from [-1,1] onto its Table-1 box.
struct PlannerEnvConfig {
  SimConfig sim;
  TrajgenConfig trajgen;
  RewardConfig reward;
  std::array<double, 3> action_scale{0.4, 0.9, 0.9};
  std::string controller_checkpoint;  // empty -> scripted oracle
  double oracle_lead = 0.02;
};

class PlannerEnvBase : public Env {
 public:
  PlannerEnvBase(const PlannerEnvConfig& cfg, int task_obs_dim);
  int obs_dim() const override { return 8 + task_obs_dim_; }
  int act_dim() const override { return kGoalDim; }
  void reset(uint64_t seed, float* obs) override;
  StepOut step(const float* action, float* obs) override;

  const Simulator& sim() const { return sim_; }
  double time() const { return sim_.state().clock.t; }
  const GoalCommand& last_goal() const { return core_.goal(); }

 protected:
  virtual void task_reset(RngStream& rng) = 0;
  virtual double task_reward(const StepEvents& ev) = 0;
  virtual void task_done(StepOut& out) = 0;
  virtual void task_obs(float* out) = 0;
  // Task hook to reshape the commanded CPG values (e.g. corridor speed).
  virtual CpgCommand shape_command(const CpgCommand& cmd) const { return cmd; }

  GoalCommand action_to_goal(const float* a) const;
  void common_obs(float* out8) const;

  PlannerEnvConfig cfg_;
  Simulator sim_;
  ControllerCore core_;
  std::unique_ptr<ControllerRunner> controller_;
  RngStream task_rng_;
  int step_count_ = 0;
};

struct DribbleEnvConfig : PlannerEnvConfig {
  double max_seconds = 30.0;
  double ball_start_distance = 0.4;
  double ball_radius = 0.11;
  double drag_min = 0.3, drag_max = 1.0;
  double desired_speed_min = 0.3, desired_speed_max = 1.0;
  double lose_ball_distance = 3.0;
};

class DribbleEnv : public PlannerEnvBase {
 public:
  static constexpr int kTaskObs = 2 + 1 + 2 + 16;  // 21
  explicit DribbleEnv(const DribbleEnvConfig& cfg);
  const DribbleRewardBreakdown& last_breakdown() const { return last_rew_; }
  Vec2 desired_velocity() const;

 protected:
  void task_reset(RngStream& rng) override;
  double task_reward(const StepEvents& ev) override;
  void task_done(StepOut& out) override;
  void task_obs(float* out) override;

 private:
  DribbleEnvConfig dcfg_;
  double desired_speed_ = 0.5, desired_angle_ = 0.0;
  DribbleRewardBreakdown last_rew_;
  std::deque<std::array<float, 4>> pos_history_;  // robot xy, ball xy
};

struct StepOStoneEnvConfig : PlannerEnvConfig {
  double max_seconds = 20.0;
  double corridor_length = 4.0;
  double corridor_half_width = 0.75;
  double max_abs_y = 0.5;
  int stones_min = 20, stones_max = 25;
  double min_spacing = 0.25;
  uint64_t stone_seed = 0;      // 0 -> derive from the episode seed
  double vx_min = 0.3, vx_max = 0.7;
  double wz_limit = 0.5;
};

class StepOStoneEnv : public PlannerEnvBase {
 public:
  static constexpr int kImagePixels = 43 * 29;
  explicit StepOStoneEnv(const StepOStoneEnvConfig& cfg);

  // per-episode stone bookkeeping for the Table-3 style metrics
  int stones_encountered() const;
  int stones_hit() const { return static_cast<int>(hit_.size()); }
  int stones_passed() const;  // encountered and traversed without a hit
  const std::vector<Stone>& stones() const { return sim_.world().stones; }
  double last_reward_value() const { return last_reward_; }

 protected:
  void task_reset(RngStream& rng) override;
  double task_reward(const StepEvents& ev) override;
  void task_done(StepOut& out) override;
  void task_obs(float* out) override;
  CpgCommand shape_command(const CpgCommand& cmd) const override;

 private:
  StepOStoneEnvConfig scfg_;
  std::set<int> crossed_, hit_;
  double last_reward_ = 1.0;
};

struct NavLoadEnvConfig : PlannerEnvConfig {
  double max_seconds = 60.0;
  Vec2 load_start{1.0, 0.0};
  Vec2 load_half_extents{0.15, 0.15};
  double load_height = 0.3;
  double load_mu_loss = 0.3;
  double target_radius = 1.0;     // training target ring around the load
  double success_distance = 0.1;
  bool fixed_target = false;
  Vec2 target{2.0, 0.0};
};

class NavLoadEnv : public PlannerEnvBase {
 public:
  static constexpr int kTaskObs = 7;  // robot pose 3, load 2, target 2
  explicit NavLoadEnv(const NavLoadEnvConfig& cfg);

  void set_fixed_target(const Vec2& t);
  double load_target_distance() const;
  const NavloadRewardBreakdown& last_breakdown() const { return last_rew_; }

 protected:
  void task_reset(RngStream& rng) override;
  double task_reward(const StepEvents& ev) override;
  void task_done(StepOut& out) override;
  void task_obs(float* out) override;

 private:
  NavLoadEnvConfig ncfg_;
  Vec2 target_{2.0, 0.0};
  double prev_dist_ = 0.0;
  NavloadRewardBreakdown last_rew_;
};

}  // namespace hilmares
