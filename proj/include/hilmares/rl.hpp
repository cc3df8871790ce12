#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hilmares/checkpoint.hpp"
#include "hilmares/nn.hpp"
#include "hilmares/rng.hpp"

namespace hilmares::rl {

// ------------------------------------------------------------------ GAE

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

// values must have length T+1 (bootstrap value at the end).
GaeResult compute_gae(std::span<const double> rewards,
                      std::span<const double> values,
                      std::span<const uint8_t> dones, double gamma,
                      double lam);

// ------------------------------------------------------------------ buffers

struct Transition {
  std::span<const float> obs;
  std::span<const float> act;
  float reward;
  std::span<const float> next_obs;
  bool done;
};

class TransitionBuffer {
 public:
  TransitionBuffer() = default;
  TransitionBuffer(int obs_dim, int act_dim, size_t capacity);

  void insert(const Transition& t);
  size_t size() const { return size_; }
  size_t capacity() const { return capacity_; }
  int obs_dim() const { return obs_dim_; }
  int act_dim() const { return act_dim_; }

  const float* obs(size_t i) const { return obs_.data() + i * obs_dim_; }
  const float* act(size_t i) const { return act_.data() + i * act_dim_; }
  float reward(size_t i) const { return rew_[i]; }
  const float* next_obs(size_t i) const {
    return next_obs_.data() + i * obs_dim_;
  }
  float done(size_t i) const { return done_[i]; }

  void save(const std::string& path) const;
  static TransitionBuffer load(const std::string& path, size_t max_capacity);

 private:
  int obs_dim_ = 0, act_dim_ = 0;
  size_t capacity_ = 0, size_ = 0, next_ = 0;
  std::vector<float> obs_, act_, rew_, next_obs_, done_;
};

struct MixedBatch {
  nn::Tensor obs, act, rew, next_obs, done;
  int n_offline = 0, n_online = 0;
  bool online_empty_warning = false;
};

// Offline/online replay with a fixed sampling ratio. The offline store is
// frozen after loading; batches contain round(ratio*B) offline items.
class MixedReplayBuffer {
 public:
  MixedReplayBuffer(int obs_dim, int act_dim, size_t offline_capacity = 10000,
                    size_t online_capacity = 200000, double ratio = 0.7);

  static int offline_count(double ratio, int batch);

  void load_offline(const TransitionBuffer& buf);
  void insert_online(const Transition& t);
  MixedBatch sample(int batch, RngStream& rng) const;

  const TransitionBuffer& offline() const { return offline_; }
  const TransitionBuffer& online_store() const { return online_; }
  double ratio() const { return ratio_; }

 private:
  TransitionBuffer offline_, online_;
  double ratio_;
};

// ------------------------------------------------------------------ policies

// Diagonal Gaussian with tanh squashing.
struct SquashedSample {
  std::vector<float> u;  // pre-squash
  std::vector<float> a;  // tanh(u)
  double logp = 0.0;     // includes the tanh correction
};

double tanh_logprob_correction(std::span<const float> u);

// Feed-forward actor-critic for PPO: separate policy and value MLPs plus a
// state-independent log-std vector.
struct MlpActorCritic {
  nn::Sequential actor;  // obs -> mean (linear output)
  nn::Sequential critic; // obs -> 1
  nn::Tensor log_std, dlog_std;
  int obs_dim = 0, act_dim = 0;

  static MlpActorCritic make(int obs_dim, int act_dim,
                             const std::vector<int>& hidden, nn::Act act,
                             uint64_t seed, double init_log_std = -0.7);
  std::vector<nn::ParamRef> params();
  nlohmann::json spec() const;
};

// Shared-trunk recurrent actor-critic for the depth-vision planner:
// conv encoder -> GRU -> [gru, state] trunk -> mean/value heads.
struct VisionActorCritic {
  int img_h = 29, img_w = 43, state_dim = 8, act_dim = 17, latent = 64;
  nn::Sequential encoder;
  nn::GruCell gru{64, 64};
  nn::Sequential trunk;
  nn::Dense mean_head{32, 17, nn::Act::Linear};
  nn::Dense value_head{32, 1, nn::Act::Linear};
  nn::Tensor log_std, dlog_std;

  static VisionActorCritic make(int state_dim, int act_dim, uint64_t seed,
                                double init_log_std = -0.7);
  std::vector<nn::ParamRef> params();
  nlohmann::json spec() const;

  // obs layout: [state | image(row-major h*w), normalized]
  int obs_dim() const { return state_dim + img_h * img_w; }
  // Single rollout step over N envs; h is [N, latent], updated in place.
  // Means/values written to the given buffers.
  void act(const float* obs, int n, nn::Tensor& h, float* mean, float* value);
};

// ------------------------------------------------------------------ PPO

struct PpoConfig {
  double gamma = 0.99;
  double lam = 0.95;
  double clip = 0.2;
  int epochs = 4;
  int minibatch = 512;
  double lr = 3e-4;
  double value_coef = 0.5;
  double entropy_coef = 0.005;
  double max_grad_norm = 0.5;
  int horizon = 64;   // steps per env per update
  int seq_len = 16;   // BPTT chunk for recurrent policies
};

// On-policy storage for N envs x T steps, laid out step-major ([t][env]).
struct RolloutBatch {
  int n_envs = 0, horizon = 0, obs_dim = 0, act_dim = 0, hidden_dim = 0;
  std::vector<float> obs;       // [T*N, obs_dim]
  std::vector<float> u;         // pre-squash actions [T*N, act_dim]
  std::vector<float> logp_old;  // [T*N]
  std::vector<float> value;     // [T*N]
  std::vector<double> reward;   // [T*N]
  std::vector<uint8_t> done;    // [T*N]
  std::vector<float> hidden;    // [T*N, hidden_dim] (recurrent only)
  std::vector<float> bootstrap_value;  // [N]
  std::vector<float> advantage, ret;   // filled by finish()

  size_t idx(int t, int env) const { return size_t(t) * n_envs + env; }
  void resize(int n_envs, int horizon, int obs_dim, int act_dim,
              int hidden_dim = 0);
  // GAE along each env's column + batch-wide advantage normalization.
  void finish(double gamma, double lam);
};

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double mean_ratio = 1.0;
  bool aborted = false;  // non-finite loss: parameters were restored
};

UpdateStats ppo_update(MlpActorCritic& net, nn::Adam& opt,
                       const RolloutBatch& batch, const PpoConfig& cfg,
                       RngStream& rng);
UpdateStats ppo_update_recurrent(VisionActorCritic& net, nn::Adam& opt,
                                 const RolloutBatch& batch,
                                 const PpoConfig& cfg, RngStream& rng);

// ------------------------------------------------------------------ DroQ

struct DroqConfig {
  double gamma = 0.99;
  double tau = 0.005;
  double lr = 3e-4;
  double alpha_lr = 3e-4;
  double init_alpha = 0.1;
  double dropout = 0.01;
  int batch = 128;
  int utd = 1;  // gradient steps per environment step
  std::vector<int> actor_hidden = {128, 64};
  std::vector<int> critic_hidden = {256, 128};
};

// Tanh-squashed Gaussian actor with a state-dependent log-std head and a
// two-critic dropout+layernorm ensemble with target copies.
class DroqAgent {
 public:
  DroqAgent(int obs_dim, int act_dim, const DroqConfig& cfg, uint64_t seed);

  // Stochastic action for exploration; deterministic uses tanh(mean).
  std::vector<float> act(std::span<const float> obs, RngStream& rng,
                         bool deterministic = false);

  struct Stats {
    double critic_loss = 0.0;
    double actor_loss = 0.0;
    double alpha = 0.0;
    double entropy = 0.0;
    bool aborted = false;
  };
  Stats update(const MixedBatch& batch, RngStream& rng);

  double alpha() const { return std::exp(log_alpha_); }
  void set_target_entropy(double h) { target_entropy_ = h; }
  // Soft target update; tau=1 copies the online critics.
  void soft_update(double tau);

  std::vector<nn::ParamRef> checkpoint_params();
  nlohmann::json spec() const;
  void save(const std::string& path, const nlohmann::json& metadata) const;
  void load(const std::string& path);

  // Q estimate from the first online critic (diagnostics/tests).
  double q_value(std::span<const float> obs, std::span<const float> act);

  int obs_dim() const { return obs_dim_; }
  int act_dim() const { return act_dim_; }

 private:
  struct ActorOut {
    nn::Tensor mean, log_std;
  };
  ActorOut actor_forward(const nn::Tensor& obs, bool train, RngStream* rng);

  int obs_dim_, act_dim_;
  DroqConfig cfg_;
  nn::Sequential actor_trunk_;
  nn::Dense mean_head_, logstd_head_;
  nn::Sequential critic_[2], target_[2];
  std::unique_ptr<nn::Adam> actor_opt_, critic_opt_;
  double log_alpha_;
  double target_entropy_;
  RngStream dropout_rng_;
};

}  // namespace hilmares::rl
