#include "hilmares/rl.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iostream>

namespace hilmares::rl {

using nn::Tensor;

// ------------------------------------------------------------------ GAE

GaeResult compute_gae(std::span<const double> rewards,
                      std::span<const double> values,
                      std::span<const uint8_t> dones, double gamma,
                      double lam) {
  const size_t T = rewards.size();
  if (values.size() != T + 1 || dones.size() != T)
    throw nn::ConfigError("compute_gae: values must have length T+1");
  GaeResult out;
  out.advantages.assign(T, 0.0);
  out.returns.assign(T, 0.0);
  double next_adv = 0.0;
  for (size_t i = T; i-- > 0;) {
    const double not_done = dones[i] ? 0.0 : 1.0;
    const double delta =
        rewards[i] + gamma * values[i + 1] * not_done - values[i];
    next_adv = delta + gamma * lam * not_done * next_adv;
    out.advantages[i] = next_adv;
    out.returns[i] = next_adv + values[i];
  }
  return out;
}

// ------------------------------------------------------------------ buffers

TransitionBuffer::TransitionBuffer(int obs_dim, int act_dim, size_t capacity)
    : obs_dim_(obs_dim), act_dim_(act_dim), capacity_(capacity) {
  obs_.resize(capacity * size_t(obs_dim));
  act_.resize(capacity * size_t(act_dim));
  rew_.resize(capacity);
  next_obs_.resize(capacity * size_t(obs_dim));
  done_.resize(capacity);
}

void TransitionBuffer::insert(const Transition& t) {
  if (capacity_ == 0) throw std::logic_error("insert into empty buffer");
  const size_t i = next_;
  std::memcpy(obs_.data() + i * obs_dim_, t.obs.data(),
              sizeof(float) * size_t(obs_dim_));
  std::memcpy(act_.data() + i * act_dim_, t.act.data(),
              sizeof(float) * size_t(act_dim_));
  rew_[i] = t.reward;
  std::memcpy(next_obs_.data() + i * obs_dim_, t.next_obs.data(),
              sizeof(float) * size_t(obs_dim_));
  done_[i] = t.done ? 1.0f : 0.0f;
  next_ = (next_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
}

void TransitionBuffer::save(const std::string& path) const {
  const int n = static_cast<int>(size_);
  Tensor obs({n, obs_dim_}), act({n, act_dim_}), rew({n}), nobs({n, obs_dim_}),
      done({n});
  std::memcpy(obs.data(), obs_.data(), sizeof(float) * size_ * obs_dim_);
  std::memcpy(act.data(), act_.data(), sizeof(float) * size_ * act_dim_);
  std::memcpy(rew.data(), rew_.data(), sizeof(float) * size_);
  std::memcpy(nobs.data(), next_obs_.data(), sizeof(float) * size_ * obs_dim_);
  std::memcpy(done.data(), done_.data(), sizeof(float) * size_);
  write_container(path, kBufferMagic,
                  {{"obs", &obs},
                   {"act", &act},
                   {"rew", &rew},
                   {"next_obs", &nobs},
                   {"done", &done}},
                  nlohmann::json::object(),
                  {{"count", n}, {"obs_dim", obs_dim_}, {"act_dim", act_dim_}});
}

TransitionBuffer TransitionBuffer::load(const std::string& path,
                                        size_t max_capacity) {
  Container c = read_container(path, kBufferMagic);
  const Tensor& obs = c.tensors.at("obs");
  const Tensor& act = c.tensors.at("act");
  const Tensor& rew = c.tensors.at("rew");
  const Tensor& nobs = c.tensors.at("next_obs");
  const Tensor& done = c.tensors.at("done");
  const size_t n_file = size_t(obs.shape[0]);
  const int od = obs.shape[1], ad = act.shape[1];
  size_t n = n_file;
  if (n > max_capacity) {
    std::cerr << "buffer " << path << " holds " << n_file
              << " transitions; keeping the first " << max_capacity << "\n";
    n = max_capacity;
  }
  TransitionBuffer buf(od, ad, std::max(n, size_t(1)));
  for (size_t i = 0; i < n; ++i) {
    Transition t;
    t.obs = std::span<const float>(obs.data() + i * size_t(od), size_t(od));
    t.act = std::span<const float>(act.data() + i * size_t(ad), size_t(ad));
    t.reward = rew.v[i];
    t.next_obs =
        std::span<const float>(nobs.data() + i * size_t(od), size_t(od));
    t.done = done.v[i] > 0.5f;
    buf.insert(t);
  }
  return buf;
}

MixedReplayBuffer::MixedReplayBuffer(int obs_dim, int act_dim,
                                     size_t offline_capacity,
                                     size_t online_capacity, double ratio)
    : offline_(obs_dim, act_dim, offline_capacity),
      online_(obs_dim, act_dim, online_capacity), ratio_(ratio) {}

int MixedReplayBuffer::offline_count(double ratio, int batch) {
  return static_cast<int>(std::lround(ratio * batch));
}

void MixedReplayBuffer::load_offline(const TransitionBuffer& buf) {
  const size_t n = std::min(buf.size(), offline_.capacity());
  if (buf.size() > offline_.capacity()) {
    std::cerr << "offline store capacity is " << offline_.capacity()
              << "; dropping " << buf.size() - offline_.capacity()
              << " transitions\n";
  }
  for (size_t i = 0; i < n; ++i) {
    Transition t;
    t.obs = {buf.obs(i), size_t(buf.obs_dim())};
    t.act = {buf.act(i), size_t(buf.act_dim())};
    t.reward = buf.reward(i);
    t.next_obs = {buf.next_obs(i), size_t(buf.obs_dim())};
    t.done = buf.done(i) > 0.5f;
    offline_.insert(t);
  }
}

void MixedReplayBuffer::insert_online(const Transition& t) {
  online_.insert(t);
}

MixedBatch MixedReplayBuffer::sample(int batch, RngStream& rng) const {
  if (offline_.size() == 0 && online_.size() == 0)
    throw std::logic_error("sample_mixed: both stores empty");
  int n_off = offline_count(ratio_, batch);
  int n_on = batch - n_off;
  MixedBatch out;
  if (online_.size() == 0) {
    n_off = batch;
    n_on = 0;
    out.online_empty_warning = true;
  } else if (offline_.size() == 0) {
    n_off = 0;
    n_on = batch;
  }
  out.n_offline = n_off;
  out.n_online = n_on;
  const int od = offline_.obs_dim() ? offline_.obs_dim() : online_.obs_dim();
  const int ad = offline_.act_dim() ? offline_.act_dim() : online_.act_dim();
  out.obs = Tensor({batch, od});
  out.act = Tensor({batch, ad});
  out.rew = Tensor({batch});
  out.next_obs = Tensor({batch, od});
  out.done = Tensor({batch});
  auto fill = [&](const TransitionBuffer& store, int row0, int count) {
    for (int r = 0; r < count; ++r) {
      const size_t i = rng.randint(store.size());
      const int row = row0 + r;
      std::memcpy(out.obs.data() + int64_t(row) * od, store.obs(i),
                  sizeof(float) * size_t(od));
      std::memcpy(out.act.data() + int64_t(row) * ad, store.act(i),
                  sizeof(float) * size_t(ad));
      out.rew.v[size_t(row)] = store.reward(i);
      std::memcpy(out.next_obs.data() + int64_t(row) * od, store.next_obs(i),
                  sizeof(float) * size_t(od));
      out.done.v[size_t(row)] = store.done(i);
    }
  };
  fill(offline_, 0, n_off);
  fill(online_, n_off, n_on);
  return out;
}

// ------------------------------------------------------------------ policies

double tanh_logprob_correction(std::span<const float> u) {
  double corr = 0.0;
  for (float ui : u) {
    const double th = std::tanh(ui);
    corr -= std::log(1.0 - th * th + 1e-6);
  }
  return corr;
}

MlpActorCritic MlpActorCritic::make(int obs_dim, int act_dim,
                                    const std::vector<int>& hidden,
                                    nn::Act act, uint64_t seed,
                                    double init_log_std) {
  MlpActorCritic net;
  net.obs_dim = obs_dim;
  net.act_dim = act_dim;
  RngStream rng(seed);
  int prev = obs_dim;
  net.actor = nn::Sequential({1, obs_dim});
  for (int h : hidden) {
    net.actor.dense(prev, h, act);
    prev = h;
  }
  net.actor.dense(prev, act_dim, nn::Act::Linear);
  prev = obs_dim;
  net.critic = nn::Sequential({1, obs_dim});
  for (int h : hidden) {
    net.critic.dense(prev, h, act);
    prev = h;
  }
  net.critic.dense(prev, 1, nn::Act::Linear);
  net.actor.init(rng);
  net.critic.init(rng);
  net.log_std = Tensor({act_dim});
  net.dlog_std = Tensor({act_dim});
  std::fill(net.log_std.v.begin(), net.log_std.v.end(),
            static_cast<float>(init_log_std));
  return net;
}

std::vector<nn::ParamRef> MlpActorCritic::params() {
  std::vector<nn::ParamRef> p;
  actor.params("actor", p);
  p.push_back({"actor.log_std", &log_std, &dlog_std});
  critic.params("critic", p);
  return p;
}

nlohmann::json MlpActorCritic::spec() const {
  return {{"kind", "mlp_actor_critic"},
          {"obs_dim", obs_dim},
          {"act_dim", act_dim},
          {"actor", actor.spec()},
          {"critic", critic.spec()}};
}

VisionActorCritic VisionActorCritic::make(int state_dim, int act_dim,
                                          uint64_t seed,
                                          double init_log_std) {
  VisionActorCritic net;
  net.state_dim = state_dim;
  net.act_dim = act_dim;
  RngStream rng(seed);

  net.encoder = nn::Sequential({1, 1, net.img_h, net.img_w});
  net.encoder.conv2d(1, 32, 5, nn::Act::ReLU);
  net.encoder.maxpool(2, 2);
  net.encoder.conv2d(32, 64, 3, nn::Act::ReLU);
  net.encoder.flatten();
  const int flat = net.encoder.output_shape()[1];
  net.encoder.dense(flat, net.latent, nn::Act::ReLU);

  net.gru = nn::GruCell(net.latent, net.latent);

  net.trunk = nn::Sequential({1, net.latent + state_dim});
  net.trunk.dense(net.latent + state_dim, 64, nn::Act::ELU);
  net.trunk.dense(64, 32, nn::Act::ELU);

  net.mean_head = nn::Dense(32, act_dim, nn::Act::Linear);
  net.value_head = nn::Dense(32, 1, nn::Act::Linear);

  net.encoder.init(rng);
  net.gru.init(rng);
  net.trunk.init(rng);
  net.mean_head.init(rng);
  net.value_head.init(rng);
  net.log_std = Tensor({act_dim});
  net.dlog_std = Tensor({act_dim});
  std::fill(net.log_std.v.begin(), net.log_std.v.end(),
            static_cast<float>(init_log_std));
  return net;
}

std::vector<nn::ParamRef> VisionActorCritic::params() {
  std::vector<nn::ParamRef> p;
  encoder.params("encoder", p);
  gru.params("gru", p);
  trunk.params("trunk", p);
  mean_head.params("mean_head", p);
  value_head.params("value_head", p);
  p.push_back({"log_std", &log_std, &dlog_std});
  return p;
}

nlohmann::json VisionActorCritic::spec() const {
  nlohmann::json j;
  j["kind"] = "vision_actor_critic";
  j["state_dim"] = state_dim;
  j["act_dim"] = act_dim;
  j["image"] = {img_h, img_w};
  j["encoder"] = encoder.spec();
  j["gru"] = gru.spec();
  j["trunk"] = trunk.spec();
  return j;
}

void VisionActorCritic::act(const float* obs, int n, Tensor& h, float* mean,
                            float* value) {
  const int img = img_h * img_w;
  Tensor imgs({n, 1, img_h, img_w});
  for (int i = 0; i < n; ++i)
    std::memcpy(imgs.data() + int64_t(i) * img, obs + int64_t(i) * obs_dim() +
                                                    state_dim,
                sizeof(float) * size_t(img));
  Tensor enc = encoder.forward(imgs, false, nullptr);
  Tensor h_new = gru.forward_step(enc, h, false);
  h = h_new;
  Tensor trunk_in({n, latent + state_dim});
  for (int i = 0; i < n; ++i) {
    std::memcpy(trunk_in.data() + int64_t(i) * (latent + state_dim),
                h_new.data() + int64_t(i) * latent, sizeof(float) * size_t(latent));
    std::memcpy(trunk_in.data() + int64_t(i) * (latent + state_dim) + latent,
                obs + int64_t(i) * obs_dim(), sizeof(float) * size_t(state_dim));
  }
  Tensor feat = trunk.forward(trunk_in, false, nullptr);
  Tensor m = mean_head.forward(feat, false, nullptr);
  Tensor v = value_head.forward(feat, false, nullptr);
  std::memcpy(mean, m.data(), sizeof(float) * size_t(n) * act_dim);
  for (int i = 0; i < n; ++i) value[i] = v.v[size_t(i)];
}

// ------------------------------------------------------------------ rollout

void RolloutBatch::resize(int n, int t, int od, int ad, int hd) {
  n_envs = n;
  horizon = t;
  obs_dim = od;
  act_dim = ad;
  hidden_dim = hd;
  const size_t rows = size_t(n) * t;
  obs.assign(rows * od, 0.0f);
  u.assign(rows * ad, 0.0f);
  logp_old.assign(rows, 0.0f);
  value.assign(rows, 0.0f);
  reward.assign(rows, 0.0);
  done.assign(rows, 0);
  hidden.assign(hd > 0 ? rows * hd : 0, 0.0f);
  bootstrap_value.assign(size_t(n), 0.0f);
  advantage.assign(rows, 0.0f);
  ret.assign(rows, 0.0f);
}

void RolloutBatch::finish(double gamma, double lam) {
  std::vector<double> r(horizon), v(horizon + 1);
  std::vector<uint8_t> d(horizon);
  for (int e = 0; e < n_envs; ++e) {
    for (int t = 0; t < horizon; ++t) {
      r[size_t(t)] = reward[idx(t, e)];
      v[size_t(t)] = value[idx(t, e)];
      d[size_t(t)] = done[idx(t, e)];
    }
    v[size_t(horizon)] = bootstrap_value[size_t(e)];
    const GaeResult g = compute_gae(r, v, d, gamma, lam);
    for (int t = 0; t < horizon; ++t) {
      advantage[idx(t, e)] = static_cast<float>(g.advantages[size_t(t)]);
      ret[idx(t, e)] = static_cast<float>(g.returns[size_t(t)]);
    }
  }
  // batch-wide advantage normalization
  double mean = 0.0;
  for (float a : advantage) mean += a;
  mean /= double(advantage.size());
  double var = 0.0;
  for (float a : advantage) var += (a - mean) * (a - mean);
  var /= double(advantage.size());
  const double inv = 1.0 / std::sqrt(var + 1e-8);
  for (float& a : advantage) a = static_cast<float>((a - mean) * inv);
}

// ------------------------------------------------------------------ PPO

namespace {

struct ParamSnapshot {
  std::vector<std::vector<float>> values;
  void capture(const std::vector<nn::ParamRef>& params) {
    values.clear();
    for (const auto& p : params) values.push_back(p.value->v);
  }
  void restore(std::vector<nn::ParamRef>& params) const {
    for (size_t i = 0; i < params.size(); ++i) params[i].value->v = values[i];
  }
};

// Per-sample clipped-surrogate gradient w.r.t. logp. Ties prefer the clipped
// branch so an epsilon of zero is an exact no-op at ratio one.
inline double surrogate_grad(double ratio, double adv, double clip,
                             double inv_m, double& loss_acc) {
  const double clipped = std::clamp(ratio, 1.0 - clip, 1.0 + clip);
  const double a = ratio * adv, b = clipped * adv;
  loss_acc -= std::min(a, b) * inv_m;
  if (a < b) return -adv * ratio * inv_m;
  return 0.0;  // clipped branch active (or tie)
}

}  // namespace

UpdateStats ppo_update(MlpActorCritic& net, nn::Adam& opt,
                       const RolloutBatch& batch, const PpoConfig& cfg,
                       RngStream& rng) {
  UpdateStats stats;
  auto params = net.params();
  ParamSnapshot snapshot;
  snapshot.capture(params);

  const int A = batch.act_dim, D = batch.obs_dim;
  const size_t rows = batch.logp_old.size();
  std::vector<size_t> perm(rows);
  for (size_t i = 0; i < rows; ++i) perm[i] = i;

  const double half_log2pi = 0.5 * std::log(2.0 * M_PI);
  int n_minibatches = 0;
  double loss_p = 0.0, loss_v = 0.0, ent = 0.0, ratio_sum = 0.0;
  bool bad = false;

  for (int epoch = 0; epoch < cfg.epochs && !bad; ++epoch) {
    for (size_t i = rows; i > 1; --i)
      std::swap(perm[i - 1], perm[rng.randint(i)]);
    for (size_t start = 0; start < rows && !bad; start += size_t(cfg.minibatch)) {
      const int M = static_cast<int>(
          std::min(size_t(cfg.minibatch), rows - start));
      Tensor obs({M, D});
      for (int r = 0; r < M; ++r)
        std::memcpy(obs.data() + int64_t(r) * D,
                    batch.obs.data() + int64_t(perm[start + r]) * D,
                    sizeof(float) * size_t(D));
      Tensor mean = net.actor.forward(obs, true, &rng);
      Tensor vpred = net.critic.forward(obs, true, &rng);

      Tensor dmean({M, A}), dv({M, 1});
      opt.zero_grad();
      double mb_policy_loss = 0.0, mb_value_loss = 0.0;
      const double inv_m = 1.0 / M;
      for (int r = 0; r < M; ++r) {
        const size_t row = perm[start + r];
        const float* u_row = batch.u.data() + row * size_t(A);
        double logp = -A * half_log2pi;
        for (int a = 0; a < A; ++a) {
          const double s = net.log_std.v[size_t(a)];
          const double sig = std::exp(s);
          const double z = (u_row[a] - mean.v[int64_t(r) * A + a]) / sig;
          logp += -0.5 * z * z - s;
        }
        const double ratio = std::exp(logp - batch.logp_old[row]);
        ratio_sum += ratio;
        const double g =
            surrogate_grad(ratio, batch.advantage[row], cfg.clip, inv_m,
                           mb_policy_loss);
        for (int a = 0; a < A; ++a) {
          const double s = net.log_std.v[size_t(a)];
          const double sig = std::exp(s);
          const double z = (u_row[a] - mean.v[int64_t(r) * A + a]) / sig;
          dmean.v[int64_t(r) * A + a] = static_cast<float>(g * z / sig);
          net.dlog_std.v[size_t(a)] += static_cast<float>(g * (z * z - 1.0));
        }
        const double verr = vpred.v[size_t(r)] - batch.ret[row];
        mb_value_loss += 0.5 * verr * verr * inv_m;
        dv.v[size_t(r)] = static_cast<float>(cfg.value_coef * verr * inv_m);
      }
      double entropy = 0.0;
      for (int a = 0; a < A; ++a) {
        entropy += net.log_std.v[size_t(a)] + 0.5 * (1.0 + std::log(2.0 * M_PI));
        net.dlog_std.v[size_t(a)] -= static_cast<float>(cfg.entropy_coef);
      }
      if (!std::isfinite(mb_policy_loss) || !std::isfinite(mb_value_loss)) {
        bad = true;
        break;
      }
      net.actor.backward(dmean);
      net.critic.backward(dv);
      opt.clip_grad_norm(cfg.max_grad_norm);
      opt.step();
      loss_p += mb_policy_loss;
      loss_v += mb_value_loss;
      ent += entropy;
      ++n_minibatches;
    }
  }
  if (bad) {
    snapshot.restore(params);
    stats.aborted = true;
    return stats;
  }
  if (n_minibatches > 0) {
    stats.policy_loss = loss_p / n_minibatches;
    stats.value_loss = loss_v / n_minibatches;
    stats.entropy = ent / n_minibatches;
    stats.mean_ratio = ratio_sum / (double(n_minibatches) * cfg.minibatch);
  }
  return stats;
}

UpdateStats ppo_update_recurrent(VisionActorCritic& net, nn::Adam& opt,
                                 const RolloutBatch& batch,
                                 const PpoConfig& cfg, RngStream& rng) {
  UpdateStats stats;
  auto params = net.params();
  ParamSnapshot snapshot;
  snapshot.capture(params);

  const int A = batch.act_dim;
  const int L = cfg.seq_len;
  const int T = batch.horizon, N = batch.n_envs;
  if (T % L != 0)
    throw nn::ConfigError("ppo_update_recurrent: horizon must be a multiple "
                          "of seq_len");
  const int chunks = T / L;
  const int n_seq = chunks * N;
  std::vector<int> seq_perm(static_cast<size_t>(n_seq));
  for (int i = 0; i < n_seq; ++i) seq_perm[size_t(i)] = i;
  const int seq_per_mb = std::max(1, cfg.minibatch / L);

  const int H = net.latent;
  const int SD = net.state_dim;
  const int IMG = net.img_h * net.img_w;
  const double half_log2pi = 0.5 * std::log(2.0 * M_PI);

  int n_minibatches = 0;
  double loss_p = 0.0, loss_v = 0.0, ent = 0.0, ratio_sum = 0.0;
  int ratio_count = 0;
  bool bad = false;

  for (int epoch = 0; epoch < cfg.epochs && !bad; ++epoch) {
    for (int i = n_seq; i > 1; --i)
      std::swap(seq_perm[size_t(i - 1)], seq_perm[rng.randint(uint64_t(i))]);
    for (int start = 0; start < n_seq && !bad; start += seq_per_mb) {
      const int S = std::min(seq_per_mb, n_seq - start);
      const int LM = L * S;

      // gather frames step-major: row j*S + s
      Tensor imgs({LM, 1, net.img_h, net.img_w});
      std::vector<size_t> row_of(static_cast<size_t>(LM));
      for (int j = 0; j < L; ++j)
        for (int s = 0; s < S; ++s) {
          const int seq = seq_perm[size_t(start + s)];
          const int env = seq % N, chunk = seq / N;
          const size_t row = batch.idx(chunk * L + j, env);
          row_of[size_t(j) * S + s] = row;
          std::memcpy(imgs.data() + (int64_t(j) * S + s) * IMG,
                      batch.obs.data() + row * size_t(net.obs_dim()) + SD,
                      sizeof(float) * size_t(IMG));
        }
      Tensor enc = net.encoder.forward(imgs, true, &rng);

      net.gru.clear_tape();
      Tensor h({S, H});
      for (int s = 0; s < S; ++s) {
        const size_t row = row_of[size_t(s)];  // first step of each sequence
        std::memcpy(h.data() + int64_t(s) * H,
                    batch.hidden.data() + row * size_t(H),
                    sizeof(float) * size_t(H));
      }
      Tensor trunk_in({LM, H + SD});
      std::vector<uint8_t> done_step(static_cast<size_t>(LM));
      for (int j = 0; j < L; ++j) {
        Tensor xj({S, H});
        std::memcpy(xj.data(), enc.data() + int64_t(j) * S * H,
                    sizeof(float) * size_t(S) * H);
        Tensor out = net.gru.forward_step(xj, h, true);
        for (int s = 0; s < S; ++s) {
          const size_t row = row_of[size_t(j) * S + s];
          float* dst = trunk_in.data() + (int64_t(j) * S + s) * (H + SD);
          std::memcpy(dst, out.data() + int64_t(s) * H, sizeof(float) * size_t(H));
          std::memcpy(dst + H, batch.obs.data() + row * size_t(net.obs_dim()),
                      sizeof(float) * size_t(SD));
          done_step[size_t(j) * S + s] = batch.done[row];
        }
        h = out;
        for (int s = 0; s < S; ++s)
          if (done_step[size_t(j) * S + s])
            for (int k = 0; k < H; ++k) h.v[int64_t(s) * H + k] = 0.0f;
      }
      Tensor feat = net.trunk.forward(trunk_in, true, &rng);
      Tensor mean = net.mean_head.forward(feat, true, &rng);
      Tensor vpred = net.value_head.forward(feat, true, &rng);

      opt.zero_grad();
      Tensor dmean({LM, A}), dv({LM, 1});
      double mb_policy_loss = 0.0, mb_value_loss = 0.0;
      const double inv_m = 1.0 / LM;
      for (int m = 0; m < LM; ++m) {
        const size_t row = row_of[size_t(m)];
        const float* u_row = batch.u.data() + row * size_t(A);
        double logp = -A * half_log2pi;
        for (int a = 0; a < A; ++a) {
          const double s = net.log_std.v[size_t(a)];
          const double sig = std::exp(s);
          const double z = (u_row[a] - mean.v[int64_t(m) * A + a]) / sig;
          logp += -0.5 * z * z - s;
        }
        const double ratio = std::exp(logp - batch.logp_old[row]);
        ratio_sum += ratio;
        ++ratio_count;
        const double g = surrogate_grad(ratio, batch.advantage[row], cfg.clip,
                                        inv_m, mb_policy_loss);
        for (int a = 0; a < A; ++a) {
          const double s = net.log_std.v[size_t(a)];
          const double sig = std::exp(s);
          const double z = (u_row[a] - mean.v[int64_t(m) * A + a]) / sig;
          dmean.v[int64_t(m) * A + a] = static_cast<float>(g * z / sig);
          net.dlog_std.v[size_t(a)] += static_cast<float>(g * (z * z - 1.0));
        }
        const double verr = vpred.v[size_t(m)] - batch.ret[row];
        mb_value_loss += 0.5 * verr * verr * inv_m;
        dv.v[size_t(m)] = static_cast<float>(cfg.value_coef * verr * inv_m);
      }
      double entropy = 0.0;
      for (int a = 0; a < A; ++a) {
        entropy += net.log_std.v[size_t(a)] + 0.5 * (1.0 + std::log(2.0 * M_PI));
        net.dlog_std.v[size_t(a)] -= static_cast<float>(cfg.entropy_coef);
      }
      if (!std::isfinite(mb_policy_loss) || !std::isfinite(mb_value_loss)) {
        bad = true;
        break;
      }

      Tensor dfeat = net.mean_head.backward(dmean);
      Tensor dfeat_v = net.value_head.backward(dv);
      for (size_t i = 0; i < dfeat.v.size(); ++i) dfeat.v[i] += dfeat_v.v[i];
      Tensor dtrunk_in = net.trunk.backward(dfeat);

      Tensor denc({LM, H});
      Tensor dh_chain({S, H});
      for (int j = L - 1; j >= 0; --j) {
        Tensor dout({S, H});
        for (int s = 0; s < S; ++s) {
          const float* src =
              dtrunk_in.data() + (int64_t(j) * S + s) * (H + SD);
          const bool d = done_step[size_t(j) * S + s] != 0;
          for (int k = 0; k < H; ++k) {
            dout.v[int64_t(s) * H + k] =
                src[k] + (d ? 0.0f : dh_chain.v[int64_t(s) * H + k]);
          }
        }
        auto [dx, dh] = net.gru.backward_step(dout);
        std::memcpy(denc.data() + int64_t(j) * S * H, dx.data(),
                    sizeof(float) * size_t(S) * H);
        dh_chain = dh;
      }
      net.encoder.backward(denc);

      opt.clip_grad_norm(cfg.max_grad_norm);
      opt.step();
      loss_p += mb_policy_loss;
      loss_v += mb_value_loss;
      ent += entropy;
      ++n_minibatches;
    }
  }
  if (bad) {
    snapshot.restore(params);
    stats.aborted = true;
    return stats;
  }
  if (n_minibatches > 0) {
    stats.policy_loss = loss_p / n_minibatches;
    stats.value_loss = loss_v / n_minibatches;
    stats.entropy = ent / n_minibatches;
    stats.mean_ratio = ratio_count ? ratio_sum / ratio_count : 1.0;
  }
  return stats;
}

// ------------------------------------------------------------------ DroQ

namespace {
constexpr double kLogStdMin = -5.0;
constexpr double kLogStdMax = 2.0;
}  // namespace

DroqAgent::DroqAgent(int obs_dim, int act_dim, const DroqConfig& cfg,
                     uint64_t seed)
    : obs_dim_(obs_dim), act_dim_(act_dim), cfg_(cfg),
      mean_head_(64, act_dim, nn::Act::Linear),
      logstd_head_(64, act_dim, nn::Act::Linear),
      log_alpha_(std::log(cfg.init_alpha)),
      target_entropy_(-double(act_dim)),
      dropout_rng_(RngStream::derive_seed(seed, 77)) {
  RngStream rng(seed);
  actor_trunk_ = nn::Sequential({1, obs_dim});
  int prev = obs_dim;
  const nn::Act acts[2] = {nn::Act::ReLU, nn::Act::Tanh};
  for (size_t i = 0; i < cfg.actor_hidden.size(); ++i) {
    actor_trunk_.dense(prev, cfg.actor_hidden[i],
                       acts[std::min<size_t>(i, 1)]);
    prev = cfg.actor_hidden[i];
  }
  mean_head_ = nn::Dense(prev, act_dim, nn::Act::Linear);
  logstd_head_ = nn::Dense(prev, act_dim, nn::Act::Linear);
  actor_trunk_.init(rng);
  mean_head_.init(rng);
  logstd_head_.init(rng);
  for (float& b : logstd_head_.b.v) b = -1.0f;

  for (int c = 0; c < 2; ++c) {
    for (nn::Sequential* net : {&critic_[c], &target_[c]}) {
      *net = nn::Sequential({1, obs_dim + act_dim});
      int p = obs_dim + act_dim;
      for (int h : cfg.critic_hidden) {
        net->dense(p, h, nn::Act::Linear);
        net->dropout(cfg.dropout);
        net->layernorm(h);
        net->activation(nn::Act::ReLU);
        p = h;
      }
      net->dense(p, 1, nn::Act::Linear);
    }
    critic_[c].init(rng);
  }
  soft_update(1.0);  // targets start as copies

  std::vector<nn::ParamRef> actor_params;
  actor_trunk_.params("actor", actor_params);
  mean_head_.params("actor.mean", actor_params);
  logstd_head_.params("actor.logstd", actor_params);
  actor_opt_ = std::make_unique<nn::Adam>(actor_params,
                                          nn::AdamConfig{cfg.lr, 0.9, 0.999,
                                                         1e-8});
  std::vector<nn::ParamRef> critic_params;
  critic_[0].params("critic0", critic_params);
  critic_[1].params("critic1", critic_params);
  critic_opt_ = std::make_unique<nn::Adam>(critic_params,
                                           nn::AdamConfig{cfg.lr, 0.9, 0.999,
                                                          1e-8});
}

DroqAgent::ActorOut DroqAgent::actor_forward(const Tensor& obs, bool train,
                                             RngStream* rng) {
  Tensor feat = actor_trunk_.forward(obs, train, rng);
  ActorOut out;
  out.mean = mean_head_.forward(feat, train, rng);
  out.log_std = logstd_head_.forward(feat, train, rng);
  for (float& s : out.log_std.v)
    s = std::clamp(s, static_cast<float>(kLogStdMin),
                   static_cast<float>(kLogStdMax));
  return out;
}

std::vector<float> DroqAgent::act(std::span<const float> obs, RngStream& rng,
                                  bool deterministic) {
  Tensor o({1, obs_dim_});
  std::copy(obs.begin(), obs.end(), o.v.begin());
  ActorOut a = actor_forward(o, false, nullptr);
  std::vector<float> out(static_cast<size_t>(act_dim_));
  for (int i = 0; i < act_dim_; ++i) {
    double u = a.mean.v[size_t(i)];
    if (!deterministic)
      u += std::exp(a.log_std.v[size_t(i)]) * rng.normal();
    out[size_t(i)] = static_cast<float>(std::tanh(u));
  }
  return out;
}

void DroqAgent::soft_update(double tau) {
  for (int c = 0; c < 2; ++c) {
    std::vector<nn::ParamRef> online, target;
    critic_[c].params("x", online);
    target_[c].params("x", target);
    for (size_t i = 0; i < online.size(); ++i) {
      auto& ov = online[i].value->v;
      auto& tv = target[i].value->v;
      for (size_t j = 0; j < ov.size(); ++j)
        tv[j] = static_cast<float>(tau * ov[j] + (1.0 - tau) * tv[j]);
    }
  }
}

DroqAgent::Stats DroqAgent::update(const MixedBatch& batch, RngStream& rng) {
  Stats st;
  const int M = batch.obs.shape[0];
  const int A = act_dim_, D = obs_dim_;
  st.alpha = alpha();

  // ---- targets: y = r + gamma (1-d) (min Q'(s',a') - alpha log pi(a'|s'))
  ActorOut next_pi = actor_forward(batch.next_obs, false, nullptr);
  Tensor next_in({M, D + A});
  std::vector<double> next_logp(static_cast<size_t>(M), 0.0);
  const double half_log2pi = 0.5 * std::log(2.0 * M_PI);
  for (int i = 0; i < M; ++i) {
    std::memcpy(next_in.data() + int64_t(i) * (D + A),
                batch.next_obs.data() + int64_t(i) * D, sizeof(float) * size_t(D));
    double lp = -A * half_log2pi;
    for (int a = 0; a < A; ++a) {
      const double s = next_pi.log_std.v[int64_t(i) * A + a];
      const double eps = rng.normal();
      const double u = next_pi.mean.v[int64_t(i) * A + a] + std::exp(s) * eps;
      const double th = std::tanh(u);
      lp += -0.5 * eps * eps - s - std::log(1.0 - th * th + 1e-6);
      next_in.v[int64_t(i) * (D + A) + D + a] = static_cast<float>(th);
    }
    next_logp[size_t(i)] = lp;
  }
  Tensor q1t = target_[0].forward(next_in, true, &dropout_rng_);
  Tensor q2t = target_[1].forward(next_in, true, &dropout_rng_);
  std::vector<double> y(static_cast<size_t>(M));
  const double a_coef = alpha();
  for (int i = 0; i < M; ++i) {
    const double qmin = std::min(q1t.v[size_t(i)], q2t.v[size_t(i)]);
    y[size_t(i)] = batch.rew.v[size_t(i)] +
                   cfg_.gamma * (1.0 - batch.done.v[size_t(i)]) *
                       (qmin - a_coef * next_logp[size_t(i)]);
  }

  // ---- critic update
  Tensor in({M, D + A});
  for (int i = 0; i < M; ++i) {
    std::memcpy(in.data() + int64_t(i) * (D + A), batch.obs.data() + int64_t(i) * D,
                sizeof(float) * size_t(D));
    std::memcpy(in.data() + int64_t(i) * (D + A) + D,
                batch.act.data() + int64_t(i) * A, sizeof(float) * size_t(A));
  }
  critic_opt_->zero_grad();
  double closs = 0.0;
  for (int c = 0; c < 2; ++c) {
    Tensor q = critic_[c].forward(in, true, &dropout_rng_);
    Tensor dq({M, 1});
    for (int i = 0; i < M; ++i) {
      const double err = q.v[size_t(i)] - y[size_t(i)];
      closs += err * err / M;
      dq.v[size_t(i)] = static_cast<float>(2.0 * err / M);
    }
    critic_[c].backward(dq);
  }
  if (!std::isfinite(closs)) {
    st.aborted = true;
    return st;
  }
  critic_opt_->step();
  st.critic_loss = closs;

  // ---- actor update (critic parameters frozen for this step)
  actor_opt_->zero_grad();
  ActorOut pi = actor_forward(batch.obs, true, nullptr);
  Tensor ain({M, D + A});
  std::vector<double> eps(static_cast<size_t>(M) * A), th_v(static_cast<size_t>(M) * A),
      logp(static_cast<size_t>(M), 0.0);
  for (int i = 0; i < M; ++i) {
    std::memcpy(ain.data() + int64_t(i) * (D + A), batch.obs.data() + int64_t(i) * D,
                sizeof(float) * size_t(D));
    double lp = -A * half_log2pi;
    for (int a = 0; a < A; ++a) {
      const double s = pi.log_std.v[int64_t(i) * A + a];
      const double e = rng.normal();
      const double u = pi.mean.v[int64_t(i) * A + a] + std::exp(s) * e;
      const double th = std::tanh(u);
      eps[size_t(i) * A + a] = e;
      th_v[size_t(i) * A + a] = th;
      lp += -0.5 * e * e - s - std::log(1.0 - th * th + 1e-6);
      ain.v[int64_t(i) * (D + A) + D + a] = static_cast<float>(th);
    }
    logp[size_t(i)] = lp;
  }
  Tensor q1 = critic_[0].forward(ain, true, &dropout_rng_);
  Tensor dq1({M, 1}), dq2({M, 1});
  Tensor q2 = critic_[1].forward(ain, true, &dropout_rng_);
  // NOTE: forward order matters: critic_[1] holds its own tape, critic_[0]
  // kept its tape from the line above (one outstanding pass each).
  double aloss = 0.0, mean_logp = 0.0;
  for (int i = 0; i < M; ++i) {
    const bool first = q1.v[size_t(i)] <= q2.v[size_t(i)];
    aloss += (a_coef * logp[size_t(i)] -
              std::min(q1.v[size_t(i)], q2.v[size_t(i)])) /
             M;
    mean_logp += logp[size_t(i)] / M;
    dq1.v[size_t(i)] = first ? static_cast<float>(-1.0 / M) : 0.0f;
    dq2.v[size_t(i)] = first ? 0.0f : static_cast<float>(-1.0 / M);
  }
  if (!std::isfinite(aloss)) {
    st.aborted = true;
    return st;
  }
  Tensor din1 = critic_[0].backward(dq1);
  Tensor din2 = critic_[1].backward(dq2);

  Tensor dmean({M, A}), dlogstd({M, A});
  for (int i = 0; i < M; ++i) {
    for (int a = 0; a < A; ++a) {
      const double th = th_v[size_t(i) * A + a];
      const double one_m_th2 = 1.0 - th * th;
      const double dlogp_du = 2.0 * th * one_m_th2 / (one_m_th2 + 1e-6);
      const double da = din1.v[int64_t(i) * (D + A) + D + a] +
                        din2.v[int64_t(i) * (D + A) + D + a];
      // d/du [alpha*logp/M - Qmin/M]: the Q path enters through a = tanh(u)
      const double du = a_coef * dlogp_du / M + da * one_m_th2;
      const double s = pi.log_std.v[int64_t(i) * A + a];
      const bool saturated = s <= kLogStdMin + 1e-7 || s >= kLogStdMax - 1e-7;
      dmean.v[int64_t(i) * A + a] = static_cast<float>(du);
      dlogstd.v[int64_t(i) * A + a] =
          saturated ? 0.0f
                    : static_cast<float>(du * std::exp(s) *
                                             eps[size_t(i) * A + a] -
                                         a_coef / M);
    }
  }
  Tensor dfeat = mean_head_.backward(dmean);
  Tensor dfeat2 = logstd_head_.backward(dlogstd);
  for (size_t i = 0; i < dfeat.v.size(); ++i) dfeat.v[i] += dfeat2.v[i];
  actor_trunk_.backward(dfeat);
  actor_opt_->step();
  st.actor_loss = aloss;
  st.entropy = -mean_logp;

  // ---- temperature: raise alpha when entropy drops below the target
  log_alpha_ += cfg_.alpha_lr * (mean_logp + target_entropy_);
  log_alpha_ = std::clamp(log_alpha_, -10.0, 3.0);

  soft_update(cfg_.tau);
  return st;
}

double DroqAgent::q_value(std::span<const float> obs,
                          std::span<const float> act) {
  Tensor in({1, obs_dim_ + act_dim_});
  std::copy(obs.begin(), obs.end(), in.v.begin());
  std::copy(act.begin(), act.end(), in.v.begin() + obs_dim_);
  Tensor q = critic_[0].forward(in, false, nullptr);
  return q.v[0];
}

std::vector<nn::ParamRef> DroqAgent::checkpoint_params() {
  std::vector<nn::ParamRef> p;
  actor_trunk_.params("actor", p);
  mean_head_.params("actor.mean", p);
  logstd_head_.params("actor.logstd", p);
  critic_[0].params("critic0", p);
  critic_[1].params("critic1", p);
  target_[0].params("target0", p);
  target_[1].params("target1", p);
  return p;
}

nlohmann::json DroqAgent::spec() const {
  return {{"kind", "droq"},
          {"obs_dim", obs_dim_},
          {"act_dim", act_dim_},
          {"actor_hidden", cfg_.actor_hidden},
          {"critic_hidden", cfg_.critic_hidden},
          {"dropout", cfg_.dropout}};
}

void DroqAgent::save(const std::string& path,
                     const nlohmann::json& metadata) const {
  auto* self = const_cast<DroqAgent*>(this);
  auto params = self->checkpoint_params();
  nn::Tensor alpha_t({1});
  alpha_t.v[0] = static_cast<float>(log_alpha_);
  std::vector<NamedTensor> tensors;
  for (const auto& p : params) tensors.push_back({p.name, p.value});
  tensors.push_back({"log_alpha", &alpha_t});
  write_container(path, kCheckpointMagic, tensors, spec(), metadata);
}

void DroqAgent::load(const std::string& path) {
  Container c = load_checkpoint(path);
  auto params = checkpoint_params();
  restore_params(c, params);
  if (c.tensors.count("log_alpha"))
    log_alpha_ = c.tensors.at("log_alpha").v[0];
}

}  // namespace hilmares::rl
