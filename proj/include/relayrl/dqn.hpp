#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "relayrl/mlp.hpp"
#include "relayrl/replay.hpp"
#include "relayrl/rng.hpp"

namespace relayrl {

struct DqnConfig {
  std::vector<int> hidden{128, 64};
  double learning_rate = 5e-4;
  double gamma = 0.95;
  double tau = 0.005;  // soft target blend per training step
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t replay_capacity = 10000;
  std::size_t batch_size = 32;
  std::size_t warmup = 500;  // transitions stored before training starts

  void validate() const {
    if (hidden.empty()) throw std::invalid_argument("need at least one hidden layer");
    for (int h : hidden)
      if (h <= 0) throw std::invalid_argument("hidden layer sizes must be positive");
    if (learning_rate <= 0.0) throw std::invalid_argument("learning rate must be positive");
    if (gamma < 0.0 || gamma > 1.0) throw std::invalid_argument("discount outside [0,1]");
    if (tau <= 0.0 || tau > 1.0) throw std::invalid_argument("target blend outside (0,1]");
    if (adam_epsilon <= 0.0) throw std::invalid_argument("adam epsilon must be positive");
    if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 || adam_beta2 >= 1.0)
      throw std::invalid_argument("adam betas outside [0,1)");
    if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
    if (replay_capacity < batch_size) throw std::invalid_argument("replay smaller than a batch");
    if (warmup < batch_size) throw std::invalid_argument("warmup smaller than a batch");
  }
};

// Adam over a flat parameter vector, with bias correction.
class Adam {
 public:
  Adam(std::size_t n, double lr, double beta1, double beta2, double eps)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::vector<double>& params, const std::vector<double>& grads) {
    if (params.size() != m_.size() || grads.size() != m_.size())
      throw std::invalid_argument("optimizer/parameter size mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < m_.size(); ++i) {
      m_[i] = b1_ * m_[i] + (1.0 - b1_) * grads[i];
      v_[i] = b2_ * v_[i] + (1.0 - b2_) * grads[i] * grads[i];
      params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
  }

  std::uint64_t steps() const { return t_; }
  const std::vector<double>& first_moment() const { return m_; }
  const std::vector<double>& second_moment() const { return v_; }
  void restore(std::vector<double> m, std::vector<double> v, std::uint64_t t) {
    if (m.size() != m_.size() || v.size() != v_.size())
      throw std::invalid_argument("optimizer state size mismatch");
    m_ = std::move(m);
    v_ = std::move(v);
    t_ = t;
  }

 private:
  double lr_, b1_, b2_, eps_;
  std::uint64_t t_ = 0;
  std::vector<double> m_, v_;
};

// One-step lookahead value: the online network chooses the successor action,
// the target network prices it. Terminal transitions are worth their reward.
inline double double_dqn_target(const Mlp& online, const Mlp& target, const Transition& tr,
                                double gamma) {
  if (tr.done) return tr.reward;
  std::vector<double> qo = online.forward(tr.next_state);
  std::size_t best = 0;
  for (std::size_t a = 1; a < qo.size(); ++a)
    if (qo[a] > qo[best]) best = a;
  return tr.reward + gamma * target.forward(tr.next_state)[best];
}

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

inline void put_f64(std::ostream& os, double d) { put_u64(os, std::bit_cast<std::uint64_t>(d)); }

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("model data truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error("model data truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

constexpr std::uint32_t kModelMagic = 0x51444c52u;  // "RLDQ" little-endian
constexpr std::uint32_t kModelVersion = 1;

}  // namespace detail

// Value-learning agent: an online network trained by one-step lookahead
// against a slowly blended target copy, replaying stored transitions.
class DqnAgent {
 public:
  DqnAgent(int state_dim, int num_actions, DqnConfig cfg, std::uint64_t seed)
      : state_dim_(state_dim),
        num_actions_(num_actions),
        cfg_(validated(std::move(cfg), state_dim, num_actions)),
        rng_(derive_seed(seed, {0x514e4554ULL})),
        online_(layer_sizes(state_dim_, cfg_.hidden, num_actions_), rng_),
        target_(online_),
        opt_(online_.parameter_count(), cfg_.learning_rate, cfg_.adam_beta1, cfg_.adam_beta2,
             cfg_.adam_epsilon),
        replay_(cfg_.replay_capacity) {}

  int state_dim() const { return state_dim_; }
  int num_actions() const { return num_actions_; }
  const DqnConfig& config() const { return cfg_; }
  const Mlp& online() const { return online_; }
  const Mlp& target() const { return target_; }
  Mlp& mutable_online() { return online_; }
  Mlp& mutable_target() { return target_; }
  std::size_t buffered() const { return replay_.size(); }

  std::vector<double> q_values(const std::vector<double>& state) const {
    return online_.forward(state);
  }

  // Ties break toward the lowest action index.
  int act_greedy(const std::vector<double>& state) const {
    std::vector<double> q = online_.forward(state);
    int best = 0;
    for (int a = 1; a < num_actions_; ++a)
      if (q[a] > q[best]) best = a;
    return best;
  }

  // With probability eps picks uniformly, otherwise greedily. A zero eps
  // consumes no randomness at all, so greedy evaluation never perturbs an
  // external stream.
  int act_epsilon(const std::vector<double>& state, double eps, Rng& rng) {
    if (eps < 0.0 || eps > 1.0) throw std::invalid_argument("exploration rate outside [0,1]");
    if (eps > 0.0 && rng.uniform01() < eps) return rng.uniform_int(num_actions_);
    return act_greedy(state);
  }

  void remember(Transition t) {
    if (t.state.size() != static_cast<std::size_t>(state_dim_) ||
        t.next_state.size() != static_cast<std::size_t>(state_dim_))
      throw std::invalid_argument("transition state size mismatch");
    if (t.action < 0 || t.action >= num_actions_)
      throw std::invalid_argument("transition action out of range");
    replay_.push(std::move(t));
  }

  bool ready() const { return replay_.size() >= std::max(cfg_.warmup, cfg_.batch_size); }

  // One optimization step on a fresh batch; returns the batch loss. The
  // target network is blended toward the online one afterwards.
  double train_step() {
    if (!ready()) throw std::logic_error("training requested before the replay warmup");
    std::vector<const Transition*> batch = replay_.sample(rng_, cfg_.batch_size);
    online_.zero_gradients();
    double loss = 0.0;
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    Mlp::Cache cache;
    std::vector<double> dout(num_actions_, 0.0);
    for (const Transition* tr : batch) {
      const double y = double_dqn_target(online_, target_, *tr, cfg_.gamma);
      std::vector<double> q = online_.forward(tr->state, cache);
      const double diff = q[tr->action] - y;
      loss += diff * diff * inv_b;
      std::fill(dout.begin(), dout.end(), 0.0);
      dout[tr->action] = 2.0 * diff * inv_b;
      online_.backward(cache, dout);
    }
    opt_.step(online_.parameters(), online_.gradients());
    target_.soft_update_toward(online_, cfg_.tau);
    return loss;
  }

  // Binary snapshot: dimensions, hyperparameters, both networks, and the
  // optimizer moments. The replay contents are deliberately not part of it.
  void save(std::ostream& os) const {
    detail::put_u32(os, detail::kModelMagic);
    detail::put_u32(os, detail::kModelVersion);
    detail::put_u32(os, static_cast<std::uint32_t>(state_dim_));
    detail::put_u32(os, static_cast<std::uint32_t>(num_actions_));
    detail::put_u32(os, static_cast<std::uint32_t>(cfg_.hidden.size()));
    for (int h : cfg_.hidden) detail::put_u32(os, static_cast<std::uint32_t>(h));
    detail::put_f64(os, cfg_.learning_rate);
    detail::put_f64(os, cfg_.gamma);
    detail::put_f64(os, cfg_.tau);
    detail::put_f64(os, cfg_.adam_beta1);
    detail::put_f64(os, cfg_.adam_beta2);
    detail::put_f64(os, cfg_.adam_epsilon);
    detail::put_u64(os, cfg_.replay_capacity);
    detail::put_u64(os, cfg_.batch_size);
    detail::put_u64(os, cfg_.warmup);
    detail::put_u64(os, online_.parameter_count());
    for (double p : online_.parameters()) detail::put_f64(os, p);
    for (double p : target_.parameters()) detail::put_f64(os, p);
    detail::put_u64(os, opt_.steps());
    for (double m : opt_.first_moment()) detail::put_f64(os, m);
    for (double v : opt_.second_moment()) detail::put_f64(os, v);
    if (!os) throw std::runtime_error("model write failed");
  }

  static DqnAgent load(std::istream& is) {
    if (detail::get_u32(is) != detail::kModelMagic)
      throw std::runtime_error("not a model file");
    const std::uint32_t version = detail::get_u32(is);
    if (version != detail::kModelVersion)
      throw std::runtime_error("unsupported model version " + std::to_string(version));
    const int state_dim = static_cast<int>(detail::get_u32(is));
    const int num_actions = static_cast<int>(detail::get_u32(is));
    DqnConfig cfg;
    cfg.hidden.resize(detail::get_u32(is));
    for (int& h : cfg.hidden) h = static_cast<int>(detail::get_u32(is));
    cfg.learning_rate = detail::get_f64(is);
    cfg.gamma = detail::get_f64(is);
    cfg.tau = detail::get_f64(is);
    cfg.adam_beta1 = detail::get_f64(is);
    cfg.adam_beta2 = detail::get_f64(is);
    cfg.adam_epsilon = detail::get_f64(is);
    cfg.replay_capacity = detail::get_u64(is);
    cfg.batch_size = detail::get_u64(is);
    cfg.warmup = detail::get_u64(is);
    DqnAgent agent(state_dim, num_actions, cfg, 0);
    const std::uint64_t n = detail::get_u64(is);
    if (n != agent.online_.parameter_count())
      throw std::runtime_error("model parameter count does not match its dimensions");
    for (double& p : agent.online_.parameters()) p = detail::get_f64(is);
    for (double& p : agent.target_.parameters()) p = detail::get_f64(is);
    const std::uint64_t t = detail::get_u64(is);
    std::vector<double> m(n), v(n);
    for (double& x : m) x = detail::get_f64(is);
    for (double& x : v) x = detail::get_f64(is);
    agent.opt_.restore(std::move(m), std::move(v), t);
    return agent;
  }

 private:
  static DqnConfig validated(DqnConfig cfg, int state_dim, int num_actions) {
    cfg.validate();
    if (state_dim <= 0 || num_actions <= 0)
      throw std::invalid_argument("state and action dimensions must be positive");
    return cfg;
  }

  static std::vector<int> layer_sizes(int in, const std::vector<int>& hidden, int out) {
    std::vector<int> l;
    l.push_back(in);
    l.insert(l.end(), hidden.begin(), hidden.end());
    l.push_back(out);
    return l;
  }

  int state_dim_, num_actions_;
  DqnConfig cfg_;
  Rng rng_;  // initialization and replay sampling only
  Mlp online_, target_;
  Adam opt_;
  ReplayBuffer replay_;
};

}  // namespace relayrl
