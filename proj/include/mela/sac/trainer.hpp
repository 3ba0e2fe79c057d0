#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mela/env/tasks.hpp"
#include "mela/sac/agent.hpp"

namespace mela::sac {

using env::Task;

/// Joint references reach past a half turn so a target at +-pi sits off the tanh rails.
inline constexpr double kJointHalfRange = 1.5 * std::numbers::pi;

inline nets::ActionBound joint_bound(double half_range = kJointHalfRange) {
    return nets::ActionBound::symmetric({half_range, half_range});
}

inline Routing stage1_routing(Task task) {
    require(task != Task::Multimodal, "stage 1 trains recovery or rhythmic experts");
    return Routing{env::routing(task == Task::Recovery ? env::Network::Stage1Recovery : env::Network::Stage1Rhythmic),
                   {}, env::routing(env::Network::Critic), env::joint_position_indices()};
}

inline Routing stage2_routing() {
    return Routing{env::routing(env::Network::Synthesized), env::routing(env::Network::Gating),
                   env::routing(env::Network::Critic), env::joint_position_indices()};
}

/// Fresh single-expert actor. Rows of W0 fed by constant-zero inputs start at zero so the
/// expert ignores those inputs when it later sees them live in a fused network.
template <typename Rng>
Actor make_single_actor(const Routing& routing, std::size_t hidden, std::size_t action_dim, Rng& rng) {
    Actor a;
    a.arch = Arch::Single;
    ParamSet p = nets::init_params(nets::MlpSpec{routing.policy.size(), hidden, 2 * action_dim}, rng);
    for (std::size_t r = 0; r < routing.policy.size(); ++r)
        if (routing.policy[r] < 0)
            for (std::size_t c = 0; c < hidden; ++c) p.W0.at(r, c) = 0.0;
    a.experts.push_back(std::move(p));
    return a;
}

/// MELA or MoE actor for stage 2: N/2 copies of each pretrained expert plus a fresh gating network.
template <typename Rng>
Actor make_stage2_actor(Arch arch, const ParamSet& expert_a, const ParamSet& expert_b, std::size_t n_experts,
                        std::size_t gating_hidden, Rng& rng) {
    require(arch != Arch::Single, "stage 2 needs a gated architecture");
    const nets::MlpSpec gating_spec{env::routing(env::Network::Gating).size(), gating_hidden, n_experts};
    fusion::ExpertBank bank = fusion::init_stage2(expert_a, expert_b, n_experts, gating_spec, rng);
    return Actor{arch, std::move(bank.experts), std::move(bank.gating)};
}

struct EpisodeMetrics {
    int episode = 0;
    long env_steps = 0;
    double episode_return = 0.0;
    int length = 0;
    std::string termination;
    double critic_loss = 0.0;   // mean over the episode's updates (0 before learning starts)
    double actor_loss = 0.0;
    double smoothing_term = 0.0;
    double alpha_t = 0.0;
    int updates = 0;
    std::vector<double> alpha_mean;  // per-expert mean gating weight over the episode
};

struct StepRecord {
    int episode = 0;
    int step = 0;
    double t = 0.0;
    env::Vec2 q{}, qdot{}, torque{};
    std::vector<double> action;
    double reward = 0.0;
    std::vector<double> terms;
    std::vector<double> alpha;
    env::Mode mode = env::Mode::Recovery;
};

struct EvalEpisode {
    double episode_return = 0.0;
    int length = 0;
    bool success = false;
    std::string termination;
    std::string init;
    double mean_offset = 0.0;  // per-step |mu(s) - q|
    std::array<int, 3> mode_steps{};
    int mode_transitions = 0;
};

struct EvalSummary {
    std::vector<EvalEpisode> episodes;

    double mean_return() const {
        double s = 0.0;
        for (const auto& e : episodes) s += e.episode_return;
        return episodes.empty() ? 0.0 : s / double(episodes.size());
    }
    double success_rate() const {
        double s = 0.0;
        for (const auto& e : episodes) s += e.success ? 1.0 : 0.0;
        return episodes.empty() ? 0.0 : s / double(episodes.size());
    }
    double mean_offset() const {
        double s = 0.0;
        for (const auto& e : episodes) s += e.mean_offset;
        return episodes.empty() ? 0.0 : s / double(episodes.size());
    }
};

inline double wrapped_offset(std::span<const double> action, std::span<const double> observation,
                             std::span<const int> joints) {
    double n2 = 0.0;
    for (std::size_t j = 0; j < joints.size(); ++j) {
        const double d = env::wrap_angle(action[j] - observation[std::size_t(joints[j])]);
        n2 += d * d;
    }
    return std::sqrt(n2);
}

/// Steps the upright band must hold for a success (1 s at the policy rate).
inline int success_hold_steps(const env::EnvConfig& cfg) {
    return static_cast<int>(std::lround(cfg.pipeline.policy_rate_hz));
}

using StepLogger = std::function<void(const StepRecord&)>;

/// Deterministic-policy evaluation over fresh resets drawn from `seed`.
inline EvalSummary evaluate(const Policy& policy, const env::EnvConfig& cfg, int episodes, std::uint64_t seed,
                            const StepLogger& log = {}) {
    require(episodes >= 0, "evaluate: negative episode count");
    EvalSummary summary;
    env::PendulumEnv e(cfg);
    std::mt19937_64 rng(seed);
    const int hold = success_hold_steps(cfg);
    for (int ep = 0; ep < episodes; ++ep) {
        auto obs = e.reset(rng);
        EvalEpisode out;
        out.init = e.init_name();
        int upright_run = 0;
        double offset_sum = 0.0;
        std::optional<env::Mode> last_mode;
        for (;;) {
            const auto a = policy.act(obs, rng, true);
            offset_sum += wrapped_offset(a.action, obs, policy.routing.joints);
            const auto r = e.step(a.action);
            out.episode_return += r.reward;
            ++out.length;
            out.mode_steps[std::size_t(r.mode)] += 1;
            if (last_mode && *last_mode != r.mode) ++out.mode_transitions;
            last_mode = r.mode;
            upright_run = env::in_upright_band(cfg.plant, e.state()) ? upright_run + 1 : 0;
            if (upright_run >= hold) out.success = true;
            if (log) {
                StepRecord s{ep, out.length, e.state().t, e.state().q, e.state().qdot, r.torque, a.action,
                             r.reward, r.term_values, a.alpha, r.mode};
                log(s);
            }
            obs = r.observation;
            if (r.done) {
                out.termination = std::string(env::termination_name(r.reason));
                break;
            }
        }
        out.mean_offset = offset_sum / double(out.length);
        summary.episodes.push_back(std::move(out));
    }
    return summary;
}

struct RunOptions {
    int episodes = 300;
    long max_env_steps = 0;      // 0: no step budget; otherwise training stops after the episode that reaches it
    int eval_every = 0;          // 0: no periodic evaluation, the final policy is returned
    int eval_episodes = 10;
    std::uint64_t eval_seed = 12345;
    double eval_cutoff_hz = 3.0;
};

struct TrainResult {
    Policy final_policy;
    Policy best_policy;
    double best_score = -std::numeric_limits<double>::infinity();
    int best_episode = 0;
    std::vector<EpisodeMetrics> curve;
};

using EpisodeCallback = std::function<void(const EpisodeMetrics&)>;

/// Off-policy SAC loop: rollouts at the policy rate through the action pipeline, one replay buffer,
/// `updates_per_step` gradient updates per environment step after warm-up.
inline TrainResult train(SacAgent& agent, const env::EnvConfig& env_cfg, const RunOptions& opt, std::uint64_t seed,
                         const EpisodeCallback& on_episode = {}) {
    require(opt.episodes >= 0 && opt.max_env_steps >= 0, "train: negative episode or step budget");
    const TrainConfig& cfg = agent.config();
    env::PendulumEnv e(env_cfg);
    std::seed_seq env_seq{seed, std::uint64_t(1)}, agent_seq{seed, std::uint64_t(2)};
    std::mt19937_64 env_rng(env_seq), agent_rng(agent_seq);
    ReplayBuffer buffer(cfg.replay_capacity, env::layout::kSize, agent.bound().size());
    env::EnvConfig eval_cfg = env_cfg;
    eval_cfg.pipeline.filter_cutoff_hz = opt.eval_cutoff_hz;

    TrainResult result;
    result.best_policy = agent.policy();
    long env_steps = 0;
    double credit = 0.0;
    for (int ep = 1; ep <= opt.episodes; ++ep) {
        auto obs = e.reset(env_rng);
        EpisodeMetrics m;
        m.episode = ep;
        std::vector<double> alpha_sum;
        int policy_steps = 0;
        for (;;) {
            Policy::Action a;
            if (env_steps < cfg.warmup_steps) {
                std::uniform_real_distribution<double> u(-1.0, 1.0);
                for (std::size_t j = 0; j < agent.bound().size(); ++j)
                    a.action.push_back(agent.bound().scale(j, u(agent_rng)));
            } else {
                a = agent.act(obs, agent_rng, false);
                if (!a.alpha.empty()) {
                    if (alpha_sum.empty()) alpha_sum.assign(a.alpha.size(), 0.0);
                    for (std::size_t n = 0; n < a.alpha.size(); ++n) alpha_sum[n] += a.alpha[n];
                    ++policy_steps;
                }
            }
            const auto r = e.step(a.action);
            ++env_steps;
            buffer.push(Transition{obs, a.action, r.reward, r.observation,
                                   r.done && r.reason != env::Termination::Timeout});
            m.episode_return += r.reward;
            ++m.length;
            obs = r.observation;

            if (env_steps >= cfg.warmup_steps && buffer.size() >= cfg.batch_size) {
                credit += cfg.updates_per_step;
                while (credit >= 1.0) {
                    credit -= 1.0;
                    const Batch batch = buffer.sample(cfg.batch_size, agent_rng);
                    const UpdateStats s = agent.update(batch, agent_rng);
                    m.critic_loss += 0.5 * (s.critic.loss1 + s.critic.loss2);
                    m.actor_loss += s.actor.loss;
                    m.smoothing_term += s.actor.smoothing;
                    ++m.updates;
                    if (!std::isfinite(s.critic.loss1) || !std::isfinite(s.actor.loss))
                        throw NumericError("training diverged: non-finite loss at episode " + std::to_string(ep));
                }
            }
            if (r.done) {
                m.termination = std::string(env::termination_name(r.reason));
                break;
            }
        }
        if (m.updates > 0) {
            m.critic_loss /= m.updates;
            m.actor_loss /= m.updates;
            m.smoothing_term /= m.updates;
        }
        m.env_steps = env_steps;
        m.alpha_t = agent.temperature();
        for (double s : alpha_sum) m.alpha_mean.push_back(s / double(policy_steps));
        result.curve.push_back(m);
        if (on_episode) on_episode(m);

        const bool out_of_steps = opt.max_env_steps > 0 && env_steps >= opt.max_env_steps;
        // Only policies that have been updated compete for best.
        const bool learning = env_steps >= cfg.warmup_steps && m.updates > 0;
        if (opt.eval_every > 0 && learning && (ep % opt.eval_every == 0 || out_of_steps)) {
            const double score = evaluate(agent.policy(), eval_cfg, opt.eval_episodes, opt.eval_seed).mean_return();
            if (score > result.best_score) {
                result.best_score = score;
                result.best_episode = ep;
                result.best_policy = agent.policy();
            }
        }
        if (out_of_steps) break;
    }
    result.final_policy = agent.policy();
    if (opt.eval_every <= 0 || result.best_episode == 0) result.best_policy = result.final_policy;
    return result;
}

inline env::EnvConfig task_env(Task task, double cutoff_hz = 5.0) {
    env::EnvConfig c;
    c.task = task;
    c.pipeline.filter_cutoff_hz = cutoff_hz;
    return c;
}

/// Stage 1 learner: one fresh expert for the recovery or rhythmic task.
inline SacAgent make_stage1_agent(Task task, const TrainConfig& cfg, std::uint64_t seed,
                                  const nets::ActionBound& bound = joint_bound()) {
    std::seed_seq init_seq{seed, std::uint64_t(0)};
    std::mt19937_64 init_rng(init_seq);
    const Routing routing = stage1_routing(task);
    Actor actor = make_single_actor(routing, cfg.expert_hidden, bound.size(), init_rng);
    return SacAgent(std::move(actor), routing, bound, cfg, init_rng);
}

/// Stage 2 learner: gating network plus copies of both pretrained experts; critics start fresh.
inline SacAgent make_stage2_agent(const ParamSet& expert_a, const ParamSet& expert_b, Arch arch, std::size_t n_experts,
                                  const TrainConfig& cfg, std::uint64_t seed,
                                  const nets::ActionBound& bound = joint_bound()) {
    std::seed_seq init_seq{seed, std::uint64_t(0)};
    std::mt19937_64 init_rng(init_seq);
    Actor actor = make_stage2_actor(arch, expert_a, expert_b, n_experts, cfg.gating_hidden, init_rng);
    return SacAgent(std::move(actor), stage2_routing(), bound, cfg, init_rng);
}

inline TrainResult run_stage1(Task task, const TrainConfig& cfg, const RunOptions& opt, std::uint64_t seed,
                              const EpisodeCallback& on_episode = {}, std::optional<env::EnvConfig> env_cfg = {},
                              const nets::ActionBound& bound = joint_bound()) {
    SacAgent agent = make_stage1_agent(task, cfg, seed, bound);
    return train(agent, env_cfg ? *env_cfg : task_env(task), opt, seed, on_episode);
}

inline TrainResult run_stage2(const ParamSet& expert_a, const ParamSet& expert_b, Arch arch, std::size_t n_experts,
                              const TrainConfig& cfg, const RunOptions& opt, std::uint64_t seed,
                              const EpisodeCallback& on_episode = {}, std::optional<env::EnvConfig> env_cfg = {},
                              const nets::ActionBound& bound = joint_bound()) {
    SacAgent agent = make_stage2_agent(expert_a, expert_b, arch, n_experts, cfg, seed, bound);
    return train(agent, env_cfg ? *env_cfg : task_env(Task::Multimodal), opt, seed, on_episode);
}

}  // namespace mela::sac
