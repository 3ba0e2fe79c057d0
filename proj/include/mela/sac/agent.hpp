#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mela/autodiff/adam.hpp"
#include "mela/fusion/expert_bank.hpp"
#include "mela/nets/mlp.hpp"
#include "mela/nets/policy_head.hpp"
#include "mela/sac/replay_buffer.hpp"

namespace mela::sac {

using nets::ParamSet;
using nets::ParamVars;
using ad::Var;

enum class Arch { Single, Mela, Moe };

constexpr std::string_view arch_name(Arch a) {
    switch (a) {
        case Arch::Single: return "single";
        case Arch::Mela: return "mela";
        case Arch::Moe: return "moe";
    }
    return "unknown";
}

inline Arch arch_from_name(std::string_view name) {
    for (Arch a : {Arch::Single, Arch::Mela, Arch::Moe})
        if (arch_name(a) == name) return a;
    throw ContractError("unknown architecture '" + std::string(name) + "' (expected single, mela or moe)");
}

struct TrainConfig {
    double smoothing = 2.0;          // c
    double learning_rate = 3e-4;
    double weight_decay = 1e-6;
    double gamma = 0.987;
    double tau = 0.001;              // soft target update
    int steps_per_epoch = 5000;
    std::size_t batch_size = 256;
    double updates_per_step = 1.0;   // fractional values update every few env steps
    int warmup_steps = 1000;         // uniform random actions before the first update
    std::size_t replay_capacity = 1'000'000;
    double target_entropy = std::numeric_limits<double>::quiet_NaN();  // NaN: -(action dim)
    double initial_temperature = 0.1;
    std::size_t expert_hidden = 256;
    std::size_t gating_hidden = 128;
    std::size_t critic_hidden = 256;

    void validate() const {
        require(gamma > 0.0 && gamma < 1.0, "train config: gamma must lie in (0, 1)");
        require(tau > 0.0 && tau <= 1.0, "train config: tau must lie in (0, 1]");
        require(smoothing >= 0.0, "train config: smoothing coefficient must be >= 0");
        require(learning_rate > 0.0 && weight_decay >= 0.0, "train config: invalid optimiser settings");
        require(batch_size >= 1 && replay_capacity >= batch_size, "train config: batch larger than replay capacity");
        require(updates_per_step >= 0.0 && warmup_steps >= 0 && steps_per_epoch >= 1, "train config: invalid schedule");
        require(initial_temperature > 0.0, "train config: initial temperature must be positive");
        require(expert_hidden >= 1 && gating_hidden >= 1 && critic_hidden >= 1, "train config: hidden sizes must be >= 1");
    }
};

/// Which entries of the full observation each network reads (-1 feeds a constant zero).
struct Routing {
    std::vector<int> policy;
    std::vector<int> gating;
    std::vector<int> critic;
    std::vector<int> joints;  // measured joint positions, for the smoothing loss
};

/// Column gather from a [b, s] batch.
inline Tensor select_columns(const Tensor& batch, std::span<const int> idx) {
    Tensor out = Tensor::zeros({batch.rows(), idx.size()});
    for (std::size_t r = 0; r < batch.rows(); ++r)
        for (std::size_t c = 0; c < idx.size(); ++c)
            if (idx[c] >= 0) out.at(r, c) = batch.at(r, std::size_t(idx[c]));
    return out;
}

inline std::vector<double> select(std::span<const double> full, std::span<const int> idx) {
    std::vector<double> out(idx.size(), 0.0);
    for (std::size_t c = 0; c < idx.size(); ++c)
        if (idx[c] >= 0) out[c] = full[std::size_t(idx[c])];
    return out;
}

/// Policy networks: one expert (Single) or an expert bank with its gating network.
struct Actor {
    Arch arch = Arch::Single;
    std::vector<ParamSet> experts;
    ParamSet gating;  // unused for Single

    std::size_t size() const { return experts.size(); }

    void validate() const {
        require(!experts.empty(), "actor: no experts");
        if (arch == Arch::Single) {
            require(experts.size() == 1, "actor: single architecture holds exactly one network");
            experts.front().validate();
            return;
        }
        fusion::ExpertBank{experts, gating}.validate();
    }

    std::vector<Tensor*> tensors() {
        std::vector<Tensor*> out;
        for (auto& e : experts)
            for (Tensor* t : e.tensors()) out.push_back(t);
        if (arch != Arch::Single)
            for (Tensor* t : gating.tensors()) out.push_back(t);
        return out;
    }
};

/// Raw head output and gating weights for one observation.
struct ActorStep {
    nets::PolicyOutput head;
    std::vector<double> alpha;  // empty for Single
};

inline ActorStep actor_step(const Actor& actor, std::span<const double> policy_in, std::span<const double> gating_in) {
    ActorStep s;
    switch (actor.arch) {
        case Arch::Single:
            s.head = nets::split_head(nets::mlp_forward(actor.experts.front(), policy_in));
            break;
        case Arch::Mela: {
            const auto w = fusion::gating_forward(actor.gating, gating_in);
            const ParamSet fused = fusion::fuse_parameters(actor.experts, w);
            s.head = nets::split_head(nets::mlp_forward(fused, policy_in));
            s.alpha = w.alpha;
            break;
        }
        case Arch::Moe: {
            const auto w = fusion::gating_forward(actor.gating, gating_in);
            std::vector<double> blended;
            for (std::size_t n = 0; n < actor.experts.size(); ++n) {
                const auto o = nets::mlp_forward(actor.experts[n], policy_in);
                if (blended.empty()) blended.assign(o.size(), 0.0);
                for (std::size_t i = 0; i < o.size(); ++i) blended[i] += w.alpha[n] * o[i];
            }
            s.head = nets::split_head(blended);
            s.alpha = w.alpha;
            break;
        }
    }
    return s;
}

/// Batched raw head output [b, 2a] without a tape.
inline Tensor actor_raw_batch(const Actor& actor, const Tensor& policy_in, const Tensor& gating_in) {
    if (actor.arch == Arch::Single) return nets::mlp_forward(actor.experts.front(), policy_in);
    const Tensor alpha = fusion::gating_forward_batch(actor.gating, gating_in);
    return actor.arch == Arch::Mela ? fusion::synthesized_forward_batch(actor.experts, alpha, policy_in)
                                    : fusion::moe_forward_batch(actor.experts, alpha, policy_in);
}

struct ActorVars {
    std::vector<ParamVars> experts;
    ParamVars gating;
    std::vector<Var> all() const {
        std::vector<Var> v;
        for (const auto& e : experts)
            for (const Var& x : e.vars()) v.push_back(x);
        if (!experts.empty() && gating.W0.tape() != nullptr)
            for (const Var& x : gating.vars()) v.push_back(x);
        return v;
    }
};

inline ActorVars attach(ad::Tape& tape, const Actor& actor, bool trainable) {
    ActorVars v;
    for (const auto& e : actor.experts) v.experts.push_back(nets::attach(tape, e, trainable));
    if (actor.arch != Arch::Single) v.gating = nets::attach(tape, actor.gating, trainable);
    return v;
}

/// Tape forward; also returns the gating weights (null Var for Single).
inline std::pair<Var, Var> actor_raw(const Actor& actor, const ActorVars& vars, const Var& policy_in,
                                     const Var& gating_in) {
    if (actor.arch == Arch::Single) return {nets::mlp_forward(vars.experts.front(), policy_in), Var{}};
    const Var alpha = fusion::gating_forward(vars.gating, gating_in);
    const Var raw = actor.arch == Arch::Mela ? fusion::synthesized_forward(vars.experts, alpha, policy_in)
                                             : fusion::moe_forward(vars.experts, alpha, policy_in);
    return {raw, alpha};
}

/// Everything needed to act: networks, observation routing and joint range.
struct Policy {
    Actor actor;
    Routing routing;
    nets::ActionBound bound;

    struct Action {
        std::vector<double> action;
        std::vector<double> alpha;
        double log_prob = 0.0;
    };

    template <typename Rng>
    Action act(std::span<const double> observation, Rng& rng, bool deterministic) const;
};

/// Action for one full observation; deterministic uses the squashed mean.
template <typename Rng>
Policy::Action policy_act(const Actor& actor, const Routing& routing, const nets::ActionBound& bound,
                          std::span<const double> observation, Rng& rng, bool deterministic) {
    const auto p = select(observation, routing.policy);
    const auto g = select(observation, routing.gating);
    ActorStep s = actor_step(actor, p, g);
    Policy::Action a;
    a.alpha = std::move(s.alpha);
    if (deterministic) {
        a.action = nets::deterministic_action(s.head, bound);
    } else {
        auto sq = nets::sample_squashed(s.head, bound, rng);
        a.action = std::move(sq.action);
        a.log_prob = sq.log_prob;
    }
    return a;
}

template <typename Rng>
Policy::Action Policy::act(std::span<const double> observation, Rng& rng, bool deterministic) const {
    return policy_act(actor, routing, bound, observation, rng, deterministic);
}

/// target <- (1 - tau) target + tau online, elementwise.
inline void soft_update(Tensor& target, const Tensor& online, double tau) {
    ad::require_same_shape(target, online, "soft_update");
    require(tau >= 0.0 && tau <= 1.0, "soft_update: tau must lie in [0, 1]");
    auto t = target.data();
    const auto o = online.values();
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = (1.0 - tau) * t[i] + tau * o[i];
}

inline void soft_update(ParamSet& target, const ParamSet& online, double tau) {
    const auto t = target.tensors();
    const auto o = online.tensors();
    for (std::size_t i = 0; i < t.size(); ++i) soft_update(*t[i], *o[i], tau);
}

struct CriticStats {
    double loss1 = 0.0, loss2 = 0.0;
    double mean_target = 0.0;
};

struct ActorStats {
    double loss = 0.0;
    double smoothing = 0.0;   // batch mean of |mu(s) - q|
    double mean_log_prob = 0.0;
};

struct UpdateStats {
    CriticStats critic;
    ActorStats actor;
    double temperature = 0.0;
};

/// Soft actor-critic learner around an Actor.
class SacAgent {
public:
    template <typename Rng>
    SacAgent(Actor actor, Routing routing, nets::ActionBound bound, TrainConfig cfg, Rng& rng)
        : actor_(std::move(actor)), routing_(std::move(routing)), bound_(std::move(bound)), cfg_(cfg) {
        cfg_.validate();
        actor_.validate();
        bound_.validate();
        require(routing_.joints.size() == bound_.size(), "sac: joint routing must match the action dimension");
        require(actor_.experts.front().W0.shape()[0] == routing_.policy.size(),
                "sac: policy input width differs from routing");
        require(actor_.experts.front().B2.size() == 2 * bound_.size(), "sac: policy head must emit mean and log std");
        if (actor_.arch != Arch::Single)
            require(actor_.gating.W0.shape()[0] == routing_.gating.size(), "sac: gating input width differs from routing");
        const nets::MlpSpec critic_spec{routing_.critic.size() + bound_.size(), cfg_.critic_hidden, 1};
        critic1_ = nets::init_params(critic_spec, rng);
        critic2_ = nets::init_params(critic_spec, rng);
        target1_ = critic1_;
        target2_ = critic2_;
        log_temperature_ = Tensor::scalar(std::log(cfg_.initial_temperature));
        const ad::AdamOptions opt{cfg_.learning_rate, cfg_.weight_decay};
        actor_opt_ = ad::AdamState(opt);
        critic1_opt_ = ad::AdamState(opt);
        critic2_opt_ = ad::AdamState(opt);
        temperature_opt_ = ad::AdamState(ad::AdamOptions{cfg_.learning_rate, 0.0});
    }

    const Actor& actor() const { return actor_; }
    Actor& actor() { return actor_; }
    const Routing& routing() const { return routing_; }
    const nets::ActionBound& bound() const { return bound_; }
    const TrainConfig& config() const { return cfg_; }
    const ParamSet& critic(int k) const { return k == 0 ? critic1_ : critic2_; }
    ParamSet& critic(int k) { return k == 0 ? critic1_ : critic2_; }
    const ParamSet& target(int k) const { return k == 0 ? target1_ : target2_; }
    ParamSet& target(int k) { return k == 0 ? target1_ : target2_; }
    double temperature() const { return std::exp(log_temperature_[0]); }
    double log_temperature() const { return log_temperature_[0]; }
    void set_log_temperature(double v) {
        require(std::isfinite(v), "log temperature must be finite");
        log_temperature_ = Tensor::scalar(v);
    }
    void set_temperature(double t) {
        require(t > 0.0, "temperature must be positive");
        log_temperature_ = Tensor::scalar(std::log(t));
    }
    double target_entropy() const {
        return std::isnan(cfg_.target_entropy) ? -double(bound_.size()) : cfg_.target_entropy;
    }

    Policy policy() const { return Policy{actor_, routing_, bound_}; }

    template <typename Rng>
    Policy::Action act(std::span<const double> observation, Rng& rng, bool deterministic) const {
        return policy_act(actor_, routing_, bound_, observation, rng, deterministic);
    }

    /// Critic input: routed state plus each joint reference as its wrapped offset from the measured
    /// joint angle, divided by pi. References a and a + 2 pi command the same motion, so they map to
    /// the same input.
    Tensor critic_input(const Tensor& states, const Tensor& actions) const {
        const Tensor s = select_columns(states, routing_.critic);
        const Tensor q = select_columns(states, routing_.joints);
        Tensor out = Tensor::zeros({s.rows(), s.cols() + actions.cols()});
        for (std::size_t r = 0; r < s.rows(); ++r) {
            for (std::size_t c = 0; c < s.cols(); ++c) out.at(r, c) = s.at(r, c);
            for (std::size_t j = 0; j < actions.cols(); ++j)
                out.at(r, s.cols() + j) = wrapped_offset(actions.at(r, j), q.at(r, j)) / std::numbers::pi;
        }
        return out;
    }

    /// a - q on the branch in (-pi, pi].
    static double wrapped_offset(double a, double q) {
        constexpr double two_pi = 2.0 * std::numbers::pi;
        double d = std::remainder(a - q, two_pi);
        if (d <= -std::numbers::pi) d += two_pi;
        return d;
    }

    /// Bootstrapped targets y = r + gamma (1 - done) (min target Q(s', a') - alpha_T log pi(a'|s')).
    template <typename Rng>
    Tensor critic_targets(const Batch& batch, Rng& rng) const {
        const std::size_t b = batch.size();
        const Tensor raw = actor_raw_batch(actor_, select_columns(batch.next_states, routing_.policy),
                                           select_columns(batch.next_states, routing_.gating));
        const Tensor noise = standard_normal(b, bound_.size(), rng);
        ad::Tape tape;
        const auto sb = nets::squashed_sample(tape.constant(raw), noise, bound_);
        const Tensor in = critic_input(batch.next_states, sb.action.value());
        const Tensor q1 = nets::mlp_forward(target1_, in);
        const Tensor q2 = nets::mlp_forward(target2_, in);
        const double alpha_t = temperature();
        Tensor y = Tensor::zeros({b, 1});
        for (std::size_t r = 0; r < b; ++r) {
            const double soft = std::min(q1.at(r, 0), q2.at(r, 0)) - alpha_t * sb.log_prob.value().at(r, 0);
            y.at(r, 0) = batch.rewards.at(r, 0) + cfg_.gamma * (1.0 - batch.dones.at(r, 0)) * soft;
        }
        return y;
    }

    template <typename Rng>
    CriticStats critic_update(const Batch& batch, Rng& rng) {
        require(batch.size() >= 1, "critic_update: empty batch");
        const Tensor y = critic_targets(batch, rng);
        const Tensor in = critic_input(batch.states, batch.actions);
        CriticStats stats;
        for (double v : y.values()) stats.mean_target += v / double(y.size());
        for (int k = 0; k < 2; ++k) {
            ParamSet& net = k == 0 ? critic1_ : critic2_;
            ad::Tape tape;
            const ParamVars vars = nets::attach(tape, net, true);
            const Var q = nets::mlp_forward(vars, tape.constant(in));
            const Var loss = ad::mean(ad::square(ad::sub(q, tape.constant(y))));
            (k == 0 ? stats.loss1 : stats.loss2) = loss.value()[0];
            const auto grads = tape.backward(loss);
            const ParamSet g = nets::gradients_of(grads, vars);
            apply(k == 0 ? critic1_opt_ : critic2_opt_, net, g);
        }
        return stats;
    }

    /// Loss E[alpha_T log pi - min Q] + c E[|mu(s) - q|] on a tape, for the given noise draw.
    struct ActorGraph {
        Var loss, smoothing, log_prob, alpha;
    };
    ActorGraph actor_loss(ad::Tape& tape, const ActorVars& vars, const Batch& batch, const Tensor& noise) const {
        const std::size_t b = batch.size();
        const Var p = tape.constant(select_columns(batch.states, routing_.policy));
        const Var g = tape.constant(select_columns(batch.states, routing_.gating));
        const auto [raw, alpha] = actor_raw(actor_, vars, p, g);
        const auto sb = nets::squashed_sample(raw, noise, bound_);

        const Tensor cs = select_columns(batch.states, routing_.critic);
        const Tensor q = select_columns(batch.states, routing_.joints);
        const std::size_t a = bound_.size();
        // Wrapped offsets: the 2 pi multiples are constants, so gradients pass straight through.
        auto offset_anchor = [&](const Tensor& values) {
            Tensor anchor = Tensor::zeros({b, a});
            for (std::size_t r = 0; r < b; ++r)
                for (std::size_t j = 0; j < a; ++j)
                    anchor.at(r, j) = values.at(r, j) - wrapped_offset(values.at(r, j), q.at(r, j));
            return anchor;
        };
        const Var a_off = ad::scale(ad::sub(sb.action, tape.constant(offset_anchor(sb.action.value()))),
                                    1.0 / std::numbers::pi);
        const Var in = ad::concat_cols(tape.constant(cs), a_off);
        const ParamVars c1 = nets::attach(tape, critic1_, false);
        const ParamVars c2 = nets::attach(tape, critic2_, false);
        const Var qmin = ad::minimum(nets::mlp_forward(c1, in), nets::mlp_forward(c2, in));
        const Var sac = ad::mean(ad::sub(ad::scale(sb.log_prob, temperature()), qmin));

        const Tensor anchor = offset_anchor(sb.mean_action.value());
        const Var smooth = ad::mean(ad::row_norm(ad::sub(sb.mean_action, tape.constant(anchor))));
        const Var loss = cfg_.smoothing > 0.0 ? ad::add(sac, ad::scale(smooth, cfg_.smoothing)) : sac;
        return {loss, smooth, ad::mean(sb.log_prob), alpha};
    }

    template <typename Rng>
    ActorStats actor_update(const Batch& batch, Rng& rng) {
        require(batch.size() >= 1, "actor_update: empty batch");
        const Tensor noise = standard_normal(batch.size(), bound_.size(), rng);
        ad::Tape tape;
        const ActorVars vars = attach(tape, actor_, true);
        const ActorGraph graph = actor_loss(tape, vars, batch, noise);
        ActorStats stats{graph.loss.value()[0], graph.smoothing.value()[0], graph.log_prob.value()[0]};
        const auto grads = tape.backward(graph.loss);
        std::vector<Tensor> g;
        for (const Var& v : vars.all()) g.push_back(grads.of(v));
        auto params = actor_.tensors();
        actor_opt_.apply(params, g);
        return stats;
    }

    /// Gradient of E[-alpha_T (log pi + target)] with respect to log alpha_T.
    double temperature_gradient(double mean_log_prob) const {
        return -temperature() * (mean_log_prob + target_entropy());
    }

    void temperature_update(double mean_log_prob) {
        const Tensor g = Tensor::scalar(temperature_gradient(mean_log_prob));
        std::array<Tensor*, 1> p{&log_temperature_};
        temperature_opt_.apply(p, std::span<const Tensor>(&g, 1));
    }

    void update_targets() {
        soft_update(target1_, critic1_, cfg_.tau);
        soft_update(target2_, critic2_, cfg_.tau);
    }

    template <typename Rng>
    UpdateStats update(const Batch& batch, Rng& rng) {
        UpdateStats s;
        s.critic = critic_update(batch, rng);
        s.actor = actor_update(batch, rng);
        temperature_update(s.actor.mean_log_prob);
        update_targets();
        s.temperature = temperature();
        return s;
    }

    template <typename Rng>
    static Tensor standard_normal(std::size_t rows, std::size_t cols, Rng& rng) {
        std::normal_distribution<double> n(0.0, 1.0);
        Tensor t = Tensor::zeros({rows, cols});
        for (double& v : t.data()) v = n(rng);
        return t;
    }

private:
    static void apply(ad::AdamState& opt, ParamSet& net, const ParamSet& grad) {
        auto p = net.tensors();
        const auto g = grad.tensors();
        std::vector<Tensor> gs;
        for (const Tensor* t : g) gs.push_back(*t);
        opt.apply(p, gs);
    }

    Actor actor_;
    Routing routing_;
    nets::ActionBound bound_;
    TrainConfig cfg_;
    ParamSet critic1_, critic2_, target1_, target2_;
    Tensor log_temperature_;
    ad::AdamState actor_opt_, critic1_opt_, critic2_opt_, temperature_opt_;
};

}  // namespace mela::sac
