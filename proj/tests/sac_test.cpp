#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "gradcheck.hpp"
#include "mela/sac/agent.hpp"
#include "mela/sac/trainer.hpp"

using namespace mela;
using namespace mela::sac;
using ad::Tensor;

namespace {

Transition make_transition(double tag, std::size_t s = 2, std::size_t a = 1) {
    return Transition{std::vector<double>(s, tag), std::vector<double>(a, -tag), tag, std::vector<double>(s, tag + 0.5),
                      false};
}

// One-dimensional problem: state {x}, action {a}.
Routing tiny_routing() { return Routing{{0}, {}, {0}, {0}}; }

SacAgent tiny_agent(TrainConfig cfg, std::uint64_t seed, double half_range = 1.0) {
    std::mt19937_64 rng(seed);
    const Routing r = tiny_routing();
    Actor actor = make_single_actor(r, cfg.expert_hidden, 1, rng);
    return SacAgent(std::move(actor), r, nets::ActionBound::symmetric({half_range}), cfg, rng);
}

TrainConfig tiny_config() {
    TrainConfig c;
    c.expert_hidden = 16;
    c.critic_hidden = 16;
    c.gating_hidden = 8;
    c.batch_size = 32;
    c.replay_capacity = 1000;
    c.learning_rate = 3e-3;
    c.warmup_steps = 0;
    return c;
}

Batch constant_batch(std::size_t b, double state, double action, double reward, double done) {
    Batch batch{Tensor::zeros({b, 1}), Tensor::zeros({b, 1}), Tensor::zeros({b, 1}), Tensor::zeros({b, 1}),
                Tensor::zeros({b, 1})};
    for (std::size_t r = 0; r < b; ++r) {
        batch.states.at(r, 0) = state;
        batch.next_states.at(r, 0) = state;
        batch.actions.at(r, 0) = action;
        batch.rewards.at(r, 0) = reward;
        batch.dones.at(r, 0) = done;
    }
    return batch;
}

// Stage-2 style actor over a two-entry observation {x, g}: policy reads x, gating reads g.
SacAgent gated_agent(Arch arch, std::uint64_t seed, double smoothing = 2.0) {
    std::mt19937_64 rng(seed);
    TrainConfig cfg = tiny_config();
    cfg.smoothing = smoothing;
    const nets::MlpSpec expert{1, 8, 2};
    Actor actor{arch, {}, nets::init_params(nets::MlpSpec{1, 8, 4}, rng)};
    for (int n = 0; n < 4; ++n) actor.experts.push_back(nets::init_params(expert, rng));
    return SacAgent(std::move(actor), Routing{{0}, {1}, {0, 1}, {0}}, nets::ActionBound::symmetric({std::numbers::pi}),
                    cfg, rng);
}

Batch random_batch(std::size_t b, std::size_t s, std::size_t a, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    Batch batch{Tensor::zeros({b, s}), Tensor::zeros({b, a}), Tensor::zeros({b, 1}), Tensor::zeros({b, s}),
                Tensor::zeros({b, 1})};
    for (Tensor* t : {&batch.states, &batch.actions, &batch.rewards, &batch.next_states})
        for (double& v : t->data()) v = u(rng);
    return batch;
}

}  // namespace

TEST(ReplayBuffer, EvictsOldestFirst) {
    ReplayBuffer buf(3, 2, 1);
    for (int i = 0; i < 5; ++i) buf.push(make_transition(i));
    ASSERT_EQ(buf.size(), 3u);
    EXPECT_DOUBLE_EQ(buf.at(0).reward, 2.0);
    EXPECT_DOUBLE_EQ(buf.at(1).reward, 3.0);
    EXPECT_DOUBLE_EQ(buf.at(2).reward, 4.0);
    EXPECT_DOUBLE_EQ(buf.at(2).next_state[1], 4.5);
    EXPECT_DOUBLE_EQ(buf.at(2).action[0], -4.0);
}

TEST(ReplayBuffer, SamplesAreDistinctAndCoverTheBuffer) {
    ReplayBuffer buf(50, 2, 1);
    for (int i = 0; i < 50; ++i) buf.push(make_transition(i));
    std::mt19937_64 rng(3);
    std::set<std::size_t> seen_all;
    for (int trial = 0; trial < 200; ++trial) {
        const auto idx = buf.sample_indices(20, rng);
        const std::set<std::size_t> unique(idx.begin(), idx.end());
        ASSERT_EQ(unique.size(), 20u);
        for (std::size_t i : idx) ASSERT_LT(i, 50u);
        seen_all.insert(idx.begin(), idx.end());
    }
    EXPECT_EQ(seen_all.size(), 50u);
    const auto full = buf.sample_indices(50, rng);
    EXPECT_EQ(std::set<std::size_t>(full.begin(), full.end()).size(), 50u);
}

TEST(ReplayBuffer, RejectsBadInput) {
    ReplayBuffer buf(4, 2, 1);
    EXPECT_THROW(buf.push(make_transition(1.0, 3, 1)), ContractError);
    EXPECT_THROW(buf.push(make_transition(1.0, 2, 2)), ContractError);
    buf.push(make_transition(1.0));
    std::mt19937_64 rng(1);
    EXPECT_THROW(buf.sample(2, rng), ContractError);
    EXPECT_THROW(ReplayBuffer(0, 2, 1), ContractError);
}

TEST(SoftUpdate, Examples) {
    Tensor target = Tensor::zeros({2});
    Tensor online = Tensor::zeros({2});
    online[0] = 1.0;
    online[1] = -2.0;
    soft_update(target, online, 1.0);
    EXPECT_DOUBLE_EQ(target[0], 1.0);
    EXPECT_DOUBLE_EQ(target[1], -2.0);

    Tensor frozen = Tensor::zeros({2});
    soft_update(frozen, online, 0.0);
    EXPECT_DOUBLE_EQ(frozen[0], 0.0);

    Tensor slow = Tensor::zeros({1});
    Tensor one = Tensor::zeros({1});
    one[0] = 1.0;
    for (int i = 0; i < 1000; ++i) soft_update(slow, one, 0.001);
    EXPECT_NEAR(slow[0], 1.0 - std::pow(0.999, 1000), 1e-12);
    EXPECT_NEAR(slow[0], 0.632, 1e-3);
    EXPECT_THROW(soft_update(slow, one, 1.5), ContractError);
}

TEST(Critic, TerminalTargetIsReward) {
    SacAgent agent = tiny_agent(tiny_config(), 5);
    std::mt19937_64 rng(1);
    const Tensor y = agent.critic_targets(constant_batch(8, 0.3, 0.1, 0.7, 1.0), rng);
    for (std::size_t r = 0; r < 8; ++r) EXPECT_DOUBLE_EQ(y.at(r, 0), 0.7);

    TrainConfig zero_gamma = tiny_config();
    zero_gamma.gamma = 1e-300;
    SacAgent myopic = tiny_agent(zero_gamma, 5);
    const Tensor y2 = myopic.critic_targets(constant_batch(8, 0.3, 0.1, -0.4, 0.0), rng);
    for (std::size_t r = 0; r < 8; ++r) EXPECT_NEAR(y2.at(r, 0), -0.4, 1e-12);
}

TEST(Critic, BootstrapMatchesHandComputation) {
    SacAgent agent = tiny_agent(tiny_config(), 9);
    const Batch batch = constant_batch(4, -0.2, 0.5, 0.25, 0.0);
    std::mt19937_64 rng_a(42), rng_b(42);
    const Tensor y = agent.critic_targets(batch, rng_a);

    // Independent recomputation: same noise draw, scalar squashing and min of the two target critics.
    const Tensor noise = SacAgent::standard_normal(4, 1, rng_b);
    const auto head = nets::split_head(nets::mlp_forward(agent.actor().experts[0], std::vector<double>{-0.2}));
    for (std::size_t r = 0; r < 4; ++r) {
        const double std_dev = std::exp(std::clamp(head.log_std[0], nets::kLogStdMin, nets::kLogStdMax));
        const double u = head.mean[0] + std_dev * noise.at(r, 0);
        const double a = std::tanh(u);
        const double log_gauss = -0.5 * noise.at(r, 0) * noise.at(r, 0) - 0.5 * std::log(2.0 * std::numbers::pi) -
                                 std::log(std_dev);
        const double log_pi = log_gauss - std::log(1.0 - a * a);
        const std::vector<double> in{-0.2, (a + 0.2) / std::numbers::pi};  // offset from q = -0.2, no wrap needed
        const double q1 = nets::mlp_forward(agent.target(0), in)[0];
        const double q2 = nets::mlp_forward(agent.target(1), in)[0];
        const double expected = 0.25 + 0.987 * (std::min(q1, q2) - agent.temperature() * log_pi);
        EXPECT_NEAR(y.at(r, 0), expected, 1e-9);
    }
}

TEST(Critic, BanditValueConvergesToReward) {
    SacAgent agent = tiny_agent(tiny_config(), 11);
    std::mt19937_64 rng(2);
    const Batch batch = constant_batch(32, 0.5, 0.2, 1.0, 1.0);
    for (int i = 0; i < 500; ++i) agent.critic_update(batch, rng);
    const Tensor in = agent.critic_input(batch.states, batch.actions);
    for (int k = 0; k < 2; ++k) EXPECT_NEAR(nets::mlp_forward(agent.critic(k), in).at(0, 0), 1.0, 0.05);
}

TEST(Temperature, GradientSignAndStationaryPoint) {
    SacAgent agent = tiny_agent(tiny_config(), 3);
    ASSERT_DOUBLE_EQ(agent.target_entropy(), -1.0);
    agent.set_temperature(0.5);
    EXPECT_NEAR(agent.temperature_gradient(1.0), 0.0, 1e-15);  // entropy -1 equals the target
    // Entropy below target (log pi high): temperature should rise, so the gradient is negative.
    EXPECT_LT(agent.temperature_gradient(3.0), 0.0);
    EXPECT_GT(agent.temperature_gradient(-2.0), 0.0);
    EXPECT_NEAR(agent.temperature_gradient(3.0), -0.5 * 2.0, 1e-12);

    const double before = agent.temperature();
    agent.temperature_update(3.0);
    EXPECT_GT(agent.temperature(), before);
    agent.temperature_update(-5.0);
    agent.temperature_update(-5.0);
    EXPECT_LT(agent.temperature(), before);
}

TEST(Temperature, EntropySettlesOnTarget) {
    // Quadratic bandit: r = -a^2, terminal. The automatic temperature should drive entropy to -1.
    TrainConfig cfg = tiny_config();
    cfg.batch_size = 64;
    SacAgent agent = tiny_agent(cfg, 21);
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    ReplayBuffer buf(2000, 1, 1);
    for (int i = 0; i < 2000; ++i) {
        const double a = u(rng);
        buf.push(Transition{{0.0}, {a}, -a * a, {0.0}, true});
    }
    for (int i = 0; i < 3000; ++i) agent.update(buf.sample(cfg.batch_size, rng), rng);
    double sum_logp = 0.0;
    const int n = 4000;
    for (int i = 0; i < n; ++i) sum_logp += agent.act(std::vector<double>{0.0}, rng, false).log_prob;
    EXPECT_NEAR(-sum_logp / n, -1.0, 0.1);
}

TEST(Actor, SmoothingTermMatchesHandComputation) {
    SacAgent agent = gated_agent(Arch::Mela, 4);
    std::mt19937_64 rng(6);
    const Batch batch = random_batch(6, 2, 1, rng);
    const Tensor noise = SacAgent::standard_normal(6, 1, rng);
    ad::Tape tape;
    const auto vars = attach(tape, agent.actor(), true);
    const auto graph = agent.actor_loss(tape, vars, batch, noise);

    double expected = 0.0;
    for (std::size_t r = 0; r < 6; ++r) {
        const std::vector<double> obs{batch.states.at(r, 0), batch.states.at(r, 1)};
        const auto a = agent.act(obs, rng, true);
        double d = std::remainder(a.action[0] - obs[0], 2.0 * std::numbers::pi);
        expected += std::abs(d) / 6.0;
    }
    EXPECT_NEAR(graph.smoothing.value()[0], expected, 1e-9);
}

TEST(Actor, SmoothingPullsMeanTowardMeasuredJoints) {
    std::mt19937_64 data_rng(31);
    const Batch batch = random_batch(32, 2, 1, data_rng);
    auto offset_after = [&](double c) {
        SacAgent agent = gated_agent(Arch::Mela, 12, c);
        std::mt19937_64 rng(1);
        for (int i = 0; i < 300; ++i) agent.actor_update(batch, rng);
        ad::Tape tape;
        const auto vars = attach(tape, agent.actor(), false);
        return agent.actor_loss(tape, vars, batch, SacAgent::standard_normal(32, 1, rng)).smoothing.value()[0];
    };
    const double free = offset_after(0.0);
    const double held = offset_after(1e6);
    EXPECT_LT(held, 0.1 * free);
}

TEST(Actor, GatingReceivesGradient) {
    for (Arch arch : {Arch::Mela, Arch::Moe}) {
        SacAgent agent = gated_agent(arch, 7);
        std::mt19937_64 rng(2);
        const Batch batch = random_batch(16, 2, 1, rng);
        ad::Tape tape;
        const auto vars = attach(tape, agent.actor(), true);
        const auto graph = agent.actor_loss(tape, vars, batch, SacAgent::standard_normal(16, 1, rng));
        const auto grads = tape.backward(graph.loss);
        double norm = 0.0;
        for (double g : grads.of(vars.gating.W0).values()) norm += g * g;
        EXPECT_GT(norm, 1e-12) << arch_name(arch);
    }
}

TEST(Actor, EndToEndGradientMatchesFiniteDifferences) {
    SacAgent agent = gated_agent(Arch::Mela, 15);
    std::mt19937_64 rng(4);
    const Batch batch = random_batch(5, 2, 1, rng);
    const Tensor noise = SacAgent::standard_normal(5, 1, rng);
    std::vector<Tensor> params;
    Actor& actor = agent.actor();
    for (Tensor* t : actor.tensors()) params.push_back(*t);
    const std::size_t n_experts = actor.experts.size();

    const mela::testing::LossBuilder build = [&](ad::Tape& tape, const std::vector<ad::Var>& v) {
        ActorVars vars;
        auto take = [&](std::size_t k) { return nets::ParamVars{v[k], v[k + 1], v[k + 2], v[k + 3], v[k + 4], v[k + 5]}; };
        for (std::size_t n = 0; n < n_experts; ++n) vars.experts.push_back(take(6 * n));
        vars.gating = take(6 * n_experts);
        return agent.actor_loss(tape, vars, batch, noise).loss;
    };
    const auto res = mela::testing::grad_check(build, params, 1e-6, 1e-7, 12);
    EXPECT_LT(res.max_rel_error, 1e-4) << res.worst;
}

TEST(Agent, UpdatesAreDeterministicForASeed) {
    auto run = [] {
        SacAgent agent = gated_agent(Arch::Mela, 2);
        std::mt19937_64 rng(9);
        const Batch batch = random_batch(16, 2, 1, rng);
        for (int i = 0; i < 5; ++i) agent.update(batch, rng);
        std::vector<double> out;
        for (Tensor* t : agent.actor().tensors())
            for (double v : t->values()) out.push_back(v);
        out.push_back(agent.temperature());
        return out;
    };
    EXPECT_EQ(run(), run());
}

TEST(Agent, ConfigValidation) {
    TrainConfig c = tiny_config();
    c.gamma = 1.0;
    EXPECT_THROW(c.validate(), ContractError);
    c = tiny_config();
    c.batch_size = 5000;
    EXPECT_THROW(c.validate(), ContractError);
    EXPECT_EQ(arch_from_name("moe"), Arch::Moe);
    EXPECT_THROW(arch_from_name("mixture"), ContractError);
}

TEST(Trainer, ShortRunIsReproducible) {
    TrainConfig cfg = tiny_config();
    cfg.warmup_steps = 40;
    cfg.batch_size = 16;
    RunOptions opt;
    opt.episodes = 2;
    env::EnvConfig e = task_env(env::Task::Recovery);
    e.episode_steps = 40;
    const auto a = run_stage1(env::Task::Recovery, cfg, opt, 77, {}, e);
    const auto b = run_stage1(env::Task::Recovery, cfg, opt, 77, {}, e);
    ASSERT_EQ(a.curve.size(), 2u);
    EXPECT_EQ(a.curve[1].env_steps, 80);
    EXPECT_GT(a.curve[1].updates, 0);
    EXPECT_DOUBLE_EQ(a.curve[1].episode_return, b.curve[1].episode_return);
    EXPECT_DOUBLE_EQ(a.curve[1].critic_loss, b.curve[1].critic_loss);
}

TEST(Trainer, StageTwoActorCarriesPretrainedExperts) {
    std::mt19937_64 rng(5);
    const Routing r1 = stage1_routing(env::Task::Recovery);
    const Actor rec = make_single_actor(r1, 8, 2, rng);
    const Actor rhy = make_single_actor(stage1_routing(env::Task::Rhythmic), 8, 2, rng);
    for (std::size_t i = 0; i < r1.policy.size(); ++i) {
        if (r1.policy[i] < 0) {
            EXPECT_DOUBLE_EQ(rec.experts[0].W0.at(i, 0), 0.0);
        }
    }
    const Actor mela = make_stage2_actor(Arch::Mela, rec.experts[0], rhy.experts[0], 4, 8, rng);
    ASSERT_EQ(mela.size(), 4u);
    EXPECT_EQ(mela.experts[0].W1.values()[3], rec.experts[0].W1.values()[3]);
    EXPECT_EQ(mela.experts[3].W1.values()[3], rhy.experts[0].W1.values()[3]);
    EXPECT_THROW(make_stage2_actor(Arch::Single, rec.experts[0], rhy.experts[0], 4, 8, rng), ContractError);
}

TEST(Trainer, StepBudgetEndsTheRun) {
    TrainConfig cfg = tiny_config();
    cfg.warmup_steps = 30;
    cfg.batch_size = 16;
    RunOptions opt;
    opt.episodes = 10;
    opt.max_env_steps = 50;
    env::EnvConfig e = task_env(env::Task::Recovery);
    e.episode_steps = 20;
    const auto r = run_stage1(env::Task::Recovery, cfg, opt, 3, {}, e);
    ASSERT_EQ(r.curve.size(), 3u);
    EXPECT_EQ(r.curve.back().env_steps, 60);
}

TEST(Trainer, WarmupPoliciesNeverCountAsBest) {
    TrainConfig cfg = tiny_config();
    cfg.warmup_steps = 1000;
    RunOptions opt;
    opt.episodes = 3;
    opt.eval_every = 1;
    opt.eval_episodes = 1;
    env::EnvConfig e = task_env(env::Task::Recovery);
    e.episode_steps = 20;
    const auto r = run_stage1(env::Task::Recovery, cfg, opt, 3, {}, e);
    EXPECT_EQ(r.best_episode, 0);
    EXPECT_EQ(r.curve.back().updates, 0);

    cfg.warmup_steps = 10;
    cfg.batch_size = 8;
    const auto learned = run_stage1(env::Task::Recovery, cfg, opt, 3, {}, e);
    EXPECT_GE(learned.best_episode, 1);
}
