#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mela/env/tasks.hpp"
#include "mela/io/checkpoint.hpp"
#include "mela/sac/trainer.hpp"

namespace mela::io {

/// Everything a CLI command needs; every field has a default.
struct RunConfig {
    std::uint64_t seed = 1;
    int stage = 1;
    env::Task task = env::Task::Recovery;
    sac::Arch arch = sac::Arch::Mela;   // stage 2 only; stage 1 always trains a single expert
    std::size_t experts = 8;
    double action_half_range = sac::kJointHalfRange;
    sac::RunOptions run;
    sac::TrainConfig train;
    env::EnvConfig env;
    std::string checkpoint_a;  // stage-2 inputs: recovery and rhythmic experts
    std::string checkpoint_b;
    std::map<std::string, std::string> reward_overrides;  // "reward.<term>.<field>" -> value

    /// Env config with the task's default reward and any overrides applied.
    env::EnvConfig resolved_env() const;
    env::EnvConfig eval_env() const {
        env::EnvConfig e = resolved_env();
        e.pipeline.filter_cutoff_hz = run.eval_cutoff_hz;
        return e;
    }
    nets::ActionBound bound() const { return sac::joint_bound(action_half_range); }
};

namespace detail {

inline std::string format_double(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline double parse_double(std::string_view key, std::string_view s) {
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size())
        throw ContractError("config: '" + std::string(key) + "' expects a number, got '" + std::string(s) + "'");
    return v;
}

template <typename Int>
Int parse_int(std::string_view key, std::string_view s) {
    Int v{};
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size())
        throw ContractError("config: '" + std::string(key) + "' expects an integer, got '" + std::string(s) + "'");
    return v;
}

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline std::vector<double> parse_list(std::string_view key, std::string_view s) {
    std::vector<double> out;
    if (trim(s).empty()) return out;
    std::size_t start = 0;
    while (start <= s.size()) {
        const auto comma = s.find(',', start);
        const auto piece = trim(s.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        out.push_back(parse_double(key, piece));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

inline std::string format_list(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
    return s;
}

}  // namespace detail

/// Key/value view over a RunConfig: get, set and enumerate every field by name.
class ConfigRegistry {
public:
    explicit ConfigRegistry(RunConfig& cfg) : cfg_(cfg) {
        auto& c = cfg_;
        num("seed", c.seed);
        num("stage", c.stage);
        add("task", [&c] { return std::string(env::task_name(c.task)); },
            [&c](std::string_view v) { c.task = env::task_from_name(v); });
        add("arch", [&c] { return std::string(sac::arch_name(c.arch)); },
            [&c](std::string_view v) { c.arch = sac::arch_from_name(v); });
        num("experts", c.experts);
        num("action_half_range", c.action_half_range);
        add("checkpoint_a", [&c] { return c.checkpoint_a; }, [&c](std::string_view v) { c.checkpoint_a = v; });
        add("checkpoint_b", [&c] { return c.checkpoint_b; }, [&c](std::string_view v) { c.checkpoint_b = v; });

        num("episodes", c.run.episodes);
        num("max_env_steps", c.run.max_env_steps);
        num("eval_every", c.run.eval_every);
        num("eval_episodes", c.run.eval_episodes);
        num("eval_seed", c.run.eval_seed);
        num("eval_cutoff_hz", c.run.eval_cutoff_hz);

        auto& t = c.train;
        num("smoothing", t.smoothing);
        num("learning_rate", t.learning_rate);
        num("weight_decay", t.weight_decay);
        num("gamma", t.gamma);
        num("tau", t.tau);
        num("steps_per_epoch", t.steps_per_epoch);
        num("batch_size", t.batch_size);
        num("updates_per_step", t.updates_per_step);
        num("warmup_steps", t.warmup_steps);
        num("replay_capacity", t.replay_capacity);
        num("target_entropy", t.target_entropy);
        num("initial_temperature", t.initial_temperature);
        num("expert_hidden", t.expert_hidden);
        num("gating_hidden", t.gating_hidden);
        num("critic_hidden", t.critic_hidden);

        auto& e = c.env;
        num("episode_steps", e.episode_steps);
        num("runaway_speed", e.runaway_speed);
        num("orientation_limit", e.orientation_limit);
        num("reset_angle_noise", e.reset_angle_noise);
        num("reset_rate_noise", e.reset_rate_noise);
        num("goal_radius_min", e.goal_radius_min);
        num("goal_radius_max", e.goal_radius_max);
        num("goal_sector", e.goal_sector);
        num("upright_tip_height", e.upright_tip_height);
        num("goal_tolerance", e.goal_tolerance);
        num("rhythm_amplitude", e.rhythm.amplitude);
        num("rhythm_period", e.rhythm.period);
        num("link1_length", e.plant.l1);
        num("link2_length", e.plant.l2);
        num("link1_mass", e.plant.m1);
        num("link2_mass", e.plant.m2);
        num("gravity", e.plant.gravity);
        num("damping", e.plant.damping);
        num("dt", e.plant.dt);
        add("torque_limit", [&e] { return detail::format_double(e.plant.torque_limit); },
            [&e](std::string_view v) { e.plant.torque_limit = e.pipeline.torque_limit = detail::parse_double("torque_limit", v); });
        num("filter_cutoff_hz", e.pipeline.filter_cutoff_hz);
        num("policy_rate_hz", e.pipeline.policy_rate_hz);
        num("control_rate_hz", e.pipeline.control_rate_hz);
        num("speed_limit_rad_s", e.pipeline.speed_limit_rad_s);
        num("kp", e.pipeline.kp);
        num("kd", e.pipeline.kd);
    }

    bool has(std::string_view key) const { return find(key) != nullptr || is_reward_key(key); }

    void set(std::string_view key, std::string_view value) {
        if (is_reward_key(key)) {
            check_reward_key(key);
            cfg_.reward_overrides[std::string(key)] = detail::trim(value);
            return;
        }
        const Entry* e = find(key);
        if (!e) throw ContractError("config: unknown key '" + std::string(key) + "'");
        e->set(detail::trim(value));
    }

    std::string get(std::string_view key) const {
        if (is_reward_key(key)) {
            for (const auto& [k, v] : reward_entries())
                if (k == key) return v;
            throw ContractError("config: reward key '" + std::string(key) + "' is not part of the task's reward");
        }
        const Entry* e = find(key);
        if (!e) throw ContractError("config: unknown key '" + std::string(key) + "'");
        return e->get();
    }

    /// Every key with its current value, reward terms last; replaying this reproduces the config.
    std::vector<std::pair<std::string, std::string>> entries() const {
        std::vector<std::pair<std::string, std::string>> out;
        for (const auto& e : entries_) out.emplace_back(e.key, e.get());
        for (auto& kv : reward_entries()) out.push_back(std::move(kv));
        return out;
    }

    std::string snapshot() const {
        std::string s;
        for (const auto& [k, v] : entries()) s += k + " = " + v + "\n";
        return s;
    }

    std::uint64_t hash() const { return fnv1a(snapshot()); }

    /// `key = value` lines; '#' starts a comment.
    void load_text(std::string_view text, const std::string& origin = "config") {
        std::istringstream in{std::string(text)};
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash_pos = line.find('#');
            if (hash_pos != std::string::npos) line.resize(hash_pos);
            const std::string body = detail::trim(line);
            if (body.empty()) continue;
            const auto eq = body.find('=');
            if (eq == std::string::npos)
                throw ContractError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
            try {
                set(detail::trim(std::string_view(body).substr(0, eq)), std::string_view(body).substr(eq + 1));
            } catch (const ContractError& e) {
                throw ContractError(origin + ":" + std::to_string(lineno) + ": " + e.what());
            }
        }
    }

    void load_file(const std::filesystem::path& path) { load_text(read_file(path), path.string()); }

private:
    struct Entry {
        std::string key;
        std::function<std::string()> get;
        std::function<void(std::string_view)> set;
    };

    void add(std::string key, std::function<std::string()> get, std::function<void(std::string_view)> set) {
        entries_.push_back(Entry{std::move(key), std::move(get), std::move(set)});
    }

    template <typename T>
    void num(std::string key, T& field) {
        const std::string k = key;
        if constexpr (std::is_floating_point_v<T>) {
            add(std::move(key), [&field] { return detail::format_double(field); },
                [&field, k](std::string_view v) { field = detail::parse_double(k, v); });
        } else {
            add(std::move(key), [&field] { return std::to_string(field); },
                [&field, k](std::string_view v) { field = detail::parse_int<T>(k, v); });
        }
    }

    const Entry* find(std::string_view key) const {
        for (const auto& e : entries_)
            if (e.key == key) return &e;
        return nullptr;
    }

    static bool is_reward_key(std::string_view key) { return key.starts_with("reward."); }

    static void check_reward_key(std::string_view key) {
        const auto rest = key.substr(7);
        const auto dot = rest.find('.');
        const std::string term = std::string(rest.substr(0, dot));
        if (dot == std::string_view::npos || !reward::term_from_name(term))
            throw ContractError("config: unknown reward term in '" + std::string(key) + "'");
        const auto field = rest.substr(dot + 1);
        if (field != "weight" && field != "width" && field != "target")
            throw ContractError("config: reward field must be weight, width or target in '" + std::string(key) + "'");
    }

    std::vector<std::pair<std::string, std::string>> reward_entries() const {
        std::vector<std::pair<std::string, std::string>> out;
        for (const auto& t : cfg_.resolved_env().reward.terms) {
            const std::string p = "reward." + std::string(reward::term_name(t.term)) + ".";
            out.emplace_back(p + "weight", detail::format_double(t.weight));
            out.emplace_back(p + "width", detail::format_double(t.width));
            out.emplace_back(p + "target", detail::format_list(t.target));
        }
        return out;
    }

    RunConfig& cfg_;
    std::vector<Entry> entries_;
};

inline env::EnvConfig RunConfig::resolved_env() const {
    env::EnvConfig e = env;
    e.task = task;
    if (e.reward.terms.empty()) e.reward = env::default_reward(task);
    for (const auto& [key, value] : reward_overrides) {
        const auto rest = std::string_view(key).substr(7);
        const auto dot = rest.find('.');
        const auto term = *reward::term_from_name(rest.substr(0, dot));
        const auto field = rest.substr(dot + 1);
        reward::RewardTerm* t = e.reward.find(term);
        if (!t) {
            e.reward.terms.push_back(reward::RewardTerm{term, 0.0, 0.0, {}});
            t = &e.reward.terms.back();
        }
        if (field == "weight") t->weight = detail::parse_double(key, value);
        else if (field == "width") t->width = detail::parse_double(key, value);
        else t->target = detail::parse_list(key, value);
    }
    return e;
}

}  // namespace mela::io
