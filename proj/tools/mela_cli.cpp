// Command-line front end: train, eval, activation-matrix, expert-sweep, export-embedding, compare.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mela/cli/analysis.hpp"
#include "mela/io/checkpoint.hpp"
#include "mela/io/config.hpp"
#include "mela/sac/trainer.hpp"

namespace fs = std::filesystem;
using namespace mela;
using json = nlohmann::ordered_json;

namespace {

/// Files written by a command, listed with their FNV-1a hashes in manifest.json.
class Outputs {
public:
    explicit Outputs(fs::path dir) : dir_(std::move(dir)) {
        std::error_code ec;
        fs::create_directories(dir_, ec);
        if (ec || !fs::is_directory(dir_)) throw FormatError("cannot create output directory '" + dir_.string() + "'");
    }

    const fs::path& dir() const { return dir_; }

    void write(const std::string& name, const std::string& bytes) {
        io::write_file_atomic(dir_ / name, bytes);
        files_[name] = io::hex64(io::fnv1a(bytes));
    }

    void write_checkpoint(const std::string& name, const io::Checkpoint& c) { write(name, io::serialize(c)); }

    void finish(const std::string& command) {
        json m;
        m["command"] = command;
        m["hash"] = "fnv1a64";
        json files = json::object();
        for (const auto& [k, v] : files_) files[k] = v;
        m["artifacts"] = files;
        io::write_file_atomic(dir_ / "manifest.json", m.dump(2) + "\n");
    }

private:
    fs::path dir_;
    std::map<std::string, std::string> files_;
};

/// Config file first, then `--key value` overrides in command-line order.
struct ConfigSource {
    std::string file;
    std::vector<std::string> overrides;

    void apply(io::ConfigRegistry& reg) const {
        if (!file.empty()) reg.load_file(file);
        if (overrides.size() % 2 != 0) throw ContractError("override '" + overrides.back() + "' has no value");
        for (std::size_t i = 0; i < overrides.size(); i += 2) {
            std::string key = overrides[i];
            if (!key.starts_with("--")) throw ContractError("expected --key, got '" + key + "'");
            key = key.substr(2);
            std::replace(key.begin(), key.end(), '-', '_');
            reg.set(key, overrides[i + 1]);
        }
    }
};

void add_config_options(CLI::App* cmd, ConfigSource& src) {
    cmd->add_option("--config", src.file, "key = value config file");
    cmd->allow_extras();
}

std::vector<std::string> extras(CLI::App* cmd) { return cmd->remaining(); }

io::Checkpoint load_expert(const std::string& path, const std::string& what) {
    if (path.empty()) throw ContractError("stage 2 needs --checkpoint_a and --checkpoint_b (" + what + ")");
    return io::load_checkpoint(path);
}

int cmd_train(const io::RunConfig& cfg, const io::ConfigRegistry& reg, Outputs& out) {
    require(cfg.stage == 1 || cfg.stage == 2, "stage must be 1 or 2");
    const std::uint64_t hash = reg.hash();
    out.write("config.cfg", reg.snapshot());
    std::optional<sac::SacAgent> agent;
    if (cfg.stage == 1) {
        agent.emplace(sac::make_stage1_agent(cfg.task, cfg.train, cfg.seed, cfg.bound()));
    } else {
        require(cfg.task == env::Task::Multimodal, "stage 2 trains on the multimodal task (set task = multimodal)");
        const auto a = io::load_actor(load_expert(cfg.checkpoint_a, "recovery expert"), sac::Arch::Single);
        const auto b = io::load_actor(load_expert(cfg.checkpoint_b, "rhythmic expert"), sac::Arch::Single);
        agent.emplace(sac::make_stage2_agent(a.experts[0], b.experts[0], cfg.arch, cfg.experts, cfg.train, cfg.seed,
                                             cfg.bound()));
    }
    const std::map<std::string, std::string> meta{{"task", std::string(env::task_name(cfg.task))},
                                                  {"stage", std::to_string(cfg.stage)},
                                                  {"seed", std::to_string(cfg.seed)},
                                                  {"action_half_range", reg.get("action_half_range")}};
    std::string metrics;
    int status = 0;
    try {
        const auto result = sac::train(*agent, cfg.resolved_env(), cfg.run, cfg.seed, [&](const sac::EpisodeMetrics& m) {
            metrics += cli::metrics_json(m).dump() + "\n";
        });
        out.write_checkpoint("final.ckpt", io::capture(*agent, hash, meta));
        io::Checkpoint best;
        best.config_hash = hash;
        best.meta = meta;
        best.meta["episode"] = std::to_string(result.best_episode);
        io::store_actor(best, result.best_policy.actor);
        out.write_checkpoint("best.ckpt", best);
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        status = 3;
    }
    out.write("metrics.jsonl", metrics);
    return status;
}

int cmd_eval(const io::RunConfig& cfg, const std::string& checkpoint, int episodes, bool write_traj,
             std::optional<sac::Arch> expect, Outputs& out) {
    require(episodes >= 0, "eval: negative episode count");
    const io::Checkpoint ck = io::load_checkpoint(checkpoint);
    const sac::Actor actor = io::load_actor(ck, expect);
    const bool gated = actor.arch != sac::Arch::Single;
    // A single expert reads the inputs of the task it was trained on.
    const env::Task trained_on = ck.meta.contains("task") ? env::task_from_name(ck.get("task")) : cfg.task;
    const sac::Routing routing = gated ? sac::stage2_routing() : sac::stage1_routing(trained_on);
    if (actor.experts.front().W0.rows() != routing.policy.size())
        throw ShapeError("checkpoint expects " + std::to_string(actor.experts.front().W0.rows()) +
                         " policy inputs, task '" + std::string(env::task_name(cfg.task)) + "' provides " +
                         std::to_string(routing.policy.size()));
    double half_range = cfg.action_half_range;
    if (ck.meta.contains("action_half_range")) half_range = std::stod(ck.get("action_half_range"));
    const sac::Policy policy{actor, routing, sac::joint_bound(half_range)};
    const env::EnvConfig env_cfg = cfg.eval_env();

    std::string traj = cli::trajectory_header(env_cfg.reward, gated ? actor.size() : 0) + "\n";
    const auto summary = sac::evaluate(policy, env_cfg, episodes, cfg.run.eval_seed, [&](const sac::StepRecord& s) {
        if (write_traj) traj += cli::trajectory_row(s) + "\n";
    });
    json j;
    j["checkpoint"] = checkpoint;
    j["task"] = std::string(env::task_name(cfg.task));
    j["arch"] = std::string(sac::arch_name(actor.arch));
    j["filter_cutoff_hz"] = env_cfg.pipeline.filter_cutoff_hz;
    j["episodes"] = summary.episodes.size();
    j["mean_return"] = summary.mean_return();
    j["success_rate"] = summary.success_rate();
    j["mean_offset"] = summary.mean_offset();
    json eps = json::array();
    for (const auto& e : summary.episodes) {
        json r;
        r["return"] = e.episode_return;
        r["length"] = e.length;
        r["success"] = e.success;
        r["termination"] = e.termination;
        r["init"] = e.init;
        r["mean_offset"] = e.mean_offset;
        json modes;
        for (env::Mode m : env::kAllModes) modes[std::string(env::mode_name(m))] = e.mode_steps[std::size_t(m)];
        r["mode_steps"] = modes;
        r["mode_transitions"] = e.mode_transitions;
        eps.push_back(r);
    }
    j["per_episode"] = eps;
    out.write("summary.json", j.dump(2) + "\n");
    if (write_traj) out.write("trajectory.csv", traj);
    return 0;
}

cli::StepLog read_log(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open log '" + path + "'");
    return cli::read_step_log(in, path);
}

int cmd_expert_sweep(const io::RunConfig& base, const io::ConfigRegistry& reg, const std::vector<std::size_t>& ns,
                     const std::vector<std::uint64_t>& seeds, Outputs& out) {
    require(base.task == env::Task::Multimodal, "expert sweep trains stage 2 on the multimodal task (set task = multimodal)");
    for (std::size_t n : ns) require(n >= 2 && n % 2 == 0, "expert sweep: N must be even and >= 2 (got " + std::to_string(n) + ")");
    const auto a = io::load_actor(load_expert(base.checkpoint_a, "recovery expert"), sac::Arch::Single);
    const auto b = io::load_actor(load_expert(base.checkpoint_b, "rhythmic expert"), sac::Arch::Single);
    out.write("config.cfg", reg.snapshot());
    std::string merged = "experts,seeds,auc_mean,auc_std\n";
    for (std::size_t n : ns) {
        std::vector<double> aucs;
        for (std::uint64_t seed : seeds) {
            std::string metrics;
            const auto r = sac::run_stage2(a.experts[0], b.experts[0], base.arch, n, base.train, base.run, seed,
                                           [&](const sac::EpisodeMetrics& m) { metrics += cli::metrics_json(m).dump() + "\n"; },
                                           base.resolved_env(), base.bound());
            std::vector<double> returns;
            for (const auto& m : r.curve) returns.push_back(m.episode_return);
            aucs.push_back(returns.empty() ? 0.0 : cli::curve_auc(returns));
            out.write("metrics_N" + std::to_string(n) + "_seed" + std::to_string(seed) + ".jsonl", metrics);
        }
        merged += std::to_string(n) + "," + std::to_string(seeds.size()) + "," + cli::csv_number(cli::mean_of(aucs)) +
                  "," + cli::csv_number(cli::stddev_of(aucs)) + "\n";
    }
    out.write("sweep.csv", merged);
    return 0;
}

std::vector<double> read_curve(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open metrics '" + path + "'");
    return cli::returns_from_jsonl(in);
}

int cmd_compare(const std::vector<std::string>& mela_runs, const std::vector<std::string>& moe_runs, Outputs& out) {
    require(!mela_runs.empty() && !moe_runs.empty(), "compare: need at least one MELA and one MoE metrics file");
    std::string rows = "arch,run,episodes,auc\n";
    std::vector<double> a_mela, a_moe;
    auto add = [&](const std::string& arch, const std::string& path, std::vector<double>& into) {
        const auto curve = read_curve(path);
        into.push_back(cli::curve_auc(curve));
        rows += arch + "," + path + "," + std::to_string(curve.size()) + "," + cli::csv_number(into.back()) + "\n";
    };
    for (const auto& p : mela_runs) add("mela", p, a_mela);
    for (const auto& p : moe_runs) add("moe", p, a_moe);
    out.write("compare_runs.csv", rows);
    std::string table = "arch,runs,auc_mean,auc_std\n";
    table += "mela," + std::to_string(a_mela.size()) + "," + cli::csv_number(cli::mean_of(a_mela)) + "," +
             cli::csv_number(cli::stddev_of(a_mela)) + "\n";
    table += "moe," + std::to_string(a_moe.size()) + "," + cli::csv_number(cli::mean_of(a_moe)) + "," +
             cli::csv_number(cli::stddev_of(a_moe)) + "\n";
    out.write("compare.csv", table);
    std::cout << table;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MELA two-link pendulum experiments"};
    app.require_subcommand(1);
    std::string out_dir = "out";
    app.add_option("--out", out_dir, "output directory")->capture_default_str();

    ConfigSource train_src, eval_src, sweep_src;
    auto* train = app.add_subcommand("train", "train a stage-1 expert or a stage-2 gated policy");
    add_config_options(train, train_src);

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint with the deterministic policy");
    add_config_options(eval, eval_src);
    std::string checkpoint;
    int episodes = 10;
    std::string expect_arch;
    bool no_traj = false;
    eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    eval->add_option("--episodes", episodes, "evaluation episodes")->capture_default_str();
    eval->add_option("--expect-arch", expect_arch, "fail unless the checkpoint holds this architecture");
    eval->add_flag("--no-trajectory", no_traj, "skip the per-step trajectory CSV");

    auto* act = app.add_subcommand("activation-matrix", "per-mode mean gating weights from an eval trajectory");
    std::string log_path;
    act->add_option("--log", log_path, "trajectory CSV from eval")->required();

    auto* emb = app.add_subcommand("export-embedding", "action and gating vectors with labels for external t-SNE");
    emb->add_option("--log", log_path, "trajectory CSV from eval")->required();

    auto* sweep = app.add_subcommand("expert-sweep", "stage-2 learning curves for several expert counts");
    add_config_options(sweep, sweep_src);
    std::vector<std::size_t> ns{2, 4, 8, 12};
    std::vector<std::uint64_t> seeds{1, 2, 3};
    sweep->add_option("--n-list", ns, "expert counts")->delimiter(',');
    sweep->add_option("--seeds", seeds, "seeds")->delimiter(',');

    auto* cmp = app.add_subcommand("compare", "MELA vs MoE learning-curve AUC table");
    std::vector<std::string> mela_runs, moe_runs;
    cmp->add_option("--mela", mela_runs, "MELA metrics.jsonl files")->delimiter(',')->required();
    cmp->add_option("--moe", moe_runs, "MoE metrics.jsonl files")->delimiter(',')->required();

    CLI11_PARSE(app, argc, argv);

    try {
        Outputs out(out_dir);
        int status = 0;
        std::string name;
        if (train->parsed()) {
            name = "train";
            io::RunConfig cfg;
            io::ConfigRegistry reg(cfg);
            train_src.overrides = extras(train);
            train_src.apply(reg);
            status = cmd_train(cfg, reg, out);
        } else if (eval->parsed()) {
            name = "eval";
            io::RunConfig cfg;
            io::ConfigRegistry reg(cfg);
            eval_src.overrides = extras(eval);
            eval_src.apply(reg);
            std::optional<sac::Arch> expect;
            if (!expect_arch.empty()) expect = sac::arch_from_name(expect_arch);
            status = cmd_eval(cfg, checkpoint, episodes, !no_traj, expect, out);
        } else if (act->parsed()) {
            name = "activation-matrix";
            const auto m = cli::activation_matrix(read_log(log_path));
            out.write("activation_matrix.csv", cli::activation_csv(m));
            out.write("top2_experts.csv", cli::top2_csv(m));
            std::cout << cli::activation_csv(m);
        } else if (emb->parsed()) {
            name = "export-embedding";
            out.write("embedding.csv", cli::embedding_csv(read_log(log_path)));
        } else if (sweep->parsed()) {
            name = "expert-sweep";
            io::RunConfig cfg;
            io::ConfigRegistry reg(cfg);
            sweep_src.overrides = extras(sweep);
            sweep_src.apply(reg);
            status = cmd_expert_sweep(cfg, reg, ns, seeds, out);
        } else if (cmp->parsed()) {
            name = "compare";
            status = cmd_compare(mela_runs, moe_runs, out);
        }
        out.finish(name);
        return status;
    } catch (const ShapeError& e) {
        std::cerr << "shape error: " << e.what() << "\n";
        return 2;
    } catch (const ContractError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
