#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mela/env/tasks.hpp"
#include "mela/sac/trainer.hpp"

namespace mela::cli {

using env::Mode;

/// One metrics line per training episode.
inline nlohmann::ordered_json metrics_json(const sac::EpisodeMetrics& m) {
    nlohmann::ordered_json j;
    j["episode"] = m.episode;
    j["env_steps"] = m.env_steps;
    j["return"] = m.episode_return;
    j["length"] = m.length;
    j["termination"] = m.termination;
    j["updates"] = m.updates;
    j["critic_loss"] = m.critic_loss;
    j["actor_loss"] = m.actor_loss;
    j["smoothing_term"] = m.smoothing_term;
    j["alpha_T"] = m.alpha_t;
    j["alpha_mean"] = m.alpha_mean;
    return j;
}

inline std::vector<double> returns_from_jsonl(std::istream& in) {
    std::vector<double> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(nlohmann::json::parse(line).at("return").get<double>());
    }
    return out;
}

/// Normalised area under a learning curve: mean episode return.
inline double curve_auc(const std::vector<double>& returns) {
    require(!returns.empty(), "curve_auc: empty learning curve");
    double s = 0.0;
    for (double r : returns) s += r;
    return s / double(returns.size());
}

inline double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / double(v.size());
}

/// Sample standard deviation (0 for fewer than two values).
inline double stddev_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / double(v.size() - 1));
}

// ---- trajectory CSV ---------------------------------------------------------

inline std::string trajectory_header(const reward::RewardSpec& spec, std::size_t n_alpha) {
    std::string h = "episode,step,t,q1,q2,qdot1,qdot2,tau1,tau2,action1,action2,reward";
    for (const auto& t : spec.terms) h += ",r_" + std::string(reward::term_name(t.term));
    for (std::size_t n = 0; n < n_alpha; ++n) h += ",alpha" + std::to_string(n + 1);
    return h + ",mode";
}

inline std::string csv_number(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

inline std::string trajectory_row(const sac::StepRecord& s) {
    std::string r = std::to_string(s.episode) + "," + std::to_string(s.step) + "," + csv_number(s.t);
    for (double v : {s.q[0], s.q[1], s.qdot[0], s.qdot[1], s.torque[0], s.torque[1]}) r += "," + csv_number(v);
    for (double v : s.action) r += "," + csv_number(v);
    r += "," + csv_number(s.reward);
    for (double v : s.terms) r += "," + csv_number(v);
    for (double v : s.alpha) r += "," + csv_number(v);
    return r + "," + std::string(env::mode_name(s.mode));
}

/// The parts of a trajectory log the analysis commands use.
struct StepLog {
    std::vector<std::vector<double>> actions;
    std::vector<std::vector<double>> alphas;
    std::vector<Mode> modes;
    std::size_t n_action = 0;
    std::size_t n_alpha = 0;

    std::size_t size() const { return modes.size(); }
};

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline StepLog read_step_log(std::istream& in, const std::string& origin = "log") {
    std::string line;
    if (!std::getline(in, line)) return {};
    const auto header = split_csv(line);
    int mode_col = -1;
    std::vector<int> action_cols, alpha_cols;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == "mode") mode_col = int(i);
        else if (header[i].starts_with("action")) action_cols.push_back(int(i));
        else if (header[i].starts_with("alpha")) alpha_cols.push_back(int(i));
    }
    if (mode_col < 0) throw ContractError(origin + ": log has no mode column (unlabelled)");
    StepLog log;
    log.n_action = action_cols.size();
    log.n_alpha = alpha_cols.size();
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto cells = split_csv(line);
        if (cells.size() != header.size())
            throw FormatError(origin + ":" + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                              " columns, found " + std::to_string(cells.size()));
        std::vector<double> a, al;
        try {
            for (int c : action_cols) a.push_back(std::stod(cells[std::size_t(c)]));
            for (int c : alpha_cols) al.push_back(std::stod(cells[std::size_t(c)]));
        } catch (const std::exception&) {
            throw FormatError(origin + ":" + std::to_string(lineno) + ": non-numeric value");
        }
        const std::string& m = cells[std::size_t(mode_col)];
        if (m.empty()) throw ContractError(origin + ":" + std::to_string(lineno) + ": step without a mode label");
        const auto mode = env::mode_from_name(m);
        if (!mode) throw FormatError(origin + ":" + std::to_string(lineno) + ": unknown mode '" + m + "'");
        log.modes.push_back(*mode);
        log.actions.push_back(std::move(a));
        log.alphas.push_back(std::move(al));
    }
    return log;
}

// ---- activation matrix --------------------------------------------------------

/// Rows: modes that occur in the log (in canonical order); columns: experts; entries: mean alpha.
struct ActivationMatrix {
    std::vector<Mode> modes;
    std::vector<std::vector<double>> rows;
    std::vector<std::size_t> counts;

    std::size_t experts() const { return rows.empty() ? 0 : rows.front().size(); }

    /// Index of the unique largest entry, or -1 when the maximum is tied.
    static int strict_argmax(const std::vector<double>& row) {
        int best = -1;
        double best_v = -1.0;
        bool tied = false;
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (row[i] > best_v) {
                best_v = row[i];
                best = int(i);
                tied = false;
            } else if (row[i] == best_v) {
                tied = true;
            }
        }
        return tied ? -1 : best;
    }

    const std::vector<double>* row(Mode m) const {
        for (std::size_t i = 0; i < modes.size(); ++i)
            if (modes[i] == m) return &rows[i];
        return nullptr;
    }
};

inline ActivationMatrix activation_matrix(const StepLog& log) {
    require(log.n_alpha >= 2, "activation matrix: log carries no gating weights (not a gated policy)");
    ActivationMatrix m;
    for (Mode mode : env::kAllModes) {
        std::vector<double> sum(log.n_alpha, 0.0);
        std::size_t count = 0;
        for (std::size_t i = 0; i < log.size(); ++i) {
            if (log.modes[i] != mode) continue;
            for (std::size_t n = 0; n < log.n_alpha; ++n) sum[n] += log.alphas[i][n];
            ++count;
        }
        if (count == 0) continue;
        for (double& s : sum) s /= double(count);
        m.modes.push_back(mode);
        m.rows.push_back(std::move(sum));
        m.counts.push_back(count);
    }
    return m;
}

inline std::string activation_csv(const ActivationMatrix& m) {
    std::string s = "mode,steps";
    for (std::size_t n = 0; n < m.experts(); ++n) s += ",expert" + std::to_string(n + 1);
    s += "\n";
    for (std::size_t i = 0; i < m.modes.size(); ++i) {
        s += std::string(env::mode_name(m.modes[i])) + "," + std::to_string(m.counts[i]);
        for (double v : m.rows[i]) s += "," + csv_number(v);
        s += "\n";
    }
    return s;
}

/// Two most active experts per mode (1-based ids).
inline std::string top2_csv(const ActivationMatrix& m) {
    std::string s = "mode,first_expert,first_alpha,second_expert,second_alpha\n";
    for (std::size_t i = 0; i < m.modes.size(); ++i) {
        std::vector<std::size_t> idx(m.experts());
        for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return m.rows[i][a] > m.rows[i][b]; });
        s += std::string(env::mode_name(m.modes[i])) + "," + std::to_string(idx[0] + 1) + "," +
             csv_number(m.rows[i][idx[0]]) + "," + std::to_string(idx[1] + 1) + "," + csv_number(m.rows[i][idx[1]]) +
             "\n";
    }
    return s;
}

/// Rows for external embedding: action dims, alpha dims, dominant expert id and mode.
inline std::string embedding_csv(const StepLog& log) {
    std::string s;
    for (std::size_t j = 0; j < log.n_action; ++j) s += "action" + std::to_string(j + 1) + ",";
    for (std::size_t n = 0; n < log.n_alpha; ++n) s += "alpha" + std::to_string(n + 1) + ",";
    s += "dominant_expert,mode\n";
    for (std::size_t i = 0; i < log.size(); ++i) {
        for (double v : log.actions[i]) s += csv_number(v) + ",";
        for (double v : log.alphas[i]) s += csv_number(v) + ",";
        const auto& al = log.alphas[i];
        const long dom = al.empty() ? 0 : long(std::max_element(al.begin(), al.end()) - al.begin()) + 1;
        s += std::to_string(dom) + "," + std::string(env::mode_name(log.modes[i])) + "\n";
    }
    return s;
}

}  // namespace mela::cli
