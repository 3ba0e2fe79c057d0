#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mela/sac/agent.hpp"

namespace mela::io {

using ad::Tensor;
using sac::Actor;
using sac::Arch;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'M', 'E', 'L', 'A', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << v;
    return os.str();
}

/// Named tensors plus string metadata and the hash of the config that produced them.
struct Checkpoint {
    std::uint64_t config_hash = 0;
    std::map<std::string, std::string> meta;
    std::vector<std::pair<std::string, Tensor>> tensors;

    bool has(std::string_view name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return true;
        return false;
    }

    const Tensor& tensor(std::string_view name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return t;
        throw FormatError("checkpoint: missing tensor '" + std::string(name) + "'");
    }

    const std::string& get(const std::string& key) const {
        const auto it = meta.find(key);
        if (it == meta.end()) throw FormatError("checkpoint: missing metadata field '" + key + "'");
        return it->second;
    }

    void add(std::string name, Tensor t) { tensors.emplace_back(std::move(name), std::move(t)); }

    void add(const std::string& prefix, const nets::ParamSet& p) {
        const auto ts = p.tensors();
        for (std::size_t i = 0; i < ts.size(); ++i) add(prefix + "." + std::string(nets::kParamNames[i]), *ts[i]);
    }

    nets::ParamSet params(const std::string& prefix) const {
        nets::ParamSet p;
        const auto ts = p.tensors();
        for (std::size_t i = 0; i < ts.size(); ++i) *ts[i] = tensor(prefix + "." + std::string(nets::kParamNames[i]));
        try {
            p.validate();
        } catch (const ContractError& e) {
            throw FormatError("checkpoint: parameter set '" + prefix + "' is inconsistent: " + e.what());
        }
        return p;
    }
};

namespace detail {

class Writer {
public:
    void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
    template <typename T>
    void pod(T v) { bytes(&v, sizeof v); }
    void str(std::string_view s) {
        pod(std::uint32_t(s.size()));
        bytes(s.data(), s.size());
    }
    const std::string& data() const { return buf_; }

private:
    std::string buf_;
};

class Reader {
public:
    Reader(std::string data, std::string origin) : data_(std::move(data)), origin_(std::move(origin)) {}

    void bytes(void* p, std::size_t n, const std::string& field) {
        if (n > data_.size() - pos_)
            throw FormatError(origin_ + ": truncated while reading " + field + " (offset " + std::to_string(pos_) +
                              ", need " + std::to_string(n) + " bytes, " + std::to_string(data_.size() - pos_) +
                              " left)");
        std::memcpy(p, data_.data() + pos_, n);
        pos_ += n;
    }
    template <typename T>
    T pod(const std::string& field) {
        T v{};
        bytes(&v, sizeof v, field);
        return v;
    }
    std::string str(const std::string& field, std::size_t limit = 1 << 20) {
        const auto n = pod<std::uint32_t>(field + " length");
        if (n > limit) throw FormatError(origin_ + ": implausible length " + std::to_string(n) + " for " + field);
        std::string s(n, '\0');
        bytes(s.data(), n, field);
        return s;
    }
    bool done() const { return pos_ == data_.size(); }
    const std::string& origin() const { return origin_; }

private:
    std::string data_;
    std::size_t pos_ = 0;
    std::string origin_;
};

}  // namespace detail

inline std::string serialize(const Checkpoint& c) {
    detail::Writer w;
    w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
    w.pod(kCheckpointVersion);
    w.pod(c.config_hash);
    w.pod(std::uint32_t(c.meta.size()));
    for (const auto& [k, v] : c.meta) {
        w.str(k);
        w.str(v);
    }
    w.pod(std::uint32_t(c.tensors.size()));
    for (const auto& [name, t] : c.tensors) {
        w.str(name);
        w.pod(std::uint32_t(t.shape().size()));
        for (std::size_t d : t.shape()) w.pod(std::uint64_t(d));
        const auto v = t.values();
        w.bytes(v.data(), v.size() * sizeof(double));
    }
    return w.data();
}

inline Checkpoint deserialize(std::string data, const std::string& origin = "checkpoint") {
    detail::Reader r(std::move(data), origin);
    char magic[8];
    r.bytes(magic, sizeof magic, "magic");
    if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
        throw FormatError(origin + ": not a checkpoint (bad magic)");
    const auto version = r.pod<std::uint32_t>("version");
    if (version != kCheckpointVersion)
        throw FormatError(origin + ": unsupported version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
    Checkpoint c;
    c.config_hash = r.pod<std::uint64_t>("config hash");
    const auto n_meta = r.pod<std::uint32_t>("metadata count");
    for (std::uint32_t i = 0; i < n_meta; ++i) {
        std::string k = r.str("metadata key " + std::to_string(i));
        c.meta[k] = r.str("metadata value '" + k + "'");
    }
    const auto n_tensors = r.pod<std::uint32_t>("tensor count");
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        std::string name = r.str("tensor name " + std::to_string(i));
        const auto rank = r.pod<std::uint32_t>("rank of '" + name + "'");
        if (rank > 2) throw FormatError(origin + ": tensor '" + name + "' has rank " + std::to_string(rank));
        ad::Shape shape;
        std::uint64_t count = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            const auto dim = r.pod<std::uint64_t>("shape of '" + name + "'");
            if (dim > (1ull << 32)) throw FormatError(origin + ": tensor '" + name + "' has implausible dimension");
            shape.push_back(std::size_t(dim));
            count *= dim;
        }
        std::vector<double> values(count);
        r.bytes(values.data(), count * sizeof(double), "values of '" + name + "'");
        c.add(std::move(name), Tensor(std::move(shape), std::move(values)));
    }
    if (!r.done()) throw FormatError(origin + ": trailing bytes after the last tensor");
    return c;
}

/// Writes to a sibling temp file then renames, so readers never see a partial file.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw FormatError("cannot open '" + tmp.string() + "' for writing");
        out.write(bytes.data(), std::streamsize(bytes.size()));
        out.flush();
        if (!out) throw FormatError("write to '" + tmp.string() + "' failed");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw FormatError("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path.string() + "'");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
    write_file_atomic(path, serialize(c));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    return deserialize(read_file(path), "checkpoint '" + path.string() + "'");
}

/// Policy tensors and architecture metadata.
inline void store_actor(Checkpoint& c, const Actor& actor) {
    c.meta["arch"] = std::string(sac::arch_name(actor.arch));
    c.meta["experts"] = std::to_string(actor.size());
    for (std::size_t n = 0; n < actor.size(); ++n) c.add("expert." + std::to_string(n), actor.experts[n]);
    if (actor.arch != Arch::Single) c.add("gating", actor.gating);
}

/// Rebuilds the actor; `expect` (if given) must match the stored architecture.
inline Actor load_actor(const Checkpoint& c, std::optional<Arch> expect = std::nullopt) {
    Actor a;
    a.arch = sac::arch_from_name(c.get("arch"));
    if (expect && *expect != a.arch)
        throw ShapeError("checkpoint holds a '" + std::string(sac::arch_name(a.arch)) + "' policy, expected '" +
                         std::string(sac::arch_name(*expect)) + "'");
    const std::size_t n = std::stoul(c.get("experts"));
    for (std::size_t k = 0; k < n; ++k) a.experts.push_back(c.params("expert." + std::to_string(k)));
    if (a.arch != Arch::Single) a.gating = c.params("gating");
    try {
        a.validate();
    } catch (const ContractError& e) {
        throw FormatError(std::string("checkpoint: stored actor is inconsistent: ") + e.what());
    }
    return a;
}

/// Full learner state: actor, both critics, both targets and the temperature.
inline Checkpoint capture(const sac::SacAgent& agent, std::uint64_t config_hash,
                          const std::map<std::string, std::string>& meta = {}) {
    Checkpoint c;
    c.config_hash = config_hash;
    c.meta = meta;
    store_actor(c, agent.actor());
    for (int k = 0; k < 2; ++k) {
        c.add("critic." + std::to_string(k), agent.critic(k));
        c.add("target." + std::to_string(k), agent.target(k));
    }
    c.add("log_temperature", Tensor::scalar(agent.log_temperature()));
    return c;
}

/// Copies critics, targets and temperature from a full checkpoint into an agent of matching shape.
inline void restore_learner(sac::SacAgent& agent, const Checkpoint& c) {
    for (int k = 0; k < 2; ++k) {
        const auto critic = c.params("critic." + std::to_string(k));
        const auto target = c.params("target." + std::to_string(k));
        if (!critic.same_shapes(agent.critic(k)) || !target.same_shapes(agent.target(k)))
            throw ShapeError("checkpoint critic " + std::to_string(k) + " does not match the agent's critic shape");
        agent.critic(k) = critic;
        agent.target(k) = target;
    }
    agent.set_log_temperature(c.tensor("log_temperature")[0]);
}

}  // namespace mela::io
