#pragma once

#include <cmath>
#include <random>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "mela/autodiff/tensor.hpp"
#include "mela/errors.hpp"

namespace mela::sac {

using ad::Tensor;

struct Transition {
    std::vector<double> state;       // full observation
    std::vector<double> action;      // joint-reference units
    double reward = 0.0;
    std::vector<double> next_state;
    bool done = false;               // true only when a termination criterion (not the time limit) fired
};

struct Batch {
    Tensor states;       // [b, s]
    Tensor actions;      // [b, a]
    Tensor rewards;      // [b, 1]
    Tensor next_states;  // [b, s]
    Tensor dones;        // [b, 1], 0 or 1

    std::size_t size() const { return states.rows(); }
};

/// Fixed-capacity FIFO of transitions stored in flat arrays.
class ReplayBuffer {
public:
    ReplayBuffer(std::size_t capacity, std::size_t state_dim, std::size_t action_dim)
        : capacity_(capacity), state_dim_(state_dim), action_dim_(action_dim) {
        require(capacity > 0 && state_dim > 0 && action_dim > 0, "replay buffer: sizes must be positive");
        states_.resize(capacity * state_dim);
        next_states_.resize(capacity * state_dim);
        actions_.resize(capacity * action_dim);
        rewards_.resize(capacity);
        dones_.resize(capacity);
    }

    std::size_t capacity() const { return capacity_; }
    std::size_t size() const { return size_; }
    std::size_t state_dim() const { return state_dim_; }
    std::size_t action_dim() const { return action_dim_; }

    void push(const Transition& t) {
        require(t.state.size() == state_dim_ && t.next_state.size() == state_dim_,
                "replay buffer: state width " + std::to_string(t.state.size()) + ", expected " +
                    std::to_string(state_dim_));
        require(t.action.size() == action_dim_, "replay buffer: action width mismatch");
        require(std::isfinite(t.reward), "replay buffer: non-finite reward");
        const std::size_t i = head_;
        std::copy(t.state.begin(), t.state.end(), states_.begin() + std::ptrdiff_t(i * state_dim_));
        std::copy(t.next_state.begin(), t.next_state.end(), next_states_.begin() + std::ptrdiff_t(i * state_dim_));
        std::copy(t.action.begin(), t.action.end(), actions_.begin() + std::ptrdiff_t(i * action_dim_));
        rewards_[i] = t.reward;
        dones_[i] = t.done ? 1.0 : 0.0;
        head_ = (head_ + 1) % capacity_;
        if (size_ < capacity_) ++size_;
        ++pushed_;
    }

    /// Transition by age: 0 is the oldest retained entry.
    Transition at(std::size_t k) const {
        require(k < size_, "replay buffer: index out of range");
        const std::size_t i = (size_ < capacity_ ? k : (head_ + k) % capacity_);
        Transition t;
        t.state.assign(states_.begin() + std::ptrdiff_t(i * state_dim_),
                       states_.begin() + std::ptrdiff_t((i + 1) * state_dim_));
        t.next_state.assign(next_states_.begin() + std::ptrdiff_t(i * state_dim_),
                            next_states_.begin() + std::ptrdiff_t((i + 1) * state_dim_));
        t.action.assign(actions_.begin() + std::ptrdiff_t(i * action_dim_),
                        actions_.begin() + std::ptrdiff_t((i + 1) * action_dim_));
        t.reward = rewards_[i];
        t.done = dones_[i] != 0.0;
        return t;
    }

    /// Distinct slot indices drawn uniformly (Floyd's algorithm).
    template <typename Rng>
    std::vector<std::size_t> sample_indices(std::size_t batch, Rng& rng) const {
        require(batch >= 1, "replay buffer: empty batch requested");
        require(batch <= size_, "replay buffer: batch " + std::to_string(batch) + " exceeds stored " +
                                    std::to_string(size_) + " transitions");
        std::vector<std::size_t> picked;
        picked.reserve(batch);
        std::unordered_set<std::size_t> seen;
        for (std::size_t j = size_ - batch; j < size_; ++j) {
            std::uniform_int_distribution<std::size_t> dist(0, j);
            const std::size_t t = dist(rng);
            const std::size_t v = seen.count(t) ? j : t;
            seen.insert(v);
            picked.push_back(v);
        }
        return picked;
    }

    template <typename Rng>
    Batch sample(std::size_t batch, Rng& rng) const {
        return gather(sample_indices(batch, rng));
    }

    Batch gather(std::span<const std::size_t> slots) const {
        const std::size_t b = slots.size();
        Batch out{Tensor::zeros({b, state_dim_}), Tensor::zeros({b, action_dim_}), Tensor::zeros({b, 1}),
                  Tensor::zeros({b, state_dim_}), Tensor::zeros({b, 1})};
        for (std::size_t r = 0; r < b; ++r) {
            const std::size_t i = slots[r];
            require(i < size_, "replay buffer: slot out of range");
            for (std::size_t c = 0; c < state_dim_; ++c) {
                out.states.at(r, c) = states_[i * state_dim_ + c];
                out.next_states.at(r, c) = next_states_[i * state_dim_ + c];
            }
            for (std::size_t c = 0; c < action_dim_; ++c) out.actions.at(r, c) = actions_[i * action_dim_ + c];
            out.rewards.at(r, 0) = rewards_[i];
            out.dones.at(r, 0) = dones_[i];
        }
        return out;
    }

private:
    std::size_t capacity_, state_dim_, action_dim_;
    std::size_t head_ = 0, size_ = 0, pushed_ = 0;
    std::vector<double> states_, next_states_, actions_, rewards_, dones_;
};

}  // namespace mela::sac
