#pragma once

#include <stdexcept>
#include <string>

namespace mela {

/// Violated precondition of a public operation (bad dimension, bad config value, ...).
class ContractError : public std::logic_error {
public:
    explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

/// Incompatible tensor shapes.
class ShapeError : public ContractError {
public:
    explicit ShapeError(const std::string& what) : ContractError(what) {}
};

/// A computation produced NaN or Inf.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed or incompatible file (checkpoint, config, log).
class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool condition, const std::string& message) {
    if (!condition) throw ContractError(message);
}

}  // namespace mela
