#pragma once

#include <stdexcept>
#include <string>

namespace rhip {

// Malformed input: bad ids, inconsistent dimensions, invalid trajectories.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

// The reward configuration admits no finite MaxEnt loss, or a policy never
// reaches its destination.
class InfeasibleError : public std::runtime_error {
 public:
  explicit InfeasibleError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace rhip
