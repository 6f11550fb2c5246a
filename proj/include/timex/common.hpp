#pragma once

#include <stdexcept>
#include <string>

namespace txai {

// Error type for all contract violations (bad shapes, bad configs,
// malformed archives). Callers can rely on catching this one type.
class TimexError : public std::runtime_error {
 public:
  explicit TimexError(const std::string& msg) : std::runtime_error(msg) {}
};

[[noreturn]] inline void fail(const std::string& msg) { throw TimexError(msg); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

}  // namespace txai
