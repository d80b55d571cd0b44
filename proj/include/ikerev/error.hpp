#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace ikerev {

// Bad inputs, configs, or precondition violations. The CLI maps these to exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

// Failures that happen while doing the work (I/O, corrupt files). Exit code 2.
class RuntimeError : public std::runtime_error {
 public:
  explicit RuntimeError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream oss;
  (oss << ... << std::forward<Args>(args));
  return oss.str();
}

}  // namespace detail

template <typename... Args>
[[noreturn]] void fail_validation(Args&&... args) {
  throw ValidationError(detail::concat(std::forward<Args>(args)...));
}

template <typename... Args>
[[noreturn]] void fail_runtime(Args&&... args) {
  throw RuntimeError(detail::concat(std::forward<Args>(args)...));
}

template <typename... Args>
void require(bool condition, Args&&... args) {
  if (!condition) fail_validation(std::forward<Args>(args)...);
}

}  // namespace ikerev
