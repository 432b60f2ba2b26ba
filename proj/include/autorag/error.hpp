#pragma once

#include <stdexcept>
#include <string>

namespace autorag {

/// Failure category. Maps onto the CLI exit codes (1, 2, 3).
enum class ErrorKind { usage = 1, data = 2, invariant = 3 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail_usage(const std::string& msg) { throw Error(ErrorKind::usage, msg); }
[[noreturn]] inline void fail_data(const std::string& msg) { throw Error(ErrorKind::data, msg); }
[[noreturn]] inline void fail_invariant(const std::string& msg) {
  throw Error(ErrorKind::invariant, msg);
}

}  // namespace autorag
