#pragma once

#include <stdexcept>
#include <string>

namespace pbn {

enum class ErrorKind {
  Shape,        // operand shapes do not match an operation's contract
  Divergence,   // a fixed-point iterate became non-finite
  Certificate,  // a contraction / invertibility certificate was refused
  Config,       // malformed or out-of-range configuration
  Io,           // file system failure
  Validation,   // other violated precondition
};

inline const char* error_kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Divergence: return "divergence";
    case ErrorKind::Certificate: return "certificate";
    case ErrorKind::Config: return "config";
    case ErrorKind::Io: return "io";
    case ErrorKind::Validation: return "validation";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(std::string(error_kind_name(kind)) + ": " + msg),
        kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void raise(ErrorKind kind, const std::string& msg) {
  throw Error(kind, msg);
}

}  // namespace pbn
