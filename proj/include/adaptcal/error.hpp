#pragma once

#include <stdexcept>
#include <string>

namespace adaptcal {

// Categories map one-to-one onto C API status codes and CLI exit codes.
enum class ErrorKind {
  Config,
  Data,
  Divergence,
  MissingArtifact,
  Contract,
  Io,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool condition, ErrorKind kind, const std::string& what) {
  if (!condition) throw Error(kind, what);
}

}  // namespace adaptcal
