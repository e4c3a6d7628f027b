#pragma once

#include <stdexcept>
#include <string>

namespace eve {

// Failure classes map onto the CLI exit-code contract.
enum class ErrorKind {
  config,    // invalid configuration or arguments (exit 2)
  backend,   // model backend or external client failure (exit 3)
  io,        // file or decode failure (exit 4)
  numeric,   // degenerate numeric input (e.g. zero-norm cosine)
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string stage, const std::string& message)
      : std::runtime_error(stage.empty() ? message : "[" + stage + "] " + message),
        kind_(kind),
        stage_(std::move(stage)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& stage() const noexcept { return stage_; }

 private:
  ErrorKind kind_;
  std::string stage_;
};

inline Error config_error(const std::string& msg, std::string stage = "config") {
  return Error(ErrorKind::config, std::move(stage), msg);
}
inline Error backend_error(const std::string& msg, std::string stage = "backend") {
  return Error(ErrorKind::backend, std::move(stage), msg);
}
inline Error io_error(const std::string& msg, std::string stage = "io") {
  return Error(ErrorKind::io, std::move(stage), msg);
}
inline Error numeric_error(const std::string& msg, std::string stage = "numeric") {
  return Error(ErrorKind::numeric, std::move(stage), msg);
}

// Rethrows `e` with a different stage tag, keeping its kind.
[[noreturn]] inline void retag(const Error& e, const std::string& stage) {
  std::string msg = e.what();
  if (!e.stage().empty() && msg.rfind("[" + e.stage() + "] ", 0) == 0) {
    msg = msg.substr(e.stage().size() + 3);
  }
  throw Error(e.kind(), stage + "/" + e.stage(), msg);
}

}  // namespace eve
