#pragma once

#include <stdexcept>
#include <string>

namespace gmpvi {

/// Broad failure category; the CLI maps each to its own exit code.
enum class ErrorKind { config, data, numerical };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error config_error(const std::string& what) {
  return Error(ErrorKind::config, what);
}
inline Error data_error(const std::string& what) {
  return Error(ErrorKind::data, what);
}
inline Error numerical_error(const std::string& what) {
  return Error(ErrorKind::numerical, what);
}

}  // namespace gmpvi
