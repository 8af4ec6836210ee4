#pragma once

#include <stdexcept>
#include <string>

namespace dsem {

/// Classifies failures so that the command-line layer can map them onto exit
/// codes: configuration-like problems exit with 2, numerical ones with 3.
enum class ErrorKind {
  configuration,
  specification,
  data,
  unsupported,
  numerical,
  initialization,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  /// Machine-greppable code such as "E_CONFIG".
  const char* code() const noexcept;

  int exit_code() const noexcept {
    return (kind_ == ErrorKind::numerical || kind_ == ErrorKind::initialization)
               ? 3
               : 2;
  }

 private:
  ErrorKind kind_;
};

inline const char* Error::code() const noexcept {
  switch (kind_) {
    case ErrorKind::configuration: return "E_CONFIG";
    case ErrorKind::specification: return "E_SPEC";
    case ErrorKind::data: return "E_DATA";
    case ErrorKind::unsupported: return "E_UNSUPPORTED";
    case ErrorKind::numerical: return "E_NUMERICAL";
    case ErrorKind::initialization: return "E_INIT";
  }
  return "E_UNKNOWN";
}

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorKind::configuration, w) {}
};
struct SpecError : Error {
  explicit SpecError(const std::string& w) : Error(ErrorKind::specification, w) {}
};
struct DataError : Error {
  explicit DataError(const std::string& w) : Error(ErrorKind::data, w) {}
};
struct UnsupportedError : Error {
  explicit UnsupportedError(const std::string& w) : Error(ErrorKind::unsupported, w) {}
};
struct NumericalError : Error {
  explicit NumericalError(const std::string& w) : Error(ErrorKind::numerical, w) {}
};
struct InitializationError : Error {
  explicit InitializationError(const std::string& w)
      : Error(ErrorKind::initialization, w) {}
};

}  // namespace dsem
