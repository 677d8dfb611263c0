#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <stdexcept>
#include <string>

namespace nhgps {

// Bad input: parameters, files, configs. Maps to CLI exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Numerical breakdown (e.g. a kernel that stays singular). Exit code 2.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SingularKernelError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// Filesystem trouble. Exit code 3.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Severity { notice, warning };

using DiagnosticSink = std::function<void(Severity, const std::string&)>;

namespace detail {
inline std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}
inline DiagnosticSink& sink_slot() {
  static DiagnosticSink sink = [](Severity s, const std::string& msg) {
    std::cerr << (s == Severity::warning ? "warning: " : "note: ") << msg << '\n';
  };
  return sink;
}
}  // namespace detail

// Replaces the diagnostic sink and returns the previous one.
inline DiagnosticSink set_diagnostic_sink(DiagnosticSink sink) {
  std::lock_guard lock(detail::sink_mutex());
  DiagnosticSink old = std::move(detail::sink_slot());
  detail::sink_slot() = std::move(sink);
  return old;
}

inline void report(Severity s, const std::string& msg) {
  std::lock_guard lock(detail::sink_mutex());
  if (detail::sink_slot()) detail::sink_slot()(s, msg);
}

inline void warn(const std::string& msg) { report(Severity::warning, msg); }
inline void notice(const std::string& msg) { report(Severity::notice, msg); }

template <class E = ValidationError>
inline void require(bool ok, const std::string& msg) {
  if (!ok) throw E(msg);
}

}  // namespace nhgps
