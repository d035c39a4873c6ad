#pragma once

#include <iostream>
#include <string>

namespace efld {

enum class LogLevel { quiet = 0, warning = 1, info = 2, debug = 3 };

/// Process-wide diagnostic level; all diagnostics go to stderr.
inline LogLevel& log_level() {
  static LogLevel level = LogLevel::warning;
  return level;
}

inline void log(LogLevel level, const std::string& message) {
  if (int(level) > int(log_level())) return;
  static const char* const tags[] = {"", "warning", "info", "debug"};
  std::cerr << "efld: " << tags[int(level)] << ": " << message << '\n';
}

inline void warn(const std::string& message) { log(LogLevel::warning, message); }

}  // namespace efld
