#pragma once

#include <cstdlib>
#include <iostream>
#include <string_view>

namespace jointtag {

enum class LogLevel { kError = 0, kInfo = 1, kDebug = 2 };

// Verbosity comes from JOINTTAG_LOG (error|info|debug), default info.
// All log output goes to stderr; stdout is reserved for data products.
inline LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("JOINTTAG_LOG");
    if (env == nullptr) return LogLevel::kInfo;
    std::string_view v(env);
    if (v == "error") return LogLevel::kError;
    if (v == "debug") return LogLevel::kDebug;
    return LogLevel::kInfo;
  }();
  return level;
}

inline void log_error(std::string_view msg) { std::cerr << "[error] " << msg << "\n"; }

inline void log_info(std::string_view msg) {
  if (log_level() >= LogLevel::kInfo) std::cerr << "[info] " << msg << "\n";
}

inline void log_debug(std::string_view msg) {
  if (log_level() >= LogLevel::kDebug) std::cerr << "[debug] " << msg << "\n";
}

}  // namespace jointtag
