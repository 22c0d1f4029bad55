#pragma once

#include <cstdio>
#include <string>

namespace dart {

enum class LogLevel : int { kError = 0, kInfo = 1, kDebug = 2 };

// Process-wide log level, initialized from DART_LOG={error,info,debug}.
// All log output goes to stderr; stdout is reserved for machine-readable
// command output.
LogLevel log_level();
void set_log_level(LogLevel level);

void log_message(LogLevel level, const std::string& msg);

inline void log_error(const std::string& msg) { log_message(LogLevel::kError, msg); }
inline void log_info(const std::string& msg) { log_message(LogLevel::kInfo, msg); }
inline void log_debug(const std::string& msg) { log_message(LogLevel::kDebug, msg); }

}  // namespace dart
