#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>

namespace motra {

enum class LogLevel { Error = 0, Warn = 1, Info = 2, Debug = 3 };

namespace detail {

inline LogLevel level_from_env() {
  const char* env = std::getenv("MOTRA_LOG");
  if (!env) return LogLevel::Warn;
  if (std::strcmp(env, "error") == 0) return LogLevel::Error;
  if (std::strcmp(env, "info") == 0) return LogLevel::Info;
  if (std::strcmp(env, "debug") == 0) return LogLevel::Debug;
  return LogLevel::Warn;
}

inline LogLevel& log_level() {
  static LogLevel level = level_from_env();
  return level;
}

inline std::FILE*& log_stream() {
  static std::FILE* stream = stderr;
  return stream;
}

}  // namespace detail

inline void set_log_level(LogLevel level) { detail::log_level() = level; }
inline void set_log_stream(std::FILE* stream) { detail::log_stream() = stream; }

inline void log(LogLevel level, const std::string& msg) {
  if (level > detail::log_level()) return;
  static const char* names[] = {"error", "warn", "info", "debug"};
  std::fprintf(detail::log_stream(), "[%s] %s\n",
               names[static_cast<int>(level)], msg.c_str());
  std::fflush(detail::log_stream());
}

inline void log_error(const std::string& msg) { log(LogLevel::Error, msg); }
inline void log_warn(const std::string& msg) { log(LogLevel::Warn, msg); }
inline void log_info(const std::string& msg) { log(LogLevel::Info, msg); }
inline void log_debug(const std::string& msg) { log(LogLevel::Debug, msg); }

}  // namespace motra
