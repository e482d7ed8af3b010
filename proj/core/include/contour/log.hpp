#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace contour::log {

enum class Level { Debug = 0, Info = 1, Warn = 2, Error = 3, Off = 4 };

/// Log level from CONTOUR_TUNER_LOG (debug|info|warn|error|off), default warn.
inline Level threshold() {
  static const Level lvl = [] {
    const char* env = std::getenv("CONTOUR_TUNER_LOG");
    if (env == nullptr) return Level::Warn;
    if (std::strcmp(env, "debug") == 0) return Level::Debug;
    if (std::strcmp(env, "info") == 0) return Level::Info;
    if (std::strcmp(env, "warn") == 0) return Level::Warn;
    if (std::strcmp(env, "error") == 0) return Level::Error;
    if (std::strcmp(env, "off") == 0) return Level::Off;
    return Level::Warn;
  }();
  return lvl;
}

template <typename... Args>
void emit(Level lvl, const char* tag, const char* fmt, Args... args) {
  if (lvl < threshold()) return;
  std::fprintf(stderr, "[%s] ", tag);
  std::fprintf(stderr, fmt, args...);
  std::fprintf(stderr, "\n");
}

template <typename... Args>
void debug(const char* fmt, Args... args) {
  emit(Level::Debug, "debug", fmt, args...);
}
template <typename... Args>
void info(const char* fmt, Args... args) {
  emit(Level::Info, "info", fmt, args...);
}
template <typename... Args>
void warn(const char* fmt, Args... args) {
  emit(Level::Warn, "warn", fmt, args...);
}
template <typename... Args>
void error(const char* fmt, Args... args) {
  emit(Level::Error, "error", fmt, args...);
}

}  // namespace contour::log
