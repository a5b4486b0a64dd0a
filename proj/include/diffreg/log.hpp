#pragma once

// Minimal leveled logging to stderr. libtorch bundles fmt 12, which the
// system spdlog cannot build against, so formatting goes through fmt directly.

#include <fmt/format.h>

#include <atomic>
#include <cstdio>

namespace diffreg::log {

enum class Level { Debug = 0, Info = 1, Warn = 2, Off = 3 };

inline std::atomic<Level>& threshold() {
  static std::atomic<Level> level{Level::Info};
  return level;
}

inline void set_level(Level level) { threshold() = level; }

template <typename... Args>
void write(Level level, const char* tag, fmt::format_string<Args...> fmt_str, Args&&... args) {
  if (level < threshold().load()) return;
  const auto line = fmt::format(fmt_str, std::forward<Args>(args)...);
  std::fprintf(stderr, "[%s] %s\n", tag, line.c_str());
}

template <typename... Args>
void debug(fmt::format_string<Args...> f, Args&&... args) {
  write(Level::Debug, "debug", f, std::forward<Args>(args)...);
}

template <typename... Args>
void info(fmt::format_string<Args...> f, Args&&... args) {
  write(Level::Info, "info", f, std::forward<Args>(args)...);
}

template <typename... Args>
void warn(fmt::format_string<Args...> f, Args&&... args) {
  write(Level::Warn, "warn", f, std::forward<Args>(args)...);
}

}  // namespace diffreg::log
