#pragma once

#include <sstream>
#include <string>

namespace defmark::log {

enum class Level { Error = 0, Warn = 1, Info = 2, Debug = 3 };

/// Threshold from DEFMARK_LOG (error|warn|info|debug), read once; default warn.
Level threshold();
void write(Level level, const std::string& message);

template <typename... Args>
void emit(Level level, const Args&... args) {
  if (level > threshold()) return;
  std::ostringstream ss;
  (ss << ... << args);
  write(level, ss.str());
}

template <typename... Args>
void error(const Args&... args) { emit(Level::Error, args...); }
template <typename... Args>
void warn(const Args&... args) { emit(Level::Warn, args...); }
template <typename... Args>
void info(const Args&... args) { emit(Level::Info, args...); }
template <typename... Args>
void debug(const Args&... args) { emit(Level::Debug, args...); }

}  // namespace defmark::log
