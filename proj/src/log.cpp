#include "defmark/log.hpp"

#include <cstdlib>
#include <iostream>
#include <mutex>

namespace defmark::log {

namespace {

Level parse_level(const char* text) {
  if (text == nullptr) return Level::Warn;
  const std::string s(text);
  if (s == "error") return Level::Error;
  if (s == "info") return Level::Info;
  if (s == "debug") return Level::Debug;
  return Level::Warn;
}

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

Level threshold() {
  static const Level level = parse_level(std::getenv("DEFMARK_LOG"));
  return level;
}

void write(Level level, const std::string& message) {
  static constexpr const char* kTags[] = {"error", "warn", "info", "debug"};
  std::lock_guard lock(sink_mutex());
  std::cerr << "[defmark " << kTags[static_cast<int>(level)] << "] " << message << '\n';
}

}  // namespace defmark::log
