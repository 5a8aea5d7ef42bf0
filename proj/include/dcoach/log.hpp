#pragma once

#include <atomic>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>

namespace dcoach::log {

enum class Level { debug = 0, info = 1, warning = 2, error = 3, off = 4 };

inline std::atomic<Level>& threshold() {
  static std::atomic<Level> level{Level::warning};
  return level;
}

inline void set_level(Level l) { threshold().store(l); }

inline void write(Level l, const std::string& msg) {
  if (l < threshold().load()) return;
  static std::mutex mu;
  static constexpr const char* names[] = {"debug", "info", "warning", "error", "off"};
  std::lock_guard lock(mu);
  std::clog << "[" << names[static_cast<int>(l)] << "] " << msg << '\n';
}

template <typename... Args>
void emit(Level l, Args&&... args) {
  if (l < threshold().load()) return;
  std::ostringstream oss;
  (oss << ... << args);
  write(l, oss.str());
}

template <typename... Args> void debug(Args&&... a) { emit(Level::debug, std::forward<Args>(a)...); }
template <typename... Args> void info(Args&&... a) { emit(Level::info, std::forward<Args>(a)...); }
template <typename... Args> void warn(Args&&... a) { emit(Level::warning, std::forward<Args>(a)...); }
template <typename... Args> void error(Args&&... a) { emit(Level::error, std::forward<Args>(a)...); }

}  // namespace dcoach::log
