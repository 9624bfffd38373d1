#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <string>
#include <string_view>
#include <utility>

namespace dgr {

enum class LogLevel { Debug, Info, Warning };

using LogSink = std::function<void(LogLevel, std::string_view)>;

namespace detail {
inline LogSink& log_sink() {
  static LogSink sink = [](LogLevel level, std::string_view msg) {
    if (level == LogLevel::Debug) return;
    static std::mutex m;
    std::lock_guard lock(m);
    std::clog << (level == LogLevel::Warning ? "[dgr warning] " : "[dgr] ") << msg << '\n';
  };
  return sink;
}
}  // namespace detail

/// Replaces the process-wide diagnostics sink; returns the previous one.
inline LogSink set_log_sink(LogSink sink) { return std::exchange(detail::log_sink(), std::move(sink)); }

inline void log(LogLevel level, std::string_view msg) {
  if (auto& sink = detail::log_sink()) sink(level, msg);
}
inline void log_info(std::string_view msg) { log(LogLevel::Info, msg); }
inline void log_warning(std::string_view msg) { log(LogLevel::Warning, msg); }

}  // namespace dgr
