#pragma once

#include <cstdlib>
#include <memory>
#include <string>

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

namespace bnnv {

// Library-wide logger on stderr. BNNVERIFY_LOG picks the level (trace, debug,
// info, warn, error, critical, off); the default is warn.
inline spdlog::logger& log() {
  static std::shared_ptr<spdlog::logger> logger = [] {
    auto l = spdlog::stderr_logger_mt("bnnverify");
    l->set_pattern("[%l] %v");
    const char* env = std::getenv("BNNVERIFY_LOG");
    auto level = env ? spdlog::level::from_str(env) : spdlog::level::warn;
    if (level == spdlog::level::off && std::string(env ? env : "") != "off") level = spdlog::level::warn;
    l->set_level(level);
    return l;
  }();
  return *logger;
}

}  // namespace bnnv
