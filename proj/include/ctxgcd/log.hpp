#pragma once

#include <cstdlib>
#include <string>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

namespace ctxgcd {

/// Routes the default logger to stderr at the level named by GCD_LOG_LEVEL
/// (trace, debug, info, warn, error, off). Defaults to warn.
inline void init_logging_from_env() {
  auto logger = spdlog::get("ctxgcd");
  if (!logger) logger = spdlog::stderr_color_mt("ctxgcd");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  const char* env = std::getenv("GCD_LOG_LEVEL");
  spdlog::set_level(env ? spdlog::level::from_str(env) : spdlog::level::warn);
}

}  // namespace ctxgcd
