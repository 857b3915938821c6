#include "branchsel/log.hpp"

#include <cstdlib>
#include <string>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "branchsel/error.hpp"

namespace branchsel {

void configure_logging(std::string_view fallback) {
  const char* env = std::getenv("BRANCHSEL_LOG");
  std::string level = env && *env ? env : std::string(fallback);
  spdlog::level::level_enum lvl;
  if (level == "error")
    lvl = spdlog::level::err;
  else if (level == "info")
    lvl = spdlog::level::info;
  else if (level == "debug")
    lvl = spdlog::level::debug;
  else
    throw Error("BRANCHSEL_LOG must be error, info or debug (got '" + level + "')");

  auto logger = spdlog::get("branchsel");
  if (!logger) logger = spdlog::stderr_color_mt("branchsel");
  logger->set_pattern("[%l] %v");
  logger->set_level(lvl);
  spdlog::set_default_logger(logger);
}

}  // namespace branchsel
