#include "mass/core/log.hpp"

#include <spdlog/spdlog.h>

namespace mass::log {

void info(std::string_view msg) { spdlog::info("{}", msg); }
void warn(std::string_view msg) { spdlog::warn("{}", msg); }
void error(std::string_view msg) { spdlog::error("{}", msg); }

} // namespace mass::log
