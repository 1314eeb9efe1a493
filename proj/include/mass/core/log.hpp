#pragma once

#include <string_view>

/// Logging entry points for translation units that cannot include spdlog
/// (libtorch bundles an incompatible fmt).
namespace mass::log {

void info(std::string_view msg);
void warn(std::string_view msg);
void error(std::string_view msg);

} // namespace mass::log
