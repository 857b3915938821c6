#pragma once

#include <string_view>

namespace branchsel {

/// Routes spdlog to stderr at the level named by BRANCHSEL_LOG (error, info
/// or debug), or `fallback` when the variable is unset.
void configure_logging(std::string_view fallback = "info");

}  // namespace branchsel
