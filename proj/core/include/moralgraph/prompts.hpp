#pragma once

// Prompt templates, compiled in from core/prompts/*.txt. Placeholders use {{name}}.

#include <string>
#include <string_view>
#include <vector>

#include "moralgraph/errors.hpp"

namespace moralgraph::prompts {

/// Bumped whenever a prompt asset changes meaning; recorded in audit output.
inline constexpr std::string_view kVersion = "1";

/// Throws NotFound for unknown names.
std::string_view get(std::string_view name);
std::vector<std::string_view> names();

}  // namespace moralgraph::prompts
