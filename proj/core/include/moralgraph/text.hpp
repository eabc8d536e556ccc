#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace moralgraph::text {

std::string_view trim(std::string_view s);
std::string lower(std::string_view s);
bool iequals(std::string_view a, std::string_view b);
bool istarts_with(std::string_view s, std::string_view prefix);
bool contains_newline(std::string_view s);
std::vector<std::string> split_lines(std::string_view s);
/// Collapses every run of whitespace (including newlines) to one space and trims.
std::string squash_whitespace(std::string_view s);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// Replaces every `{{name}}` with its value. Unknown placeholders are left as-is.
std::string fill_template(std::string_view tmpl, const std::map<std::string, std::string>& values);

/// Zero-padded identifier, e.g. make_id("story", 7) == "story-000007".
std::string make_id(std::string_view prefix, long long n, int width = 6);

/// Extracts the first JSON object or array embedded in model output (tolerates prose and code fences).
std::string extract_json_block(std::string_view s);

}  // namespace moralgraph::text
