#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>

namespace cil {

// 17 significant digits: enough to round-trip any double.
std::string format_double(double v);
double parse_double(std::string_view token, std::size_t line);

// Writes `content` to a sibling temp file and renames it over `path`, so
// readers never observe a partially written file.
void write_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace cil
