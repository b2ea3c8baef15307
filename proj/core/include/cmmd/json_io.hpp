#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

namespace cmmd {

using Json = nlohmann::ordered_json;

// 17 significant digits: enough for a bit-exact double round trip.
std::string format_double(double v);

// Compact single-line JSON; floating-point values use format_double.
std::string dump_json(const Json& j);
// Two-space indented variant for human-facing documents.
std::string dump_json_pretty(const Json& j);

Json read_json_file(const std::filesystem::path& path);

// Writes to a sibling temporary file and renames it into place, so readers
// never observe a partial file. Throws std::runtime_error when the parent
// directory is missing or the write fails.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

std::string read_file(const std::filesystem::path& path);

}  // namespace cmmd
