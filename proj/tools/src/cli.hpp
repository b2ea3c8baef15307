#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace cmmd::cli {

// Runs one command line (without the program name). Returns the process
// exit code; messages go to out / err.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Resolves a relative output path against CMMD_OUTPUT_ROOT when it is set.
std::filesystem::path output_path(const std::string& path);

}  // namespace cmmd::cli
