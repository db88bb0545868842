#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cdfsl {

/// Exit codes of the command-line front end.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;

/// Runs one command (`evaluate`, `synth`, `ims-trace`, `inspect`). `args`
/// excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cdfsl
