#pragma once

#include <exception>
#include <iosfwd>
#include <string>
#include <vector>

namespace blocktune {

inline constexpr const char* kToolName = "blocktune";
inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kSeedEnvVar = "BLOCKTUNE_SEED";

// 0 ok, 1 parse/validation, 2 infeasible instance, 3 internal failure.
int exit_code_for(const std::exception& e);

// Entry point behind the blocktune binary. args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace blocktune
