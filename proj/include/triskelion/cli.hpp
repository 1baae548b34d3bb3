#pragma once

#include <ostream>
#include <vector>

#include "triskelion/gradcheck.hpp"

namespace triskelion::cli {

// Exit codes: 0 success, 1 runtime failure, 2 usage error.
inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;
inline constexpr int kUsage = 2;

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// Prints one row per check; kOk iff all pass.
int run_gradcheck(const std::vector<gradcheck::OpCheck>& checks, std::ostream& out);

}  // namespace triskelion::cli
