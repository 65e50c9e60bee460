#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace planwrite {

/// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run_cli(int argc, char** argv);

}  // namespace planwrite
