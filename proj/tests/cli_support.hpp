#ifndef STA_PROBE_CLI_SUPPORT_HPP
#define STA_PROBE_CLI_SUPPORT_HPP

#include <sstream>
#include <string>
#include <vector>

#include "sta_probe/cli.hpp"

namespace sta::test {

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

/// Runs the command-line entry point in-process.
inline CliResult run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "sta-probe");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

}  // namespace sta::test

#endif  // STA_PROBE_CLI_SUPPORT_HPP
