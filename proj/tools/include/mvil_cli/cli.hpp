#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mvil::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the `mvil` tool. `args` excludes the program name. Returns the
/// process exit code: 0 on success, 1 when the library rejects the request (bad
/// config values, mismatched checkpoint, failing gradient check), 2 on usage errors.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mvil::cli
