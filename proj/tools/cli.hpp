#pragma once

// Command-line front end. Kept in a library so tests drive it in-process.
//
// Exit codes: 0 success, 2 usage error, 3 data or format error,
// 4 numerical failure, 1 anything else.

#include <filesystem>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace voxreg::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitOther = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumerical = 4;

/// Every resolved option of one run, in a fixed order. Stored as
/// "key=value" lines after "voxreg_version=" and "subcommand=" lines.
struct Manifest {
  std::string version;
  std::string subcommand;
  std::vector<std::pair<std::string, std::string>> entries;

  const std::string* find(const std::string& key) const;
  void set(const std::string& key, const std::string& value);
};

void write_manifest(const std::filesystem::path& path, const Manifest& m);
Manifest read_manifest(const std::filesystem::path& path);

/// argv[0] is the program name.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace voxreg::cli
