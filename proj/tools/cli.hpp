#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "eve/attention.hpp"
#include "eve/error.hpp"

namespace eve::cli {

// One edit configuration of a baked-in ablation grid.
struct AblationCell {
  std::string name;               // output sub-directory
  std::vector<std::string> rows;  // table rows this configuration reproduces
  bool depth_guidance = true;
  AttentionMode attention = AttentionMode::frame_align;
};

// Known grids: "table1".
std::vector<AblationCell> ablation_grid(std::string_view name);

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitBackend = 3;
inline constexpr int kExitIo = 4;

int exit_code(ErrorKind kind);

// Parses and runs one command. Reports go to `out`, logs and errors to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace eve::cli
