#pragma once

namespace home {

/// Entry point of the `home-moe` tool. Returns the process exit code:
/// 0 on success, 1 on a runtime failure (one-line diagnostic on stderr),
/// 2 on a usage error (usage text on stderr).
int cli_main(int argc, const char* const* argv);

}  // namespace home
