#pragma once

#include <string_view>

namespace home {

/// Progress and warning lines on stderr. Info lines are suppressed when
/// quiet mode is on (set_quiet or HOME_MOE_QUIET=1); warnings never are.
void set_quiet(bool quiet);
bool quiet();
void log_info(std::string_view msg);
void log_warn(std::string_view msg);

}  // namespace home
