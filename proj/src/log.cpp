#include "home/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string>

namespace home {
namespace {

std::atomic<int> g_quiet{-1};
std::mutex g_mu;

}  // namespace

void set_quiet(bool q) { g_quiet = q ? 1 : 0; }

bool quiet() {
  int q = g_quiet.load();
  if (q < 0) {
    const char* env = std::getenv("HOME_MOE_QUIET");
    q = (env && std::string(env) != "0") ? 1 : 0;
    g_quiet = q;
  }
  return q == 1;
}

void log_info(std::string_view msg) {
  if (quiet()) return;
  std::lock_guard lock(g_mu);
  std::cerr << msg << '\n';
}

void log_warn(std::string_view msg) {
  std::lock_guard lock(g_mu);
  std::cerr << "warning: " << msg << '\n';
}

}  // namespace home
