#include <csignal>
#include <iostream>

#include "tabval/cli.hpp"

namespace {
std::atomic<bool> g_cancel{false};
extern "C" void on_sigint(int) { g_cancel.store(true); }
}  // namespace

int main(int argc, char** argv) {
  std::signal(SIGINT, on_sigint);
  std::vector<std::string> args(argv + 1, argv + argc);
  return tabval::run_command(args, std::cout, std::cerr, &g_cancel);
}
