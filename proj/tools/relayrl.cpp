#include <atomic>
#include <csignal>

#include "relayrl/cli.hpp"

namespace {

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted.store(true); }

}  // namespace

int main(int argc, char** argv) {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  return relayrl::run_cli(argc, argv, std::cout, std::cerr, &g_interrupted);
}
