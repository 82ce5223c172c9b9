#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <string>

namespace fedforge::net {

struct ClientOptions {
  std::string serverUrl = "ws://localhost:8080";
  std::string id;
  std::filesystem::path dataDir;
  std::uint64_t seedBase = 0;
  /// Keep retrying the first connection this long.
  std::chrono::milliseconds connectFor{30'000};
};

/// Connects to <serverUrl>/fl?id=<id> and answers requests until the server
/// closes the connection or `stop` becomes true. Returns 0 on a clean close.
/// Throws IoFailure when the server cannot be reached, and the dataset
/// loading errors when the data directory is unusable.
int run_client(const ClientOptions& options, const std::atomic<bool>& stop);

}  // namespace fedforge::net
