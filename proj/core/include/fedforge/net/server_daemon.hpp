#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

namespace fedforge::net {

struct ServerOptions {
  std::string address = "0.0.0.0";
  std::uint16_t port = 8080;  // 0 picks a free port
  std::filesystem::path dataDir = "fedforge-data";
  /// Held-out evaluation set (data.csv + dataconfig.json).
  std::filesystem::path testDir;
  std::chrono::milliseconds roundDeadline{120'000};
  /// Budget for one client's exploration during a NAS round.
  std::chrono::milliseconds searchDeadline{600'000};
  /// How long a task waits for its clients to connect and be free.
  std::chrono::milliseconds clientWait{10'000};
  std::optional<std::filesystem::path> staticDir;
  /// The bound port is written here once listening.
  std::optional<std::filesystem::path> portFile;
  std::uint64_t seed = 0;
};

/// The parameter server: clients on /fl, dashboards and the CLI on /ui,
/// intent submissions on /intent. One orchestration thread per task.
class ServerDaemon {
 public:
  explicit ServerDaemon(ServerOptions options);
  ~ServerDaemon();
  ServerDaemon(const ServerDaemon&) = delete;
  ServerDaemon& operator=(const ServerDaemon&) = delete;

  /// Binds and starts serving. Throws IoFailure.
  void start();
  /// Closes every connection and joins task threads.
  void stop();
  std::uint16_t port() const;

  /// Number of connected /fl clients.
  std::size_t client_count() const;

  struct State;

 private:
  std::shared_ptr<State> state_;
};

}  // namespace fedforge::net
