#include "fedforge/net/client_daemon.hpp"

#include <thread>

#include <spdlog/spdlog.h>

#include "fedforge/edge_client.hpp"
#include "fedforge/error.hpp"
#include "fedforge/net/websocket.hpp"

namespace fedforge::net {

int run_client(const ClientOptions& options, const std::atomic<bool>& stop) {
  if (options.id.empty()) throw Error(ErrorCode::UnknownClient, "id", "client id must not be empty");
  auto client = client::EdgeClient::from_directory(options.id, options.dataDir, options.seedBase);
  spdlog::info("client {}: {} local rows", options.id, client.dataset().rows());

  const std::string url = join_url(options.serverUrl, "/fl?id=" + options.id);
  const auto giveUp = std::chrono::steady_clock::now() + options.connectFor;
  std::shared_ptr<WsConnection> conn;
  for (;;) {
    try {
      conn = WsConnection::connect(url);
      break;
    } catch (const Error& e) {
      if (stop || std::chrono::steady_clock::now() >= giveUp) throw;
      spdlog::debug("client {}: {}; retrying", options.id, e.what());
      std::this_thread::sleep_for(std::chrono::milliseconds(200));
    }
  }
  spdlog::info("client {} connected to {}", options.id, options.serverUrl);

  EnvelopeReader reader(*conn);
  while (!stop) {
    std::optional<protocol::Envelope> env;
    try {
      env = reader.next(std::chrono::milliseconds(250));
    } catch (const Error& e) {
      spdlog::warn("client {}: bad frame from server: {}", options.id, e.what());
      conn->send(protocol::Envelope{protocol::make_error("", std::string(to_string(e.code())), e.what()), {}});
      continue;
    }
    if (!env) {
      if (!conn->is_open()) break;
      continue;
    }
    for (auto& reply : client.handle(*env)) conn->send(std::move(reply));
  }
  conn->close();
  spdlog::info("client {} disconnected", options.id);
  return 0;
}

}  // namespace fedforge::net
