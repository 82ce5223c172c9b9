#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>

#include "fedforge/protocol.hpp"

namespace fedforge::net {

struct Url {
  std::string host;
  std::string port;
  std::string target;  // path + query, at least "/"

  /// Accepts ws://host[:port][/path]. Throws IoFailure.
  static Url parse(const std::string& url);
};

/// Appends `path` to the target of a ws:// URL ("ws://h:1" + "/fl?id=a").
std::string join_url(const std::string& base, const std::string& path);

/// A WebSocket with its own read loop. Frames are queued on arrival and
/// writes are serialized, so one thread may block in receive() while
/// others call send().
class WsConnection {
 public:
  struct Impl;
  explicit WsConnection(std::shared_ptr<Impl> impl);
  ~WsConnection();
  WsConnection(const WsConnection&) = delete;
  WsConnection& operator=(const WsConnection&) = delete;

  /// Client-side handshake. Throws IoFailure.
  static std::shared_ptr<WsConnection> connect(const std::string& url,
                                               std::chrono::milliseconds timeout = std::chrono::seconds(10));

  /// Queues a frame; false once the connection is closed.
  bool send(protocol::Frame frame);
  bool send(protocol::Envelope env);

  /// Next frame, or nullopt on close or timeout.
  std::optional<protocol::Frame> receive(std::optional<std::chrono::milliseconds> timeout = std::nullopt);

  /// Flushes queued writes, then closes.
  void close();
  bool is_open() const;

  /// Request target the peer used for the handshake (server side).
  const std::string& target() const;

 private:
  std::shared_ptr<Impl> impl_;
};

/// Turns a connection's frames into envelopes.
class EnvelopeReader {
 public:
  explicit EnvelopeReader(WsConnection& conn) : conn_(conn) {}
  /// nullopt on close or timeout. Throws MalformedFrame, UnknownType or
  /// LengthMismatch for bad input (the reader stays usable).
  std::optional<protocol::Envelope> next(std::optional<std::chrono::milliseconds> timeout = std::nullopt);

 private:
  WsConnection& conn_;
  protocol::FrameAssembler assembler_;
};

/// Listens for WebSocket upgrades and hands each connection to `handler` on
/// its own thread. Plain HTTP GETs are answered from `staticDir` when set.
class WsServer {
 public:
  using Handler = std::function<void(std::shared_ptr<WsConnection>)>;
  struct State;

  /// Port 0 picks an ephemeral port. Throws IoFailure.
  WsServer(const std::string& address, std::uint16_t port, Handler handler,
           std::optional<std::filesystem::path> staticDir = std::nullopt);
  ~WsServer();
  WsServer(const WsServer&) = delete;
  WsServer& operator=(const WsServer&) = delete;

  std::uint16_t port() const;
  /// Stops accepting, closes every connection and joins handler threads.
  void stop();

 private:
  std::shared_ptr<State> state_;
};

}  // namespace fedforge::net
