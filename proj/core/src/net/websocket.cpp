#include "fedforge/net/websocket.hpp"

#include <atomic>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <future>
#include <mutex>
#include <sstream>
#include <thread>
#include <vector>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <spdlog/spdlog.h>

#include "fedforge/error.hpp"

namespace fedforge::net {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using protocol::Frame;

namespace {

constexpr std::size_t kMaxMessageBytes = std::size_t{512} << 20;

class FrameQueue {
 public:
  void push(Frame f) {
    {
      std::lock_guard lock(m_);
      if (closed_) return;
      q_.push_back(std::move(f));
    }
    cv_.notify_all();
  }

  void close() {
    {
      std::lock_guard lock(m_);
      closed_ = true;
    }
    cv_.notify_all();
  }

  bool closed() const {
    std::lock_guard lock(m_);
    return closed_;
  }

  bool wait_closed(std::chrono::milliseconds timeout) {
    std::unique_lock lock(m_);
    return cv_.wait_for(lock, timeout, [&] { return closed_; });
  }

  std::optional<Frame> pop(std::optional<std::chrono::milliseconds> timeout) {
    std::unique_lock lock(m_);
    auto ready = [&] { return !q_.empty() || closed_; };
    if (timeout) {
      if (!cv_.wait_for(lock, *timeout, ready)) return std::nullopt;
    } else {
      cv_.wait(lock, ready);
    }
    if (q_.empty()) return std::nullopt;
    Frame f = std::move(q_.front());
    q_.pop_front();
    return f;
  }

 private:
  mutable std::mutex m_;
  std::condition_variable cv_;
  std::deque<Frame> q_;
  bool closed_ = false;
};

/// An io_context serviced by one background thread.
struct IoRunner {
  asio::io_context ioc;
  asio::executor_work_guard<asio::io_context::executor_type> work;
  std::thread thread;

  IoRunner() : work(asio::make_work_guard(ioc)) {
    thread = std::thread([this] { ioc.run(); });
  }
  ~IoRunner() { halt(); }

  /// Stops and joins the io thread; the context itself stays alive.
  void halt() {
    work.reset();
    ioc.stop();
    if (thread.joinable()) {
      if (thread.get_id() == std::this_thread::get_id()) {
        thread.detach();
      } else {
        thread.join();
      }
    }
  }
};

std::string content_type(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".html" || ext == ".htm") return "text/html";
  if (ext == ".js" || ext == ".mjs") return "application/javascript";
  if (ext == ".css") return "text/css";
  if (ext == ".json") return "application/json";
  if (ext == ".svg") return "image/svg+xml";
  if (ext == ".png") return "image/png";
  if (ext == ".ico") return "image/x-icon";
  return "application/octet-stream";
}

}  // namespace

// ------------------------------------------------------------------ Url

Url Url::parse(const std::string& url) {
  std::string rest = url;
  if (rest.rfind("ws://", 0) == 0) {
    rest = rest.substr(5);
  } else if (rest.rfind("wss://", 0) == 0) {
    throw Error(ErrorCode::IoFailure, url, "TLS is not supported; terminate it in a reverse proxy");
  } else if (rest.find("://") != std::string::npos) {
    throw Error(ErrorCode::IoFailure, url, "expected a ws:// URL");
  }
  Url u;
  const auto slash = rest.find('/');
  const std::string authority = rest.substr(0, slash);
  u.target = slash == std::string::npos ? "/" : rest.substr(slash);
  const auto colon = authority.rfind(':');
  if (colon == std::string::npos) {
    u.host = authority;
    u.port = "80";
  } else {
    u.host = authority.substr(0, colon);
    u.port = authority.substr(colon + 1);
  }
  if (u.host.empty() || u.port.empty()) throw Error(ErrorCode::IoFailure, url, "missing host or port");
  return u;
}

std::string join_url(const std::string& base, const std::string& path) {
  std::string b = base;
  while (!b.empty() && b.back() == '/') b.pop_back();
  return b + path;
}

// ------------------------------------------------------------ connection

struct WsConnection::Impl : std::enable_shared_from_this<WsConnection::Impl> {
  struct Out {
    Frame frame;
    bool close = false;
  };

  websocket::stream<beast::tcp_stream> ws;
  beast::flat_buffer buffer;
  std::deque<Out> writes;  // strand only
  bool writing = false;    // strand only
  FrameQueue inbox;
  std::string target;
  std::shared_ptr<IoRunner> runner;  // client connections own their io thread
  std::shared_ptr<IoRunner> keepalive;  // server connections share the server's

  explicit Impl(tcp::socket&& s) : ws(std::move(s)) {}
  explicit Impl(asio::io_context& ioc) : ws(asio::make_strand(ioc)) {}

  void start(beast::role_type role) {
    ws.set_option(websocket::stream_base::timeout::suggested(role));
    ws.read_message_max(kMaxMessageBytes);
    asio::dispatch(ws.get_executor(), [self = shared_from_this()] { self->read(); });
  }

  void read() {
    ws.async_read(buffer, [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_read(ec); });
  }

  void on_read(beast::error_code ec) {
    if (ec) {
      inbox.close();
      return;
    }
    Frame f;
    f.kind = ws.got_text() ? Frame::Kind::Text : Frame::Kind::Binary;
    f.data = beast::buffers_to_string(buffer.data());
    buffer.consume(buffer.size());
    inbox.push(std::move(f));
    read();
  }

  void enqueue(Out o) {
    asio::post(ws.get_executor(), [self = shared_from_this(), o = std::move(o)]() mutable {
      self->writes.push_back(std::move(o));
      if (!self->writing) self->write_next();
    });
  }

  void fail_writes() {
    writes.clear();
    writing = false;
    inbox.close();
  }

  void write_next() {
    if (writes.empty()) {
      writing = false;
      return;
    }
    writing = true;
    auto& o = writes.front();
    if (o.close) {
      ws.async_close(websocket::close_code::normal, [self = shared_from_this()](beast::error_code) {
        self->fail_writes();
        beast::error_code ignored;
        beast::get_lowest_layer(self->ws).socket().close(ignored);
      });
      return;
    }
    ws.text(o.frame.kind == Frame::Kind::Text);
    ws.async_write(asio::buffer(o.frame.data), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->fail_writes();
        return;
      }
      self->writes.pop_front();
      self->write_next();
    });
  }

  void force_close() {
    asio::post(ws.get_executor(), [self = shared_from_this()] {
      beast::error_code ignored;
      beast::get_lowest_layer(self->ws).socket().shutdown(tcp::socket::shutdown_both, ignored);
      beast::get_lowest_layer(self->ws).socket().close(ignored);
      self->inbox.close();
    });
  }
};

WsConnection::WsConnection(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

WsConnection::~WsConnection() {
  if (!impl_) return;
  if (auto keep = std::move(impl_->keepalive)) {
    impl_.reset();
    return;
  }
  auto runner = std::move(impl_->runner);
  if (runner) {
    if (!impl_->inbox.closed()) {
      impl_->enqueue({{}, true});
      if (!impl_->inbox.wait_closed(std::chrono::seconds(2))) impl_->force_close();
      impl_->inbox.wait_closed(std::chrono::seconds(1));
    }
    impl_.reset();
    runner.reset();
  }
}

std::shared_ptr<WsConnection> WsConnection::connect(const std::string& url, std::chrono::milliseconds timeout) {
  const Url u = Url::parse(url);
  auto runner = std::make_shared<IoRunner>();
  auto impl = std::make_shared<Impl>(runner->ioc);
  beast::error_code ec;
  tcp::resolver resolver(runner->ioc);
  const auto endpoints = resolver.resolve(u.host, u.port, ec);
  if (ec) throw Error(ErrorCode::IoFailure, url, ec.message());

  // Connect and handshake on the io thread; the tcp_stream deadline covers both.
  auto done = std::make_shared<std::promise<beast::error_code>>();
  auto result = done->get_future();
  const std::string host = u.host + ":" + u.port;
  asio::dispatch(impl->ws.get_executor(), [impl, endpoints, host, target = u.target, timeout, done] {
    auto& stream = beast::get_lowest_layer(impl->ws);
    stream.expires_after(timeout);
    stream.async_connect(endpoints, [impl, host, target, done](beast::error_code e, const tcp::endpoint&) {
      if (e) {
        done->set_value(e);
        return;
      }
      impl->ws.async_handshake(host, target, [impl, done](beast::error_code e2) {
        beast::get_lowest_layer(impl->ws).expires_never();
        done->set_value(e2);
      });
    });
  });
  if (result.wait_for(timeout + std::chrono::seconds(1)) != std::future_status::ready) {
    asio::dispatch(impl->ws.get_executor(), [impl] { beast::get_lowest_layer(impl->ws).cancel(); });
    result.wait();
    throw Error(ErrorCode::IoFailure, url, "connection timed out");
  }
  ec = result.get();
  if (ec) {
    const bool timedOut = ec == beast::error::timeout;
    throw Error(ErrorCode::IoFailure, url, timedOut ? "connection timed out" : ec.message());
  }
  impl->target = u.target;
  impl->runner = runner;
  impl->start(beast::role_type::client);
  return std::make_shared<WsConnection>(std::move(impl));
}

bool WsConnection::send(Frame frame) {
  if (impl_->inbox.closed()) return false;
  impl_->enqueue({std::move(frame), false});
  return true;
}

bool WsConnection::send(protocol::Envelope env) {
  bool ok = true;
  for (auto& f : protocol::to_frames(std::move(env))) ok = send(std::move(f)) && ok;
  return ok;
}

std::optional<Frame> WsConnection::receive(std::optional<std::chrono::milliseconds> timeout) {
  return impl_->inbox.pop(timeout);
}

void WsConnection::close() {
  if (impl_->inbox.closed()) return;
  impl_->enqueue({{}, true});
  if (!impl_->inbox.wait_closed(std::chrono::seconds(2))) impl_->force_close();
}

bool WsConnection::is_open() const { return !impl_->inbox.closed(); }

const std::string& WsConnection::target() const { return impl_->target; }

std::optional<protocol::Envelope> EnvelopeReader::next(std::optional<std::chrono::milliseconds> timeout) {
  for (;;) {
    auto frame = conn_.receive(timeout);
    if (!frame) return std::nullopt;
    if (auto env = assembler_.push(*frame)) return env;
  }
}

// ---------------------------------------------------------------- server

struct WsServer::State : std::enable_shared_from_this<WsServer::State> {
  struct Worker {
    std::thread thread;
    std::shared_ptr<std::atomic<bool>> done;
  };

  std::shared_ptr<IoRunner> runner = std::make_shared<IoRunner>();
  std::optional<tcp::acceptor> acceptor{std::in_place, runner->ioc};
  Handler handler;
  std::optional<std::filesystem::path> staticDir;
  std::uint16_t port = 0;

  std::mutex m;
  bool stopping = false;
  std::vector<std::weak_ptr<WsConnection::Impl>> connections;
  std::vector<Worker> workers;

  void accept() {
    acceptor->async_accept(asio::make_strand(runner->ioc), [self = shared_from_this()](beast::error_code ec,
                                                                                     tcp::socket socket) {
      if (ec) {
        if (self->acceptor->is_open()) self->accept();
        return;
      }
      self->on_socket(std::move(socket));
      self->accept();
    });
  }

  void on_socket(tcp::socket socket);

  void launch(std::shared_ptr<WsConnection::Impl> impl) {
    std::lock_guard lock(m);
    if (stopping) {
      impl->force_close();
      return;
    }
    impl->keepalive = runner;
    // Reap finished handler threads.
    for (auto it = workers.begin(); it != workers.end();) {
      if (it->done->load()) {
        it->thread.join();
        it = workers.erase(it);
      } else {
        ++it;
      }
    }
    std::erase_if(connections, [](const auto& w) { return w.expired(); });
    connections.push_back(impl);
    auto done = std::make_shared<std::atomic<bool>>(false);
    auto conn = std::make_shared<WsConnection>(std::move(impl));
    workers.push_back({std::thread([h = handler, conn, done] {
                         try {
                           h(conn);
                         } catch (const std::exception& e) {
                           spdlog::error("connection handler failed: {}", e.what());
                         }
                         conn->close();
                         *done = true;
                       }),
                       done});
  }
};

namespace {

struct HttpSession : std::enable_shared_from_this<HttpSession> {
  beast::tcp_stream stream;
  beast::flat_buffer buffer;
  http::request<http::string_body> req;
  std::shared_ptr<WsServer::State> server;

  HttpSession(tcp::socket&& s, std::shared_ptr<WsServer::State> srv) : stream(std::move(s)), server(std::move(srv)) {}

  void run() {
    stream.expires_after(std::chrono::seconds(30));
    http::async_read(stream, buffer, req, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (!ec) self->on_request();
    });
  }

  void on_request();
  void serve_static();
};

}  // namespace

void WsServer::State::on_socket(tcp::socket socket) {
  std::make_shared<HttpSession>(std::move(socket), shared_from_this())->run();
}

void HttpSession::on_request() {
  if (websocket::is_upgrade(req)) {
    stream.expires_never();
    auto impl = std::make_shared<WsConnection::Impl>(stream.release_socket());
    impl->target = std::string(req.target());
    impl->ws.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    impl->ws.async_accept(req, [impl, srv = server](beast::error_code ec) {
      if (ec) {
        spdlog::debug("websocket handshake failed: {}", ec.message());
        return;
      }
      impl->start(beast::role_type::server);
      srv->launch(impl);
    });
    return;
  }
  serve_static();
}

void HttpSession::serve_static() {
  auto res = std::make_shared<http::response<http::string_body>>();
  res->version(req.version());
  res->keep_alive(false);
  std::string path(req.target().substr(0, req.target().find('?')));
  std::optional<std::filesystem::path> file;
  if (server->staticDir && req.method() == http::verb::get && path.find("..") == std::string::npos) {
    if (path.empty() || path.back() == '/') path += "index.html";
    auto candidate = *server->staticDir / path.substr(1);
    if (std::filesystem::is_regular_file(candidate)) file = candidate;
  }
  if (file) {
    std::ifstream in(*file, std::ios::binary);
    std::ostringstream body;
    body << in.rdbuf();
    res->result(http::status::ok);
    res->set(http::field::content_type, content_type(*file));
    res->body() = body.str();
  } else {
    res->result(http::status::not_found);
    res->set(http::field::content_type, "text/plain");
    res->body() = "not found\n";
  }
  res->prepare_payload();
  http::async_write(stream, *res, [self = shared_from_this(), res](beast::error_code, std::size_t) {
    beast::error_code ignored;
    self->stream.socket().shutdown(tcp::socket::shutdown_send, ignored);
  });
}

WsServer::WsServer(const std::string& address, std::uint16_t port, Handler handler,
                   std::optional<std::filesystem::path> staticDir)
    : state_(std::make_shared<State>()) {
  state_->handler = std::move(handler);
  state_->staticDir = std::move(staticDir);
  beast::error_code ec;
  const auto addr = asio::ip::make_address(address, ec);
  if (ec) throw Error(ErrorCode::IoFailure, address, ec.message());
  const tcp::endpoint ep(addr, port);
  auto& acc = *state_->acceptor;
  acc.open(ep.protocol(), ec);
  if (!ec) acc.set_option(asio::socket_base::reuse_address(true), ec);
  if (!ec) acc.bind(ep, ec);
  if (!ec) acc.listen(asio::socket_base::max_listen_connections, ec);
  if (ec) throw Error(ErrorCode::IoFailure, address + ":" + std::to_string(port), ec.message());
  state_->port = acc.local_endpoint().port();
  asio::post(state_->runner->ioc, [s = state_] { s->accept(); });
}

WsServer::~WsServer() { stop(); }

std::uint16_t WsServer::port() const { return state_->port; }

void WsServer::stop() {
  std::vector<State::Worker> workers;
  {
    std::lock_guard lock(state_->m);
    if (state_->stopping) return;
    state_->stopping = true;
    for (auto& w : state_->connections) {
      if (auto c = w.lock()) c->force_close();
    }
    workers = std::move(state_->workers);
  }
  asio::post(state_->runner->ioc, [s = state_] {
    beast::error_code ignored;
    s->acceptor->close(ignored);
  });
  for (auto& w : workers) {
    if (w.thread.joinable()) w.thread.join();
  }
  // Sockets must go before their io_context; connections a handler kept
  // hold the runner until they are dropped.
  auto runner = std::move(state_->runner);
  runner->halt();
  state_->acceptor.reset();
  runner.reset();
}

}  // namespace fedforge::net
