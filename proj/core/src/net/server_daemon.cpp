#include "fedforge/net/server_daemon.hpp"

#include <algorithm>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <set>
#include <thread>
#include <vector>

#include <spdlog/spdlog.h>

#include "fedforge/dataset_io.hpp"
#include "fedforge/error.hpp"
#include "fedforge/fedavg.hpp"
#include "fedforge/intent.hpp"
#include "fedforge/llm_gateway.hpp"
#include "fedforge/metrics_log.hpp"
#include "fedforge/nas.hpp"
#include "fedforge/net/websocket.hpp"
#include "fedforge/seed.hpp"

namespace fedforge::net {

using nlohmann::json;
using protocol::Envelope;
using protocol::MessageType;
using protocol::WireMessage;
using Clock = std::chrono::steady_clock;

namespace {

struct Received {
  Envelope env;
  Clock::time_point at;
};

/// One connected edge client and the envelopes it has sent.
struct ClientLink {
  std::string id;
  std::shared_ptr<WsConnection> conn;
  std::mutex m;
  std::condition_variable cv;
  std::deque<Received> inbox;
  bool closed = false;

  void push(Envelope env) {
    {
      std::lock_guard lock(m);
      inbox.push_back({std::move(env), Clock::now()});
    }
    cv.notify_all();
  }

  void close() {
    {
      std::lock_guard lock(m);
      closed = true;
    }
    cv.notify_all();
  }

  /// Drops envelopes that fail `match` until one passes or the deadline hits.
  template <class Pred>
  std::optional<Received> wait(Pred match, Clock::time_point deadline) {
    std::unique_lock lock(m);
    for (;;) {
      while (!inbox.empty()) {
        Received r = std::move(inbox.front());
        inbox.pop_front();
        if (match(r.env.message)) return r;
        spdlog::debug("client {}: dropping stale {}", id, protocol::to_string(r.env.message.type));
      }
      if (closed) return std::nullopt;
      if (cv.wait_until(lock, deadline) == std::cv_status::timeout && inbox.empty()) return std::nullopt;
    }
  }
};

std::string query_param(const std::string& target, const std::string& key) {
  const auto q = target.find('?');
  if (q == std::string::npos) return {};
  std::size_t pos = q + 1;
  while (pos <= target.size()) {
    auto amp = target.find('&', pos);
    if (amp == std::string::npos) amp = target.size();
    const std::string pair = target.substr(pos, amp - pos);
    const auto eq = pair.find('=');
    if (eq != std::string::npos && pair.substr(0, eq) == key) return pair.substr(eq + 1);
    pos = amp + 1;
  }
  return {};
}

WireMessage error_message(const std::string& taskId, const Error& e, std::optional<int> round = std::nullopt) {
  return protocol::make_error(taskId, std::string(to_string(e.code())), e.what(), round);
}

}  // namespace

struct ServerDaemon::State : std::enable_shared_from_this<ServerDaemon::State> {
  ServerOptions options;
  std::unique_ptr<WsServer> server;
  server::MetricsLog log;
  std::unique_ptr<intent::LlmBackend> backend = intent::backend_from_env();

  mutable std::mutex m;
  std::condition_variable rosterChanged;
  std::map<std::string, std::shared_ptr<ClientLink>> clients;
  std::set<std::string> busy;
  std::vector<std::weak_ptr<WsConnection>> uis;
  std::vector<std::thread> tasks;
  bool stopping = false;
  std::uint64_t taskCounter = 0;

  explicit State(ServerOptions o) : options(std::move(o)), log(options.dataDir) {}

  std::shared_ptr<ClientLink> link(const std::string& id) {
    std::lock_guard lock(m);
    const auto it = clients.find(id);
    return it == clients.end() ? nullptr : it->second;
  }

  void broadcast(const WireMessage& msg) {
    std::vector<std::shared_ptr<WsConnection>> targets;
    {
      std::lock_guard lock(m);
      std::erase_if(uis, [](const auto& w) { return w.expired(); });
      for (const auto& w : uis) {
        if (auto c = w.lock()) targets.push_back(std::move(c));
      }
    }
    for (auto& c : targets) c->send(Envelope{msg, {}});
  }

  // ------------------------------------------------------------ handlers

  void on_connection(const std::shared_ptr<WsConnection>& conn) {
    const std::string& target = conn->target();
    const std::string path = target.substr(0, target.find('?'));
    if (path == "/fl") {
      serve_client(conn, query_param(target, "id"));
    } else if (path == "/ui" || path == "/intent") {
      serve_ui(conn);
    } else {
      conn->send(Envelope{protocol::make_error("", "UnknownType", "no endpoint " + path), {}});
    }
  }

  void serve_client(const std::shared_ptr<WsConnection>& conn, const std::string& id) {
    if (id.empty()) {
      conn->send(Envelope{protocol::make_error("", "UnknownClient", "connect to /fl?id=<client id>"), {}});
      return;
    }
    auto link = std::make_shared<ClientLink>();
    link->id = id;
    link->conn = conn;
    {
      std::lock_guard lock(m);
      if (auto old = clients.find(id); old != clients.end()) {
        spdlog::warn("client {} reconnected; dropping the old connection", id);
        old->second->close();
      }
      clients[id] = link;
    }
    rosterChanged.notify_all();
    spdlog::info("client {} connected", id);

    EnvelopeReader reader(*conn);
    for (;;) {
      try {
        auto env = reader.next();
        if (!env) break;
        link->push(std::move(*env));
      } catch (const Error& e) {
        spdlog::warn("client {} sent a bad frame: {}", id, e.what());
        conn->send(Envelope{error_message("", e), {}});
      }
    }
    link->close();
    {
      std::lock_guard lock(m);
      if (auto it = clients.find(id); it != clients.end() && it->second == link) clients.erase(it);
    }
    rosterChanged.notify_all();
    spdlog::info("client {} disconnected", id);
  }

  void serve_ui(const std::shared_ptr<WsConnection>& conn) {
    {
      std::lock_guard lock(m);
      uis.push_back(conn);
    }
    EnvelopeReader reader(*conn);
    for (;;) {
      std::optional<Envelope> env;
      try {
        env = reader.next();
      } catch (const Error& e) {
        conn->send(Envelope{error_message("", e), {}});
        continue;
      }
      if (!env) break;
      const auto& msg = env->message;
      try {
        switch (msg.type) {
          case MessageType::TaskSubmit:
            submit_task(*conn, msg.body);
            break;
          case MessageType::IntentSubmit:
            submit_intent(*conn, msg.body);
            break;
          default:
            throw Error(ErrorCode::OutOfOrder, std::string(protocol::to_string(msg.type)),
                        "expected TaskSubmit or IntentSubmit");
        }
      } catch (const Error& e) {
        conn->send(Envelope{error_message(msg.taskId, e, msg.round), {}});
      } catch (const json::exception& e) {
        conn->send(Envelope{error_message(msg.taskId, Error(ErrorCode::MalformedJson, "body", e.what())), {}});
      }
    }
  }

  std::string new_task_id(const std::string& name) {
    std::uint64_t n;
    {
      std::lock_guard lock(m);
      n = ++taskCounter;
    }
    const auto entropy = std::random_device{}() ^ mix_seed(n, static_cast<std::uint64_t>(Clock::now().time_since_epoch().count()));
    return server::make_task_id(name, entropy);
  }

  /// Body: a task config object, optionally with "nas": true or a search config.
  void submit_task(WsConnection& conn, json body) {
    if (!body.is_object()) throw Error(ErrorCode::MalformedJson, "body", "TaskSubmit body must be an object");
    std::optional<nas::SearchConfig> search;
    if (body.contains("nas")) {
      const json nasOpt = body.at("nas");
      body.erase("nas");
      if (nasOpt.is_object()) {
        search = nas::search_config_from_json(nasOpt);
      } else if (nasOpt.is_boolean() && nasOpt.get<bool>()) {
        search = nas::SearchConfig{};
      }
    }
    auto cfg = config::parse_task_config(body);
    const std::string taskId = new_task_id(cfg.taskName);
    WireMessage accepted{MessageType::TaskAccepted, taskId, std::nullopt,
                         {{"taskId", taskId}, {"config", config::to_ordered_json(cfg)}, {"launched", true}}};
    conn.send(Envelope{std::move(accepted), {}});
    launch(taskId, std::move(cfg), search);
  }

  /// Body: {text, confirm}. Without confirm the resolved config is only echoed.
  void submit_intent(WsConnection& conn, const json& body) {
    const std::string text = body.value("text", std::string());
    const bool confirm = body.value("confirm", true);
    auto tr = intent::translate_intent(text, backend.get());
    const std::string taskId = confirm ? new_task_id(tr.config.taskName) : std::string();
    WireMessage accepted{MessageType::TaskAccepted, taskId, std::nullopt,
                         {{"taskId", taskId},
                          {"config", config::to_ordered_json(tr.config)},
                          {"mode", std::string(intent::to_string(tr.mode))},
                          {"launched", confirm}}};
    conn.send(Envelope{std::move(accepted), {}});
    if (confirm) launch(taskId, std::move(tr.config), std::nullopt);
  }

  void launch(std::string taskId, config::TaskConfig cfg, std::optional<nas::SearchConfig> search) {
    std::lock_guard lock(m);
    if (stopping) throw Error(ErrorCode::NoClientsAvailable, taskId, "server is shutting down");
    tasks.emplace_back([self = shared_from_this(), taskId = std::move(taskId), cfg = std::move(cfg), search]() mutable {
      self->run_task(taskId, std::move(cfg), search);
    });
  }

  // ---------------------------------------------------------- task loop

  /// Reserves the clients a task will use, waiting up to clientWait.
  std::vector<std::string> claim_clients(const std::vector<std::string>& wanted) {
    std::unique_lock lock(m);
    const auto deadline = Clock::now() + options.clientWait;
    auto available = [&] {
      std::vector<std::string> ids;
      if (wanted.empty()) {
        for (const auto& [id, link] : clients) {
          if (!busy.contains(id)) ids.push_back(id);
        }
      } else {
        for (const auto& id : wanted) {
          if (clients.contains(id) && !busy.contains(id)) ids.push_back(id);
        }
      }
      return ids;
    };
    auto ready = [&] {
      if (stopping) return true;
      const auto ids = available();
      return wanted.empty() ? !ids.empty() : ids.size() == wanted.size();
    };
    rosterChanged.wait_until(lock, deadline, ready);
    auto ids = available();
    if (stopping || ids.empty()) throw Error(ErrorCode::NoClientsAvailable, "clients", "no free client connected");
    if (!wanted.empty() && ids.size() < wanted.size()) {
      spdlog::warn("only {} of {} requested clients are available", ids.size(), wanted.size());
    }
    for (const auto& id : ids) busy.insert(id);
    return ids;
  }

  void release_clients(const std::vector<std::string>& ids) {
    {
      std::lock_guard lock(m);
      for (const auto& id : ids) busy.erase(id);
    }
    rosterChanged.notify_all();
  }

  void run_task(const std::string& taskId, config::TaskConfig cfg, std::optional<nas::SearchConfig> search);
};

namespace {

/// Moves task traffic over the /fl connections of the claimed clients.
class NetTransport : public server::ClientTransport, public nas::SearchTransport {
 public:
  NetTransport(ServerDaemon::State& s, std::string taskId) : s_(s), taskId_(std::move(taskId)) {}

  std::vector<server::ClientReply> train_round(const server::TrainDispatch& d, const std::vector<std::string>& ids,
                                               std::chrono::milliseconds deadline) override {
    const auto deadlineAt = Clock::now() + deadline;
    struct Sent {
      std::string id;
      std::shared_ptr<ClientLink> link;
      Clock::time_point at;
    };
    std::vector<Sent> sent;
    for (const auto& id : ids) {
      auto link = s_.link(id);
      if (!link) {
        spdlog::warn("task {} round {}: client {} is not connected", taskId_, d.round, id);
        continue;
      }
      const auto at = Clock::now();
      bool ok = link->conn->send(Envelope{
          WireMessage{MessageType::TrainRequest, d.taskId, d.round, {{"config", config::to_ordered_json(d.config)}}},
          {}});
      ok = link->conn->send(Envelope{
               WireMessage{MessageType::WeightsHeader, d.taskId, d.round, json::object()}, d.weightsFrame}) &&
           ok;
      if (ok) sent.push_back({id, std::move(link), at});
    }

    std::vector<server::ClientReply> out;
    for (const auto& s : sent) {
      auto got = s.link->wait(
          [&](const WireMessage& m) {
            return m.taskId == d.taskId && m.round == d.round &&
                   (m.type == MessageType::LocalUpdateHeader || m.type == MessageType::Error);
          },
          deadlineAt);
      if (!got) {
        spdlog::warn("task {} round {}: no update from {}", taskId_, d.round, s.id);
        continue;
      }
      const auto& m = got->env.message;
      if (m.type == MessageType::Error) {
        spdlog::warn("task {} round {}: client {} failed: {}", taskId_, d.round, s.id, m.body.dump());
        continue;
      }
      server::ClientReply r;
      r.clientId = s.id;
      r.payload = std::move(got->env.binary);
      r.numSamples = m.body.value("numSamples", std::int64_t{0});
      r.trainSeconds = m.body.value("trainSeconds", 0.0);
      r.latencySeconds = std::chrono::duration<double>(got->at - s.at).count();
      out.push_back(std::move(r));
    }
    return out;
  }

  config::DataConfig request_data_config(const std::string& taskId, const std::string& clientId) override {
    auto link = s_.link(clientId);
    if (!link) throw Error(ErrorCode::UnknownClient, clientId);
    link->conn->send(
        Envelope{WireMessage{MessageType::DataConfigRequest, taskId, std::nullopt, json::object()}, {}});
    auto got = link->wait(
        [&](const WireMessage& m) {
          return m.taskId == taskId &&
                 (m.type == MessageType::DataConfigResponse || m.type == MessageType::Error);
        },
        Clock::now() + std::chrono::seconds(30));
    if (!got) throw Error(ErrorCode::MissingDataConfig, clientId, "client did not answer");
    const auto& m = got->env.message;
    if (m.type == MessageType::Error) {
      const auto code = m.body.value("code", std::string());
      throw Error(code == "MissingDataConfig" ? ErrorCode::MissingDataConfig : ErrorCode::MalformedDataConfig,
                  clientId, m.body.value("message", std::string()));
    }
    return config::parse_data_config(m.body);
  }

  std::vector<std::pair<std::string, nas::CandidateResult>> explore(const std::vector<nas::Assignment>& jobs,
                                                                    const nas::SearchConfig& cfg) override {
    const auto deadlineAt = Clock::now() + s_.options.searchDeadline;
    std::vector<std::pair<const nas::Assignment*, std::shared_ptr<ClientLink>>> sent;
    for (const auto& job : jobs) {
      auto link = s_.link(job.clientId);
      if (!link) continue;
      const bool ok = link->conn->send(Envelope{
          WireMessage{MessageType::ArchAssign, taskId_, std::nullopt,
                      {{"model", job.model}, {"search", nas::to_json(cfg)}, {"seed", job.seed}}},
          {}});
      if (ok) sent.emplace_back(&job, std::move(link));
    }
    std::vector<std::pair<std::string, nas::CandidateResult>> out;
    for (const auto& [job, link] : sent) {
      auto got = link->wait(
          [&](const WireMessage& m) {
            return m.taskId == taskId_ && (m.type == MessageType::HPOResult || m.type == MessageType::Error);
          },
          deadlineAt);
      if (!got) continue;
      if (got->env.message.type == MessageType::Error) {
        spdlog::warn("search for task {}: client {} failed: {}", taskId_, job->clientId,
                     got->env.message.body.dump());
        continue;
      }
      try {
        out.emplace_back(job->clientId, nas::candidate_from_json(got->env.message.body));
      } catch (const Error& e) {
        spdlog::warn("client {} sent a bad HPOResult: {}", job->clientId, e.what());
      }
    }
    return out;
  }

 private:
  ServerDaemon::State& s_;
  std::string taskId_;
};

}  // namespace

void ServerDaemon::State::run_task(const std::string& taskId, config::TaskConfig cfg,
                                   std::optional<nas::SearchConfig> search) {
  std::vector<std::string> ids;
  try {
    ids = claim_clients(cfg.clients);
    NetTransport transport(*this, taskId);
    sched::ClientRoster roster;
    for (const auto& id : ids) roster.add_client(id, "ws");
    const std::uint64_t seed = cfg.seed.value_or(options.seed);

    if (!cfg.model) {
      const auto pick = ids[mix_seed(seed, 0xDA7A) % ids.size()];
      const auto d = transport.request_data_config(taskId, pick);
      if (search) {
        std::unique_ptr<nas::SearchSpaceProvider> provider;
        if (backend) {
          provider = std::make_unique<nas::GatewayProvider>(*backend, search->seed);
        } else {
          provider = std::make_unique<nas::BuiltinProvider>(search->seed);
        }
        const auto found = nas::run_search(*search, d, roster, *provider, transport);
        spdlog::info("task {}: search picked {} parameters, lr {}", taskId, found.model.parameter_count(), found.lr);
        cfg.model = found.model;
        cfg.lr = found.lr;
      } else {
        try {
          cfg.model = intent::request_model_spec(d, backend.get());
        } catch (const Error& e) {
          if (e.code() != ErrorCode::GatewayUnreachable) throw;
          spdlog::warn("task {}: {}; using the fallback model", taskId, e.what());
          cfg.model = intent::fallback_model(d);
        }
      }
    }

    if (options.testDir.empty()) throw Error(ErrorCode::IoFailure, "testDir", "server was started without a test set");
    const auto testSet = io::load_dataset(options.testDir);

    server::RunOptions ro;
    ro.roundDeadline = options.roundDeadline;
    ro.seed = options.seed;
    ro.log = &log;
    ro.onRound = [&](const protocol::RoundMetrics& m) {
      broadcast(WireMessage{MessageType::RoundResult, taskId, m.round, json(m)});
    };
    server::FedAvgTask task(taskId, cfg, roster, testSet, transport, ro);
    const auto result = task.run();

    json totals = {{"rounds", result.metrics.size()},
                   {"bytesUp", 0},
                   {"bytesDown", 0},
                   {"trainSeconds", 0.0},
                   {"elapsedSeconds", 0.0},
                   {"testAccuracy", nullptr},
                   {"testLoss", nullptr},
                   {"config", config::to_ordered_json(cfg)}};
    std::uint64_t up = 0, down = 0;
    double train = 0.0, elapsed = 0.0;
    for (const auto& m : result.metrics) {
      up += m.bytesUp;
      down += m.bytesDown;
      train += m.trainSeconds;
      elapsed += m.elapsedSeconds;
    }
    totals["bytesUp"] = up;
    totals["bytesDown"] = down;
    totals["trainSeconds"] = train;
    totals["elapsedSeconds"] = elapsed;
    if (!result.metrics.empty()) {
      totals["testAccuracy"] = result.metrics.back().testAccuracy;
      totals["testLoss"] = result.metrics.back().testLoss;
    }
    broadcast(WireMessage{MessageType::TaskComplete, taskId, static_cast<int>(result.metrics.size()), totals});
    spdlog::info("task {} complete", taskId);
  } catch (const Error& e) {
    spdlog::error("task {} failed: {}", taskId, e.what());
    broadcast(error_message(taskId, e));
  } catch (const std::exception& e) {
    spdlog::error("task {} failed: {}", taskId, e.what());
    broadcast(protocol::make_error(taskId, "IoFailure", e.what()));
  }
  release_clients(ids);
}

ServerDaemon::ServerDaemon(ServerOptions options) : state_(std::make_shared<State>(std::move(options))) {}

ServerDaemon::~ServerDaemon() { stop(); }

void ServerDaemon::start() {
  std::weak_ptr<State> weak = state_;
  state_->server = std::make_unique<WsServer>(
      state_->options.address, state_->options.port,
      [weak](std::shared_ptr<WsConnection> conn) {
        if (auto s = weak.lock()) s->on_connection(conn);
      },
      state_->options.staticDir);
  const auto port = state_->server->port();
  spdlog::info("listening on {}:{}", state_->options.address, port);
  if (state_->options.portFile) {
    const auto tmp = state_->options.portFile->string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      out << port << "\n";
      if (!out) throw Error(ErrorCode::IoFailure, tmp, "cannot write port file");
    }
    std::filesystem::rename(tmp, *state_->options.portFile);
  }
}

void ServerDaemon::stop() {
  {
    std::lock_guard lock(state_->m);
    if (state_->stopping) return;
    state_->stopping = true;
  }
  state_->rosterChanged.notify_all();
  if (state_->server) state_->server->stop();
  std::vector<std::thread> tasks;
  {
    std::lock_guard lock(state_->m);
    for (auto& [id, link] : state_->clients) link->close();
    tasks = std::move(state_->tasks);
  }
  for (auto& t : tasks) t.join();
}

std::uint16_t ServerDaemon::port() const { return state_->server ? state_->server->port() : 0; }

std::size_t ServerDaemon::client_count() const {
  std::lock_guard lock(state_->m);
  return state_->clients.size();
}

}  // namespace fedforge::net
