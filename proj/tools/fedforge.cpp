// fedforge: serve, client, submit, intent, nas, gen-data, metrics.

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "fedforge/config.hpp"
#include "fedforge/dataset_io.hpp"
#include "fedforge/error.hpp"
#include "fedforge/intent.hpp"
#include "fedforge/llm_gateway.hpp"
#include "fedforge/metrics_log.hpp"
#include "fedforge/nas.hpp"
#include "fedforge/net/client_daemon.hpp"
#include "fedforge/net/server_daemon.hpp"
#include "fedforge/net/websocket.hpp"
#include "fedforge/synthetic.hpp"

using nlohmann::json;
namespace fs = std::filesystem;
using namespace fedforge;

namespace {

constexpr int kExitTaskError = 1;
constexpr int kExitUnreachable = 2;
constexpr int kExitConnectionLost = 3;

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop = true; }

std::string default_server_url() {
  const char* env = std::getenv("FEDFORGE_SERVER_URL");
  return env != nullptr && *env != '\0' ? env : "ws://localhost:8080";
}

json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(ErrorCode::IoFailure, p.string(), "cannot open");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::MalformedJson, p.string(), e.what());
  }
}

void write_output(const std::string& text, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << text << "\n";
    return;
  }
  std::ofstream out(path, std::ios::trunc);
  out << text << "\n";
  if (!out) throw Error(ErrorCode::IoFailure, path, "cannot write");
}

// ------------------------------------------------------------------ serve

struct ServeArgs {
  net::ServerOptions opts;
  double roundDeadline = 120.0;
  double clientWait = 10.0;
  double searchDeadline = 600.0;
  std::string staticDir;
  std::string portFile;
};

int cmd_serve(const ServeArgs& a) {
  auto opts = a.opts;
  opts.roundDeadline = std::chrono::milliseconds(static_cast<long long>(a.roundDeadline * 1000));
  opts.clientWait = std::chrono::milliseconds(static_cast<long long>(a.clientWait * 1000));
  opts.searchDeadline = std::chrono::milliseconds(static_cast<long long>(a.searchDeadline * 1000));
  if (!a.staticDir.empty()) opts.staticDir = a.staticDir;
  if (!a.portFile.empty()) opts.portFile = a.portFile;

  // Signals are taken synchronously below; block them before any thread starts.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  net::ServerDaemon server(opts);
  server.start();
  int sig = 0;
  sigwait(&set, &sig);
  spdlog::info("signal {}; shutting down", sig);
  server.stop();
  return 0;
}

// ----------------------------------------------------------------- client

int cmd_client(const net::ClientOptions& opts) {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  try {
    return net::run_client(opts, g_stop);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::IoFailure ? kExitUnreachable : kExitTaskError;
  }
}

// ----------------------------------------------------------------- submit

struct SubmitArgs {
  std::string configPath;
  std::string intentText;
  std::string modelPath;
  std::string server = default_server_url();
  bool nas = false;
  bool quiet = false;
  bool jsonLines = false;
  // Web-form fields; unset ones come from the file or the defaults.
  std::optional<std::string> algo, scheduler, optimizer, loss, compress, dataset, taskName;
  std::optional<int> minibatch, epoch, minibatchtest, comRounds;
  std::optional<double> lr, clientFraction, compressParam;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> clients;
};

json build_submit_config(const SubmitArgs& a) {
  json partial = a.configPath.empty() ? json::object() : read_json_file(a.configPath);
  if (!partial.is_object()) throw Error(ErrorCode::MalformedJson, a.configPath, "config must be a JSON object");
  auto set = [&](const char* key, const auto& v) {
    if (v) partial[key] = *v;
  };
  set("algo", a.algo);
  set("scheduler", a.scheduler);
  set("optimizer", a.optimizer);
  set("loss", a.loss);
  set("compress", a.compress);
  set("dataset", a.dataset);
  set("taskName", a.taskName);
  set("minibatch", a.minibatch);
  set("epoch", a.epoch);
  set("minibatchtest", a.minibatchtest);
  set("comRounds", a.comRounds);
  set("clientFraction", a.clientFraction);
  set("compressParam", a.compressParam);
  set("seed", a.seed);
  if (!a.clients.empty()) partial["clients"] = a.clients;
  if (!a.modelPath.empty()) {
    const json m = read_json_file(a.modelPath);
    if (m.contains("model")) {
      partial["model"] = m.at("model");
      if (m.contains("lr") && !a.lr) partial["lr"] = m.at("lr");
    } else {
      partial["model"] = m;
    }
  }
  set("lr", a.lr);
  auto cfg = config::apply_defaults(partial);
  json out = config::to_ordered_json(cfg);
  if (a.nas) out["nas"] = true;
  return out;
}

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

void print_round(const protocol::WireMessage& m, int comRounds) {
  const auto& b = m.body;
  std::string who;
  for (const auto& p : b.value("participants", json::array())) {
    if (!who.empty()) who += ",";
    who += p.get<std::string>();
  }
  std::cout << "round " << b.value("round", 0) << "/" << comRounds << "  acc " << fixed(b.value("testAccuracy", 0.0), 4)
            << "  loss " << fixed(b.value("testLoss", 0.0), 4) << "  up " << b.value("bytesUp", 0) << " B"
            << "  down " << b.value("bytesDown", 0) << " B"
            << "  train " << fixed(b.value("trainSeconds", 0.0), 3) << " s"
            << "  clients " << who << std::endl;
}

int cmd_submit(const SubmitArgs& a) {
  protocol::WireMessage request;
  if (!a.intentText.empty()) {
    request = {protocol::MessageType::IntentSubmit, "", std::nullopt, {{"text", a.intentText}, {"confirm", true}}};
  } else {
    try {
      request = {protocol::MessageType::TaskSubmit, "", std::nullopt, build_submit_config(a)};
    } catch (const Error& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kExitTaskError;
    }
  }

  std::shared_ptr<net::WsConnection> conn;
  try {
    conn = net::WsConnection::connect(net::join_url(a.server, "/ui"));
  } catch (const Error& e) {
    std::cerr << "error: server unreachable: " << e.what() << "\n";
    return kExitUnreachable;
  }
  conn->send(protocol::Envelope{request, {}});

  net::EnvelopeReader reader(*conn);
  std::string taskId;
  int comRounds = 0;
  std::set<int> seen;
  for (;;) {
    std::optional<protocol::Envelope> env;
    try {
      env = reader.next();
    } catch (const Error& e) {
      std::cerr << "warning: " << e.what() << "\n";
      continue;
    }
    if (!env) {
      std::cerr << "error: connection to the server was lost\n";
      return kExitConnectionLost;
    }
    const auto& m = env->message;
    if (a.jsonLines && (taskId.empty() || m.taskId == taskId || m.taskId.empty())) {
      std::cout << protocol::encode(m) << std::endl;
    }
    switch (m.type) {
      case protocol::MessageType::TaskAccepted: {
        if (!taskId.empty()) break;
        taskId = m.taskId;
        const auto& cfg = m.body.at("config");
        try {
          comRounds = config::parse_task_config(cfg).comRounds;
        } catch (const Error&) {
          comRounds = 0;
        }
        if (!a.quiet && !a.jsonLines) {
          std::cout << "task " << taskId;
          if (m.body.contains("mode")) std::cout << " (intent " << m.body.at("mode").get<std::string>() << ")";
          std::cout << "\nconfig " << cfg.dump() << std::endl;
        }
        break;
      }
      case protocol::MessageType::RoundResult:
        if (m.taskId != taskId || !m.round || !seen.insert(*m.round).second) break;
        if (!a.quiet && !a.jsonLines) print_round(m, comRounds);
        break;
      case protocol::MessageType::TaskComplete: {
        if (m.taskId != taskId) break;
        const auto& b = m.body;
        if (!a.jsonLines) {
          std::cout << "summary  rounds " << b.value("rounds", 0) << "  final accuracy "
                    << (b.at("testAccuracy").is_null() ? std::string("n/a") : fixed(b.at("testAccuracy").get<double>(), 4))
                    << "  bytes up " << b.value("bytesUp", 0) << "  bytes down " << b.value("bytesDown", 0)
                    << "  client CPU " << fixed(b.value("trainSeconds", 0.0), 3) << " s"
                    << "  wall " << fixed(b.value("elapsedSeconds", 0.0), 3) << " s" << std::endl;
        }
        conn->close();
        return 0;
      }
      case protocol::MessageType::Error:
        if (!m.taskId.empty() && m.taskId != taskId) break;
        std::cerr << "error: " << m.body.value("code", std::string("Error")) << ": "
                  << m.body.value("message", std::string()) << "\n";
        conn->close();
        return kExitTaskError;
      default:
        break;
    }
  }
}

// ----------------------------------------------------------------- intent

int cmd_intent(const std::string& text, bool quiet) {
  auto backend = intent::backend_from_env();
  try {
    const auto tr = intent::translate_intent(text, backend.get());
    if (!quiet) std::cerr << "mode: " << intent::to_string(tr.mode) << "\n";
    std::cout << config::to_ordered_json(tr.config).dump(2) << "\n";
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    if (!e.detail().empty() && e.code() == ErrorCode::InvalidLlmOutput) std::cerr << e.detail() << "\n";
    return kExitTaskError;
  }
}

// -------------------------------------------------------------------- nas

struct NasArgs {
  std::vector<std::string> dirs;
  nas::SearchConfig cfg;
  std::string out;
  bool trace = false;
};

int cmd_nas(NasArgs a) {
  try {
    a.cfg.validate();
    nas::LocalSearchTransport transport;
    for (std::size_t i = 0; i < a.dirs.size(); ++i) {
      transport.add_client("client-" + std::to_string(i + 1), io::load_dataset(a.dirs[i]));
    }
    const auto d = io::load_data_config(a.dirs.front());
    auto backend = intent::backend_from_env();
    std::unique_ptr<nas::SearchSpaceProvider> provider;
    if (backend) {
      provider = std::make_unique<nas::GatewayProvider>(*backend, a.cfg.seed);
    } else {
      provider = std::make_unique<nas::BuiltinProvider>(a.cfg.seed);
    }
    const auto result = nas::run_search(a.cfg, d, transport.roster(), *provider, transport);
    json j = nas::to_json(result);
    if (!a.trace) j.erase("rounds");
    write_output(j.dump(2), a.out);
    spdlog::info("best validation score {:.4f} with lr {:.3g}", result.perf, result.lr);
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitTaskError;
  }
}

// --------------------------------------------------------------- gen-data

int cmd_gen_data(const std::string& kind, std::size_t n, std::size_t clients, const std::string& out,
                 std::uint64_t seed) {
  try {
    const auto p = synthetic::generate(synthetic::parse_kind(kind), n, clients, out, seed);
    for (std::size_t i = 0; i < p.clients.size(); ++i) {
      std::cout << (fs::path(out) / ("client-" + std::to_string(i + 1))).string() << "  " << p.clients[i].rows()
                << " rows\n";
    }
    std::cout << (fs::path(out) / "server-test").string() << "  " << p.serverTest.rows() << " rows\n";
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitTaskError;
  }
}

// ---------------------------------------------------------------- metrics

int cmd_metrics(const std::string& dataDir, const std::string& taskId, bool follow) {
  try {
    server::MetricsLog log(dataDir);
    if (taskId.empty()) {
      for (const auto& id : log.task_ids()) std::cout << id << "\n";
      return 0;
    }
    if (!fs::exists(log.log_path(taskId))) throw Error(ErrorCode::IoFailure, taskId, "no such task");
    std::signal(SIGINT, on_signal);
    std::size_t printed = 0;
    std::uint64_t up = 0, down = 0;
    double train = 0.0;
    for (;;) {
      const auto rows = log.read(taskId);
      for (; printed < rows.size(); ++printed) {
        const auto& m = rows[printed];
        up += m.bytesUp;
        down += m.bytesDown;
        train += m.trainSeconds;
        std::cout << json(m).dump() << std::endl;
      }
      if (!follow || g_stop) break;
      std::this_thread::sleep_for(std::chrono::milliseconds(500));
    }
    std::cerr << printed << " rounds  bytes up " << up << "  bytes down " << down << "  client CPU "
              << fixed(train, 3) << " s\n";
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitTaskError;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fedforge: federated learning parameter server, edge client and tooling"};
  app.require_subcommand(1);
  std::string logLevel = "info";
  app.add_option("--log-level", logLevel, "trace, debug, info, warn, error or off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  // serve
  ServeArgs serve;
  auto* s = app.add_subcommand("serve", "Run the parameter server");
  s->add_option("--address", serve.opts.address, "Listen address")->capture_default_str();
  s->add_option("--port", serve.opts.port, "Listen port (0 picks one)")->capture_default_str();
  s->add_option("--data-dir", serve.opts.dataDir, "Where task metrics logs are kept")->capture_default_str();
  s->add_option("--test-dir", serve.opts.testDir, "Server test set (data.csv + dataconfig.json)")->required();
  s->add_option("--round-deadline", serve.roundDeadline, "Seconds to wait for client updates per round")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  s->add_option("--client-wait", serve.clientWait, "Seconds a task waits for its clients")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  s->add_option("--search-deadline", serve.searchDeadline, "Seconds per client exploration in a NAS round")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  s->add_option("--static-dir", serve.staticDir, "Dashboard assets served under /")->check(CLI::ExistingDirectory);
  s->add_option("--port-file", serve.portFile, "Write the bound port here");
  s->add_option("--seed", serve.opts.seed, "Seed for tasks that do not set one")->capture_default_str();

  // client
  net::ClientOptions client;
  client.serverUrl = default_server_url();
  double connectFor = 30.0;
  auto* c = app.add_subcommand("client", "Run an edge client");
  c->add_option("--server", client.serverUrl, "Server URL (env FEDFORGE_SERVER_URL)")->capture_default_str();
  c->add_option("--id", client.id, "Client id, stable across restarts")->required();
  c->add_option("--data-dir", client.dataDir, "Directory with data.csv and dataconfig.json")
      ->required()
      ->check(CLI::ExistingDirectory);
  c->add_option("--seed-base", client.seedBase, "Per-round seed is seed-base XOR round")->capture_default_str();
  c->add_option("--connect-timeout", connectFor, "Seconds to keep retrying the first connection")
      ->capture_default_str();

  // submit
  SubmitArgs sub;
  auto* u = app.add_subcommand("submit", "Submit a task and stream its results");
  auto* cfgOpt = u->add_option("config", sub.configPath, "Task config JSON (full key set)")
                     ->check(CLI::ExistingFile);
  auto* intentOpt = u->add_option("--intent", sub.intentText, "Natural-language task description");
  intentOpt->excludes(cfgOpt);
  u->add_option("--server", sub.server, "Server URL (env FEDFORGE_SERVER_URL)")->capture_default_str();
  u->add_option("--model", sub.modelPath, "Model spec JSON, or the output of `fedforge nas`")
      ->check(CLI::ExistingFile)
      ->excludes(intentOpt);
  u->add_flag("--nas", sub.nas, "Let the server search an architecture and lr first")->excludes(intentOpt);
  u->add_flag("--quiet", sub.quiet, "Only print the summary");
  u->add_flag("--json", sub.jsonLines, "Print raw protocol messages, one per line");
  std::vector<CLI::Option*> formOpts = {
      u->add_option("--algo", sub.algo, "Classification or Regression"),
      u->add_option("--minibatch", sub.minibatch, "Training minibatch size"),
      u->add_option("--epoch", sub.epoch, "Local epochs per round"),
      u->add_option("--lr", sub.lr, "Learning rate"),
      u->add_option("--scheduler", sub.scheduler, "full, random, round_robin or latency_proportional"),
      u->add_option("--client-fraction", sub.clientFraction, "Fraction of clients per round"),
      u->add_option("--minibatchtest", sub.minibatchtest, "Evaluation minibatch size"),
      u->add_option("--com-rounds", sub.comRounds, "Communication rounds"),
      u->add_option("--optimizer", sub.optimizer, "Adam, SGD, AdaGrad or RMSProp"),
      u->add_option("--loss", sub.loss, "CrossEntropyLoss or MSELoss"),
      u->add_option("--compress", sub.compress, "No, quantize, topk or randk"),
      u->add_option("--compress-param", sub.compressParam, "k for topk/randk, as a fraction"),
      u->add_option("--dataset", sub.dataset, "Dataset name"),
      u->add_option("--task-name", sub.taskName, "Task name"),
      u->add_option("--clients", sub.clients, "Client ids to use")->delimiter(','),
      u->add_option("--seed", sub.seed, "Task seed"),
  };
  for (auto* o : formOpts) o->excludes(intentOpt);

  // intent
  std::string intentText;
  bool intentQuiet = false;
  auto* i = app.add_subcommand("intent", "Translate an intent to a task config without submitting");
  i->add_option("text", intentText, "Intent text")->required();
  i->add_flag("--quiet", intentQuiet, "Do not report the translation mode");

  // nas
  NasArgs nasArgs;
  auto* n = app.add_subcommand("nas", "Search an architecture and learning rate over local datasets");
  n->add_option("--dataset-dir", nasArgs.dirs, "Client data directory (repeat for more clients)")
      ->required()
      ->check(CLI::ExistingDirectory);
  n->add_option("--rounds", nasArgs.cfg.searchRounds, "Search rounds X")->capture_default_str();
  n->add_option("--hpo-rounds", nasArgs.cfg.hpoRounds, "Local HPO rounds H")->capture_default_str();
  n->add_option("--epochs", nasArgs.cfg.epochs, "Epochs per evaluation E")->capture_default_str();
  n->add_option("--candidates", nasArgs.cfg.candidates, "Learning rates per HPO round Y")->capture_default_str();
  n->add_option("--batch", nasArgs.cfg.initialBatch, "Initial training batch B0")->capture_default_str();
  n->add_option("--client-fraction", nasArgs.cfg.clientFraction, "Clients per search round")
      ->capture_default_str();
  n->add_option("--seed", nasArgs.cfg.seed, "Search seed")->capture_default_str();
  n->add_option("--out", nasArgs.out, "Output file (default stdout)");
  n->add_flag("--trace", nasArgs.trace, "Include per-round results");

  // gen-data
  std::string kind = "blobs", outDir;
  std::size_t points = 600, parts = 3;
  std::uint64_t genSeed = 0;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic dataset split across clients");
  g->add_option("--kind", kind, "blobs or moons")->check(CLI::IsMember({"blobs", "moons"}))->capture_default_str();
  g->add_option("--n", points, "Total points")->capture_default_str()->check(CLI::PositiveNumber);
  g->add_option("--clients", parts, "Number of clients")->capture_default_str()->check(CLI::PositiveNumber);
  g->add_option("--out", outDir, "Output directory")->required();
  g->add_option("--seed", genSeed, "Generator seed")->capture_default_str();

  // metrics
  std::string metricsDir = "fedforge-data", metricsTask;
  bool follow = false;
  auto* mcmd = app.add_subcommand("metrics", "List tasks or print a task's round metrics");
  mcmd->add_option("--data-dir", metricsDir, "Server data directory")->capture_default_str();
  mcmd->add_option("task", metricsTask, "Task id (omit to list tasks)");
  mcmd->add_flag("--follow", follow, "Keep printing new rounds until interrupted");

  CLI11_PARSE(app, argc, argv);

  auto logger = spdlog::stderr_color_mt("fedforge");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::from_str(logLevel));

  try {
    if (*s) return cmd_serve(serve);
    if (*c) {
      client.connectFor = std::chrono::milliseconds(static_cast<long long>(connectFor * 1000));
      return cmd_client(client);
    }
    if (*u) {
      if (sub.configPath.empty() && sub.intentText.empty() && !sub.dataset) {
        std::cerr << "error: give a config file, --intent or at least --dataset\n";
        return kExitTaskError;
      }
      return cmd_submit(sub);
    }
    if (*i) return cmd_intent(intentText, intentQuiet);
    if (*n) return cmd_nas(nasArgs);
    if (*g) return cmd_gen_data(kind, points, parts, outDir, genSeed);
    if (*mcmd) return cmd_metrics(metricsDir, metricsTask, follow);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitTaskError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitTaskError;
  }
  return 0;
}
