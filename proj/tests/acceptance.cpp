// Acceptance suite: one PASS/FAIL line per primary criterion. Exit status is
// the number of failed criteria.

#include <chrono>
#include <csignal>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>
#include <sys/wait.h>
#include <unistd.h>

#include "fedforge/aggregate.hpp"
#include "fedforge/compression.hpp"
#include "fedforge/dataset_io.hpp"
#include "fedforge/edge_client.hpp"
#include "fedforge/fedavg.hpp"
#include "fedforge/in_process.hpp"
#include "fedforge/intent.hpp"
#include "fedforge/metrics_log.hpp"
#include "fedforge/nas.hpp"
#include "fedforge/protocol.hpp"
#include "fedforge/scheduling.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"
#include "support/process.hpp"

using namespace fedforge;
using nlohmann::json;
using namespace std::chrono_literals;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

/// Collects failed sub-checks and a short summary.
class Checks {
 public:
  void require(bool ok, const std::string& what) {
    if (!ok && failures_.size() < 5) failures_.push_back(what);
    failed_ = failed_ || !ok;
  }
  void note(const std::string& s) { notes_ += (notes_.empty() ? "" : "; ") + s; }
  Outcome outcome() const {
    std::string d = notes_;
    for (const auto& f : failures_) d += (d.empty() ? "" : "; ") + std::string("failed: ") + f;
    return {!failed_, d};
  }

 private:
  bool failed_ = false;
  std::vector<std::string> failures_;
  std::string notes_;
};

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

// ------------------------------------------------------------------ codec

Outcome codec_properties() {
  using namespace compression;
  Checks c;
  std::mt19937_64 rng(1000);
  std::normal_distribution<float> g(0.0F, 1.0F);
  std::uniform_real_distribution<float> scale(0.01F, 100.0F);
  std::uniform_real_distribution<double> frac(0.001, 1.0);
  const std::size_t dims[] = {10, 1000, 100000};
  int quantOk = 0;
  int topOk = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t d = dims[i % 3];
    const float s = scale(rng);
    const float shift = g(rng) * s;
    std::vector<float> x(d);
    float mag = 0.0F;
    for (auto& v : x) {
      v = g(rng) * s + shift;
      mag = std::max(mag, std::fabs(v));
    }
    const auto q = quantize(x);
    const auto back = dequantize(q);
    double worst = 0.0;
    for (std::size_t j = 0; j < d; ++j) worst = std::max(worst, std::fabs(static_cast<double>(back[j]) - x[j]));
    // half a step plus float32 rounding of the reconstruction
    const bool qOk = worst <= q.scale / 2.0 + 2.0 * mag * std::numeric_limits<float>::epsilon();
    quantOk += qOk;

    const double k = frac(rng);
    const auto m = oracle::retained(k, d);
    const bool tOk = top_k(x, k).indices == oracle::top_k_indices(x, m);
    topOk += tOk;
  }
  c.require(quantOk == 1000, "quantize bound held for " + std::to_string(quantOk) + "/1000");
  c.require(topOk == 1000, "top_k matched the sort oracle for " + std::to_string(topOk) + "/1000");

  std::vector<float> x(10, 1.0F);
  std::vector<int> hits(10, 0);
  for (std::uint64_t t = 0; t < 10000; ++t) {
    for (auto idx : rand_k(x, 0.3, t).indices) ++hits[idx];
  }
  double worstDev = 0.0;
  for (int h : hits) worstDev = std::max(worstDev, std::fabs(h / 10000.0 - 0.3));
  c.require(worstDev <= 0.02, "rand_k deviation " + fixed(worstDev));
  c.note("quantize " + std::to_string(quantOk) + "/1000, top_k " + std::to_string(topOk) +
         "/1000, rand_k max deviation " + fixed(worstDev));
  return c.outcome();
}

// ------------------------------------------------------------ aggregation

Outcome aggregation_oracle() {
  Checks c;
  std::mt19937_64 rng(7);
  std::normal_distribution<float> g(0.0F, 3.0F);
  double worstErr = 0.0;
  double worstSum = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 1 + rng() % 8;
    const std::size_t d = 1 + rng() % 1000;
    std::vector<std::vector<float>> w(k, std::vector<float>(d));
    std::vector<std::int64_t> n(k);
    std::vector<server::WeightedUpdate> u;
    for (std::size_t i = 0; i < k; ++i) {
      for (auto& v : w[i]) v = g(rng);
      n[i] = 1 + static_cast<std::int64_t>(rng() % 10000);
    }
    for (std::size_t i = 0; i < k; ++i) u.push_back({w[i], n[i]});
    const auto got = server::aggregate(u);
    const auto want = oracle::weighted_mean(w, n);
    for (std::size_t i = 0; i < d; ++i) worstErr = std::max(worstErr, static_cast<double>(std::fabs(got[i] - want[i])));
    long double sum = 0.0L;
    for (double coef : server::aggregation_weights(u)) sum += coef;
    worstSum = std::max(worstSum, static_cast<double>(std::fabs(sum - 1.0L)));
  }
  c.require(worstErr <= 1e-6, "max error " + std::to_string(worstErr));
  c.require(worstSum <= 1e-12, "weight sum off by " + std::to_string(worstSum));
  std::ostringstream s;
  s << "100 sets, max |err| " << worstErr << ", max |sum-1| " << worstSum;
  c.note(s.str());
  return c.outcome();
}

// ---------------------------------------------------------------- FedAvg

config::TaskConfig blobs_task(int rounds, config::Compress compress, double fraction) {
  auto cfg = config::apply_defaults(json{{"dataset", "blobs"}, {"clientFraction", fraction}});
  cfg.model = nn::make_mlp({1, 2}, {16}, 2);
  cfg.optimizer = config::Optimizer::Adam;
  cfg.lr = 1e-3;
  cfg.epoch = 1;
  cfg.comRounds = rounds;
  cfg.scheduler = config::Scheduler::Random;
  cfg.compress = compress;
  cfg.seed = 2024;
  return cfg;
}

Outcome fedavg_recovery() {
  Checks c;
  const auto part = fixtures::blobs_600();
  std::vector<client::EdgeClient> clients;
  for (std::size_t i = 0; i < part.clients.size(); ++i) {
    clients.emplace_back("client-" + std::to_string(i + 1), part.clients[i], 500 + i);
  }
  server::InProcessTransport transport;
  for (auto& cl : clients) transport.add_client(cl);
  const auto cfg = blobs_task(20, config::Compress::No, 1.0);
  const auto r = server::run_task("recover", cfg, transport.roster(), part.serverTest, transport);

  std::vector<oracle::RefClient> refs;
  for (const auto& cl : clients) refs.push_back({cl.id(), cl.dataset(), cl.seed_base()});
  const auto ref = oracle::plain_fedavg(cfg, refs, part.serverTest);
  c.require(r.finalWeights.values == ref.weights.values, "final weights differ from plain FedAvg");
  std::size_t differing = 0;
  for (std::size_t i = 0; i < ref.weights.values.size(); ++i) {
    differing += std::memcmp(&ref.weights.values[i], &r.finalWeights.values[i], sizeof(float)) != 0;
  }
  c.note("20 rounds, " + std::to_string(differing) + "/" + std::to_string(ref.weights.values.size()) +
         " weights differ bitwise, final accuracy " + fixed(r.metrics.back().testAccuracy));
  return c.outcome();
}

// ------------------------------------------------------- desk-scale runs

/// serve + three client processes on localhost, driven by `fedforge submit`.
class DeskCluster {
 public:
  DeskCluster() {
    cli({"gen-data", "--n", "600", "--clients", "3", "--seed", "7", "--out", (dir_ / "data").string()});
    server_ = proc::Process({kCli, "--log-level", "warn", "serve", "--address", "127.0.0.1", "--port", "0",
                             "--test-dir", (dir_ / "data" / "server-test").string(), "--data-dir",
                             (dir_ / "state").string(), "--port-file", (dir_ / "port").string()},
                            dir_ / "server.log");
    if (!proc::wait_for_file(dir_ / "port", 20s)) throw std::runtime_error("server did not start");
    url_ = "ws://127.0.0.1:" + std::to_string(std::stoi(proc::read_file(dir_ / "port")));
    for (int i = 1; i <= 3; ++i) {
      const std::string id = "client-" + std::to_string(i);
      clients_.emplace_back(std::vector<std::string>{kCli, "--log-level", "warn", "client", "--id", id, "--data-dir",
                                                     (dir_ / "data" / id).string(), "--server", url_, "--seed-base",
                                                     std::to_string(100 + i)},
                            dir_ / (id + ".log"));
    }
    std::ofstream(dir_ / "model.json") << json(nn::make_mlp({1, 2}, {16}, 2)).dump();
  }
  ~DeskCluster() {
    server_.terminate();
    for (auto& c : clients_) c.terminate();
  }

  struct Run {
    double accuracy = 0.0;
    std::uint64_t bytesUp = 0;
    std::set<std::size_t> participantsPerRound;
    int rounds = 0;
    double seconds = 0.0;
  };

  Run submit(const std::string& compress) {
    const auto start = std::chrono::steady_clock::now();
    const auto [code, out] =
        cli({"submit", "--json", "--server", url_, "--dataset", "blobs", "--model", (dir_ / "model.json").string(),
             "--optimizer", "Adam", "--lr", "0.001", "--epoch", "1", "--client-fraction", "0.7", "--com-rounds", "20",
             "--compress", compress, "--seed", "11"},
            180s);
    if (code != 0) throw std::runtime_error("submit exited with " + std::to_string(code) + ": " + out);
    Run r;
    std::istringstream lines(out);
    std::string line;
    while (std::getline(lines, line)) {
      if (line.empty() || line.front() != '{') continue;
      const auto m = protocol::decode(line);
      if (m.type == protocol::MessageType::RoundResult) {
        r.participantsPerRound.insert(m.body.at("participants").size());
        ++r.rounds;
      } else if (m.type == protocol::MessageType::TaskComplete) {
        r.accuracy = m.body.at("testAccuracy").get<double>();
        r.bytesUp = m.body.at("bytesUp").get<std::uint64_t>();
      }
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
  }

  nn::Dataset union_of_clients() const {
    nn::Dataset u;
    for (int i = 1; i <= 3; ++i) {
      const auto d = io::load_dataset(dir_ / "data" / ("client-" + std::to_string(i)));
      if (i == 1) {
        u = d;
        continue;
      }
      u.features.insert(u.features.end(), d.features.begin(), d.features.end());
      u.labels.insert(u.labels.end(), d.labels.begin(), d.labels.end());
    }
    u.config.numDatapoints = static_cast<int>(u.rows());
    return u;
  }
  nn::Dataset test_set() const { return io::load_dataset(dir_ / "data" / "server-test"); }

 private:
  static inline const std::string kCli = FEDFORGE_CLI;

  std::pair<int, std::string> cli(std::vector<std::string> args, std::chrono::milliseconds timeout = 60s) {
    args.insert(args.begin(), kCli);
    return proc::run(args, dir_ / "cli.txt", timeout);
  }

  fixtures::TempDir dir_;
  proc::Process server_;
  std::vector<proc::Process> clients_;
  std::string url_;
};

struct DeskResults {
  DeskCluster::Run dense;
  DeskCluster::Run quant;
  double centralized = 0.0;
  std::string error;
};

DeskResults& desk() {
  static DeskResults r = [] {
    DeskResults out;
    try {
      DeskCluster cluster;
      out.dense = cluster.submit("No");
      out.quant = cluster.submit("quantize");
      out.centralized = oracle::centralized_accuracy(nn::make_mlp({1, 2}, {16}, 2), cluster.union_of_clients(),
                                                     cluster.test_set(), 20, 1e-3, 2024);
    } catch (const std::exception& e) {
      out.error = e.what();
    }
    return out;
  }();
  return r;
}

Outcome end_to_end() {
  Checks c;
  const auto& r = desk();
  if (!r.error.empty()) return {false, r.error};
  c.require(r.dense.rounds == 20, std::to_string(r.dense.rounds) + " rounds reported");
  c.require(r.dense.participantsPerRound == std::set<std::size_t>{2}, "rounds did not all train 2 clients");
  c.require(r.dense.accuracy >= 0.95, "final accuracy " + fixed(r.dense.accuracy));
  c.require(r.centralized >= 0.97, "centralized oracle " + fixed(r.centralized));
  c.require(r.dense.seconds < 120.0, "took " + fixed(r.dense.seconds, 1) + " s");
  c.note("final accuracy " + fixed(r.dense.accuracy) + ", centralized " + fixed(r.centralized) + ", 2 clients/round, " +
         fixed(r.dense.seconds, 1) + " s");
  return c.outcome();
}

Outcome compression_saving() {
  Checks c;
  const auto& r = desk();
  if (!r.error.empty()) return {false, r.error};
  const double gap = r.dense.accuracy - r.quant.accuracy;
  const double ratio = static_cast<double>(r.quant.bytesUp) / static_cast<double>(r.dense.bytesUp);
  c.require(gap <= 0.03, "accuracy gap " + fixed(gap));
  c.require(ratio <= 0.27, "upload ratio " + fixed(ratio) + " > 0.27 (d=82: (13+d)/(5+4d) = 95/333)");
  c.note("quantize accuracy " + fixed(r.quant.accuracy) + " vs dense " + fixed(r.dense.accuracy) + ", bytes up " +
         std::to_string(r.quant.bytesUp) + "/" + std::to_string(r.dense.bytesUp) + " = " + fixed(ratio));
  return c.outcome();
}

// ------------------------------------------------------------- scheduler

Outcome scheduler_suite() {
  Checks c;
  for (std::size_t k = 1; k <= 12; ++k) {
    sched::ClientRoster r;
    for (std::size_t i = 0; i < k; ++i) r.add_client("c" + std::to_string(100 + i));
    std::set<std::string> seen;
    for (std::size_t t = 1; t <= k; ++t) {
      for (const auto& id : sched::select_clients(r, config::Scheduler::RoundRobin, 1, static_cast<int>(t), 0)) {
        seen.insert(id);
      }
    }
    c.require(seen.size() == k, "round robin missed clients for K=" + std::to_string(k));
  }
  std::mt19937_64 rng(4242);
  std::uniform_real_distribution<double> lat(0.01, 3.0);
  int agree = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 1 + rng() % 12;
    sched::ClientRoster r;
    std::vector<std::pair<std::string, std::vector<double>>> hist;
    for (std::size_t i = 0; i < k; ++i) {
      const std::string id = "n" + std::to_string(rng() % 1000) + "-" + std::to_string(i);
      r.add_client(id);
      std::vector<double> h;
      for (std::size_t j = rng() % 9; j > 0; --j) {
        const double v = trial % 3 == 0 ? static_cast<double>(rng() % 3) : lat(rng);
        h.push_back(v);
        r.record_latency(id, v);
      }
      hist.emplace_back(id, h);
    }
    const std::size_t m = 1 + rng() % k;
    agree += sched::select_clients(r, config::Scheduler::LatencyProportional, static_cast<int>(m), 1, 0) ==
             oracle::lowest_latency(hist, m, sched::kLatencyWindow);
  }
  c.require(agree == 100, "latency oracle agreed on " + std::to_string(agree) + "/100");
  const int p = sched::participant_count(0.7, 3);
  c.require(p == 2, "participant_count(0.7, 3) = " + std::to_string(p));
  c.note("round robin covers K=1..12, latency " + std::to_string(agree) + "/100, participant_count(0.7,3)=" +
         std::to_string(p));
  return c.outcome();
}

// ---------------------------------------------------------------- intent

Outcome intent_corpus() {
  Checks c;
  std::ifstream in(std::string(FEDFORGE_TEST_DATA) + "/intent_corpus.json");
  const json corpus = json::parse(in);
  int exact = 0;
  for (const auto& item : corpus) {
    try {
      const auto got = intent::translate_intent(item["prompt"].get<std::string>());
      const bool ok = got.config == config::parse_task_config(item["expected"]);
      exact += ok;
      c.require(ok, item["prompt"].get<std::string>());
    } catch (const Error& e) {
      c.require(false, item["prompt"].get<std::string>() + ": " + e.what());
    }
  }
  c.require(corpus.size() == 40, "corpus has " + std::to_string(corpus.size()) + " prompts");
  c.note(std::to_string(exact) + "/" + std::to_string(corpus.size()) + " exact TaskConfig matches");
  return c.outcome();
}

// ------------------------------------------------------------------- NAS

Outcome nas_traces() {
  Checks c;
  const auto split = nas::split_validation(synthetic::make_blobs(1875, 3), 0.2, 11);
  const auto r = nas::perform_hpo(nn::make_mlp({2}, {8}, 2), nas::create_hpo_space(20, 1), {1, 250, 32}, split, 77);
  std::vector<std::size_t> sizes;
  std::vector<std::size_t> batches;
  double best = -1.0;
  for (const auto& it : r.trace) {
    sizes.push_back(it.lrs.size());
    batches.push_back(it.batch);
    for (double p : it.perfs) best = std::max(best, p);
  }
  c.require(sizes == std::vector<std::size_t>{20, 10, 5, 3, 2, 1}, "halving sizes");
  c.require(batches == std::vector<std::size_t>{250, 500, 1000, 1500, 1500, 1500}, "batch sequence");
  c.require(r.bestPerf == best, "bestPerf is not the max evaluation");

  // Full search against the fallback model at the default lr.
  const auto part = fixtures::blobs_600();
  nas::SearchConfig cfg;
  cfg.searchRounds = 2;
  cfg.hpoRounds = 1;
  cfg.seed = 1;
  nas::LocalSearchTransport transport;
  for (std::size_t i = 0; i < part.clients.size(); ++i) {
    transport.add_client("client-" + std::to_string(i + 1), part.clients[i]);
  }
  nas::BuiltinProvider provider(cfg.seed);
  const auto found = nas::run_search(cfg, part.clients[0].config, transport.roster(), provider, transport);
  nn::TrainSettings s;
  s.epochs = cfg.epochs;
  s.lr = found.lr;
  const double searched = nas::score(nn::train(nn::build_model(found.model, 9), part.clients[0], s, 9), part.serverTest);
  s.lr = 1e-4;
  const auto fallback = intent::fallback_model(part.clients[0].config);
  const double baseline = nas::score(nn::train(nn::build_model(fallback, 9), part.clients[0], s, 9), part.serverTest);
  c.require(searched >= baseline - 0.02, "searched " + fixed(searched) + " < baseline " + fixed(baseline));
  c.note("sizes 20,10,5,3,2,1; batches 250,500,1000,1500; search " + fixed(searched) + " vs baseline " + fixed(baseline));
  return c.outcome();
}

// -------------------------------------------------------------- protocol

Outcome protocol_robustness() {
  using namespace protocol;
  Checks c;
  std::mt19937_64 rng(99);
  const std::vector<std::string> seeds = {
      R"({"type":"WeightsHeader","taskId":"t","round":1,"body":{"length":4}})",
      R"({"type":"RoundResult","taskId":"t","round":1,"body":{"round":1,"testAccuracy":0.5}})",
      R"({"type":"Error","taskId":"t","body":{"code":"X","message":"y"}})",
  };
  FrameAssembler a;
  int untyped = 0;
  for (int i = 0; i < 10000; ++i) {
    Frame f;
    const auto choice = rng() % 3;
    if (choice == 0) {
      f = Frame::binary(std::string(rng() % 32, '\0'));
      for (auto& ch : f.data) ch = static_cast<char>(rng());
    } else if (choice == 1) {
      f.data.resize(rng() % 100);
      for (auto& ch : f.data) ch = static_cast<char>(rng());
    } else {
      f.data = seeds[rng() % seeds.size()];
      for (int k = static_cast<int>(rng() % 5); k > 0; --k) f.data[rng() % f.data.size()] = static_cast<char>(32 + rng() % 95);
    }
    try {
      a.push(f);
    } catch (const Error& e) {
      untyped += !(e.code() == ErrorCode::MalformedFrame || e.code() == ErrorCode::UnknownType ||
                   e.code() == ErrorCode::LengthMismatch);
    } catch (...) {
      ++untyped;
    }
  }
  c.require(untyped == 0, std::to_string(untyped) + " fuzz frames raised untyped errors");

  const MessageType types[] = {MessageType::TaskSubmit,   MessageType::TaskAccepted,      MessageType::TrainRequest,
                               MessageType::WeightsHeader, MessageType::LocalUpdateHeader, MessageType::RoundResult,
                               MessageType::TaskComplete, MessageType::DataConfigRequest};
  int corrupted = 0;
  int rejected = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    StageMachine s;
    for (int step = 0; step < 30; ++step) {
      const auto before = s.stage();
      const int round = s.round();
      if (!s.accept(types[rng() % std::size(types)], static_cast<int>(rng() % 5))) {
        ++rejected;
        corrupted += s.stage() != before || s.round() != round;
      }
    }
  }
  c.require(corrupted == 0, std::to_string(corrupted) + " rejections changed state");

  // Kill a writer mid-stream and reopen.
  fixtures::TempDir dir;
  int pipefd[2];
  if (::pipe(pipefd) != 0) return {false, "pipe failed"};
  auto record = [](int i) {
    RoundMetrics m;
    m.round = i;
    m.testAccuracy = 0.5;
    m.participants = {"a"};
    return m;
  };
  const pid_t pid = ::fork();
  if (pid == 0) {
    ::close(pipefd[0]);
    server::MetricsLog log(dir.path());
    for (int i = 1;; ++i) {
      log.persist_round("crash", record(i));
      if (i == 50) {
        const char go = 'x';
        (void)!::write(pipefd[1], &go, 1);
      }
    }
  }
  ::close(pipefd[1]);
  char buf = 0;
  (void)!::read(pipefd[0], &buf, 1);
  ::usleep(20'000);
  ::kill(pid, SIGKILL);
  ::waitpid(pid, nullptr, 0);
  ::close(pipefd[0]);
  server::MetricsLog reopened(dir.path());
  const auto back = reopened.read("crash");
  bool intact = back.size() >= 50;
  for (std::size_t i = 0; i < back.size(); ++i) intact = intact && back[i] == record(static_cast<int>(i) + 1);
  reopened.persist_round("crash", record(static_cast<int>(back.size()) + 1));
  intact = intact && reopened.read("crash").size() == back.size() + 1;
  c.require(intact, "metrics log lost or garbled records after SIGKILL");
  c.note("10000 fuzz frames, " + std::to_string(rejected) + " out-of-order messages rejected cleanly, " +
         std::to_string(back.size()) + " records survived SIGKILL");
  return c.outcome();
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  ::unsetenv(intent::kLlmUrlEnv);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"codec properties", codec_properties},
      {"aggregation oracle", aggregation_oracle},
      {"FedAvg recovery", fedavg_recovery},
      {"end-to-end desk-scale run", end_to_end},
      {"compression saving", compression_saving},
      {"scheduler suite", scheduler_suite},
      {"intent corpus", intent_corpus},
      {"NAS/HPO traces", nas_traces},
      {"protocol robustness", protocol_robustness},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failed += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << " (" << fixed(secs, 1) << " s): " << o.detail << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failed;
}
