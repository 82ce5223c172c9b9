#include <doctest.h>

#include <csignal>
#include <fstream>
#include <random>
#include <sys/wait.h>
#include <unistd.h>

#include "fedforge/aggregate.hpp"
#include "fedforge/compression.hpp"
#include "fedforge/fedavg.hpp"
#include "fedforge/in_process.hpp"
#include "fedforge/metrics_log.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace fedforge;
using namespace fedforge::server;
using config::Compress;
using config::Scheduler;
using fixtures::error_code;

namespace {

config::TaskConfig blobs_config(int rounds, Compress compress = Compress::No) {
  auto cfg = config::apply_defaults(nlohmann::json{{"dataset", "blobs"}});
  cfg.model = fixtures::mlp_2_16_2();
  cfg.optimizer = config::Optimizer::Adam;
  cfg.lr = 1e-3;
  cfg.epoch = 1;
  cfg.minibatch = 16;
  cfg.comRounds = rounds;
  cfg.clientFraction = 1.0;
  cfg.scheduler = Scheduler::Random;
  cfg.compress = compress;
  cfg.seed = 2024;
  return cfg;
}

/// Three in-process clients over the desk-scale partition.
struct Federation {
  synthetic::Partition part = fixtures::blobs_600();
  std::vector<client::EdgeClient> clients;
  InProcessTransport transport;

  Federation() {
    for (std::size_t i = 0; i < part.clients.size(); ++i) {
      clients.emplace_back("client-" + std::to_string(i + 1), part.clients[i], 1000 + i);
    }
    for (auto& c : clients) transport.add_client(c);
  }
};

protocol::RoundMetrics sample_metrics(int round) {
  protocol::RoundMetrics m;
  m.round = round;
  m.testAccuracy = 0.5 + round * 1e-4;
  m.testLoss = 1.0 / (round + 1);
  m.bytesUp = 100 * static_cast<std::uint64_t>(round);
  m.bytesDown = 200;
  m.elapsedSeconds = 0.01;
  m.participants = {"a", "b"};
  return m;
}

}  // namespace

TEST_CASE("aggregate examples") {
  const std::vector<float> a{3.0F};
  const std::vector<float> b{0.0F};
  std::vector<WeightedUpdate> u{{a, 2}, {b, 1}};
  CHECK(aggregate(u) == std::vector<float>{2.0F});

  const std::vector<float> only{1.5F, -2.25F, 7.0F};
  std::vector<WeightedUpdate> single{{only, 42}};
  CHECK(aggregate(single) == only);

  CHECK(error_code([] { aggregate({}); }) == ErrorCode::EmptyUpdateSet);
  const std::vector<float> two{1.0F, 2.0F};
  std::vector<WeightedUpdate> bad{{a, 1}, {two, 1}};
  CHECK(error_code([&] { aggregate(bad); }) == ErrorCode::LengthMismatch);
  std::vector<WeightedUpdate> zero{{a, 0}};
  CHECK(error_code([&] { aggregate(zero); }) == ErrorCode::ValueOutOfRange);
}

TEST_CASE("aggregate equals the brute-force weighted mean") {
  std::mt19937_64 rng(123);
  std::normal_distribution<float> g(0.0F, 3.0F);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 1 + rng() % 8;
    const std::size_t d = 1 + rng() % 500;
    std::vector<std::vector<float>> w(k, std::vector<float>(d));
    std::vector<std::int64_t> n(k);
    std::vector<WeightedUpdate> u;
    for (std::size_t i = 0; i < k; ++i) {
      for (auto& v : w[i]) v = g(rng);
      n[i] = 1 + static_cast<std::int64_t>(rng() % 10000);
    }
    for (std::size_t i = 0; i < k; ++i) u.push_back({w[i], n[i]});
    const auto got = aggregate(u);
    const auto want = oracle::weighted_mean(w, n);
    double worst = 0.0;
    for (std::size_t i = 0; i < d; ++i) worst = std::max(worst, static_cast<double>(std::fabs(got[i] - want[i])));
    CHECK(worst <= 1e-6);
    const auto coef = aggregation_weights(u);
    long double sum = 0.0L;
    for (double c : coef) sum += c;
    CHECK(std::fabs(static_cast<double>(sum - 1.0L)) <= 1e-12);
  }
}

TEST_CASE("one FedAvg step with identical data equals centralized gradient descent") {
  const auto part = fixtures::blobs_600();
  const auto& data = part.clients[0];
  const auto spec = fixtures::mlp_2_16_2();
  const auto w0 = nn::build_model(spec, 5);

  auto cfg = blobs_config(1);
  cfg.optimizer = config::Optimizer::SGD;
  cfg.lr = 0.05;
  cfg.epoch = 1;
  cfg.minibatch = static_cast<int>(data.rows());

  std::vector<std::vector<float>> local;
  for (std::uint64_t s = 0; s < 3; ++s) local.push_back(nn::client_update(w0, data, cfg, s).values);
  std::vector<WeightedUpdate> u;
  for (const auto& l : local) u.push_back({l, static_cast<std::int64_t>(data.rows())});
  const auto fed = aggregate(u);

  nn::Dataset unionSet = data;
  for (int copy = 0; copy < 2; ++copy) {
    unionSet.features.insert(unionSet.features.end(), data.features.begin(), data.features.end());
    unionSet.labels.insert(unionSet.labels.end(), data.labels.begin(), data.labels.end());
  }
  unionSet.config.numDatapoints = static_cast<int>(unionSet.rows());
  nn::TrainSettings s = nn::TrainSettings::from(cfg);
  s.batchSize = static_cast<int>(unionSet.rows());
  const auto central = nn::train(w0, unionSet, s, 0);
  for (std::size_t i = 0; i < fed.size(); ++i) CHECK(fed[i] == doctest::Approx(central.values[i]).epsilon(1e-5));
}

TEST_CASE("compress=No, random, C=1 reproduces plain FedAvg bit for bit") {
  Federation f;
  const auto cfg = blobs_config(20);
  const auto result = run_task("recover", cfg, f.transport.roster(), f.part.serverTest, f.transport);

  std::vector<oracle::RefClient> refs;
  for (const auto& c : f.clients) refs.push_back({c.id(), c.dataset(), c.seed_base()});
  const auto ref = oracle::plain_fedavg(cfg, refs, f.part.serverTest);

  CHECK(result.finalWeights.values == ref.weights.values);
  REQUIRE(result.metrics.size() == ref.accuracy.size());
  for (std::size_t t = 0; t < ref.accuracy.size(); ++t) {
    CHECK(result.metrics[t].testAccuracy == ref.accuracy[t]);
    CHECK(result.metrics[t].participants.size() == 3);
  }
  CHECK(result.metrics.back().testAccuracy >= 0.95);
}

TEST_CASE("zero rounds return the initial model") {
  Federation f;
  auto cfg = blobs_config(1);
  cfg.comRounds = 0;
  const auto r = run_task("t0", cfg, f.transport.roster(), f.part.serverTest, f.transport);
  CHECK(r.metrics.empty());
  CHECK(r.finalWeights == nn::build_model(*cfg.model, *cfg.seed));
}

TEST_CASE("task preconditions") {
  Federation f;
  auto cfg = blobs_config(1);
  SUBCASE("model required") {
    cfg.model.reset();
    CHECK(error_code([&] { run_task("m", cfg, f.transport.roster(), f.part.serverTest, f.transport); }) ==
          ErrorCode::ModelUnavailable);
  }
  SUBCASE("clients required") {
    CHECK(error_code([&] { run_task("c", cfg, sched::ClientRoster{}, f.part.serverTest, f.transport); }) ==
          ErrorCode::NoClientsAvailable);
  }
}

TEST_CASE("silent clients are dropped from aggregation") {
  Federation f;
  auto cfg = blobs_config(3);
  f.transport.set_offline({"client-2"});
  const auto r = run_task("off", cfg, f.transport.roster(), f.part.serverTest, f.transport);
  for (const auto& m : r.metrics) CHECK(m.participants == std::vector<std::string>{"client-1", "client-3"});

  f.transport.set_offline({"client-1", "client-2", "client-3"});
  FedAvgTask task("dead", cfg, f.transport.roster(), f.part.serverTest, f.transport, {});
  CHECK(error_code([&] { task.run(); }) == ErrorCode::AllClientsTimedOut);
  CHECK(task.state().status == TaskStatus::Failed);
  CHECK(task.state().round == 0);
}

TEST_CASE("C=0.7 over three clients trains two per round") {
  Federation f;
  auto cfg = blobs_config(6);
  cfg.clientFraction = 0.7;
  const auto r = run_task("c07", cfg, f.transport.roster(), f.part.serverTest, f.transport);
  for (const auto& m : r.metrics) CHECK(m.participants.size() == 2);
}

TEST_CASE("byte accounting and compression") {
  Federation f;
  const auto dense = run_task("dense", blobs_config(5), f.transport.roster(), f.part.serverTest, f.transport);
  const auto quant = run_task("quant", blobs_config(5, Compress::Quantize), f.transport.roster(),
                              f.part.serverTest, f.transport);
  auto topk = blobs_config(5, Compress::TopK);
  topk.compressParam = 0.1;
  const auto sparse = run_task("topk", topk, f.transport.roster(), f.part.serverTest, f.transport);

  const std::uint64_t d = fixtures::mlp_2_16_2().parameter_count();
  std::uint64_t up[3] = {0, 0, 0};
  for (const auto& m : dense.metrics) {
    CHECK(m.bytesUp == 3 * (5 + 4 * d));
    CHECK(m.bytesDown == 3 * (5 + 4 * d));
    up[0] += m.bytesUp;
  }
  for (const auto& m : quant.metrics) {
    CHECK(m.bytesUp == 3 * (13 + d));
    up[1] += m.bytesUp;
  }
  for (const auto& m : sparse.metrics) {
    CHECK(m.bytesUp == 3 * (17 + 8 * compression::retained_count(0.1, d)));
    up[2] += m.bytesUp;
  }
  CHECK(static_cast<double>(up[1]) < 0.30 * static_cast<double>(up[0]));
  CHECK(up[2] < up[0]);
}

TEST_CASE("metrics stream is monotone and persisted") {
  Federation f;
  fixtures::TempDir dir;
  MetricsLog log(dir.path());
  std::vector<int> seen;
  RunOptions opts;
  opts.log = &log;
  opts.onRound = [&](const protocol::RoundMetrics& m) { seen.push_back(m.round); };
  const auto r = run_task("persist", blobs_config(4), f.transport.roster(), f.part.serverTest, f.transport, opts);
  CHECK(seen == std::vector<int>{1, 2, 3, 4});
  CHECK(log.read("persist") == r.metrics);
  CHECK(log.task_ids() == std::vector<std::string>{"persist"});
  std::ifstream cfg(dir.path() / "tasks" / "persist.config.json");
  std::string line;
  std::getline(cfg, line);
  CHECK(config::parse_task_config(line) == blobs_config(4));
}

TEST_CASE("metrics log") {
  fixtures::TempDir dir;
  SUBCASE("write then read back") {
    MetricsLog log(dir.path());
    log.persist_round("a", sample_metrics(1));
    CHECK(log.read("a") == std::vector<protocol::RoundMetrics>{sample_metrics(1)});
  }
  SUBCASE("1000 rounds keep their order") {
    MetricsLog log(dir.path());
    for (int i = 1; i <= 1000; ++i) log.persist_round("long", sample_metrics(i));
    const auto back = MetricsLog(dir.path()).read("long");
    REQUIRE(back.size() == 1000);
    for (int i = 0; i < 1000; ++i) CHECK(back[static_cast<std::size_t>(i)].round == i + 1);
  }
  SUBCASE("torn trailing record is ignored, then trimmed") {
    MetricsLog log(dir.path());
    log.persist_round("torn", sample_metrics(1));
    log.persist_round("torn", sample_metrics(2));
    {
      std::ofstream out(log.log_path("torn"), std::ios::app | std::ios::binary);
      out << R"({"round":3,"testAcc)";
    }
    CHECK(log.read("torn").size() == 2);
    log.persist_round("torn", sample_metrics(3));
    const auto back = log.read("torn");
    REQUIRE(back.size() == 3);
    CHECK(back.back() == sample_metrics(3));
  }
  SUBCASE("bad task ids") {
    MetricsLog log(dir.path());
    CHECK(error_code([&] { log.persist_round("../x", sample_metrics(1)); }) == ErrorCode::StorageFailure);
    CHECK(error_code([&] { log.read("missing"); }) == ErrorCode::StorageFailure);
  }
}

TEST_CASE("metrics log survives kill and reopen") {
  fixtures::TempDir dir;
  int pipefd[2];
  REQUIRE(::pipe(pipefd) == 0);
  const pid_t pid = ::fork();
  REQUIRE(pid >= 0);
  if (pid == 0) {
    ::close(pipefd[0]);
    MetricsLog log(dir.path());
    for (int i = 1;; ++i) {
      log.persist_round("crash", sample_metrics(i));
      if (i == 50) {
        const char go = 'x';
        (void)!::write(pipefd[1], &go, 1);
      }
    }
  }
  ::close(pipefd[1]);
  char buf = 0;
  REQUIRE(::read(pipefd[0], &buf, 1) == 1);
  ::usleep(20'000);
  ::kill(pid, SIGKILL);
  int status = 0;
  ::waitpid(pid, &status, 0);
  ::close(pipefd[0]);
  CHECK(WIFSIGNALED(status));

  MetricsLog reopened(dir.path());
  const auto back = reopened.read("crash");
  REQUIRE(back.size() >= 50);
  for (std::size_t i = 0; i < back.size(); ++i) CHECK(back[i] == sample_metrics(static_cast<int>(i) + 1));
  const int next = static_cast<int>(back.size()) + 1;
  reopened.persist_round("crash", sample_metrics(next));
  const auto after = reopened.read("crash");
  REQUIRE(after.size() == back.size() + 1);
  CHECK(after.back() == sample_metrics(next));
}

TEST_CASE("task ids") {
  const auto a = make_task_id("my task/../x", 1);
  CHECK(a.rfind("mytaskx-", 0) == 0);
  CHECK(a.size() == std::string("mytaskx-").size() + 8);
  CHECK(make_task_id("", 2).rfind("task-", 0) == 0);
  CHECK(make_task_id("t", 1) != make_task_id("t", 2));
}
