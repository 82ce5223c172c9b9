#include <doctest.h>

#include <random>
#include <set>

#include "fedforge/scheduling.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace fedforge;
using namespace fedforge::sched;
using config::Scheduler;
using fixtures::error_code;
using Ids = std::vector<std::string>;

namespace {

ClientRoster abc() {
  ClientRoster r;
  for (const char* id : {"C", "A", "B"}) r.add_client(id);
  return r;
}

}  // namespace

TEST_CASE("participant_count") {
  CHECK(participant_count(0.7, 3) == 2);
  CHECK(participant_count(1.0, 3) == 3);
  CHECK(participant_count(0.1, 3) == 1);
  CHECK(participant_count(0.5, 10) == 5);
  CHECK(participant_count(0.999, 1) == 1);
}

TEST_CASE("roster keeps ids unique and sorted") {
  auto r = abc();
  r.add_client("B", "10.0.0.2");
  CHECK(r.ids() == Ids{"A", "B", "C"});
  CHECK(r.client("B").address == "10.0.0.2");
  CHECK(r.contains("A"));
  CHECK_FALSE(r.contains("Z"));
}

TEST_CASE("full selects everyone regardless of m") {
  auto r = abc();
  for (int m : {1, 2, 3}) CHECK(select_clients(r, Scheduler::Full, m, 1, 0) == Ids{"A", "B", "C"});
}

TEST_CASE("round robin walks the cursor") {
  auto r = abc();
  CHECK(select_clients(r, Scheduler::RoundRobin, 2, 1, 0) == Ids{"A", "B"});
  CHECK(select_clients(r, Scheduler::RoundRobin, 2, 2, 0) == Ids{"A", "C"});
  CHECK(select_clients(r, Scheduler::RoundRobin, 2, 3, 0) == Ids{"B", "C"});
  CHECK(r.rr_cursor() == 0);
}

TEST_CASE("round robin with m=1 covers every client in K rounds") {
  for (std::size_t k = 1; k <= 12; ++k) {
    ClientRoster r;
    for (std::size_t i = 0; i < k; ++i) r.add_client("c" + std::to_string(100 + i));
    std::multiset<std::string> seen;
    for (std::size_t t = 1; t <= k; ++t) {
      const auto s = select_clients(r, Scheduler::RoundRobin, 1, static_cast<int>(t), 0);
      REQUIRE(s.size() == 1);
      seen.insert(s[0]);
      CHECK(r.rr_cursor() < k);
    }
    CHECK(seen.size() == k);
    for (const auto& id : r.ids()) CHECK(seen.count(id) == 1);
  }
}

TEST_CASE("random selection is seeded and duplicate-free") {
  ClientRoster r;
  for (int i = 0; i < 10; ++i) r.add_client("c" + std::to_string(i));
  std::vector<int> hits(10, 0);
  for (int round = 1; round <= 2000; ++round) {
    const auto a = select_clients(r, Scheduler::Random, 4, round, 99);
    const auto b = select_clients(r, Scheduler::Random, 4, round, 99);
    CHECK(a == b);
    CHECK(std::set<std::string>(a.begin(), a.end()).size() == 4);
    CHECK(std::is_sorted(a.begin(), a.end()));
    for (const auto& id : a) ++hits[std::stoi(id.substr(1))];
  }
  for (int h : hits) CHECK(std::fabs(h / 2000.0 - 0.4) < 0.05);
  // round enters the stream
  bool differs = false;
  for (int round = 1; round <= 10; ++round) {
    differs = differs || select_clients(r, Scheduler::Random, 4, round, 99) != select_clients(r, Scheduler::Random, 4, round + 1, 99);
  }
  CHECK(differs);
}

TEST_CASE("latency window") {
  auto r = abc();
  CHECK(r.mean_latency("A") == 0.0);
  r.record_latency("A", 0.4);
  CHECK(r.mean_latency("A") == doctest::Approx(0.4));
  for (double v : {10.0, 1.0, 2.0, 3.0, 4.0, 5.0}) r.record_latency("B", v);
  CHECK(r.client("B").latencyHistory.size() == 5);
  CHECK(r.mean_latency("B") == doctest::Approx(3.0));
  CHECK(error_code([&] { r.record_latency("Z", 1.0); }) == ErrorCode::UnknownClient);
}

TEST_CASE("latency proportional picks the smallest means") {
  auto r = abc();
  r.record_latency("A", 0.1);
  r.record_latency("B", 0.5);
  r.record_latency("C", 0.2);
  CHECK(select_clients(r, Scheduler::LatencyProportional, 2, 1, 0) == Ids{"A", "C"});
  r.add_client("D");  // cold start ranks first
  CHECK(select_clients(r, Scheduler::LatencyProportional, 2, 2, 0) == Ids{"A", "D"});
}

TEST_CASE("latency proportional equals the brute-force oracle") {
  std::mt19937_64 rng(31337);
  std::uniform_real_distribution<double> lat(0.01, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 1 + rng() % 12;
    ClientRoster r;
    std::vector<std::pair<std::string, std::vector<double>>> hist;
    for (std::size_t i = 0; i < k; ++i) {
      const std::string id = "n" + std::to_string(rng() % 1000) + "-" + std::to_string(i);
      r.add_client(id);
      std::vector<double> h;
      const std::size_t len = rng() % 9;
      for (std::size_t j = 0; j < len; ++j) {
        // coarse values so that ties occur
        const double v = trial % 3 == 0 ? static_cast<double>(rng() % 3) : lat(rng);
        h.push_back(v);
        r.record_latency(id, v);
      }
      hist.emplace_back(id, h);
    }
    const std::size_t m = 1 + rng() % k;
    CAPTURE(trial);
    CHECK(select_clients(r, Scheduler::LatencyProportional, static_cast<int>(m), 1, 0) ==
          oracle::lowest_latency(hist, m, kLatencyWindow));
  }
}

TEST_CASE("empty roster") {
  ClientRoster r;
  for (auto p : {Scheduler::Full, Scheduler::Random, Scheduler::RoundRobin, Scheduler::LatencyProportional}) {
    CHECK(error_code([&] { select_clients(r, p, 1, 1, 0); }) == ErrorCode::EmptyRoster);
  }
}
