#include "fedforge/scheduling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "fedforge/error.hpp"
#include "fedforge/seed.hpp"

namespace fedforge::sched {

double RosterClient::mean_latency() const {
  if (latencyHistory.empty()) return 0.0;
  return std::accumulate(latencyHistory.begin(), latencyHistory.end(), 0.0) /
         static_cast<double>(latencyHistory.size());
}

void ClientRoster::add_client(std::string id, std::string address) {
  auto it = std::lower_bound(clients_.begin(), clients_.end(), id,
                             [](const RosterClient& c, const std::string& key) { return c.id < key; });
  if (it != clients_.end() && it->id == id) {
    it->address = std::move(address);
    return;
  }
  clients_.insert(it, RosterClient{std::move(id), std::move(address), {}});
  if (rrCursor_ >= clients_.size()) rrCursor_ = 0;
}

bool ClientRoster::contains(const std::string& id) const {
  return std::any_of(clients_.begin(), clients_.end(), [&](const RosterClient& c) { return c.id == id; });
}

std::vector<std::string> ClientRoster::ids() const {
  std::vector<std::string> out;
  out.reserve(clients_.size());
  for (const auto& c : clients_) out.push_back(c.id);
  return out;
}

const RosterClient& ClientRoster::client(const std::string& id) const {
  for (const auto& c : clients_) {
    if (c.id == id) return c;
  }
  throw Error(ErrorCode::UnknownClient, id);
}

void ClientRoster::record_latency(const std::string& id, double seconds) {
  for (auto& c : clients_) {
    if (c.id == id) {
      c.latencyHistory.push_back(seconds);
      while (c.latencyHistory.size() > window_) c.latencyHistory.pop_front();
      return;
    }
  }
  throw Error(ErrorCode::UnknownClient, id);
}

double ClientRoster::mean_latency(const std::string& id) const { return client(id).mean_latency(); }

void ClientRoster::advance_cursor(std::size_t by) {
  if (clients_.empty()) return;
  rrCursor_ = (rrCursor_ + by) % clients_.size();
}

int participant_count(double clientFraction, int totalClients) {
  const double raw = std::floor(clientFraction * totalClients + 1e-9);
  return std::max(static_cast<int>(raw), 1);
}

std::vector<std::string> select_clients(ClientRoster& roster, config::Scheduler policy, int m, int round,
                                        std::uint64_t seed) {
  if (roster.empty()) throw Error(ErrorCode::EmptyRoster, "roster");
  const auto& clients = roster.clients();
  const std::size_t k = clients.size();
  const std::size_t count = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(m, 1)), 1, k);
  std::vector<std::string> out;

  switch (policy) {
    case config::Scheduler::Full:
      out = roster.ids();
      break;
    case config::Scheduler::Random: {
      auto ids = roster.ids();
      std::mt19937_64 rng(mix_seed(seed + static_cast<std::uint64_t>(round)));
      std::shuffle(ids.begin(), ids.end(), rng);
      ids.resize(count);
      out = std::move(ids);
      break;
    }
    case config::Scheduler::RoundRobin: {
      for (std::size_t i = 0; i < count; ++i) out.push_back(clients[(roster.rr_cursor() + i) % k].id);
      roster.advance_cursor(count);
      break;
    }
    case config::Scheduler::LatencyProportional: {
      std::vector<std::pair<double, std::string>> ranked;
      ranked.reserve(k);
      for (const auto& c : clients) ranked.emplace_back(c.mean_latency(), c.id);
      std::sort(ranked.begin(), ranked.end());
      for (std::size_t i = 0; i < count; ++i) out.push_back(ranked[i].second);
      break;
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace fedforge::sched
