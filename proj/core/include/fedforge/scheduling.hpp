#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "fedforge/config.hpp"

namespace fedforge::sched {

inline constexpr std::size_t kLatencyWindow = 5;

struct RosterClient {
  std::string id;
  std::string address;
  std::deque<double> latencyHistory;  // seconds, newest at the back

  double mean_latency() const;
};

/// Registered clients in id order plus the round-robin cursor.
class ClientRoster {
 public:
  explicit ClientRoster(std::size_t window = kLatencyWindow) : window_(window) {}

  /// Adds or updates a client; ids stay unique and sorted.
  void add_client(std::string id, std::string address = {});
  bool contains(const std::string& id) const;
  std::size_t size() const { return clients_.size(); }
  bool empty() const { return clients_.empty(); }
  std::vector<std::string> ids() const;
  const std::vector<RosterClient>& clients() const { return clients_; }
  const RosterClient& client(const std::string& id) const;

  /// Appends a round latency, evicting beyond the window. Throws UnknownClient.
  void record_latency(const std::string& id, double seconds);
  /// Mean over the window; 0 for clients without samples.
  double mean_latency(const std::string& id) const;

  std::size_t rr_cursor() const { return rrCursor_; }
  void advance_cursor(std::size_t by);
  std::size_t window() const { return window_; }

 private:
  std::vector<RosterClient> clients_;
  std::size_t rrCursor_ = 0;
  std::size_t window_;
};

/// m = max(floor(C*K), 1).
int participant_count(double clientFraction, int totalClients);

/// Chooses participants for one round. Returned ids are sorted.
///   full                 -> every client, m ignored
///   random               -> m distinct clients drawn from (seed, round)
///   round_robin          -> m consecutive clients from the cursor, which advances by m
///   latency_proportional -> m smallest mean latencies, empty history first, ties by id
/// Throws EmptyRoster.
std::vector<std::string> select_clients(ClientRoster& roster, config::Scheduler policy, int m, int round,
                                        std::uint64_t seed);

}  // namespace fedforge::sched
