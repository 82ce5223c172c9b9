#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fedforge/aggregate.hpp"
#include "fedforge/config.hpp"
#include "fedforge/metrics_log.hpp"
#include "fedforge/nn.hpp"
#include "fedforge/protocol.hpp"
#include "fedforge/scheduling.hpp"

namespace fedforge::server {

/// What the orchestrator sends to each selected client in a round.
struct TrainDispatch {
  std::string taskId;
  int round = 0;
  config::TaskConfig config;                // carries the model spec
  std::vector<std::uint8_t> weightsFrame;   // Dense-encoded global weights
};

/// One client's answer: the compression-layout payload plus its header fields.
struct ClientReply {
  std::string clientId;
  std::vector<std::uint8_t> payload;
  std::int64_t numSamples = 0;
  double trainSeconds = 0.0;
  double latencySeconds = 0.0;
};

/// Moves work between the orchestration loop and the clients.
class ClientTransport {
 public:
  virtual ~ClientTransport() = default;

  /// Dispatches to every listed client and returns the replies received
  /// before `deadline`. Clients that fail or time out are simply absent.
  virtual std::vector<ClientReply> train_round(const TrainDispatch& dispatch,
                                               const std::vector<std::string>& clientIds,
                                               std::chrono::milliseconds deadline) = 0;

  /// Asks one client for its dataset descriptor.
  virtual config::DataConfig request_data_config(const std::string& taskId, const std::string& clientId) = 0;
};

enum class TaskStatus { Pending, Running, Complete, Failed };

struct TaskState {
  std::string taskId;
  config::TaskConfig config;
  nn::FlatWeights globalWeights;
  int round = 0;
  sched::ClientRoster roster;
  std::vector<protocol::RoundMetrics> metricsLog;
  TaskStatus status = TaskStatus::Pending;
};

struct RunOptions {
  std::chrono::milliseconds roundDeadline{120'000};
  /// Used for model init and random scheduling when the config has no seed.
  std::uint64_t seed = 0;
  /// Called after each round is aggregated, evaluated and persisted.
  std::function<void(const protocol::RoundMetrics&)> onRound;
  MetricsLog* log = nullptr;
};

struct TaskResult {
  nn::FlatWeights finalWeights;
  std::vector<protocol::RoundMetrics> metrics;
};

/// Runs the federated averaging loop for one task over a transport.
class FedAvgTask {
 public:
  /// `config.model` must be set (ModelUnavailable otherwise). The roster
  /// must be non-empty (NoClientsAvailable otherwise).
  FedAvgTask(std::string taskId, config::TaskConfig config, sched::ClientRoster roster,
             const nn::Dataset& testSet, ClientTransport& transport, RunOptions options);

  /// Executes all remaining rounds and returns the final global model.
  TaskResult run();
  /// Executes exactly one round. Throws AllClientsTimedOut when neither the
  /// first attempt nor the retry produced an update.
  protocol::RoundMetrics run_round();

  const TaskState& state() const { return state_; }
  std::uint64_t seed() const { return seed_; }

 private:
  std::vector<ClientReply> dispatch(const TrainDispatch& d, const std::vector<std::string>& ids,
                                    std::uint64_t& bytesDown);

  TaskState state_;
  const nn::Dataset& testSet_;
  ClientTransport& transport_;
  RunOptions options_;
  std::uint64_t seed_ = 0;
  protocol::StageMachine stages_{protocol::StageMachine::View::Server};
};

/// Convenience wrapper: builds the task and runs every round.
TaskResult run_task(const std::string& taskId, const config::TaskConfig& config,
                    const sched::ClientRoster& roster, const nn::Dataset& testSet, ClientTransport& transport,
                    const RunOptions& options = {});

/// taskName plus a random suffix, restricted to [A-Za-z0-9_-].
std::string make_task_id(const std::string& taskName, std::uint64_t entropy);

}  // namespace fedforge::server
