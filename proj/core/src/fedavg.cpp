#include "fedforge/fedavg.hpp"

#include <algorithm>
#include <cctype>

#include <spdlog/spdlog.h>

#include "fedforge/compression.hpp"
#include "fedforge/error.hpp"
#include "fedforge/seed.hpp"

namespace fedforge::server {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

}  // namespace

FedAvgTask::FedAvgTask(std::string taskId, config::TaskConfig config, sched::ClientRoster roster,
                       const nn::Dataset& testSet, ClientTransport& transport, RunOptions options)
    : testSet_(testSet), transport_(transport), options_(std::move(options)) {
  if (!config.model) throw Error(ErrorCode::ModelUnavailable, taskId, "task has no model spec");
  if (roster.empty()) throw Error(ErrorCode::NoClientsAvailable, taskId);
  seed_ = config.seed.value_or(options_.seed);
  state_.taskId = std::move(taskId);
  state_.globalWeights = nn::build_model(*config.model, seed_);
  state_.config = std::move(config);
  state_.roster = std::move(roster);
  stages_.require(protocol::MessageType::TaskSubmit);
  stages_.require(protocol::MessageType::TaskAccepted);
  if (options_.log) options_.log->persist_config(state_.taskId, config::canonical_json(state_.config));
}

std::vector<ClientReply> FedAvgTask::dispatch(const TrainDispatch& d, const std::vector<std::string>& ids,
                                              std::uint64_t& bytesDown) {
  stages_.require(protocol::MessageType::TrainRequest, d.round);
  bytesDown += d.weightsFrame.size() * ids.size();
  return transport_.train_round(d, ids, options_.roundDeadline);
}

protocol::RoundMetrics FedAvgTask::run_round() {
  const auto start = Clock::now();
  auto& cfg = state_.config;
  const int round = state_.round + 1;
  state_.status = TaskStatus::Running;

  const int m = sched::participant_count(cfg.clientFraction, static_cast<int>(state_.roster.size()));
  const auto ids = sched::select_clients(state_.roster, cfg.scheduler, m, round, seed_);

  TrainDispatch d;
  d.taskId = state_.taskId;
  d.round = round;
  d.config = cfg;
  d.weightsFrame = compression::encode(compression::Dense{state_.globalWeights.values});

  std::uint64_t bytesDown = 0;
  auto replies = dispatch(d, ids, bytesDown);
  if (replies.empty()) {
    spdlog::warn("task {} round {}: no client responded, retrying once", state_.taskId, round);
    replies = dispatch(d, ids, bytesDown);
  }
  if (replies.empty()) {
    state_.status = TaskStatus::Failed;
    stages_.fail();
    throw Error(ErrorCode::AllClientsTimedOut, "round " + std::to_string(round));
  }

  // Aggregate in client-id order so results do not depend on arrival order.
  std::sort(replies.begin(), replies.end(),
            [](const ClientReply& a, const ClientReply& b) { return a.clientId < b.clientId; });

  protocol::RoundMetrics metrics;
  metrics.round = round;
  metrics.bytesDown = bytesDown;
  std::vector<std::vector<float>> decoded;
  std::vector<std::int64_t> samples;
  const std::size_t d_len = state_.globalWeights.values.size();
  for (const auto& r : replies) {
    metrics.bytesUp += r.payload.size();
    metrics.trainSeconds += r.trainSeconds;
    if (state_.roster.contains(r.clientId)) state_.roster.record_latency(r.clientId, r.latencySeconds);
    if (!stages_.accept(protocol::MessageType::LocalUpdateHeader, round)) continue;
    try {
      const auto payload = compression::decode(r.payload);
      if (cfg.compress == config::Compress::No && !std::holds_alternative<compression::Dense>(payload)) {
        throw Error(ErrorCode::CorruptPayload, r.clientId, "compressed update for an uncompressed task");
      }
      auto values = compression::decompress(payload);
      if (values.size() != d_len) {
        throw Error(ErrorCode::LengthMismatch, r.clientId, "update length does not match the model");
      }
      decoded.push_back(std::move(values));
      samples.push_back(r.numSamples);
      metrics.participants.push_back(r.clientId);
    } catch (const Error& e) {
      spdlog::warn("task {} round {}: dropping update from {}: {}", state_.taskId, round, r.clientId, e.what());
    }
  }
  if (decoded.empty()) {
    state_.status = TaskStatus::Failed;
    stages_.fail();
    throw Error(ErrorCode::AllClientsTimedOut, "round " + std::to_string(round), "no usable update");
  }

  std::vector<WeightedUpdate> updates;
  for (std::size_t i = 0; i < decoded.size(); ++i) updates.push_back({decoded[i], samples[i]});
  state_.globalWeights.values = aggregate(updates);

  const auto eval = nn::evaluate(state_.globalWeights, testSet_, cfg.minibatchtest, cfg.loss);
  metrics.testAccuracy = eval.accuracy;
  metrics.testLoss = eval.loss;
  metrics.elapsedSeconds = seconds_since(start);

  stages_.require(protocol::MessageType::RoundResult, round);
  state_.round = round;
  if (options_.log) options_.log->persist_round(state_.taskId, metrics);
  state_.metricsLog.push_back(metrics);
  if (options_.onRound) options_.onRound(metrics);
  return metrics;
}

TaskResult FedAvgTask::run() {
  state_.status = TaskStatus::Running;
  while (state_.round < state_.config.comRounds) run_round();
  stages_.require(protocol::MessageType::TaskComplete);
  state_.status = TaskStatus::Complete;
  return {state_.globalWeights, state_.metricsLog};
}

TaskResult run_task(const std::string& taskId, const config::TaskConfig& config, const sched::ClientRoster& roster,
                    const nn::Dataset& testSet, ClientTransport& transport, const RunOptions& options) {
  FedAvgTask task(taskId, config, roster, testSet, transport, options);
  return task.run();
}

std::string make_task_id(const std::string& taskName, std::uint64_t entropy) {
  std::string base;
  for (char c : taskName) {
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') base.push_back(c);
  }
  if (base.empty()) base = "task";
  if (base.size() > 48) base.resize(48);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string suffix;
  std::uint64_t v = mix_seed(entropy);
  for (int i = 0; i < 8; ++i) {
    suffix.push_back(kHex[v & 0xF]);
    v >>= 4;
  }
  return base + "-" + suffix;
}

}  // namespace fedforge::server
