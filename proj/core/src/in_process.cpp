#include "fedforge/in_process.hpp"

#include <algorithm>

#include <spdlog/spdlog.h>

#include "fedforge/error.hpp"

namespace fedforge::server {

using protocol::Envelope;
using protocol::FrameAssembler;
using protocol::MessageType;
using protocol::WireMessage;

void InProcessTransport::add_client(client::EdgeClient& c) { clients_[c.id()] = &c; }

sched::ClientRoster InProcessTransport::roster() const {
  sched::ClientRoster r;
  for (const auto& [id, _] : clients_) r.add_client(id, "in-process");
  return r;
}

std::vector<Envelope> InProcessTransport::exchange(const std::string& clientId, std::vector<Envelope> out) {
  const auto it = clients_.find(clientId);
  if (it == clients_.end()) throw Error(ErrorCode::UnknownClient, clientId);
  if (std::find(offline_.begin(), offline_.end(), clientId) != offline_.end()) return {};

  FrameAssembler toClient;
  FrameAssembler toServer;
  std::vector<Envelope> replies;
  for (auto& env : out) {
    for (const auto& frame : protocol::to_frames(std::move(env))) {
      if (tap_) tap_(clientId, false, frame);
      auto assembled = toClient.push(frame);
      if (!assembled) continue;
      for (auto& reply : it->second->handle(*assembled)) {
        for (const auto& back : protocol::to_frames(std::move(reply))) {
          if (tap_) tap_(clientId, true, back);
          if (auto got = toServer.push(back)) replies.push_back(std::move(*got));
        }
      }
    }
  }
  return replies;
}

std::vector<ClientReply> InProcessTransport::train_round(const TrainDispatch& d, const std::vector<std::string>& ids,
                                                         std::chrono::milliseconds deadline) {
  std::vector<ClientReply> out;
  const auto start = std::chrono::steady_clock::now();
  for (const auto& id : ids) {
    const auto t0 = std::chrono::steady_clock::now();
    if (t0 - start > deadline) break;
    std::vector<Envelope> send;
    send.push_back({WireMessage{MessageType::TrainRequest, d.taskId, d.round,
                                {{"config", config::to_ordered_json(d.config)}}},
                    {}});
    send.push_back({WireMessage{MessageType::WeightsHeader, d.taskId, d.round, nlohmann::json::object()},
                    d.weightsFrame});
    for (auto& reply : exchange(id, std::move(send))) {
      const auto& m = reply.message;
      if (m.type == MessageType::Error) {
        spdlog::warn("client {} round {}: {}", id, d.round, m.body.dump());
        continue;
      }
      if (m.type != MessageType::LocalUpdateHeader || m.round != d.round) continue;
      ClientReply r;
      r.clientId = id;
      r.payload = std::move(reply.binary);
      r.numSamples = m.body.value("numSamples", std::int64_t{0});
      r.trainSeconds = m.body.value("trainSeconds", 0.0);
      r.latencySeconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      out.push_back(std::move(r));
    }
  }
  return out;
}

config::DataConfig InProcessTransport::request_data_config(const std::string& taskId, const std::string& clientId) {
  std::vector<Envelope> send;
  send.push_back({WireMessage{MessageType::DataConfigRequest, taskId, std::nullopt, nlohmann::json::object()}, {}});
  for (auto& reply : exchange(clientId, std::move(send))) {
    if (reply.message.type == MessageType::DataConfigResponse) return config::parse_data_config(reply.message.body);
    if (reply.message.type == MessageType::Error) {
      const auto code = reply.message.body.value("code", std::string());
      const auto message = reply.message.body.value("message", std::string());
      throw Error(code == "MissingDataConfig" ? ErrorCode::MissingDataConfig : ErrorCode::MalformedDataConfig,
                  clientId, message);
    }
  }
  throw Error(ErrorCode::MissingDataConfig, clientId, "client did not answer");
}

std::vector<std::pair<std::string, nas::CandidateResult>> InProcessTransport::explore(
    const std::vector<nas::Assignment>& jobs, const nas::SearchConfig& cfg) {
  std::vector<std::pair<std::string, nas::CandidateResult>> out;
  for (const auto& job : jobs) {
    std::vector<Envelope> send;
    send.push_back({WireMessage{MessageType::ArchAssign, "search", std::nullopt,
                                {{"model", job.model}, {"search", nas::to_json(cfg)}, {"seed", job.seed}}},
                    {}});
    for (auto& reply : exchange(job.clientId, std::move(send))) {
      if (reply.message.type != MessageType::HPOResult) continue;
      try {
        out.emplace_back(job.clientId, nas::candidate_from_json(reply.message.body));
      } catch (const Error& e) {
        spdlog::warn("client {} sent a bad HPOResult: {}", job.clientId, e.what());
      }
    }
  }
  return out;
}

}  // namespace fedforge::server
