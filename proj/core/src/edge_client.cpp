#include "fedforge/edge_client.hpp"

#include <chrono>

#include <spdlog/spdlog.h>

#include "fedforge/compression.hpp"
#include "fedforge/dataset_io.hpp"
#include "fedforge/error.hpp"
#include "fedforge/seed.hpp"

namespace fedforge::client {

using protocol::Envelope;
using protocol::MessageType;
using protocol::WireMessage;

EdgeClient::EdgeClient(std::string id, nn::Dataset data, std::uint64_t seedBase)
    : id_(std::move(id)), data_(std::move(data)), seedBase_(seedBase) {
  data_.validate();
}

EdgeClient EdgeClient::from_directory(std::string id, const std::filesystem::path& dir, std::uint64_t seedBase) {
  EdgeClient c(std::move(id), io::load_dataset(dir), seedBase);
  c.dir_ = dir;
  return c;
}

config::DataConfig EdgeClient::data_config() const {
  if (dir_) return io::load_data_config(*dir_);
  return data_.config;
}

LocalUpdate EdgeClient::handle_train_request(const TrainRequest& req) const {
  if (!req.config.model) throw Error(ErrorCode::DimensionMismatch, "model", "train request has no model spec");
  const auto& spec = *req.config.model;
  spec.validate();
  if (req.weights.size() != spec.parameter_count()) {
    throw Error(ErrorCode::DimensionMismatch, "weights",
                "got " + std::to_string(req.weights.size()) + " values for a model of " +
                    std::to_string(spec.parameter_count()));
  }
  if (spec.input_dim() != data_.cols || spec.outputDim != data_.config.output_dim()) {
    throw Error(ErrorCode::DimensionMismatch, "model", "model does not fit the local data");
  }

  const std::uint64_t seed = round_seed(req.round);
  const nn::FlatWeights start{req.weights, spec};
  const auto t0 = std::chrono::steady_clock::now();
  const auto trained = nn::client_update(start, data_, req.config, seed);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  LocalUpdate up;
  up.taskId = req.taskId;
  up.round = req.round;
  up.numSamples = static_cast<std::int64_t>(data_.rows());
  up.trainSeconds = seconds;
  up.payload = compression::encode(
      compression::compress(trained.values, req.config.compress, req.config.compressParam, mix_seed(seed)));
  return up;
}

nas::CandidateResult EdgeClient::explore(const nn::ModelSpec& model, const nas::SearchConfig& cfg,
                                         std::uint64_t seed) const {
  model.validate();
  if (model.input_dim() != data_.cols || model.outputDim != data_.config.output_dim()) {
    throw Error(ErrorCode::InvalidArchitecture, "model", "model does not fit the local data");
  }
  return nas::explore(model, cfg, data_, seed);
}

namespace {

Envelope error_reply(const WireMessage& in, const Error& e) {
  return {protocol::make_error(in.taskId, std::string(to_string(e.code())), e.what(), in.round), {}};
}

}  // namespace

std::vector<Envelope> EdgeClient::handle(const Envelope& in) {
  const auto& msg = in.message;
  try {
    switch (msg.type) {
      case MessageType::TrainRequest: {
        if (!msg.round) throw Error(ErrorCode::MalformedFrame, "round", "TrainRequest needs a round");
        if (!msg.body.contains("config")) throw Error(ErrorCode::MalformedFrame, "config", "missing task config");
        pending_[msg.taskId] = {*msg.round, config::parse_task_config(msg.body.at("config"))};
        return {};
      }
      case MessageType::WeightsHeader: {
        const auto it = pending_.find(msg.taskId);
        if (it == pending_.end() || !msg.round || it->second.first != *msg.round) {
          throw Error(ErrorCode::OutOfOrder, "WeightsHeader", "no matching TrainRequest");
        }
        TrainRequest req{msg.taskId, it->second.first, std::move(it->second.second), {}};
        pending_.erase(it);
        const auto payload = compression::decode(in.binary);
        const auto* dense = std::get_if<compression::Dense>(&payload);
        if (dense == nullptr) throw Error(ErrorCode::CorruptPayload, "weights", "global weights must be dense");
        req.weights = dense->values;
        const auto up = handle_train_request(req);
        WireMessage reply{MessageType::LocalUpdateHeader, up.taskId, up.round,
                          {{"numSamples", up.numSamples}, {"trainSeconds", up.trainSeconds}}};
        return {{std::move(reply), up.payload}};
      }
      case MessageType::DataConfigRequest: {
        WireMessage reply{MessageType::DataConfigResponse, msg.taskId, msg.round, config::to_json(data_config())};
        return {{std::move(reply), {}}};
      }
      case MessageType::ArchAssign: {
        const auto model = msg.body.at("model").get<nn::ModelSpec>();
        const auto cfg = nas::search_config_from_json(msg.body.value("search", nlohmann::json::object()));
        const std::uint64_t seed = msg.body.value("seed", std::uint64_t{0});
        const auto result = explore(model, cfg, seed);
        WireMessage reply{MessageType::HPOResult, msg.taskId, msg.round, nas::to_json(result)};
        return {{std::move(reply), {}}};
      }
      case MessageType::Error:
        spdlog::warn("server reported error for task {}: {}", msg.taskId, msg.body.dump());
        pending_.erase(msg.taskId);
        return {};
      case MessageType::RoundResult:
      case MessageType::TaskComplete:
        pending_.erase(msg.taskId);
        return {};
      default:
        throw Error(ErrorCode::OutOfOrder, std::string(protocol::to_string(msg.type)), "not handled by clients");
    }
  } catch (const Error& e) {
    spdlog::warn("client {}: {}", id_, e.what());
    return {error_reply(msg, e)};
  } catch (const nlohmann::json::exception& e) {
    spdlog::warn("client {}: {}", id_, e.what());
    return {error_reply(msg, Error(ErrorCode::MalformedFrame, "body", e.what()))};
  }
}

}  // namespace fedforge::client
