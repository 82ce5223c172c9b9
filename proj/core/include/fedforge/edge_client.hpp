#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedforge/config.hpp"
#include "fedforge/nas.hpp"
#include "fedforge/nn.hpp"
#include "fedforge/protocol.hpp"

namespace fedforge::client {

struct TrainRequest {
  std::string taskId;
  int round = 0;
  config::TaskConfig config;  // config.model describes `weights`
  std::vector<float> weights;
};

struct LocalUpdate {
  std::string taskId;
  int round = 0;
  std::vector<std::uint8_t> payload;  // compression wire layout
  std::int64_t numSamples = 0;
  double trainSeconds = 0.0;
};

/// One edge node's local data plus the handlers the server can invoke.
class EdgeClient {
 public:
  EdgeClient(std::string id, nn::Dataset data, std::uint64_t seedBase);
  /// Loads data.csv + dataconfig.json from `dir`.
  static EdgeClient from_directory(std::string id, const std::filesystem::path& dir, std::uint64_t seedBase);

  const std::string& id() const { return id_; }
  const nn::Dataset& dataset() const { return data_; }
  std::uint64_t seed_base() const { return seedBase_; }
  std::uint64_t round_seed(int round) const { return seedBase_ ^ static_cast<std::uint64_t>(round); }

  /// The dataset descriptor; re-read from disk when loaded from a directory.
  /// Throws MissingDataConfig or MalformedDataConfig.
  config::DataConfig data_config() const;

  /// ClientUpdate followed by Compress when the task asks for it. Throws
  /// DimensionMismatch or NonFiniteLoss.
  LocalUpdate handle_train_request(const TrainRequest& req) const;

  /// HPO for one assigned architecture on the local data.
  nas::CandidateResult explore(const nn::ModelSpec& model, const nas::SearchConfig& cfg, std::uint64_t seed) const;

  /// Protocol-level entry point: consumes one envelope from the server and
  /// returns the envelopes to send back (possibly none). Failures become
  /// Error messages; nothing here ever carries raw samples.
  std::vector<protocol::Envelope> handle(const protocol::Envelope& in);

 private:
  std::string id_;
  nn::Dataset data_;
  std::uint64_t seedBase_;
  std::optional<std::filesystem::path> dir_;
  // TrainRequest waiting for its weights, keyed by task.
  std::map<std::string, std::pair<int, config::TaskConfig>> pending_;
};

}  // namespace fedforge::client
