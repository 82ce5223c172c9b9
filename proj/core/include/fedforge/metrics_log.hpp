#pragma once

#include <filesystem>
#include <mutex>
#include <string>
#include <vector>

#include "fedforge/protocol.hpp"

namespace fedforge::server {

/// Append-only, line-delimited JSON log of RoundMetrics, one file per task
/// under `<dataDir>/tasks/`. Each record is a single write of one line; a
/// trailing partial line left by a crash is ignored on read and trimmed
/// before the next append.
class MetricsLog {
 public:
  explicit MetricsLog(std::filesystem::path dataDir);

  /// Appends and syncs one record. Throws StorageFailure.
  void persist_round(const std::string& taskId, const protocol::RoundMetrics& m);
  /// Stores the task's canonical config next to its log.
  void persist_config(const std::string& taskId, const std::string& canonicalConfig);

  std::vector<protocol::RoundMetrics> read(const std::string& taskId) const;
  std::vector<std::string> task_ids() const;
  std::filesystem::path log_path(const std::string& taskId) const;

 private:
  std::filesystem::path dir_;
  mutable std::mutex mutex_;
};

}  // namespace fedforge::server
