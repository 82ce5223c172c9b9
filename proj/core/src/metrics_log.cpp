#include "fedforge/metrics_log.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fedforge/error.hpp"

namespace fedforge::server {

namespace fs = std::filesystem;

namespace {

void check_task_id(const std::string& taskId) {
  if (taskId.empty() || taskId.find('/') != std::string::npos || taskId.find("..") != std::string::npos) {
    throw Error(ErrorCode::StorageFailure, taskId, "invalid task id");
  }
}

void write_all_synced(const fs::path& path, const std::string& data, int flags) {
  const int fd = ::open(path.c_str(), flags, 0644);
  if (fd < 0) throw Error(ErrorCode::StorageFailure, path.string(), std::strerror(errno));
  std::size_t written = 0;
  while (written < data.size()) {
    const ssize_t n = ::write(fd, data.data() + written, data.size() - written);
    if (n < 0) {
      if (errno == EINTR) continue;
      const std::string why = std::strerror(errno);
      ::close(fd);
      throw Error(ErrorCode::StorageFailure, path.string(), why);
    }
    written += static_cast<std::size_t>(n);
  }
  if (::fsync(fd) != 0) {
    const std::string why = std::strerror(errno);
    ::close(fd);
    throw Error(ErrorCode::StorageFailure, path.string(), why);
  }
  ::close(fd);
}

/// Drops a torn trailing record so the next append starts on a fresh line.
void trim_partial_tail(const fs::path& path) {
  std::error_code ec;
  const auto size = fs::file_size(path, ec);
  if (ec || size == 0) return;
  std::ifstream in(path, std::ios::binary);
  in.seekg(static_cast<std::streamoff>(size - 1));
  if (in.get() == '\n') return;
  in.seekg(0);
  const std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto nl = content.rfind('\n');
  fs::resize_file(path, nl == std::string::npos ? 0 : nl + 1, ec);
  if (ec) throw Error(ErrorCode::StorageFailure, path.string(), ec.message());
}

}  // namespace

MetricsLog::MetricsLog(fs::path dataDir) : dir_(std::move(dataDir) / "tasks") {
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec) throw Error(ErrorCode::StorageFailure, dir_.string(), ec.message());
}

fs::path MetricsLog::log_path(const std::string& taskId) const {
  check_task_id(taskId);
  return dir_ / (taskId + ".jsonl");
}

void MetricsLog::persist_round(const std::string& taskId, const protocol::RoundMetrics& m) {
  const std::string line = nlohmann::json(m).dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) + "\n";
  std::lock_guard lock(mutex_);
  const auto path = log_path(taskId);
  trim_partial_tail(path);
  write_all_synced(path, line, O_WRONLY | O_CREAT | O_APPEND);
}

void MetricsLog::persist_config(const std::string& taskId, const std::string& canonicalConfig) {
  check_task_id(taskId);
  std::lock_guard lock(mutex_);
  write_all_synced(dir_ / (taskId + ".config.json"), canonicalConfig + "\n", O_WRONLY | O_CREAT | O_TRUNC);
}

std::vector<protocol::RoundMetrics> MetricsLog::read(const std::string& taskId) const {
  std::lock_guard lock(mutex_);
  std::ifstream in(log_path(taskId), std::ios::binary);
  if (!in) throw Error(ErrorCode::StorageFailure, taskId, "no metrics log");
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string content = buf.str();

  std::vector<protocol::RoundMetrics> out;
  std::size_t start = 0;
  while (start < content.size()) {
    const std::size_t nl = content.find('\n', start);
    if (nl == std::string::npos) break;  // torn trailing record
    const std::string_view line(content.data() + start, nl - start);
    start = nl + 1;
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line.begin(), line.end(), nullptr, false);
    if (j.is_discarded()) throw Error(ErrorCode::StorageFailure, taskId, "corrupt record");
    out.push_back(j.get<protocol::RoundMetrics>());
  }
  return out;
}

std::vector<std::string> MetricsLog::task_ids() const {
  std::vector<std::string> ids;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(dir_, ec)) {
    const auto name = entry.path().filename().string();
    if (name.size() > 6 && name.ends_with(".jsonl")) ids.push_back(name.substr(0, name.size() - 6));
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace fedforge::server
