#pragma once

#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <fcntl.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

extern char** environ;

namespace proc {

/// A child process with stdout and stderr sent to one file.
class Process {
 public:
  Process() = default;
  Process(const std::vector<std::string>& args, const std::filesystem::path& output) {
    posix_spawn_file_actions_t fa;
    posix_spawn_file_actions_init(&fa);
    posix_spawn_file_actions_addopen(&fa, 1, output.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    posix_spawn_file_actions_adddup2(&fa, 1, 2);
    std::vector<char*> argv;
    for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    const int rc = posix_spawn(&pid_, argv[0], &fa, nullptr, argv.data(), environ);
    posix_spawn_file_actions_destroy(&fa);
    if (rc != 0) throw std::runtime_error("posix_spawn failed for " + args.front());
  }
  Process(Process&& o) noexcept : pid_(o.pid_), status_(o.status_) { o.pid_ = -1; }
  Process& operator=(Process&& o) noexcept {
    std::swap(pid_, o.pid_);
    std::swap(status_, o.status_);
    return *this;
  }
  ~Process() { kill(); }

  /// Exit code once the process has ended within `timeout`.
  std::optional<int> wait_for(std::chrono::milliseconds timeout) {
    if (status_) return status_;
    if (pid_ <= 0) return std::nullopt;
    const auto end = std::chrono::steady_clock::now() + timeout;
    for (;;) {
      int st = 0;
      const pid_t r = ::waitpid(pid_, &st, WNOHANG);
      if (r == pid_) {
        status_ = WIFEXITED(st) ? WEXITSTATUS(st) : 128 + WTERMSIG(st);
        return status_;
      }
      if (std::chrono::steady_clock::now() >= end) return std::nullopt;
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
  }

  /// SIGTERM, then SIGKILL if it does not exit within `grace`.
  std::optional<int> terminate(std::chrono::milliseconds grace = std::chrono::seconds(5)) {
    if (pid_ <= 0 || status_) return status_;
    ::kill(pid_, SIGTERM);
    if (auto s = wait_for(grace)) return s;
    ::kill(pid_, SIGKILL);
    return wait_for(std::chrono::seconds(5));
  }

  void kill() {
    if (pid_ > 0 && !status_) {
      ::kill(pid_, SIGKILL);
      wait_for(std::chrono::seconds(5));
    }
  }

  pid_t pid() const { return pid_; }

 private:
  pid_t pid_ = -1;
  std::optional<int> status_;
};

/// Runs to completion and returns (exit code, combined output).
inline std::pair<int, std::string> run(const std::vector<std::string>& args, const std::filesystem::path& scratch,
                                       std::chrono::milliseconds timeout = std::chrono::seconds(60)) {
  Process p(args, scratch);
  auto code = p.wait_for(timeout);
  if (!code) {
    p.kill();
    code = -1;
  }
  std::ifstream in(scratch);
  std::stringstream ss;
  ss << in.rdbuf();
  return {*code, ss.str()};
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Polls until `p` exists and is non-empty.
inline bool wait_for_file(const std::filesystem::path& p, std::chrono::milliseconds timeout) {
  const auto end = std::chrono::steady_clock::now() + timeout;
  while (std::chrono::steady_clock::now() < end) {
    std::error_code ec;
    if (std::filesystem::exists(p, ec) && std::filesystem::file_size(p, ec) > 0) return true;
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  return false;
}

}  // namespace proc
