#pragma once

#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <unistd.h>

#include "fedforge/error.hpp"
#include "fedforge/model_spec.hpp"
#include "fedforge/nn.hpp"
#include "fedforge/synthetic.hpp"

namespace fixtures {

/// mkdtemp directory removed on scope exit.
class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "fedforge-test-XXXXXX").string();
    if (::mkdtemp(tmpl.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& p) const { return path_ / p; }

 private:
  std::filesystem::path path_;
};

/// Code of the fedforge::Error thrown by f, or nullopt if none was thrown.
template <class F>
std::optional<fedforge::ErrorCode> error_code(F&& f) {
  try {
    f();
  } catch (const fedforge::Error& e) {
    return e.code();
  }
  return std::nullopt;
}

template <class F>
std::string error_subject(F&& f) {
  try {
    f();
  } catch (const fedforge::Error& e) {
    return e.subject();
  }
  return "<no error>";
}

inline fedforge::nn::ModelSpec mlp_2_16_2() { return fedforge::nn::make_mlp({2}, {16}, 2); }

/// The desk-scale setup: 600 blobs points, 3 clients of 160 rows, 120 test rows.
inline fedforge::synthetic::Partition blobs_600(std::uint64_t seed = 7) {
  return fedforge::synthetic::partition(fedforge::synthetic::make_blobs(600, seed), 3, seed);
}

}  // namespace fixtures
