#pragma once

#include <chrono>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

namespace fedforge::intent {

/// The HTTP service fronting the language models.
///   POST /v1/intent {system, intent} -> {json: string}
///   POST /v1/arch   {prompt}         -> {layers:[...]} or {models:[{layers:[...]}, ...]}
class LlmBackend {
 public:
  virtual ~LlmBackend() = default;

  /// Returns the raw JSON text the model produced. Throws GatewayUnreachable.
  virtual std::string complete_intent(const std::string& system, const std::string& intent) = 0;
  /// Returns the response body. Throws GatewayUnreachable.
  virtual nlohmann::json architecture(const std::string& prompt) = 0;
};

class HttpLlmBackend : public LlmBackend {
 public:
  /// `url` like "http://host:port"; a trailing path prefix is kept.
  explicit HttpLlmBackend(std::string url, std::chrono::seconds timeout = std::chrono::seconds(30));

  std::string complete_intent(const std::string& system, const std::string& intent) override;
  nlohmann::json architecture(const std::string& prompt) override;

  const std::string& url() const { return url_; }

 private:
  nlohmann::json post(const std::string& path, const nlohmann::json& body);

  std::string url_;
  std::chrono::seconds timeout_;
};

inline constexpr const char* kLlmUrlEnv = "FEDFORGE_LLM_URL";

/// Remote backend when FEDFORGE_LLM_URL is set, otherwise null (fallback mode).
std::unique_ptr<LlmBackend> backend_from_env();

}  // namespace fedforge::intent
