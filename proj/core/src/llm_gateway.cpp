#include "fedforge/llm_gateway.hpp"

#include <cstdlib>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "fedforge/error.hpp"

namespace fedforge::intent {

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host:port
  std::string prefix;  // path prefix without trailing slash
};

SplitUrl split_url(const std::string& url) {
  const auto scheme = url.find("://");
  const auto hostStart = scheme == std::string::npos ? 0 : scheme + 3;
  const auto slash = url.find('/', hostStart);
  if (slash == std::string::npos) return {url, ""};
  std::string prefix = url.substr(slash);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {url.substr(0, slash), prefix};
}

}  // namespace

HttpLlmBackend::HttpLlmBackend(std::string url, std::chrono::seconds timeout)
    : url_(std::move(url)), timeout_(timeout) {}

nlohmann::json HttpLlmBackend::post(const std::string& path, const nlohmann::json& body) {
  const auto [origin, prefix] = split_url(url_);
  const std::string payload = body.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
  std::string lastError;
  // One retry on transport failure; HTTP error statuses are not retried.
  for (int attempt = 0; attempt < 2; ++attempt) {
    httplib::Client cli(origin);
    cli.set_connection_timeout(timeout_);
    cli.set_read_timeout(timeout_);
    cli.set_write_timeout(timeout_);
    auto res = cli.Post(prefix + path, payload, "application/json");
    if (!res) {
      lastError = httplib::to_string(res.error());
      spdlog::warn("LLM gateway {}{}: {}", url_, path, lastError);
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      throw Error(ErrorCode::GatewayUnreachable, url_ + path, "HTTP status " + std::to_string(res->status));
    }
    auto j = nlohmann::json::parse(res->body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      throw Error(ErrorCode::InvalidLlmOutput, path, res->body);
    }
    return j;
  }
  throw Error(ErrorCode::GatewayUnreachable, url_ + path, lastError);
}

std::string HttpLlmBackend::complete_intent(const std::string& system, const std::string& intent) {
  const auto res = post("/v1/intent", {{"system", system}, {"intent", intent}});
  const auto it = res.find("json");
  if (it == res.end()) throw Error(ErrorCode::InvalidLlmOutput, "json", res.dump());
  // Some backends return the object itself instead of its text.
  return it->is_string() ? it->get<std::string>() : it->dump();
}

nlohmann::json HttpLlmBackend::architecture(const std::string& prompt) {
  return post("/v1/arch", {{"prompt", prompt}});
}

std::unique_ptr<LlmBackend> backend_from_env() {
  const char* url = std::getenv(kLlmUrlEnv);
  if (url == nullptr || *url == '\0') return nullptr;
  return std::make_unique<HttpLlmBackend>(url);
}

}  // namespace fedforge::intent
