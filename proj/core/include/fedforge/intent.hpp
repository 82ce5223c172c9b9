#pragma once

#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "fedforge/config.hpp"
#include "fedforge/llm_gateway.hpp"
#include "fedforge/model_spec.hpp"

namespace fedforge::intent {

/// Sent verbatim with every intent; never varies between requests.
extern const std::string_view kSystemPrompt;

/// Keyword extraction standing in for the fine-tuned model. Returns the keys
/// it recognised (numbers as numbers, enums in canonical spelling). Never throws.
nlohmann::json fallback_parse(std::string_view text);

enum class Mode { Remote, Fallback };
std::string_view to_string(Mode m);

struct Translation {
  config::TaskConfig config;
  Mode mode = Mode::Fallback;
};

/// Intent text to a validated TaskConfig. Uses `backend` when non-null,
/// otherwise the fallback parser. Throws GatewayUnreachable, InvalidLlmOutput
/// (detail carries the raw model output) or UnrecognizedIntent.
Translation translate_intent(std::string_view text, LlmBackend* backend = nullptr);

/// "Create a model architecture for the following task. ..." filled from `d`.
std::string build_arch_prompt(const config::DataConfig& d);

/// Prompts for iterative architecture search.
std::string initial_prompt(int models, const config::DataConfig& d);
std::string intermediate_prompt(int models, const config::DataConfig& d, const std::string& model,
                                double accuracyPercent);
std::string error_prompt(const config::DataConfig& d, const std::string& model, const std::string& error);

/// Input/output written the way a PyTorch user would print them.
std::string torch_input_form(const config::DataConfig& d);
std::string torch_output_form(const config::DataConfig& d);

/// Two dense layers, hidden width clamp(4*sqrt(in*out), 16, 256).
nn::ModelSpec fallback_model(const config::DataConfig& d);

/// Parses one architecture (a ModelSpec object, or {layers:[...]}) and checks
/// it fits `d`: chained dims, input width, output width. Missing inputShape and
/// outputDim are taken from `d`. Throws InvalidArchitecture.
nn::ModelSpec parse_architecture(const nlohmann::json& j, const config::DataConfig& d);

/// Asks the backend for an architecture, retrying once with an error prompt
/// when the answer does not fit. Null backend yields fallback_model(d).
/// Throws InvalidArchitecture or GatewayUnreachable.
nn::ModelSpec request_model_spec(const config::DataConfig& d, LlmBackend* backend = nullptr);

}  // namespace fedforge::intent
