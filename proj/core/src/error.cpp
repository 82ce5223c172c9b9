#include "fedforge/error.hpp"

namespace fedforge {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::UnknownKey: return "UnknownKey";
    case ErrorCode::MissingRequiredKey: return "MissingRequiredKey";
    case ErrorCode::ValueOutOfRange: return "ValueOutOfRange";
    case ErrorCode::BadEnumValue: return "BadEnumValue";
    case ErrorCode::MalformedJson: return "MalformedJson";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::BadFraction: return "BadFraction";
    case ErrorCode::CorruptPayload: return "CorruptPayload";
    case ErrorCode::EmptyRoster: return "EmptyRoster";
    case ErrorCode::UnknownClient: return "UnknownClient";
    case ErrorCode::MalformedFrame: return "MalformedFrame";
    case ErrorCode::UnknownType: return "UnknownType";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::OutOfOrder: return "OutOfOrder";
    case ErrorCode::NoClientsAvailable: return "NoClientsAvailable";
    case ErrorCode::AllClientsTimedOut: return "AllClientsTimedOut";
    case ErrorCode::ModelUnavailable: return "ModelUnavailable";
    case ErrorCode::EmptyUpdateSet: return "EmptyUpdateSet";
    case ErrorCode::StorageFailure: return "StorageFailure";
    case ErrorCode::MissingDataConfig: return "MissingDataConfig";
    case ErrorCode::MalformedDataConfig: return "MalformedDataConfig";
    case ErrorCode::GatewayUnreachable: return "GatewayUnreachable";
    case ErrorCode::InvalidLlmOutput: return "InvalidLlmOutput";
    case ErrorCode::UnrecognizedIntent: return "UnrecognizedIntent";
    case ErrorCode::InvalidArchitecture: return "InvalidArchitecture";
    case ErrorCode::AllModelsInvalid: return "AllModelsInvalid";
    case ErrorCode::DivergentCandidate: return "DivergentCandidate";
    case ErrorCode::SearchSpaceExhausted: return "SearchSpaceExhausted";
    case ErrorCode::IoFailure: return "IoFailure";
  }
  return "Unknown";
}

namespace {

std::string format_message(ErrorCode code, const std::string& subject,
                           const std::string& detail) {
  std::string msg{to_string(code)};
  if (!subject.empty()) msg += "(" + subject + ")";
  if (!detail.empty()) msg += ": " + detail;
  return msg;
}

}  // namespace

Error::Error(ErrorCode code, std::string subject, std::string detail)
    : std::runtime_error(format_message(code, subject, detail)),
      code_(code),
      subject_(std::move(subject)),
      detail_(std::move(detail)) {}

}  // namespace fedforge
