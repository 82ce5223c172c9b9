#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fedforge {

enum class ErrorCode {
  // config
  UnknownKey,
  MissingRequiredKey,
  ValueOutOfRange,
  BadEnumValue,
  MalformedJson,
  // nn
  DimensionMismatch,
  NonFiniteLoss,
  // compression
  EmptyInput,
  NonFiniteInput,
  BadFraction,
  CorruptPayload,
  // scheduling
  EmptyRoster,
  UnknownClient,
  // protocol
  MalformedFrame,
  UnknownType,
  LengthMismatch,
  OutOfOrder,
  // server
  NoClientsAvailable,
  AllClientsTimedOut,
  ModelUnavailable,
  EmptyUpdateSet,
  StorageFailure,
  // client
  MissingDataConfig,
  MalformedDataConfig,
  // intent
  GatewayUnreachable,
  InvalidLlmOutput,
  UnrecognizedIntent,
  InvalidArchitecture,
  // nas
  AllModelsInvalid,
  DivergentCandidate,
  SearchSpaceExhausted,
  // io
  IoFailure,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Typed failure carrying the error kind and the offending subject
/// (a config key, client id, round number, ...).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string subject, std::string detail = {});

  ErrorCode code() const noexcept { return code_; }
  const std::string& subject() const noexcept { return subject_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string subject_;
  std::string detail_;
};

}  // namespace fedforge
