#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace fedforge::protocol {

enum class MessageType {
  TaskSubmit,
  TaskAccepted,
  TrainRequest,
  WeightsHeader,
  LocalUpdateHeader,
  RoundResult,
  TaskComplete,
  DataConfigRequest,
  DataConfigResponse,
  ArchAssign,
  HPOResult,
  IntentSubmit,
  Error,
};

std::string_view to_string(MessageType t);
/// Throws UnknownType.
MessageType parse_message_type(std::string_view name);

/// Header messages announce exactly one following binary frame.
bool carries_binary(MessageType t);

/// One control message: a JSON text frame {"type","taskId","round","body"}.
struct WireMessage {
  MessageType type = MessageType::Error;
  std::string taskId;
  std::optional<int> round;
  nlohmann::json body = nlohmann::json::object();

  bool operator==(const WireMessage&) const = default;
};

std::string encode(const WireMessage& msg);
/// Throws MalformedFrame or UnknownType; never crashes on arbitrary bytes.
WireMessage decode(std::string_view text);

WireMessage make_error(std::string taskId, std::string code, std::string message,
                       std::optional<int> round = std::nullopt);

struct Frame {
  enum class Kind { Text, Binary };
  Kind kind = Kind::Text;
  std::string data;

  static Frame text(std::string s) { return {Kind::Text, std::move(s)}; }
  static Frame binary(std::string s) { return {Kind::Binary, std::move(s)}; }
  static Frame binary(const std::vector<std::uint8_t>& bytes) {
    return {Kind::Binary, std::string(bytes.begin(), bytes.end())};
  }
};

/// A control message together with its binary frame, when it has one.
struct Envelope {
  WireMessage message;
  std::vector<std::uint8_t> binary;
};

/// Frames for an envelope. Header messages get body.length set to the
/// binary size and are followed by the binary frame.
std::vector<Frame> to_frames(Envelope env);

/// Pairs header messages with the binary frame that must follow them.
class FrameAssembler {
 public:
  /// Returns a complete envelope, or nullopt while waiting for a binary
  /// frame. Throws MalformedFrame, UnknownType or LengthMismatch; the
  /// assembler resets itself after an error.
  std::optional<Envelope> push(const Frame& frame);
  bool awaiting_binary() const { return pending_.has_value(); }
  void reset() { pending_.reset(); }

 private:
  std::optional<WireMessage> pending_;
  std::uint64_t expected_ = 0;
};

/// Per-round measurements streamed to observers and persisted.
struct RoundMetrics {
  int round = 0;
  double testAccuracy = 0.0;
  double testLoss = 0.0;
  std::uint64_t bytesUp = 0;
  std::uint64_t bytesDown = 0;
  double elapsedSeconds = 0.0;
  double trainSeconds = 0.0;  // sum of client-reported local training time
  std::vector<std::string> participants;

  bool operator==(const RoundMetrics&) const = default;
};

void to_json(nlohmann::json& j, const RoundMetrics& m);
void from_json(const nlohmann::json& j, RoundMetrics& m);

/// Per-task stage machine. The Server view sees the full exchange; the
/// Observer view (dashboard, CLI) only submission, round results and completion.
class StageMachine {
 public:
  enum class View { Server, Observer };
  enum class Stage { Idle, Submitted, Accepted, Training, RoundDone, Complete, Failed };

  explicit StageMachine(View view = View::Server) : view_(view) {}

  /// Applies the message if legal in the current stage; otherwise returns
  /// false and leaves the state untouched.
  bool accept(MessageType type, std::optional<int> round = std::nullopt);
  /// Throws OutOfOrder instead of returning false.
  void require(MessageType type, std::optional<int> round = std::nullopt);
  void fail() { stage_ = Stage::Failed; }

  Stage stage() const { return stage_; }
  int round() const { return round_; }
  bool finished() const { return stage_ == Stage::Complete || stage_ == Stage::Failed; }

 private:
  View view_;
  Stage stage_ = Stage::Idle;
  int round_ = 0;
};

std::string_view to_string(StageMachine::Stage s);

}  // namespace fedforge::protocol
