#include "fedforge/protocol.hpp"

#include <array>
#include <limits>
#include <utility>

#include "fedforge/error.hpp"

namespace fedforge::protocol {

namespace {

using nlohmann::json;

constexpr std::array<std::pair<std::string_view, MessageType>, 13> kTypes{{
    {"TaskSubmit", MessageType::TaskSubmit},
    {"TaskAccepted", MessageType::TaskAccepted},
    {"TrainRequest", MessageType::TrainRequest},
    {"WeightsHeader", MessageType::WeightsHeader},
    {"LocalUpdateHeader", MessageType::LocalUpdateHeader},
    {"RoundResult", MessageType::RoundResult},
    {"TaskComplete", MessageType::TaskComplete},
    {"DataConfigRequest", MessageType::DataConfigRequest},
    {"DataConfigResponse", MessageType::DataConfigResponse},
    {"ArchAssign", MessageType::ArchAssign},
    {"HPOResult", MessageType::HPOResult},
    {"IntentSubmit", MessageType::IntentSubmit},
    {"Error", MessageType::Error},
}};

[[noreturn]] void malformed(const std::string& why) { throw Error(ErrorCode::MalformedFrame, "frame", why); }

std::uint64_t declared_length(const WireMessage& m) {
  auto it = m.body.find("length");
  if (it == m.body.end() || !it->is_number_integer()) malformed("header without integer body.length");
  if (it->is_number_unsigned()) return it->get<std::uint64_t>();
  const auto v = it->get<std::int64_t>();
  if (v < 0) malformed("negative body.length");
  return static_cast<std::uint64_t>(v);
}

}  // namespace

std::string_view to_string(MessageType t) {
  for (const auto& [name, value] : kTypes) {
    if (value == t) return name;
  }
  return "Unknown";
}

MessageType parse_message_type(std::string_view name) {
  for (const auto& [n, value] : kTypes) {
    if (n == name) return value;
  }
  throw Error(ErrorCode::UnknownType, std::string(name.substr(0, 64)));
}

bool carries_binary(MessageType t) {
  return t == MessageType::WeightsHeader || t == MessageType::LocalUpdateHeader;
}

std::string encode(const WireMessage& msg) {
  json j;
  j["type"] = to_string(msg.type);
  j["taskId"] = msg.taskId;
  if (msg.round) j["round"] = *msg.round;
  j["body"] = msg.body.is_null() ? json::object() : msg.body;
  return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

WireMessage decode(std::string_view text) {
  json j = json::parse(text.begin(), text.end(), nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) malformed("not valid JSON");
  if (!j.is_object()) malformed("control frame must be a JSON object");
  auto type = j.find("type");
  if (type == j.end() || !type->is_string()) malformed("missing string field 'type'");
  WireMessage m;
  m.type = parse_message_type(type->get_ref<const std::string&>());
  if (auto it = j.find("taskId"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) malformed("taskId must be a string");
    m.taskId = it->get<std::string>();
  }
  if (auto it = j.find("round"); it != j.end() && !it->is_null()) {
    if (!it->is_number_integer()) malformed("round must be an integer");
    const auto r = it->get<std::int64_t>();
    if (r < 0 || r > std::numeric_limits<int>::max()) malformed("round out of range");
    m.round = static_cast<int>(r);
  }
  if (auto it = j.find("body"); it != j.end() && !it->is_null()) {
    if (!it->is_object()) malformed("body must be an object");
    m.body = *it;
  }
  if (carries_binary(m.type)) declared_length(m);
  return m;
}

WireMessage make_error(std::string taskId, std::string code, std::string message, std::optional<int> round) {
  WireMessage m;
  m.type = MessageType::Error;
  m.taskId = std::move(taskId);
  m.round = round;
  m.body = json{{"code", std::move(code)}, {"message", std::move(message)}};
  return m;
}

std::vector<Frame> to_frames(Envelope env) {
  std::vector<Frame> frames;
  if (carries_binary(env.message.type)) {
    env.message.body["length"] = env.binary.size();
    frames.push_back(Frame::text(encode(env.message)));
    frames.push_back(Frame::binary(env.binary));
  } else {
    frames.push_back(Frame::text(encode(env.message)));
  }
  return frames;
}

std::optional<Envelope> FrameAssembler::push(const Frame& frame) {
  if (pending_) {
    if (frame.kind != Frame::Kind::Binary) {
      pending_.reset();
      throw Error(ErrorCode::MalformedFrame, "frame", "expected binary frame after header");
    }
    if (frame.data.size() != expected_) {
      const auto expected = expected_;
      pending_.reset();
      throw Error(ErrorCode::LengthMismatch, "frame",
                  "header declared " + std::to_string(expected) + " bytes, got " + std::to_string(frame.data.size()));
    }
    Envelope env{std::move(*pending_), std::vector<std::uint8_t>(frame.data.begin(), frame.data.end())};
    pending_.reset();
    return env;
  }
  if (frame.kind == Frame::Kind::Binary) {
    throw Error(ErrorCode::MalformedFrame, "frame", "binary frame without a preceding header");
  }
  WireMessage m = decode(frame.data);
  if (carries_binary(m.type)) {
    expected_ = declared_length(m);
    pending_ = std::move(m);
    return std::nullopt;
  }
  return Envelope{std::move(m), {}};
}

void to_json(json& j, const RoundMetrics& m) {
  j = json{{"round", m.round},
           {"testAccuracy", m.testAccuracy},
           {"testLoss", m.testLoss},
           {"bytesUp", m.bytesUp},
           {"bytesDown", m.bytesDown},
           {"elapsedSeconds", m.elapsedSeconds},
           {"trainSeconds", m.trainSeconds},
           {"participants", m.participants}};
}

void from_json(const json& j, RoundMetrics& m) {
  if (!j.is_object()) malformed("round metrics must be an object");
  try {
    m.round = j.at("round").get<int>();
    m.testAccuracy = j.at("testAccuracy").get<double>();
    m.testLoss = j.at("testLoss").get<double>();
    m.bytesUp = j.at("bytesUp").get<std::uint64_t>();
    m.bytesDown = j.at("bytesDown").get<std::uint64_t>();
    m.elapsedSeconds = j.at("elapsedSeconds").get<double>();
    m.trainSeconds = j.value("trainSeconds", 0.0);
    m.participants = j.value("participants", std::vector<std::string>{});
  } catch (const json::exception& e) {
    malformed(std::string("round metrics: ") + e.what());
  }
}

bool StageMachine::accept(MessageType type, std::optional<int> round) {
  using T = MessageType;
  const int r = round.value_or(-1);
  if (type == T::Error) {
    if (view_ == View::Observer && !finished()) stage_ = Stage::Failed;
    return true;
  }
  if (finished()) return false;

  switch (type) {
    case T::TaskSubmit:
    case T::IntentSubmit:
      if (stage_ != Stage::Idle) return false;
      stage_ = Stage::Submitted;
      return true;
    case T::TaskAccepted:
      if (stage_ != Stage::Submitted) return false;
      stage_ = Stage::Accepted;
      return true;
    case T::DataConfigRequest:
    case T::DataConfigResponse:
    case T::ArchAssign:
    case T::HPOResult:
      return view_ == View::Server && stage_ == Stage::Accepted;
    case T::TrainRequest:
      if (view_ != View::Server) return false;
      if ((stage_ == Stage::Accepted && r == 1) || (stage_ == Stage::RoundDone && r == round_ + 1)) {
        stage_ = Stage::Training;
        round_ = r;
        return true;
      }
      return stage_ == Stage::Training && r == round_;
    case T::WeightsHeader:
    case T::LocalUpdateHeader:
      return view_ == View::Server && stage_ == Stage::Training && r == round_;
    case T::RoundResult:
      if (view_ == View::Server) {
        if (stage_ != Stage::Training || r != round_) return false;
      } else if (!((stage_ == Stage::Accepted && r == 1) || (stage_ == Stage::RoundDone && r == round_ + 1))) {
        return false;
      }
      stage_ = Stage::RoundDone;
      round_ = r;
      return true;
    case T::TaskComplete:
      if (stage_ != Stage::Accepted && stage_ != Stage::RoundDone) return false;
      stage_ = Stage::Complete;
      return true;
    case T::Error:
      break;
  }
  return false;
}

void StageMachine::require(MessageType type, std::optional<int> round) {
  if (!accept(type, round)) {
    throw Error(ErrorCode::OutOfOrder, std::string(to_string(type)),
                "not allowed in stage " + std::string(to_string(stage_)) +
                    (round ? " (round " + std::to_string(*round) + ")" : ""));
  }
}

std::string_view to_string(StageMachine::Stage s) {
  using S = StageMachine::Stage;
  switch (s) {
    case S::Idle: return "Idle";
    case S::Submitted: return "Submitted";
    case S::Accepted: return "Accepted";
    case S::Training: return "Training";
    case S::RoundDone: return "RoundDone";
    case S::Complete: return "Complete";
    case S::Failed: return "Failed";
  }
  return "?";
}

}  // namespace fedforge::protocol
