#include "fedforge/config.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <limits>

#include "fedforge/error.hpp"

namespace fedforge::config {

namespace {

using nlohmann::json;

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view text, std::string_view key,
                const std::array<std::pair<std::string_view, Enum>, N>& table) {
  const std::string needle = lower(text);
  for (const auto& [name, value] : table) {
    if (lower(name) == needle) return value;
  }
  throw Error(ErrorCode::BadEnumValue, std::string(key), "unrecognized value '" + std::string(text) + "'");
}

constexpr std::array<std::pair<std::string_view, Algo>, 2> kAlgos{{
    {"Classification", Algo::Classification},
    {"Regression", Algo::Regression},
}};
constexpr std::array<std::pair<std::string_view, Scheduler>, 4> kSchedulers{{
    {"full", Scheduler::Full},
    {"random", Scheduler::Random},
    {"round_robin", Scheduler::RoundRobin},
    {"latency_proportional", Scheduler::LatencyProportional},
}};
constexpr std::array<std::pair<std::string_view, Optimizer>, 4> kOptimizers{{
    {"Adam", Optimizer::Adam},
    {"SGD", Optimizer::SGD},
    {"AdaGrad", Optimizer::AdaGrad},
    {"RMSProp", Optimizer::RMSProp},
}};
constexpr std::array<std::pair<std::string_view, Loss>, 2> kLosses{{
    {"CrossEntropyLoss", Loss::CrossEntropy},
    {"MSELoss", Loss::MSE},
}};
constexpr std::array<std::pair<std::string_view, Compress>, 4> kCompressors{{
    {"No", Compress::No},
    {"quantize", Compress::Quantize},
    {"topk", Compress::TopK},
    {"randk", Compress::RandK},
}};

template <typename Enum, std::size_t N>
std::string_view name_of(Enum v, const std::array<std::pair<std::string_view, Enum>, N>& table) {
  for (const auto& [name, value] : table) {
    if (value == v) return name;
  }
  return "?";
}

// Reference key order; the optional keys follow.
constexpr std::array<std::string_view, 18> kKnownKeys{
    "algo",    "minibatch", "epoch",         "lr",      "scheduler", "clientFraction",
    "minibatchtest", "comRounds", "optimizer", "loss",  "compress",  "compressParam",
    "dataset", "taskName",  "clients",       "dtype",   "seed",      "model"};

constexpr std::array<std::string_view, 11> kRequiredKeys{
    "algo",          "minibatch", "epoch",     "lr",   "scheduler", "clientFraction",
    "minibatchtest", "comRounds", "optimizer", "loss", "compress"};

double number_value(const json& v, std::string_view key) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const auto& s = v.get_ref<const std::string&>();
    std::string_view sv = s;
    while (!sv.empty() && std::isspace(static_cast<unsigned char>(sv.front()))) sv.remove_prefix(1);
    while (!sv.empty() && std::isspace(static_cast<unsigned char>(sv.back()))) sv.remove_suffix(1);
    if (!sv.empty() && sv.front() == '+') sv.remove_prefix(1);
    double out = 0.0;
    auto [ptr, ec] = std::from_chars(sv.data(), sv.data() + sv.size(), out);
    if (ec == std::errc{} && ptr == sv.data() + sv.size() && !sv.empty()) return out;
  }
  throw Error(ErrorCode::ValueOutOfRange, std::string(key), "expected a number, got " + v.dump());
}

int int_value(const json& v, std::string_view key) {
  const double d = number_value(v, key);
  if (!std::isfinite(d) || d != std::floor(d) || d > std::numeric_limits<int>::max() ||
      d < std::numeric_limits<int>::min()) {
    throw Error(ErrorCode::ValueOutOfRange, std::string(key), "expected an integer, got " + v.dump());
  }
  return static_cast<int>(d);
}

std::string string_value(const json& v, std::string_view key) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number()) return v.dump();
  throw Error(ErrorCode::BadEnumValue, std::string(key), "expected a string, got " + v.dump());
}

std::uint64_t seed_value(const json& v) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<long long>() >= 0) return static_cast<std::uint64_t>(v.get<long long>());
  if (v.is_string()) {
    const auto& s = v.get_ref<const std::string&>();
    std::uint64_t out = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (ec == std::errc{} && ptr == s.data() + s.size() && !s.empty()) return out;
  }
  throw Error(ErrorCode::ValueOutOfRange, "seed", "expected a non-negative integer, got " + v.dump());
}

std::vector<std::string> clients_value(const json& v) {
  std::vector<std::string> out;
  if (v.is_array()) {
    for (const auto& e : v) {
      if (!e.is_string()) throw Error(ErrorCode::ValueOutOfRange, "clients", "entries must be strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  }
  if (v.is_string()) {
    // Comma or whitespace separated list, as typed into a form field.
    std::string cur;
    for (char c : v.get<std::string>()) {
      if (c == ',' || std::isspace(static_cast<unsigned char>(c))) {
        if (!cur.empty()) out.push_back(std::move(cur));
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
  }
  throw Error(ErrorCode::ValueOutOfRange, "clients", "expected an array of strings");
}

json parse_json_text(std::string_view text, ErrorCode code) {
  json j = json::parse(text.begin(), text.end(), nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw Error(code, "", "input is not valid JSON");
  return j;
}

bool present(const json& obj, std::string_view key) {
  auto it = obj.find(std::string(key));
  return it != obj.end() && !it->is_null();
}

}  // namespace

std::string_view to_string(Algo v) { return name_of(v, kAlgos); }
std::string_view to_string(Scheduler v) { return name_of(v, kSchedulers); }
std::string_view to_string(Optimizer v) { return name_of(v, kOptimizers); }
std::string_view to_string(Loss v) { return name_of(v, kLosses); }
std::string_view to_string(Compress v) { return name_of(v, kCompressors); }

Algo parse_algo(std::string_view t, std::string_view key) { return parse_enum(t, key, kAlgos); }
Scheduler parse_scheduler(std::string_view t, std::string_view key) {
  return parse_enum(t, key, kSchedulers);
}
Optimizer parse_optimizer(std::string_view t, std::string_view key) {
  return parse_enum(t, key, kOptimizers);
}
Loss parse_loss(std::string_view t, std::string_view key) { return parse_enum(t, key, kLosses); }
Compress parse_compress(std::string_view t, std::string_view key) {
  return parse_enum(t, key, kCompressors);
}

double default_lr(Optimizer opt) {
  switch (opt) {
    case Optimizer::Adam: return 0.0001;
    case Optimizer::SGD: return 0.001;
    case Optimizer::AdaGrad: return 0.004;
    case Optimizer::RMSProp: return 0.0004;
  }
  return 0.0001;
}

void TaskConfig::validate() const {
  auto fail = [](const char* key, const std::string& why) {
    throw Error(ErrorCode::ValueOutOfRange, key, why);
  };
  if (minibatch < 1) fail("minibatch", "must be >= 1");
  if (epoch < 1) fail("epoch", "must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr", "must be > 0");
  if (!(clientFraction > 0.0 && clientFraction <= 1.0)) fail("clientFraction", "must be in (0,1]");
  if (minibatchtest < 1) fail("minibatchtest", "must be >= 1");
  if (comRounds < 1) fail("comRounds", "must be >= 1");
  const bool sparse = compress == Compress::TopK || compress == Compress::RandK;
  if (sparse && !compressParam) {
    throw Error(ErrorCode::MissingRequiredKey, "compressParam", "required for topk/randk");
  }
  if (!sparse && compressParam) fail("compressParam", "only allowed with topk/randk");
  if (compressParam && !(*compressParam > 0.0 && *compressParam <= 1.0)) {
    fail("compressParam", "must be in (0,1]");
  }
  if (dataset.empty()) throw Error(ErrorCode::MissingRequiredKey, "dataset");
  if (model) {
    try {
      model->validate();
    } catch (const Error& e) {
      fail("model", e.what());
    }
  }
}

TaskConfig parse_task_config(std::string_view text) {
  return parse_task_config(parse_json_text(text, ErrorCode::MalformedJson));
}

TaskConfig parse_task_config(const json& obj) {
  if (!obj.is_object()) throw Error(ErrorCode::MalformedJson, "", "task config must be a JSON object");
  for (const auto& [key, _] : obj.items()) {
    if (std::find(kKnownKeys.begin(), kKnownKeys.end(), key) == kKnownKeys.end()) {
      throw Error(ErrorCode::UnknownKey, key);
    }
  }
  if (!present(obj, "dataset")) throw Error(ErrorCode::MissingRequiredKey, "dataset");
  for (auto key : kRequiredKeys) {
    if (!present(obj, key)) throw Error(ErrorCode::MissingRequiredKey, std::string(key));
  }

  TaskConfig c;
  c.algo = parse_algo(string_value(obj.at("algo"), "algo"));
  c.minibatch = int_value(obj.at("minibatch"), "minibatch");
  c.epoch = int_value(obj.at("epoch"), "epoch");
  c.lr = number_value(obj.at("lr"), "lr");
  c.scheduler = parse_scheduler(string_value(obj.at("scheduler"), "scheduler"));
  c.clientFraction = number_value(obj.at("clientFraction"), "clientFraction");
  c.minibatchtest = int_value(obj.at("minibatchtest"), "minibatchtest");
  c.comRounds = int_value(obj.at("comRounds"), "comRounds");
  c.optimizer = parse_optimizer(string_value(obj.at("optimizer"), "optimizer"));
  c.loss = parse_loss(string_value(obj.at("loss"), "loss"));
  c.compress = parse_compress(string_value(obj.at("compress"), "compress"));
  if (present(obj, "compressParam")) {
    c.compressParam = number_value(obj.at("compressParam"), "compressParam");
  }
  const auto& ds = obj.at("dataset");
  if (!ds.is_string() || ds.get_ref<const std::string&>().empty()) {
    throw Error(ErrorCode::ValueOutOfRange, "dataset", "expected a non-empty string");
  }
  c.dataset = ds.get<std::string>();
  if (present(obj, "taskName")) c.taskName = string_value(obj.at("taskName"), "taskName");
  if (present(obj, "clients")) c.clients = clients_value(obj.at("clients"));
  if (present(obj, "dtype")) c.dtype = string_value(obj.at("dtype"), "dtype");
  if (present(obj, "seed")) c.seed = seed_value(obj.at("seed"));
  if (present(obj, "model")) {
    try {
      c.model = obj.at("model").get<nn::ModelSpec>();
    } catch (const Error& e) {
      throw Error(ErrorCode::ValueOutOfRange, "model", e.what());
    }
  }
  c.validate();
  return c;
}

TaskConfig apply_defaults(const json& partial) {
  if (!partial.is_object()) throw Error(ErrorCode::MalformedJson, "", "partial config must be a JSON object");
  if (!present(partial, "dataset")) throw Error(ErrorCode::MissingRequiredKey, "dataset");

  json full = json::object();
  for (const auto& [key, value] : partial.items()) {
    if (!value.is_null()) full[key] = value;
  }
  auto fill = [&](const char* key, json value) {
    if (!present(full, key)) full[key] = std::move(value);
  };

  fill("algo", "Classification");
  fill("minibatch", 16);
  fill("epoch", 5);
  fill("optimizer", "Adam");
  fill("lr", default_lr(parse_optimizer(string_value(full.at("optimizer"), "optimizer"))));
  fill("clientFraction", 1);
  fill("scheduler",
       number_value(full.at("clientFraction"), "clientFraction") < 1.0 ? "random" : "full");
  fill("minibatchtest", 32);
  fill("comRounds", 10);
  fill("loss", "CrossEntropyLoss");
  fill("compress", "No");
  const Compress compress = parse_compress(string_value(full.at("compress"), "compress"));
  if (compress == Compress::TopK || compress == Compress::RandK) {
    fill("compressParam", kDefaultCompressParam);
  }
  return parse_task_config(full);
}

std::string format_decimal(double value) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value, std::chars_format::fixed);
  if (ec != std::errc{}) {
    auto r = std::to_chars(buf.data(), buf.data() + buf.size(), value);
    return std::string(buf.data(), r.ptr);
  }
  return std::string(buf.data(), ptr);
}

nlohmann::ordered_json to_ordered_json(const TaskConfig& c) {
  nlohmann::ordered_json j;
  j["algo"] = to_string(c.algo);
  j["minibatch"] = std::to_string(c.minibatch);
  j["epoch"] = std::to_string(c.epoch);
  j["lr"] = format_decimal(c.lr);
  j["scheduler"] = to_string(c.scheduler);
  j["clientFraction"] = format_decimal(c.clientFraction);
  j["minibatchtest"] = std::to_string(c.minibatchtest);
  j["comRounds"] = std::to_string(c.comRounds);
  j["optimizer"] = to_string(c.optimizer);
  j["loss"] = to_string(c.loss);
  j["compress"] = to_string(c.compress);
  if (c.compressParam) j["compressParam"] = format_decimal(*c.compressParam);
  j["dataset"] = c.dataset;
  if (!c.taskName.empty()) j["taskName"] = c.taskName;
  if (!c.clients.empty()) j["clients"] = c.clients;
  if (c.dtype != "img") j["dtype"] = c.dtype;
  if (c.seed) j["seed"] = std::to_string(*c.seed);
  if (c.model) j["model"] = nlohmann::ordered_json::parse(json(*c.model).dump());
  return j;
}

std::string canonical_json(const TaskConfig& config) { return to_ordered_json(config).dump(); }

int DataConfig::input_dim() const {
  long long prod = 1;
  for (int v : shape) prod *= v;
  return shape.empty() ? 0 : static_cast<int>(prod);
}

int DataConfig::output_dim() const { return task == Algo::Classification ? numLabels : 1; }

void DataConfig::validate() const {
  auto fail = [](const char* key, const char* why) {
    throw Error(ErrorCode::MalformedDataConfig, key, why);
  };
  if (shape.empty()) fail("shape", "must be non-empty");
  for (int v : shape) {
    if (v < 1) fail("shape", "extents must be positive");
  }
  if (numDatapoints < 1) fail("numDatapoints", "must be >= 1");
  if (numLabels < 1) fail("numLabels", "must be >= 1");
  if (task == Algo::Classification && numLabels < 2) fail("numLabels", "classification needs >= 2 labels");
}

DataConfig parse_data_config(std::string_view text) {
  return parse_data_config(parse_json_text(text, ErrorCode::MalformedDataConfig));
}

DataConfig parse_data_config(const json& obj) {
  if (!obj.is_object()) throw Error(ErrorCode::MalformedDataConfig, "", "expected a JSON object");
  DataConfig d;
  try {
    for (auto key : {"shape", "numDatapoints", "task", "numLabels"}) {
      if (!present(obj, key)) throw Error(ErrorCode::MalformedDataConfig, key, "missing");
    }
    if (!obj.at("shape").is_array()) throw Error(ErrorCode::MalformedDataConfig, "shape", "expected array");
    for (const auto& v : obj.at("shape")) d.shape.push_back(int_value(v, "shape"));
    d.numDatapoints = int_value(obj.at("numDatapoints"), "numDatapoints");
    d.task = parse_algo(string_value(obj.at("task"), "task"), "task");
    d.numLabels = int_value(obj.at("numLabels"), "numLabels");
  } catch (const Error& e) {
    if (e.code() == ErrorCode::MalformedDataConfig) throw;
    throw Error(ErrorCode::MalformedDataConfig, e.subject(), e.what());
  }
  d.validate();
  return d;
}

nlohmann::json to_json(const DataConfig& d) {
  return json{{"shape", d.shape},
              {"numDatapoints", d.numDatapoints},
              {"task", std::string(to_string(d.task))},
              {"numLabels", d.numLabels}};
}

}  // namespace fedforge::config
