#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedforge/model_spec.hpp"

namespace fedforge::config {

enum class Algo { Classification, Regression };
enum class Scheduler { Full, Random, RoundRobin, LatencyProportional };
enum class Optimizer { Adam, SGD, AdaGrad, RMSProp };
enum class Loss { CrossEntropy, MSE };
enum class Compress { No, Quantize, TopK, RandK };

std::string_view to_string(Algo v);
std::string_view to_string(Scheduler v);
std::string_view to_string(Optimizer v);
std::string_view to_string(Loss v);
std::string_view to_string(Compress v);

/// Enum parsers are case-insensitive and throw BadEnumValue naming `key`.
Algo parse_algo(std::string_view text, std::string_view key = "algo");
Scheduler parse_scheduler(std::string_view text, std::string_view key = "scheduler");
Optimizer parse_optimizer(std::string_view text, std::string_view key = "optimizer");
Loss parse_loss(std::string_view text, std::string_view key = "loss");
Compress parse_compress(std::string_view text, std::string_view key = "compress");

/// Full description of one federated training task.
struct TaskConfig {
  Algo algo = Algo::Classification;
  int minibatch = 16;
  int epoch = 5;
  double lr = 0.0001;
  Scheduler scheduler = Scheduler::Full;
  double clientFraction = 1.0;
  int minibatchtest = 32;
  int comRounds = 10;
  Optimizer optimizer = Optimizer::Adam;
  Loss loss = Loss::CrossEntropy;
  Compress compress = Compress::No;
  /// k as a fraction in (0,1]; present iff compress is topk or randk.
  std::optional<double> compressParam;
  std::string dataset;
  std::string taskName;
  std::vector<std::string> clients;
  /// Accepted for compatibility with the intent system prompt; unused at runtime.
  std::string dtype = "img";
  std::optional<std::uint64_t> seed;
  std::optional<nn::ModelSpec> model;

  bool operator==(const TaskConfig&) const = default;

  /// Throws ValueOutOfRange naming the first violated key.
  void validate() const;
};

/// Client-side dataset descriptor (dataconfig.json).
struct DataConfig {
  std::vector<int> shape;
  int numDatapoints = 0;
  Algo task = Algo::Classification;
  int numLabels = 0;

  bool operator==(const DataConfig&) const = default;

  int input_dim() const;
  /// Output width a model for this data needs: numLabels, or 1 for regression.
  int output_dim() const;
  /// Throws MalformedDataConfig.
  void validate() const;
};

/// Learning-rate default that depends on the optimizer.
double default_lr(Optimizer opt);
inline constexpr double kDefaultCompressParam = 0.1;

TaskConfig parse_task_config(std::string_view text);
TaskConfig parse_task_config(const nlohmann::json& object);
inline TaskConfig parse_task_config(const std::string& text) { return parse_task_config(std::string_view(text)); }
inline TaskConfig parse_task_config(const char* text) { return parse_task_config(std::string_view(text)); }

/// Fills every absent key from the defaults table. `partial` is a JSON object
/// whose values may be strings or numbers. Requires `dataset`.
TaskConfig apply_defaults(const nlohmann::json& partial);

/// Deterministic encoding: keys in the canonical order, scalars as strings.
std::string canonical_json(const TaskConfig& config);
nlohmann::ordered_json to_ordered_json(const TaskConfig& config);

DataConfig parse_data_config(std::string_view text);
DataConfig parse_data_config(const nlohmann::json& object);
inline DataConfig parse_data_config(const std::string& text) { return parse_data_config(std::string_view(text)); }
inline DataConfig parse_data_config(const char* text) { return parse_data_config(std::string_view(text)); }
nlohmann::json to_json(const DataConfig& config);

/// Shortest round-trip decimal in fixed notation ("0.0001", "1", "0.7").
std::string format_decimal(double value);

}  // namespace fedforge::config
