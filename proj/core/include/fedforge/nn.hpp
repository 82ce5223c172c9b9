#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedforge/config.hpp"
#include "fedforge/model_spec.hpp"

namespace fedforge::nn {

using config::DataConfig;
using config::Loss;
using config::Optimizer;
using config::TaskConfig;

/// Flattened parameter vector. Per layer: weights (outDim x inDim, row-major)
/// followed by biases (outDim).
struct FlatWeights {
  std::vector<float> values;
  ModelSpec spec;

  bool operator==(const FlatWeights&) const = default;
};

struct LayerParams {
  std::vector<float> weights;  // outDim x inDim, row-major
  std::vector<float> biases;   // outDim
};

std::vector<LayerParams> unflatten(std::span<const float> values, const ModelSpec& spec);
std::vector<float> flatten(const std::vector<LayerParams>& layers);

/// Row-major feature matrix with one label per row. Class labels are stored
/// as float-encoded integers in [0, numLabels).
struct Dataset {
  std::vector<float> features;
  std::vector<float> labels;
  int cols = 0;
  DataConfig config;

  std::size_t rows() const { return labels.size(); }
  std::span<const float> row(std::size_t i) const {
    return {features.data() + i * static_cast<std::size_t>(cols), static_cast<std::size_t>(cols)};
  }
  /// Throws DimensionMismatch when rows/labels disagree with config.
  void validate() const;
  /// Rows selected by index, in the given order.
  Dataset subset(std::span<const std::size_t> indices) const;
};

struct Metrics {
  double accuracy = 0.0;
  double loss = 0.0;
};

/// Xavier-uniform weights, zero biases; deterministic in (spec, seed).
FlatWeights build_model(const ModelSpec& spec, std::uint64_t seed);

/// Moment accumulators and step counter for one optimizer instance.
struct OptimizerState {
  Optimizer kind = Optimizer::SGD;
  std::vector<double> first;   // Adam m
  std::vector<double> second;  // Adam v, AdaGrad sum, RMSProp square average
  std::int64_t step = 0;

  static OptimizerState make(Optimizer kind, std::size_t d);
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;
inline constexpr double kAdaGradEps = 1e-10;
inline constexpr double kRmsAlpha = 0.99;
inline constexpr double kRmsEps = 1e-8;

/// Advances `state` and returns the weight delta for gradient `grads`.
std::vector<double> optimizer_step(OptimizerState& state, std::span<const double> grads, double lr);

/// Mean loss over the given rows and its gradient with respect to every
/// parameter. Cross-entropy uses log-softmax; MSE is half the mean squared
/// error over outputs. Classification labels are one-hot encoded for MSE.
struct LossAndGradient {
  double loss = 0.0;
  std::vector<double> gradient;
};
LossAndGradient loss_and_gradient(std::span<const double> params, const ModelSpec& spec,
                                  const Dataset& data, std::span<const std::size_t> rows, Loss loss);
double batch_loss(std::span<const double> params, const ModelSpec& spec, const Dataset& data,
                  std::span<const std::size_t> rows, Loss loss);

/// Raw network outputs for one sample.
std::vector<double> forward(std::span<const float> params, const ModelSpec& spec,
                            std::span<const float> input);
/// Per-class probabilities for one sample.
std::vector<double> softmax(std::span<const double> logits);

struct TrainSettings {
  int epochs = 1;
  int batchSize = 16;
  double lr = 0.0001;
  Optimizer optimizer = Optimizer::Adam;
  Loss loss = Loss::CrossEntropy;

  static TrainSettings from(const TaskConfig& cfg);
};

/// One shuffled pass over `data` in mini-batches (last batch may be short).
/// `epochIndex` selects the shuffle stream derived from `seed`.
void train_epoch(FlatWeights& w, OptimizerState& state, const Dataset& data,
                 const TrainSettings& settings, std::uint64_t seed, int epochIndex);

/// Local training for settings.epochs epochs starting from fresh optimizer state.
FlatWeights train(const FlatWeights& w, const Dataset& data, const TrainSettings& settings,
                  std::uint64_t seed);

/// ClientUpdate: E epochs of mini-batch training per cfg. Input untouched.
FlatWeights client_update(const FlatWeights& w, const Dataset& data, const TaskConfig& cfg,
                          std::uint64_t seed);

/// Accuracy (argmax, ties to the lowest class) and mean per-sample loss.
/// Regression data reports accuracy 0.
Metrics evaluate(const FlatWeights& w, const Dataset& data, int batch, Loss loss);
Metrics evaluate(const FlatWeights& w, const Dataset& data, int batch);

}  // namespace fedforge::nn
