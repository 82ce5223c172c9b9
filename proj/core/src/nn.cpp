#include "fedforge/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include <Eigen/Dense>

#include "fedforge/error.hpp"
#include "fedforge/seed.hpp"

namespace fedforge::nn {

namespace {

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMapRM = Eigen::Map<const MatrixRM>;
using MapRM = Eigen::Map<MatrixRM>;

void check_compatible(const ModelSpec& spec, std::size_t paramCount, const Dataset& data) {
  if (paramCount != spec.parameter_count()) {
    throw Error(ErrorCode::DimensionMismatch, "weights",
                "expected " + std::to_string(spec.parameter_count()) + " parameters, got " +
                    std::to_string(paramCount));
  }
  if (spec.layers.empty() || spec.layers.front().inDim != data.cols) {
    throw Error(ErrorCode::DimensionMismatch, "features",
                "model expects " + std::to_string(spec.layers.empty() ? 0 : spec.layers.front().inDim) +
                    " inputs, data has " + std::to_string(data.cols));
  }
}

MatrixRM gather_rows(const Dataset& data, std::span<const std::size_t> rows) {
  MatrixRM x(static_cast<Eigen::Index>(rows.size()), data.cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto src = data.row(rows[r]);
    for (int c = 0; c < data.cols; ++c) x(static_cast<Eigen::Index>(r), c) = src[static_cast<std::size_t>(c)];
  }
  return x;
}

MatrixRM targets_for(const Dataset& data, std::span<const std::size_t> rows, int outDim, Loss loss) {
  MatrixRM t = MatrixRM::Zero(static_cast<Eigen::Index>(rows.size()), outDim);
  const bool classification = data.config.task == config::Algo::Classification;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const double label = data.labels[rows[r]];
    if (classification && (loss == Loss::MSE || outDim > 1)) {
      const auto cls = static_cast<Eigen::Index>(label);
      if (cls < 0 || cls >= outDim) {
        throw Error(ErrorCode::DimensionMismatch, "labels", "class label outside model output range");
      }
      t(static_cast<Eigen::Index>(r), cls) = 1.0;
    } else {
      t(static_cast<Eigen::Index>(r), 0) = label;
    }
  }
  return t;
}

struct ForwardTrace {
  std::vector<MatrixRM> activations;  // input plus each layer's output (post-activation)
  std::vector<MatrixRM> preActivations;
};

// Coefficient-wise product keeps each output independent of how many rows are
// batched together, so evaluation results do not depend on the batch size.
template <bool Lazy>
ForwardTrace run_forward(std::span<const double> params, const ModelSpec& spec, MatrixRM input) {
  ForwardTrace trace;
  trace.activations.push_back(std::move(input));
  std::size_t offset = 0;
  for (const auto& layer : spec.layers) {
    ConstMapRM w(params.data() + offset, layer.outDim, layer.inDim);
    offset += static_cast<std::size_t>(layer.outDim) * static_cast<std::size_t>(layer.inDim);
    Eigen::Map<const Eigen::RowVectorXd> b(params.data() + offset, layer.outDim);
    offset += static_cast<std::size_t>(layer.outDim);
    MatrixRM z;
    if constexpr (Lazy) {
      z = trace.activations.back().lazyProduct(w.transpose());
    } else {
      z.noalias() = trace.activations.back() * w.transpose();
    }
    z.rowwise() += b;
    MatrixRM a = layer.activation == Activation::Relu ? MatrixRM(z.cwiseMax(0.0)) : z;
    trace.preActivations.push_back(std::move(z));
    trace.activations.push_back(std::move(a));
  }
  return trace;
}

// Per-sample loss values and dLoss/dOutput (not yet divided by batch size).
void loss_terms(const MatrixRM& out, const MatrixRM& target, const Dataset& data,
                std::span<const std::size_t> rows, Loss loss, std::vector<double>& perSample,
                MatrixRM* dOut) {
  const Eigen::Index n = out.rows();
  const Eigen::Index k = out.cols();
  perSample.resize(static_cast<std::size_t>(n));
  if (dOut) dOut->resize(n, k);
  if (loss == Loss::CrossEntropy) {
    if (data.config.task != config::Algo::Classification) {
      throw Error(ErrorCode::DimensionMismatch, "loss", "CrossEntropyLoss requires classification data");
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mx = out.row(i).maxCoeff();
      const double lse = mx + std::log((out.row(i).array() - mx).exp().sum());
      const auto cls = static_cast<Eigen::Index>(data.labels[rows[static_cast<std::size_t>(i)]]);
      if (cls < 0 || cls >= k) throw Error(ErrorCode::DimensionMismatch, "labels", "class label outside model output range");
      perSample[static_cast<std::size_t>(i)] = lse - out(i, cls);
      if (dOut) {
        dOut->row(i) = (out.row(i).array() - lse).exp().matrix();
        (*dOut)(i, cls) -= 1.0;
      }
    }
  } else {
    const MatrixRM diff = out - target;
    for (Eigen::Index i = 0; i < n; ++i) {
      perSample[static_cast<std::size_t>(i)] = 0.5 * diff.row(i).squaredNorm() / static_cast<double>(k);
    }
    if (dOut) *dOut = diff / static_cast<double>(k);
  }
}

std::vector<double> to_double(std::span<const float> v) { return {v.begin(), v.end()}; }

}  // namespace

std::vector<LayerParams> unflatten(std::span<const float> values, const ModelSpec& spec) {
  if (values.size() != spec.parameter_count()) {
    throw Error(ErrorCode::DimensionMismatch, "weights", "length does not match spec");
  }
  std::vector<LayerParams> out;
  std::size_t offset = 0;
  for (const auto& l : spec.layers) {
    const auto nw = static_cast<std::size_t>(l.inDim) * static_cast<std::size_t>(l.outDim);
    LayerParams p;
    p.weights.assign(values.begin() + static_cast<std::ptrdiff_t>(offset),
                     values.begin() + static_cast<std::ptrdiff_t>(offset + nw));
    offset += nw;
    p.biases.assign(values.begin() + static_cast<std::ptrdiff_t>(offset),
                    values.begin() + static_cast<std::ptrdiff_t>(offset + static_cast<std::size_t>(l.outDim)));
    offset += static_cast<std::size_t>(l.outDim);
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<float> flatten(const std::vector<LayerParams>& layers) {
  std::vector<float> out;
  for (const auto& l : layers) {
    out.insert(out.end(), l.weights.begin(), l.weights.end());
    out.insert(out.end(), l.biases.begin(), l.biases.end());
  }
  return out;
}

void Dataset::validate() const {
  if (cols <= 0 || features.size() != rows() * static_cast<std::size_t>(cols)) {
    throw Error(ErrorCode::DimensionMismatch, "features", "feature matrix does not match rows x cols");
  }
  if (config.input_dim() != cols) {
    throw Error(ErrorCode::DimensionMismatch, "shape", "dataconfig shape does not match feature count");
  }
  if (static_cast<int>(rows()) != config.numDatapoints) {
    throw Error(ErrorCode::DimensionMismatch, "numDatapoints",
                "config says " + std::to_string(config.numDatapoints) + ", data has " + std::to_string(rows()));
  }
  for (float f : features) {
    if (!std::isfinite(f)) throw Error(ErrorCode::DimensionMismatch, "features", "non-finite feature value");
  }
  if (config.task == config::Algo::Classification) {
    for (float y : labels) {
      if (y != std::floor(y) || y < 0 || y >= static_cast<float>(config.numLabels)) {
        throw Error(ErrorCode::DimensionMismatch, "labels", "class label outside [0, numLabels)");
      }
    }
  }
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.cols = cols;
  out.config = config;
  out.features.reserve(indices.size() * static_cast<std::size_t>(cols));
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    const auto r = row(i);
    out.features.insert(out.features.end(), r.begin(), r.end());
    out.labels.push_back(labels[i]);
  }
  out.config.numDatapoints = static_cast<int>(indices.size());
  return out;
}

FlatWeights build_model(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  FlatWeights w;
  w.spec = spec;
  w.values.reserve(spec.parameter_count());
  std::mt19937_64 rng(mix_seed(seed));
  for (const auto& l : spec.layers) {
    const double a = std::sqrt(6.0 / static_cast<double>(l.inDim + l.outDim));
    std::uniform_real_distribution<double> dist(-a, a);
    const auto nw = static_cast<std::size_t>(l.inDim) * static_cast<std::size_t>(l.outDim);
    for (std::size_t i = 0; i < nw; ++i) w.values.push_back(static_cast<float>(dist(rng)));
    w.values.insert(w.values.end(), static_cast<std::size_t>(l.outDim), 0.0F);
  }
  return w;
}

OptimizerState OptimizerState::make(Optimizer kind, std::size_t d) {
  OptimizerState s;
  s.kind = kind;
  if (kind == Optimizer::Adam) s.first.assign(d, 0.0);
  if (kind != Optimizer::SGD) s.second.assign(d, 0.0);
  return s;
}

std::vector<double> optimizer_step(OptimizerState& state, std::span<const double> grads, double lr) {
  const std::size_t d = grads.size();
  std::vector<double> delta(d);
  ++state.step;
  switch (state.kind) {
    case Optimizer::SGD:
      for (std::size_t i = 0; i < d; ++i) delta[i] = -lr * grads[i];
      break;
    case Optimizer::Adam: {
      if (state.first.size() != d) state.first.assign(d, 0.0);
      if (state.second.size() != d) state.second.assign(d, 0.0);
      const double t = static_cast<double>(state.step);
      const double c1 = 1.0 - std::pow(kAdamBeta1, t);
      const double c2 = 1.0 - std::pow(kAdamBeta2, t);
      for (std::size_t i = 0; i < d; ++i) {
        state.first[i] = kAdamBeta1 * state.first[i] + (1.0 - kAdamBeta1) * grads[i];
        state.second[i] = kAdamBeta2 * state.second[i] + (1.0 - kAdamBeta2) * grads[i] * grads[i];
        const double mhat = state.first[i] / c1;
        const double vhat = state.second[i] / c2;
        delta[i] = -lr * mhat / (std::sqrt(vhat) + kAdamEps);
      }
      break;
    }
    case Optimizer::AdaGrad:
      if (state.second.size() != d) state.second.assign(d, 0.0);
      for (std::size_t i = 0; i < d; ++i) {
        state.second[i] += grads[i] * grads[i];
        delta[i] = -lr * grads[i] / (std::sqrt(state.second[i]) + kAdaGradEps);
      }
      break;
    case Optimizer::RMSProp:
      if (state.second.size() != d) state.second.assign(d, 0.0);
      for (std::size_t i = 0; i < d; ++i) {
        state.second[i] = kRmsAlpha * state.second[i] + (1.0 - kRmsAlpha) * grads[i] * grads[i];
        delta[i] = -lr * grads[i] / (std::sqrt(state.second[i]) + kRmsEps);
      }
      break;
  }
  return delta;
}

LossAndGradient loss_and_gradient(std::span<const double> params, const ModelSpec& spec,
                                  const Dataset& data, std::span<const std::size_t> rows, Loss loss) {
  if (params.size() != spec.parameter_count()) {
    throw Error(ErrorCode::DimensionMismatch, "weights", "length does not match spec");
  }
  if (spec.layers.empty() || spec.layers.front().inDim != data.cols) {
    throw Error(ErrorCode::DimensionMismatch, "features", "model input does not match data");
  }
  LossAndGradient out;
  out.gradient.assign(params.size(), 0.0);
  if (rows.empty()) return out;

  const auto trace = run_forward<false>(params, spec, gather_rows(data, rows));
  const MatrixRM target = targets_for(data, rows, spec.outputDim, loss);
  std::vector<double> perSample;
  MatrixRM delta;
  loss_terms(trace.activations.back(), target, data, rows, loss, perSample, &delta);
  const double n = static_cast<double>(rows.size());
  out.loss = std::accumulate(perSample.begin(), perSample.end(), 0.0) / n;
  delta /= n;

  // Walk layers backwards; offsets of each layer's block in the flat vector.
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& l : spec.layers) {
    offsets.push_back(off);
    off += static_cast<std::size_t>(l.inDim) * static_cast<std::size_t>(l.outDim) +
           static_cast<std::size_t>(l.outDim);
  }
  for (std::size_t li = spec.layers.size(); li-- > 0;) {
    const auto& l = spec.layers[li];
    if (l.activation == Activation::Relu) {
      delta = delta.cwiseProduct((trace.preActivations[li].array() > 0.0).cast<double>().matrix());
    }
    MapRM gw(out.gradient.data() + offsets[li], l.outDim, l.inDim);
    gw.noalias() = delta.transpose() * trace.activations[li];
    Eigen::Map<Eigen::RowVectorXd> gb(
        out.gradient.data() + offsets[li] + static_cast<std::size_t>(l.outDim) * static_cast<std::size_t>(l.inDim),
        l.outDim);
    gb = delta.colwise().sum();
    if (li > 0) {
      ConstMapRM w(params.data() + offsets[li], l.outDim, l.inDim);
      MatrixRM prev = delta * w;
      delta = std::move(prev);
    }
  }
  return out;
}

double batch_loss(std::span<const double> params, const ModelSpec& spec, const Dataset& data,
                  std::span<const std::size_t> rows, Loss loss) {
  if (rows.empty()) return 0.0;
  const auto trace = run_forward<true>(params, spec, gather_rows(data, rows));
  const MatrixRM target = targets_for(data, rows, spec.outputDim, loss);
  std::vector<double> perSample;
  loss_terms(trace.activations.back(), target, data, rows, loss, perSample, nullptr);
  return std::accumulate(perSample.begin(), perSample.end(), 0.0) / static_cast<double>(rows.size());
}

std::vector<double> forward(std::span<const float> params, const ModelSpec& spec, std::span<const float> input) {
  if (spec.layers.empty() || static_cast<int>(input.size()) != spec.layers.front().inDim) {
    throw Error(ErrorCode::DimensionMismatch, "input", "sample size does not match model input");
  }
  const auto p = to_double(params);
  MatrixRM x(1, static_cast<Eigen::Index>(input.size()));
  for (std::size_t i = 0; i < input.size(); ++i) x(0, static_cast<Eigen::Index>(i)) = input[i];
  const auto trace = run_forward<true>(p, spec, std::move(x));
  const auto& o = trace.activations.back();
  return {o.data(), o.data() + o.size()};
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.begin(), logits.end());
  if (out.empty()) return out;
  const double mx = *std::max_element(out.begin(), out.end());
  double sum = 0.0;
  for (auto& v : out) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (auto& v : out) v /= sum;
  return out;
}

TrainSettings TrainSettings::from(const TaskConfig& cfg) {
  return {cfg.epoch, cfg.minibatch, cfg.lr, cfg.optimizer, cfg.loss};
}

void train_epoch(FlatWeights& w, OptimizerState& state, const Dataset& data, const TrainSettings& s,
                 std::uint64_t seed, int epochIndex) {
  check_compatible(w.spec, w.values.size(), data);
  if (s.batchSize < 1) throw Error(ErrorCode::ValueOutOfRange, "minibatch", "must be >= 1");
  const std::size_t n = data.rows();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(epochIndex)));
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<double> params = to_double(w.values);
  const auto batch = static_cast<std::size_t>(s.batchSize);
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t len = std::min(batch, n - start);
    std::span<const std::size_t> rows(order.data() + start, len);
    auto lg = loss_and_gradient(params, w.spec, data, rows, s.loss);
    if (!std::isfinite(lg.loss)) {
      throw Error(ErrorCode::NonFiniteLoss, "epoch " + std::to_string(epochIndex), "loss diverged");
    }
    const auto delta = optimizer_step(state, lg.gradient, s.lr);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const float updated = static_cast<float>(params[i] + delta[i]);
      if (!std::isfinite(updated)) {
        throw Error(ErrorCode::NonFiniteLoss, "epoch " + std::to_string(epochIndex), "weights diverged");
      }
      w.values[i] = updated;
      params[i] = updated;
    }
  }
}

FlatWeights train(const FlatWeights& w, const Dataset& data, const TrainSettings& settings, std::uint64_t seed) {
  check_compatible(w.spec, w.values.size(), data);
  FlatWeights out = w;
  auto state = OptimizerState::make(settings.optimizer, w.values.size());
  for (int e = 0; e < settings.epochs; ++e) train_epoch(out, state, data, settings, seed, e);
  return out;
}

FlatWeights client_update(const FlatWeights& w, const Dataset& data, const TaskConfig& cfg, std::uint64_t seed) {
  return train(w, data, TrainSettings::from(cfg), seed);
}

Metrics evaluate(const FlatWeights& w, const Dataset& data, int batch, Loss loss) {
  check_compatible(w.spec, w.values.size(), data);
  Metrics m;
  const std::size_t n = data.rows();
  if (n == 0) return m;
  const auto params = to_double(w.values);
  const auto step = static_cast<std::size_t>(std::max(batch, 1));
  const bool classification = data.config.task == config::Algo::Classification;
  double lossSum = 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> rows;
  std::vector<double> perSample;
  for (std::size_t start = 0; start < n; start += step) {
    rows.clear();
    for (std::size_t i = start; i < std::min(n, start + step); ++i) rows.push_back(i);
    const auto trace = run_forward<true>(params, w.spec, gather_rows(data, rows));
    const auto& out = trace.activations.back();
    const MatrixRM target = targets_for(data, rows, w.spec.outputDim, loss);
    loss_terms(out, target, data, rows, loss, perSample, nullptr);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      lossSum += perSample[r];
      if (classification) {
        Eigen::Index best = 0;
        for (Eigen::Index c = 1; c < out.cols(); ++c) {
          if (out(static_cast<Eigen::Index>(r), c) > out(static_cast<Eigen::Index>(r), best)) best = c;
        }
        if (static_cast<float>(best) == data.labels[rows[r]]) ++correct;
      }
    }
  }
  m.loss = lossSum / static_cast<double>(n);
  m.accuracy = classification ? static_cast<double>(correct) / static_cast<double>(n) : 0.0;
  return m;
}

Metrics evaluate(const FlatWeights& w, const Dataset& data, int batch) {
  return evaluate(w, data, batch,
                  data.config.task == config::Algo::Classification ? Loss::CrossEntropy : Loss::MSE);
}

}  // namespace fedforge::nn
