#include "fedforge/model_spec.hpp"

#include <functional>
#include <numeric>
#include <string>

#include <nlohmann/json.hpp>

#include "fedforge/error.hpp"

namespace fedforge::nn {

int ModelSpec::input_dim() const {
  if (inputShape.empty()) return 0;
  long long prod = 1;
  for (int v : inputShape) prod *= v;
  return static_cast<int>(prod);
}

std::size_t ModelSpec::parameter_count() const {
  std::size_t d = 0;
  for (const auto& l : layers) {
    d += static_cast<std::size_t>(l.inDim) * static_cast<std::size_t>(l.outDim) +
         static_cast<std::size_t>(l.outDim);
  }
  return d;
}

void ModelSpec::validate() const {
  if (layers.empty()) throw Error(ErrorCode::DimensionMismatch, "layers", "model has no layers");
  for (int v : inputShape) {
    if (v <= 0) throw Error(ErrorCode::DimensionMismatch, "inputShape", "non-positive extent");
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].inDim <= 0 || layers[i].outDim <= 0) {
      throw Error(ErrorCode::DimensionMismatch, "layer " + std::to_string(i),
                  "non-positive dimension");
    }
    if (i + 1 < layers.size() && layers[i].outDim != layers[i + 1].inDim) {
      throw Error(ErrorCode::DimensionMismatch, "layer " + std::to_string(i + 1),
                  "expected inDim " + std::to_string(layers[i].outDim) + ", got " +
                      std::to_string(layers[i + 1].inDim));
    }
  }
  if (input_dim() != layers.front().inDim) {
    throw Error(ErrorCode::DimensionMismatch, "inputShape",
                "input size " + std::to_string(input_dim()) + " does not match first layer inDim " +
                    std::to_string(layers.front().inDim));
  }
  if (layers.back().outDim != outputDim) {
    throw Error(ErrorCode::DimensionMismatch, "outputDim",
                "last layer outDim " + std::to_string(layers.back().outDim) + " != " +
                    std::to_string(outputDim));
  }
}

ModelSpec make_mlp(std::vector<int> inputShape, const std::vector<int>& hidden, int outputDim) {
  ModelSpec spec;
  spec.inputShape = std::move(inputShape);
  spec.outputDim = outputDim;
  int in = spec.input_dim();
  for (int h : hidden) {
    spec.layers.push_back({in, h, Activation::Relu});
    in = h;
  }
  spec.layers.push_back({in, outputDim, Activation::None});
  return spec;
}

void to_json(nlohmann::json& j, const ModelSpec& spec) {
  auto layers = nlohmann::json::array();
  for (const auto& l : spec.layers) {
    layers.push_back({{"in", l.inDim},
                      {"out", l.outDim},
                      {"activation", l.activation == Activation::Relu ? "relu" : "none"}});
  }
  j = nlohmann::json{{"inputShape", spec.inputShape}, {"outputDim", spec.outputDim},
                     {"layers", std::move(layers)}};
}

namespace {

int layer_dim(const nlohmann::json& layer, const char* key, const char* alias) {
  const auto* v = layer.contains(key) ? &layer.at(key) : layer.contains(alias) ? &layer.at(alias) : nullptr;
  if (v == nullptr || !v->is_number_integer()) {
    throw Error(ErrorCode::InvalidArchitecture, key, "missing or non-integer layer dimension");
  }
  return v->get<int>();
}

}  // namespace

void from_json(const nlohmann::json& j, ModelSpec& spec) {
  if (!j.is_object() || !j.contains("layers") || !j.at("layers").is_array()) {
    throw Error(ErrorCode::InvalidArchitecture, "layers", "expected an object with a layers array");
  }
  ModelSpec out;
  for (const auto& layer : j.at("layers")) {
    if (!layer.is_object()) throw Error(ErrorCode::InvalidArchitecture, "layers", "layer is not an object");
    LayerSpec l;
    l.inDim = layer_dim(layer, "in", "inDim");
    l.outDim = layer_dim(layer, "out", "outDim");
    std::string act = layer.value("activation", std::string{"none"});
    if (act == "relu" || act == "ReLU") {
      l.activation = Activation::Relu;
    } else if (act == "none" || act == "linear" || act.empty()) {
      l.activation = Activation::None;
    } else {
      throw Error(ErrorCode::InvalidArchitecture, "activation", "unsupported activation '" + act + "'");
    }
    out.layers.push_back(l);
  }
  if (j.contains("inputShape")) {
    if (!j.at("inputShape").is_array()) throw Error(ErrorCode::InvalidArchitecture, "inputShape", "expected array");
    for (const auto& v : j.at("inputShape")) {
      if (!v.is_number_integer()) throw Error(ErrorCode::InvalidArchitecture, "inputShape", "expected integers");
      out.inputShape.push_back(v.get<int>());
    }
  } else if (!out.layers.empty()) {
    out.inputShape = {1, out.layers.front().inDim};
  }
  if (j.contains("outputDim")) {
    if (!j.at("outputDim").is_number_integer()) throw Error(ErrorCode::InvalidArchitecture, "outputDim", "expected integer");
    out.outputDim = j.at("outputDim").get<int>();
  } else if (!out.layers.empty()) {
    out.outputDim = out.layers.back().outDim;
  }
  spec = std::move(out);
}

}  // namespace fedforge::nn
