#include "fedforge/aggregate.hpp"

#include <string>

#include "fedforge/error.hpp"

namespace fedforge::server {

std::vector<double> aggregation_weights(std::span<const WeightedUpdate> updates) {
  if (updates.empty()) throw Error(ErrorCode::EmptyUpdateSet, "updates");
  std::int64_t total = 0;
  for (const auto& u : updates) {
    if (u.numSamples < 1) {
      throw Error(ErrorCode::ValueOutOfRange, "numSamples", "each update needs n_k >= 1");
    }
    total += u.numSamples;
  }
  std::vector<double> coeffs;
  coeffs.reserve(updates.size());
  for (const auto& u : updates) {
    coeffs.push_back(static_cast<double>(u.numSamples) / static_cast<double>(total));
  }
  return coeffs;
}

std::vector<float> aggregate(std::span<const WeightedUpdate> updates) {
  const auto coeffs = aggregation_weights(updates);
  const std::size_t d = updates.front().weights.size();
  for (const auto& u : updates) {
    if (u.weights.size() != d) {
      throw Error(ErrorCode::LengthMismatch, "weights",
                  "expected " + std::to_string(d) + " values, got " + std::to_string(u.weights.size()));
    }
  }
  std::vector<double> acc(d, 0.0);
  for (std::size_t k = 0; k < updates.size(); ++k) {
    const auto w = updates[k].weights;
    const double c = coeffs[k];
    for (std::size_t i = 0; i < d; ++i) acc[i] += c * static_cast<double>(w[i]);
  }
  return {acc.begin(), acc.end()};
}

}  // namespace fedforge::server
