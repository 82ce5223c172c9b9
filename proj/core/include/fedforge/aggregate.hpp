#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace fedforge::server {

struct WeightedUpdate {
  std::span<const float> weights;
  std::int64_t numSamples = 0;
};

/// Sample-weighted mean: sum_k (n_k / sum n) * w_k, accumulated in double and
/// narrowed to float. Updates are combined in the order given.
/// Throws EmptyUpdateSet, LengthMismatch (ValueOutOfRange for n_k < 1).
std::vector<float> aggregate(std::span<const WeightedUpdate> updates);

/// The coefficients n_k / sum n used by aggregate().
std::vector<double> aggregation_weights(std::span<const WeightedUpdate> updates);

}  // namespace fedforge::server
