#pragma once

// Reference implementations written directly from the definitions, without
// calling the code they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedforge/config.hpp"
#include "fedforge/nn.hpp"

namespace oracle {

/// max(1, ceil(k*d)) with k read as the decimal it was written as.
inline std::size_t retained(double k, std::size_t d) {
  const long double exact = static_cast<long double>(k) * static_cast<long double>(d);
  const auto c = static_cast<std::size_t>(std::ceil(exact - 1e-9L));
  return std::max<std::size_t>(1, c);
}

/// Indices of the m largest |x| (lower index wins ties), ascending.
inline std::vector<std::uint32_t> top_k_indices(std::span<const float> x, std::size_t m) {
  std::vector<std::uint32_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0U);
  std::sort(idx.begin(), idx.end(), [&](std::uint32_t a, std::uint32_t b) {
    const float fa = std::fabs(x[a]);
    const float fb = std::fabs(x[b]);
    return fa != fb ? fa > fb : a < b;
  });
  idx.resize(m);
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// Weighted mean in long double: (sum n_k w_k) / (sum n_k).
inline std::vector<long double> weighted_mean(const std::vector<std::vector<float>>& w,
                                              const std::vector<std::int64_t>& n) {
  std::vector<long double> acc(w.front().size(), 0.0L);
  long double total = 0.0L;
  for (std::size_t k = 0; k < w.size(); ++k) {
    total += static_cast<long double>(n[k]);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += static_cast<long double>(n[k]) * w[k][i];
  }
  for (auto& v : acc) v /= total;
  return acc;
}

/// Brute force: the m ids with the smallest mean latency (empty history
/// counts as 0), ties by id.
inline std::vector<std::string> lowest_latency(const std::vector<std::pair<std::string, std::vector<double>>>& hist,
                                               std::size_t m, std::size_t window) {
  std::vector<std::pair<double, std::string>> ranked;
  for (const auto& [id, h] : hist) {
    const std::size_t from = h.size() > window ? h.size() - window : 0;
    double sum = 0.0;
    for (std::size_t i = from; i < h.size(); ++i) sum += h[i];
    const std::size_t cnt = h.size() - from;
    ranked.emplace_back(cnt == 0 ? 0.0 : sum / static_cast<double>(cnt), id);
  }
  std::sort(ranked.begin(), ranked.end());
  std::vector<std::string> out;
  for (std::size_t i = 0; i < m; ++i) out.push_back(ranked[i].second);
  std::sort(out.begin(), out.end());
  return out;
}

struct RefClient {
  std::string id;
  fedforge::nn::Dataset data;
  std::uint64_t seedBase = 0;
};

struct RefRun {
  fedforge::nn::FlatWeights weights;
  std::vector<double> accuracy;
};

/// Textbook FedAvg (McMahan et al.): every client trains each round, the
/// server takes the sample-weighted mean, no compression, no transport.
inline RefRun plain_fedavg(const fedforge::config::TaskConfig& cfg, std::vector<RefClient> clients,
                           const fedforge::nn::Dataset& test) {
  std::sort(clients.begin(), clients.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  RefRun run;
  run.weights = fedforge::nn::build_model(*cfg.model, cfg.seed.value_or(0));
  for (int t = 1; t <= cfg.comRounds; ++t) {
    std::vector<std::vector<float>> local;
    std::int64_t m = 0;
    for (const auto& c : clients) {
      local.push_back(fedforge::nn::client_update(run.weights, c.data, cfg,
                                                  c.seedBase ^ static_cast<std::uint64_t>(t))
                          .values);
      m += static_cast<std::int64_t>(c.data.rows());
    }
    // w_{t+1} = sum_k (n_k / m_t) w^k_{t+1}, in double, clients in id order.
    std::vector<double> acc(run.weights.values.size(), 0.0);
    for (std::size_t k = 0; k < clients.size(); ++k) {
      const double coef = static_cast<double>(clients[k].data.rows()) / static_cast<double>(m);
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += coef * static_cast<double>(local[k][i]);
    }
    for (std::size_t i = 0; i < acc.size(); ++i) run.weights.values[i] = static_cast<float>(acc[i]);
    run.accuracy.push_back(fedforge::nn::evaluate(run.weights, test, cfg.minibatchtest, cfg.loss).accuracy);
  }
  return run;
}

/// Centralized baseline: train one model on the union of the client sets.
inline double centralized_accuracy(const fedforge::nn::ModelSpec& spec, const fedforge::nn::Dataset& unionSet,
                                   const fedforge::nn::Dataset& test, int epochs, double lr, std::uint64_t seed) {
  fedforge::nn::TrainSettings s;
  s.epochs = epochs;
  s.batchSize = 16;
  s.lr = lr;
  s.optimizer = fedforge::config::Optimizer::Adam;
  s.loss = fedforge::config::Loss::CrossEntropy;
  const auto w = fedforge::nn::train(fedforge::nn::build_model(spec, seed), unionSet, s, seed);
  return fedforge::nn::evaluate(w, test, 32).accuracy;
}

}  // namespace oracle
