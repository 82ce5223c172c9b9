#include <benchmark/benchmark.h>

#include <random>

#include "fedforge/aggregate.hpp"
#include "fedforge/nn.hpp"
#include "fedforge/synthetic.hpp"

using namespace fedforge;

namespace {

/// state.range(0) clients of state.range(1) parameters each.
void BM_Aggregate(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0));
  const auto d = static_cast<std::size_t>(state.range(1));
  std::mt19937_64 rng(3);
  std::normal_distribution<float> g(0.0F, 1.0F);
  std::vector<std::vector<float>> w(k, std::vector<float>(d));
  for (auto& v : w) {
    for (auto& x : v) x = g(rng);
  }
  std::vector<server::WeightedUpdate> u;
  for (std::size_t i = 0; i < k; ++i) u.push_back({w[i], static_cast<std::int64_t>(100 + i)});
  for (auto _ : state) benchmark::DoNotOptimize(server::aggregate(u));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * k * d));
}

/// One local epoch over 200 blobs rows, MLP 2-16-2.
void BM_LocalEpoch(benchmark::State& state) {
  const auto data = synthetic::make_blobs(200, 1);
  const auto spec = nn::make_mlp({2}, {16}, 2);
  nn::TrainSettings s;
  s.lr = 1e-3;
  const auto w = nn::build_model(spec, 1);
  for (auto _ : state) benchmark::DoNotOptimize(nn::train(w, data, s, 1));
}

}  // namespace

BENCHMARK(BM_Aggregate)->ArgsProduct({{2, 3, 10}, {82, 10'000, 1'000'000}});
BENCHMARK(BM_LocalEpoch);
