#include <benchmark/benchmark.h>

#include <random>

#include "fedforge/compression.hpp"

using namespace fedforge::compression;

namespace {

std::vector<float> gaussian(std::size_t d) {
  std::mt19937_64 rng(1);
  std::normal_distribution<float> g(0.0F, 1.0F);
  std::vector<float> x(d);
  for (auto& v : x) v = g(rng);
  return x;
}

void BM_Quantize(benchmark::State& state) {
  const auto x = gaussian(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(quantize(x));
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations()) * state.range(0) * 4);
}

void BM_QuantizeRoundTrip(benchmark::State& state) {
  const auto x = gaussian(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    const auto bytes = encode(Payload{quantize(x)});
    benchmark::DoNotOptimize(decompress(decode(bytes)));
  }
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations()) * state.range(0) * 4);
}

void BM_TopK(benchmark::State& state) {
  const auto x = gaussian(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(top_k(x, 0.1));
}

void BM_RandK(benchmark::State& state) {
  const auto x = gaussian(static_cast<std::size_t>(state.range(0)));
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(rand_k(x, 0.1, ++seed));
}

void BM_DecodeDense(benchmark::State& state) {
  const auto bytes = encode(Payload{Dense{gaussian(static_cast<std::size_t>(state.range(0)))}});
  for (auto _ : state) benchmark::DoNotOptimize(decode(bytes));
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * bytes.size()));
}

}  // namespace

BENCHMARK(BM_Quantize)->RangeMultiplier(10)->Range(100, 1'000'000);
BENCHMARK(BM_QuantizeRoundTrip)->RangeMultiplier(10)->Range(100, 1'000'000);
BENCHMARK(BM_TopK)->RangeMultiplier(10)->Range(100, 1'000'000);
BENCHMARK(BM_RandK)->RangeMultiplier(10)->Range(100, 1'000'000);
BENCHMARK(BM_DecodeDense)->RangeMultiplier(10)->Range(100, 1'000'000);
